"""Statistical error model for time-multiplexed OSPR replay intensities.

A single binary-phase subframe reconstructs pixel ``(u, v)`` as a fixed
phasor plus circular Gaussian quantisation noise::

    R = sqrt((1 - q) / 2) * (T1 exp(i phi1) + T2 exp(-i phi2)) + n,   E|n|**2 = q * P

where ``T1`` is the pixel's own target amplitude, ``T2`` that of its
180-degree partner (a real hologram has a Hermitian spectrum), ``P`` the mean
target power and ``q`` the fraction of energy the quantiser turns into noise
(``1 - 2/pi`` for sign quantisation of a Gaussian field).  Given the phasor,
``|R|`` is Rician and ``|R|**2`` has the density of
:func:`replay_intensity_pdf`.  Averaging over the target distribution gives

* ``sigma2_eps_prime``: the mean per-pixel variance of one subframe's
  intensity error, which the ``N``-subframe average divides by ``N``;
* the MSE floor ``bias_id**2``: the squared difference between the expected
  replay intensity and the target intensity, which averaging cannot remove.

So ``MSE(N) = bias_id**2 + sigma2_eps_prime / N``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline

from .engine import QuantizationScheme, RngSpec, generate_subframe, replay_intensity
from .errors import DimensionError, NonConvergenceError
from .field import TargetImage, rotate_180

NOMINAL_NOISE_FRACTION = {
    QuantizationScheme.BINARY_PHASE: 1.0 - 2.0 / math.pi,
    QuantizationScheme.PHASE_ONLY: 1.0 - math.pi / 4.0,
    QuantizationScheme.NONE: 0.0,
}
CONJUGATE_PAIRED = {
    QuantizationScheme.BINARY_PHASE: True,
    QuantizationScheme.PHASE_ONLY: False,
    QuantizationScheme.NONE: False,
}

RICIAN_PATHS = ("amplitude", "intensity-literal")
DEFAULT_RICIAN_PATH = "amplitude"

_TRUNCATION_SIGMAS = 40.0
_INNER_TOL = 1e-6
_THETA_ORDER = 48
_UNIFORM_ORDER = 64


# ---------------------------------------------------------------------------
# Densities


def rician_pdf(observed_intensity, target_intensity, sigma2):
    """Rician density ``(x/s2) exp(-(x**2 + t**2)/(2 s2)) I0(x t / s2)``.

    ``x`` is the observed value and ``t`` the noiseless value.  The Bessel
    factor is evaluated exponentially scaled so large ``x t / s2`` does not
    overflow.  With ``t = 0`` this is the Rayleigh density.
    """
    x = np.asarray(observed_intensity, dtype=np.float64)
    t = np.asarray(target_intensity, dtype=np.float64)
    if not np.all(np.asarray(sigma2) > 0):
        raise ValueError("sigma2 must be > 0")
    if np.any(x < 0) or np.any(t < 0):
        raise ValueError("intensities must be non-negative")
    z = x * t / sigma2
    return (x / sigma2) * np.exp(-((x - t) ** 2) / (2.0 * sigma2)) * special.i0e(z)


def replay_intensity_pdf(x, signal_power, noise_power):
    """Density of ``|s + n|**2`` for a fixed phasor ``|s|**2 = signal_power`` and
    circular Gaussian ``n`` with ``E|n|**2 = noise_power``.

    This is the Rician amplitude density (scale ``noise_power / 2``) carried
    over to intensity by ``x = r**2``.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(signal_power, dtype=np.float64)
    if noise_power <= 0:
        raise ValueError("noise_power must be > 0")
    r = np.sqrt(x)
    nu = np.sqrt(s)
    return np.exp(-((r - nu) ** 2) / noise_power) * special.i0e(2.0 * nu * r / noise_power) / noise_power


def _quad_moments(pdf, upper: np.ndarray, tol: float = _INNER_TOL) -> np.ndarray:
    """Zeroth to second moments of a family of densities on ``[0, upper]``.

    ``pdf(x)`` evaluates every member at a same-shaped array ``x``.  Each
    member is integrated on its own interval by mapping ``x = t * upper``.
    """
    upper = np.asarray(upper, dtype=np.float64)

    def integrand(t):
        x = t * upper
        p = pdf(x) * upper
        return np.stack([p, p * x, p * x * x])

    res, err = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=tol, epsrel=0.0, norm="max", limit=2000)
    if not err <= tol:
        raise NonConvergenceError(f"inner quadrature error {err:.3g} exceeds tolerance {tol:.3g}")
    return res


def intensity_moments(signal_power, noise_power: float, method: str = "quadrature"):
    """Mean and second moment of the replay intensity for each ``signal_power``.

    ``method="quadrature"`` integrates :func:`replay_intensity_pdf` numerically
    (truncated 40 standard deviations above the mean, enough for the
    exponential tail at zero signal); ``"closed-form"`` uses
    the non-central chi-square moments and exists as the cross-check.
    """
    s = np.asarray(signal_power, dtype=np.float64)
    q = float(noise_power)
    if method == "closed-form" or q == 0.0:
        return s + q, s * s + 4.0 * s * q + 2.0 * q * q
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    sd = np.sqrt(2.0 * s * q + q * q)
    upper = s + q + _TRUNCATION_SIGMAS * sd
    m0, m1, m2 = _quad_moments(lambda x: replay_intensity_pdf(x, s, q), upper)
    return m1 / m0, m2 / m0


def _tabulated_moments(s_max: float, noise_power: float, nodes: int = 65):
    """Quadrature moments on a grid of signal powers, as cubic splines."""
    grid = np.linspace(0.0, max(s_max, 1e-12), nodes)
    m1, m2 = intensity_moments(grid, noise_power, "quadrature")
    return CubicSpline(grid, m1), CubicSpline(grid, m2)


# ---------------------------------------------------------------------------
# Target amplitude distributions


@dataclass(frozen=True)
class AmplitudeDistribution:
    """Distribution of target amplitudes and of each pixel's conjugate partner.

    ``pairing`` says how a pixel's amplitude relates to its 180-degree
    partner: ``independent`` draws, ``symmetric`` (equal), or ``joint`` (an
    empirical 2-D histogram taken from an image).
    """

    kind: str
    pairing: str = "independent"
    value: float = 1.0
    edges: np.ndarray | None = None
    probabilities: np.ndarray | None = None
    levels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "constant", "empirical-histogram"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.pairing not in ("independent", "symmetric", "joint"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if self.value < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.kind == "empirical-histogram":
            p = np.asarray(self.probabilities, dtype=np.float64)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("histogram probabilities must be non-negative and sum to 1")
            if self.edges[0] < 0:
                raise ValueError("histogram support must be non-negative")

    @classmethod
    def uniform(cls, a_max: float = math.sqrt(3.0), symmetric: bool = False) -> AmplitudeDistribution:
        """Uniform on ``[0, a_max]``; the default has unit mean square."""
        return cls("uniform", "symmetric" if symmetric else "independent", value=a_max)

    @classmethod
    def constant(cls, value: float = 1.0) -> AmplitudeDistribution:
        return cls("constant", "symmetric", value=value)

    @classmethod
    def from_amplitudes(cls, amplitudes: np.ndarray, bins: int = 256, symmetric: bool = False) -> AmplitudeDistribution:
        amp = np.asarray(amplitudes, dtype=np.float64).ravel()
        edges, idx, levels = _bin(amp, bins)
        p = np.bincount(idx, minlength=bins) / amp.size
        return cls("empirical-histogram", "symmetric" if symmetric else "independent",
                   value=float(amp.max()), edges=edges, probabilities=p, levels=levels)

    @classmethod
    def from_target(cls, t: TargetImage, bins: int = 256) -> AmplitudeDistribution:
        """Joint histogram of each pixel's amplitude and its partner's."""
        amp = t.amplitudes
        edges, idx, levels = _bin(amp.ravel(), bins)
        idx = idx.reshape(amp.shape)
        joint = np.bincount((idx * bins + rotate_180(idx)).ravel(), minlength=bins * bins)
        p = (joint / amp.size).reshape(bins, bins)
        p = p / p.sum()
        return cls("empirical-histogram", "joint", value=float(amp.max()),
                   edges=edges, probabilities=p, levels=levels)

    def pair_nodes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Quadrature nodes ``(t1, t2, weight)`` over (amplitude, partner amplitude)."""
        if self.kind == "constant":
            v = np.array([self.value])
            return v, v, np.ones(1)
        if self.kind == "uniform":
            x, w = np.polynomial.legendre.leggauss(_UNIFORM_ORDER)
            t = (x + 1.0) * self.value / 2.0
            w = w / 2.0
            if self.pairing == "symmetric":
                return t, t, w
            return np.repeat(t, t.size), np.tile(t, t.size), np.outer(w, w).ravel()
        p = np.asarray(self.probabilities)
        lv = self.levels
        if p.ndim == 2:
            i1, i2 = np.nonzero(p)
            return lv[i1], lv[i2], p[i1, i2]
        keep = np.nonzero(p)[0]
        if self.pairing == "symmetric":
            return lv[keep], lv[keep], p[keep]
        return (np.repeat(lv[keep], keep.size), np.tile(lv[keep], keep.size),
                np.outer(p[keep], p[keep]).ravel())

    def mean_power(self) -> float:
        t1, _, w = self.pair_nodes()
        return float(np.sum(w * t1**2))


def _bin(amp: np.ndarray, bins: int):
    top = float(amp.max())
    if top <= 0:
        raise ValueError("amplitudes are all zero")
    edges = np.linspace(0.0, top, bins + 1)
    idx = np.minimum((amp / top * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=amp, minlength=bins)
    centers = (edges[:-1] + edges[1:]) / 2
    levels = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
    return edges, idx, levels


# ---------------------------------------------------------------------------
# Model evaluation


@dataclass(frozen=True)
class NoiseModel:
    """Parameters of the subframe intensity-error model.

    ``bias_id`` and ``bias_cs`` are bias amplitudes; ``mse_floor`` is the
    squared intensity-distribution bias, the value MSE converges to.
    """

    mu_eps_prime: float
    sigma2_eps_prime: float
    n_subframes: int = 1
    bias_id: float = 0.0
    bias_cs: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.sigma2_eps_prime < 0:
            raise ValueError("sigma2_eps_prime must be >= 0")
        if self.n_subframes < 1:
            raise ValueError("n_subframes must be >= 1")

    @property
    def sigma2_eps(self) -> float:
        return self.sigma2_eps_prime / self.n_subframes

    @property
    def mse_floor(self) -> float:
        return self.bias_id**2

    def predicted_mse(self, n: int | None = None) -> float:
        return mse_decomposition(self.bias_id, self.sigma2_eps_prime, n or self.n_subframes)


@dataclass(frozen=True)
class BiasReport:
    bias_cs: float
    bias_id: float
    sigma2_eps_prime: float

    def __post_init__(self):
        if min(self.bias_cs, self.bias_id, self.sigma2_eps_prime) < 0:
            raise ValueError("bias report entries must be non-negative")


def _signal_split(t1, t2, q, conjugate):
    if conjugate:
        return (1.0 - q) * t1**2 / 2.0, (1.0 - q) * t2**2 / 2.0
    return (1.0 - q) * t1**2, np.zeros_like(t1)


def conditional_replay_moments(t1_sq, t2_sq, noise_fraction: float, power: float, conjugate: bool = True):
    """Closed-form mean and variance of one subframe's replay intensity.

    ``t1_sq`` is the pixel's target intensity and ``t2_sq`` its partner's;
    the random phase difference between the two phasors is averaged out.
    """
    t1_sq = np.asarray(t1_sq, dtype=np.float64)
    t2_sq = np.asarray(t2_sq, dtype=np.float64)
    q = noise_fraction
    a2, b2 = _signal_split(np.sqrt(t1_sq), np.sqrt(t2_sq), q, conjugate)
    s2n = q * power
    mean = a2 + b2 + s2n
    var = 2.0 * a2 * b2 + 2.0 * (a2 + b2) * s2n + s2n * s2n
    return mean, var


def _amplitude_path(dist: AmplitudeDistribution, q: float, conjugate: bool, method: str):
    t1, t2, w = dist.pair_nodes()
    power = float(np.sum(w * t1**2))
    a2, b2 = _signal_split(t1, t2, q, conjugate)
    noise_power = q * power
    if conjugate:
        x, wt = np.polynomial.legendre.leggauss(_THETA_ORDER)
        theta = (x + 1.0) * math.pi / 2.0
        wt = wt / 2.0
        s = a2[:, None] + b2[:, None] + 2.0 * np.sqrt(a2 * b2)[:, None] * np.cos(theta)[None, :]
    else:
        s = a2[:, None]
        wt = np.ones(1)
    if method == "quadrature" and noise_power > 0:
        f1, f2 = _tabulated_moments(float(s.max()), noise_power)
        m1, m2 = f1(s), f2(s)
    else:
        m1, m2 = intensity_moments(s, noise_power, "closed-form")
    m1 = m1 @ wt
    m2 = m2 @ wt
    err = m1 - t1**2
    return (float(np.sum(w * err)), float(np.sum(w * (m2 - m1**2))), float(np.sum(w * err**2)))


def _literal_path(dist: AmplitudeDistribution, sigma2: float):
    t1, _, w = dist.pair_nodes()
    nu = t1**2
    upper = nu + _TRUNCATION_SIGMAS * math.sqrt(sigma2) + 3.0 * math.sqrt(sigma2)
    m0, m1, m2 = _quad_moments(lambda x: rician_pdf(x, nu, sigma2), upper)
    m1, m2 = m1 / m0, m2 / m0
    err = m1 - nu
    return float(np.sum(w * err)), float(np.sum(w * (m2 - m1**2))), float(np.sum(w * err**2))


def simulate_noise(
    dist: AmplitudeDistribution,
    scheme: QuantizationScheme | str = QuantizationScheme.BINARY_PHASE,
    noise_fraction: float | None = None,
    path: str = DEFAULT_RICIAN_PATH,
    sigma2_eps_prime: float | None = None,
    method: str = "quadrature",
) -> NoiseModel:
    """Evaluate the bias integral and subframe variance for a distribution.

    The outer integral runs over (amplitude, partner amplitude) nodes and the
    random phasor phase; the inner integral over observed intensity uses the
    Rician-derived density.  ``path="intensity-literal"`` instead treats the
    observed intensity itself as Rician around the target intensity with
    variance parameter ``sigma2_eps_prime``; it is kept for comparison only.
    """
    scheme = QuantizationScheme(scheme)
    if path == "amplitude":
        q = NOMINAL_NOISE_FRACTION[scheme] if noise_fraction is None else float(noise_fraction)
        if not 0.0 <= q <= 1.0:
            raise ValueError("noise_fraction must lie in [0, 1]")
        mu, var, floor = _amplitude_path(dist, q, CONJUGATE_PAIRED[scheme], method)
        meta = {"rician_path": path, "noise_fraction": q}
    elif path == "intensity-literal":
        if sigma2_eps_prime is None or sigma2_eps_prime <= 0:
            raise ValueError("the literal path needs sigma2_eps_prime > 0")
        mu, var, floor = _literal_path(dist, sigma2_eps_prime)
        meta = {"rician_path": path}
    else:
        raise ValueError(f"unknown Rician path {path!r}; expected one of {RICIAN_PATHS}")
    return NoiseModel(mu, max(var, 0.0), 1, math.sqrt(max(floor, 0.0)), 0.0, meta)


def calibrate_noise_fraction(
    dist: AmplitudeDistribution,
    sigma2_eps_prime: float,
    scheme: QuantizationScheme | str = QuantizationScheme.BINARY_PHASE,
) -> float:
    """Noise fraction ``q`` whose predicted subframe variance is ``sigma2_eps_prime``."""
    scheme = QuantizationScheme(scheme)
    conj = CONJUGATE_PAIRED[scheme]

    def resid(q):
        return _amplitude_path(dist, q, conj, "closed-form")[1] - sigma2_eps_prime

    lo, hi = resid(0.0), resid(1.0)
    if lo > 0 or hi < 0:
        raise NonConvergenceError(
            f"sigma2_eps_prime={sigma2_eps_prime:.6g} is outside the model range [{lo + sigma2_eps_prime:.6g}, "
            f"{hi + sigma2_eps_prime:.6g}] for this distribution"
        )
    q, info = optimize.brentq(resid, 0.0, 1.0, xtol=1e-14, full_output=True)
    if not info.converged:
        raise NonConvergenceError("noise-fraction calibration did not converge")
    return q


def bias_id(
    dist: AmplitudeDistribution,
    sigma2_eps_prime: float,
    scheme: QuantizationScheme | str = QuantizationScheme.BINARY_PHASE,
) -> float:
    """Intensity-distribution bias for a target distribution and subframe variance.

    The noise fraction is fitted so the model reproduces ``sigma2_eps_prime``;
    the bias integral is then evaluated by nested quadrature.  Returns the
    bias amplitude; its square is the asymptotic MSE.
    """
    if sigma2_eps_prime <= 0:
        raise ValueError("sigma2_eps_prime must be > 0")
    q = calibrate_noise_fraction(dist, sigma2_eps_prime, scheme)
    return simulate_noise(dist, scheme, noise_fraction=q).bias_id


def bias_cs(target_intensity: np.ndarray, replay_intensity: np.ndarray | None = None) -> float:
    """Conjugate-symmetry bias of a target intensity image.

    A binary hologram replays the average of each pixel and its 180-degree
    partner, so every pixel is off by half their difference.  Returns the
    square root of the mean half-difference.  ``replay_intensity`` is only
    checked for shape.
    """
    t = np.asarray(target_intensity, dtype=np.float64)
    if t.ndim != 2:
        raise DimensionError("target intensity must be 2-D")
    if replay_intensity is not None and np.shape(replay_intensity) != t.shape:
        raise DimensionError(f"shape mismatch: {t.shape} vs {np.shape(replay_intensity)}")
    return math.sqrt(float(np.mean(np.abs(t - rotate_180(t)) / 2.0)))


def mse_decomposition(bias_id: float, sigma2_eps_prime: float, n: int) -> float:
    """Predicted MSE after ``n`` subframes: ``bias_id**2 + sigma2_eps_prime / n``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return bias_id**2 + sigma2_eps_prime / n


# ---------------------------------------------------------------------------
# Regression


@dataclass(frozen=True)
class ConvergenceFit:
    A: float
    B: float
    r_squared: float
    samples: tuple = ()

    def predict(self, n) -> np.ndarray | float:
        return self.A + self.B / np.asarray(n, dtype=np.float64)


def fit_convergence(samples: Iterable[Sequence[float]]) -> ConvergenceFit:
    """Least-squares fit of ``E(N) = A + B / N``.

    ``samples`` holds ``(N, mean error)`` or ``(N, mean error, std)`` tuples;
    only the first two entries enter the unweighted fit.
    """
    samples = tuple(tuple(float(v) for v in s) for s in samples)
    n = np.array([s[0] for s in samples])
    e = np.array([s[1] for s in samples])
    if np.unique(n).size < 3:
        raise ValueError("fit_convergence needs at least 3 distinct subframe counts")
    if np.any(n <= 0):
        raise ValueError("subframe counts must be positive")
    x = 1.0 / n
    design = np.column_stack([np.ones_like(x), x])
    (a, b), *_ = np.linalg.lstsq(design, e, rcond=None)
    ss_res = float(np.sum((e - a - b * x) ** 2))
    ss_tot = float(np.sum((e - e.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return ConvergenceFit(float(a), float(b), min(max(r2, 0.0), 1.0), samples)


# ---------------------------------------------------------------------------
# Monte-Carlo measurement


def _single_subframe_intensity(target, scheme, rng, run):
    return replay_intensity(generate_subframe(target, scheme, rng.child(run), 0))


def estimate_noise_params(
    t: TargetImage,
    scheme: QuantizationScheme | str,
    runs: int,
    rng: RngSpec,
    threads: int = 1,
) -> NoiseModel:
    """Measure the error model from ``runs`` independent single-subframe runs.

    ``sigma2_eps_prime`` is the per-pixel variance of the intensity error
    across runs, averaged over pixels.  The MSE floor is the mean squared
    per-pixel mean error, less the ``sigma2_eps_prime / runs`` it picks up from
    finite sampling.  Run ``r`` draws from stream ``rng.child(r)``.
    """
    if runs < 2:
        raise ValueError("runs must be >= 2")
    scheme = QuantizationScheme(scheme)
    target_i = t.intensity
    mean = np.zeros(t.shape)
    m2 = np.zeros(t.shape)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = pool.map(lambda r: _single_subframe_intensity(t, scheme, rng, r), range(runs))
        for k, intensity in enumerate(results, start=1):
            delta = intensity - target_i - mean
            mean += delta / k
            m2 += delta * (intensity - target_i - mean)
    per_pixel_var = m2 / (runs - 1)
    sigma2 = float(per_pixel_var.mean())
    floor = float(np.mean(mean**2)) - sigma2 / runs
    return NoiseModel(
        mu_eps_prime=float(mean.mean()),
        sigma2_eps_prime=sigma2,
        n_subframes=1,
        bias_id=math.sqrt(max(floor, 0.0)),
        bias_cs=bias_cs(target_i),
        metadata={"runs": runs, "scheme": scheme.value, "mse_floor_raw": floor},
    )
