"""Image-quality metrics on intensity images: MSE, windowed SSIM and SSIM models.

SSIM here is the two-factor form ``s1 * s2`` evaluated on 8x8 unweighted
windows at every valid position (stride 1, no padding)::

    s1 = (2 mu_T mu_R + c1) / (mu_T**2 + mu_R**2 + c1)
    s2 = (2 cov_TR + c2) / (var_T + var_R + c2)

with population (divide-by-count) window statistics, ``c1 = (k1 L)**2`` and
``c2 = (k2 L)**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .engine import QuantizationScheme
from .errors import DimensionError
from .field import TargetImage, rotate_180
from .noise import (
    CONJUGATE_PAIRED,
    AmplitudeDistribution,
    calibrate_noise_fraction,
    conditional_replay_moments,
    fit_convergence,
)

COMPONENTS = ("mu_t2", "mu_r2", "var_t", "var_r", "cov_tr", "s1", "s2")
TARGET_COMPONENTS = ("mu_t2", "var_t")


def mse(target_intensity: np.ndarray, replay_intensity: np.ndarray) -> float:
    """Mean squared difference of two intensity images."""
    t = np.asarray(target_intensity, dtype=np.float64)
    r = np.asarray(replay_intensity, dtype=np.float64)
    if t.shape != r.shape:
        raise DimensionError(f"shape mismatch: {t.shape} vs {r.shape}")
    return float(np.mean((r - t) ** 2))


def dynamic_range(target_intensity: np.ndarray) -> float:
    """``max - min`` of the target intensity.

    A flat target has zero range, which would make ``c1 = c2 = 0``; its peak
    value is used instead (or 1 for an all-zero image).
    """
    t = np.asarray(target_intensity, dtype=np.float64)
    span = float(t.max() - t.min())
    if span > 0:
        return span
    return float(t.max()) or 1.0


@dataclass(frozen=True)
class SsimParams:
    dynamic_range: float
    k1: float = 0.01
    k2: float = 0.03
    window: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be > 0")

    @classmethod
    def for_target(cls, target_intensity: np.ndarray, **kw) -> SsimParams:
        return cls(dynamic_range(target_intensity), **kw)

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


@dataclass(frozen=True)
class SsimReport:
    global_ssim: float
    mu_t: np.ndarray
    mu_r: np.ndarray
    var_t: np.ndarray
    var_r: np.ndarray
    cov_tr: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    params: SsimParams
    n_subframes: int | None = None

    def component(self, name: str) -> np.ndarray:
        if name == "mu_t2":
            return self.mu_t**2
        if name == "mu_r2":
            return self.mu_r**2
        if name in ("var_t", "var_r", "cov_tr", "s1", "s2"):
            return getattr(self, name)
        raise KeyError(f"unknown SSIM component {name!r}; expected one of {COMPONENTS}")


def _window_means(a: np.ndarray, w: int, stride: int) -> np.ndarray:
    # separable box sums keep each sum local (no image-wide cumulative totals)
    rows = sliding_window_view(a, w, axis=1)[:, ::stride].sum(axis=-1)
    return sliding_window_view(rows, w, axis=0)[::stride].sum(axis=-1) / (w * w)


def window_stats(t: np.ndarray, r: np.ndarray, window: int = 8, stride: int = 1):
    """Per-window means, population variances and covariance of two images."""
    mu_t = _window_means(t, window, stride)
    mu_r = _window_means(r, window, stride)
    var_t = _window_means(t * t, window, stride) - mu_t**2
    var_r = _window_means(r * r, window, stride) - mu_r**2
    cov = _window_means(t * r, window, stride) - mu_t * mu_r
    return mu_t, mu_r, var_t, var_r, cov


def ssim(
    target_intensity: np.ndarray,
    replay_intensity: np.ndarray,
    params: SsimParams | None = None,
    n_subframes: int | None = None,
) -> SsimReport:
    """Windowed SSIM of ``replay_intensity`` against ``target_intensity``.

    ``params`` defaults to :meth:`SsimParams.for_target` on the first argument.
    """
    t = np.asarray(target_intensity, dtype=np.float64)
    r = np.asarray(replay_intensity, dtype=np.float64)
    if t.shape != r.shape:
        raise DimensionError(f"shape mismatch: {t.shape} vs {r.shape}")
    if params is None:
        params = SsimParams.for_target(t)
    if t.ndim != 2 or min(t.shape) < params.window:
        raise DimensionError(f"image {t.shape} is smaller than the {params.window}x{params.window} window")
    mu_t, mu_r, var_t, var_r, cov = window_stats(t, r, params.window, params.stride)
    c1, c2 = params.c1, params.c2
    s1 = (2 * mu_t * mu_r + c1) / (mu_t**2 + mu_r**2 + c1)
    s2 = (2 * cov + c2) / (var_t + var_r + c2)
    return SsimReport(float(np.mean(s1 * s2)), mu_t, mu_r, var_t, var_r, cov, s1, s2, params, n_subframes)


@dataclass(frozen=True)
class SsimComponentHistogram:
    component: str
    n_subframes: int | None
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    total: int = field(default=0)

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise ValueError("histogram mass must equal the number of windows")


def histogram_edges(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        hi = lo + max(abs(lo), 1.0) * 1e-9
    return np.linspace(lo, hi, bins + 1)


def ssim_component_histograms(
    reports: Sequence[SsimReport],
    component: str,
    bins: int | np.ndarray = 64,
) -> SsimComponentHistogram:
    """Histogram one SSIM component over every window of every report.

    With an integer ``bins`` the edges span the pooled value range; values
    outside explicit edges are counted in the end bins.
    """
    if not reports:
        raise ValueError("need at least one report")
    if component not in COMPONENTS:
        raise KeyError(f"unknown SSIM component {component!r}; expected one of {COMPONENTS}")
    values = np.concatenate([r.component(component).ravel() for r in reports])
    edges = histogram_edges(values, bins) if np.ndim(bins) == 0 else np.asarray(bins, dtype=np.float64)
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    ns = {r.n_subframes for r in reports}
    return SsimComponentHistogram(component, ns.pop() if len(ns) == 1 else None, counts, edges,
                                  float(values.mean()), int(values.size))


def ssim_model(sigma2_t: float, sigma2_eps_prime: float, n: int, params: SsimParams) -> float:
    """Approximate SSIM after ``n`` subframes with ``s1`` set to 1.

    ``c2 / (2 sigma2_t + sigma2_eps_prime / n + c2)``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return params.c2 / (2.0 * sigma2_t + sigma2_eps_prime / n + params.c2)


def ssim_model_full(
    target: TargetImage | np.ndarray,
    sigma2_eps_prime: float,
    n: int,
    params: SsimParams | None = None,
    scheme: QuantizationScheme | str = QuantizationScheme.BINARY_PHASE,
    noise_fraction: float | None = None,
) -> float:
    """Predicted mean SSIM after ``n`` subframes, window by window.

    Each pixel's replay intensity is modelled by its expected value and
    subframe variance (see :func:`ospr.noise.conditional_replay_moments`),
    with the noise fraction fitted to ``sigma2_eps_prime``.  For every window
    the expected statistics are::

        mu_R   = mean(E)
        var_R  = var(E) + (1 - 1/w**2) mean(V) / n
        cov_TR = cov(T**2, E)

    and ``s1 * s2`` is averaged over windows.

    ``target`` may be a :class:`TargetImage` or an amplitude array.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    scheme = QuantizationScheme(scheme)
    t = target if isinstance(target, TargetImage) else TargetImage(np.asarray(target))
    ti = t.intensity
    if params is None:
        params = SsimParams.for_target(ti)
    if min(ti.shape) < params.window:
        raise DimensionError(f"image {ti.shape} is smaller than the {params.window}x{params.window} window")
    if noise_fraction is None:
        if scheme is QuantizationScheme.NONE or sigma2_eps_prime <= 0:
            noise_fraction = 0.0
        else:
            noise_fraction = calibrate_noise_fraction(AmplitudeDistribution.from_target(t), sigma2_eps_prime, scheme)
    power = float(ti.mean())
    partner = rotate_180(ti) if CONJUGATE_PAIRED[scheme] else np.zeros_like(ti)
    e, v = conditional_replay_moments(ti, partner, noise_fraction, power, CONJUGATE_PAIRED[scheme])
    w, st = params.window, params.stride
    mu_t, mu_e, var_t, var_e, cov = window_stats(ti, e, w, st)
    noise = _window_means(v, w, st) / n
    var_r = var_e + (1.0 - 1.0 / (w * w)) * noise
    mu_r2 = mu_e**2 + noise / (w * w)
    c1, c2 = params.c1, params.c2
    s1 = (2 * mu_t * mu_e + c1) / (mu_t**2 + mu_r2 + c1)
    s2 = (2 * cov + c2) / (var_t + var_r + c2)
    return float(np.mean(s1 * s2))


def fit_ssim_asymptote(ns: Sequence[int], ssim_means: Sequence[float]) -> float:
    """Intercept of ``SSIM(N) = A + B / N``; the value SSIM converges to."""
    return fit_convergence(zip(ns, ssim_means)).A


__all__ = [
    "COMPONENTS",
    "SsimComponentHistogram",
    "SsimParams",
    "SsimReport",
    "dynamic_range",
    "fit_ssim_asymptote",
    "mse",
    "ssim",
    "ssim_component_histograms",
    "ssim_model",
    "ssim_model_full",
    "window_stats",
]
