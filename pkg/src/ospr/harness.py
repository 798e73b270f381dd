"""Experiment configuration and Monte-Carlo campaigns.

Every campaign writes plain CSV files (17 significant digits, header row with
units) plus a ``<command>.meta.json`` sidecar holding the configuration echo,
tool version and a timestamp.  CSV contents depend only on the configuration
and seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import __version__
from .engine import QuantizationScheme, RngSpec, run_ospr
from .errors import ConfigError
from .field import (
    TargetImage,
    check_parseval,
    dft_forward,
    induce_symmetry,
    load_target,
    normalize_amplitudes,
    write_pgm,
)
from .metrics import (
    COMPONENTS,
    SsimParams,
    fit_ssim_asymptote,
    histogram_edges,
    mse,
    ssim,
    ssim_model,
    ssim_model_full,
)
from .noise import (
    DEFAULT_RICIAN_PATH,
    AmplitudeDistribution,
    BiasReport,
    ConvergenceFit,
    NoiseModel,
    estimate_noise_params,
    fit_convergence,
    simulate_noise,
)

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 24, 30)
BUILTIN_TARGETS = ("uniform", "constant")
TARGET_STREAM = 1 << 40

CONVERGE_COLUMNS = (
    "n_subframes [count]",
    "mse_mean [intensity^2]",
    "mse_std [intensity^2]",
    "mse_err2 [intensity^2]",
    "mse_model [intensity^2]",
    "ssim_mean [1]",
    "ssim_std [1]",
    "ssim_err2 [1]",
)
FIT_COLUMNS = (
    "A [intensity^2]",
    "B [intensity^2]",
    "r_squared [1]",
    "mse_floor_measured [intensity^2]",
    "sigma2_eps_prime [intensity^2]",
    "mu_eps_prime [intensity]",
    "bias_id [intensity]",
    "bias_cs [intensity]",
)
TABLE1_COLUMNS = (
    "distribution",
    "measured_bias_sq [intensity^2]",
    "measured_sigma2_eps_prime [intensity^2]",
    "simulated_bias_sq [intensity^2]",
    "simulated_sigma2_eps_prime [intensity^2]",
    "max_relative_error [1]",
    "runs [count]",
    "seed",
)
COMPONENT_COLUMNS = ("component", "n_subframes [count]", "bin_lo", "bin_hi", "count [windows]")
COMPONENT_SUMMARY_COLUMNS = (
    "component",
    "n_subframes [count]",
    "mean",
    "std",
    "mean_abs_deviation_from_1",
    "windows [count]",
)
SSIM_CONVERGE_COLUMNS = (
    "n_subframes [count]",
    "ssim_mean [1]",
    "ssim_std [1]",
    "ssim_err2 [1]",
    "ssim_model [1]",
    "ssim_model_full [1]",
)


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    """Campaign settings; see ``README.md`` for the key-value file format."""

    target: str = "uniform"
    size: int = 512
    symmetrize: bool = False
    scheme: QuantizationScheme = QuantizationScheme.BINARY_PHASE
    sweep: tuple[int, ...] = DEFAULT_SWEEP
    runs: int = 100
    seed: int = 0
    out: Path = Path("ospr-out")
    threads: int = 1
    subframes: int = 8
    bins: int = 64
    normalize: str = "unit-mean-square"
    mandrill: str | None = None
    peppers: str | None = None

    def validate(self) -> ExperimentConfig:
        if self.runs < 1:
            raise ConfigError("runs: must be >= 1")
        if not self.sweep:
            raise ConfigError("sweep: must not be empty")
        if any(n < 1 for n in self.sweep):
            raise ConfigError("sweep: subframe counts must be >= 1")
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ConfigError("sweep: must be strictly increasing")
        if self.size < 8:
            raise ConfigError("size: must be >= 8")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        if self.subframes < 1:
            raise ConfigError("subframes: must be >= 1")
        if self.bins < 1:
            raise ConfigError("bins: must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        return self

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["scheme"] = self.scheme.value
        d["out"] = str(self.out)
        d["sweep"] = list(self.sweep)
        return d


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_sweep(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _optional_str(s: str) -> str | None:
    return s.strip() or None


_PARSERS: dict[str, Callable[[str], object]] = {
    "target": str.strip,
    "size": int,
    "symmetrize": _parse_bool,
    "scheme": QuantizationScheme,
    "sweep": _parse_sweep,
    "runs": int,
    "seed": int,
    "out": Path,
    "threads": int,
    "subframes": int,
    "bins": int,
    "normalize": str.strip,
    "mandrill": _optional_str,
    "peppers": _optional_str,
}


def read_config_file(path: str | Path) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Returns ``{key: (raw value, line number)}``.
    """
    entries: dict[str, tuple[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in _PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            entries[key] = (value, lineno)
    return entries


def build_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Configuration from an optional file, with ``overrides`` taking precedence.

    Override values may be raw strings or already-typed values; ``None`` means
    "not given".
    """
    values: dict[str, object] = {}
    if path is not None:
        for key, (raw, lineno) in read_config_file(path).items():
            try:
                values[key] = _PARSERS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {key}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(f"unknown setting {key!r}")
        if isinstance(value, str):
            try:
                value = _PARSERS[key](value)
            except ValueError as exc:
                raise ConfigError(f"--{key}: {exc}") from exc
        values[key] = value
    if "scheme" in values:
        values["scheme"] = QuantizationScheme(values["scheme"])
    if "sweep" in values:
        values["sweep"] = tuple(values["sweep"])
    return ExperimentConfig(**values).validate()


# ---------------------------------------------------------------------------
# Targets


def builtin_target(kind: str, size: int, seed: int) -> TargetImage:
    """``uniform``: i.i.d. uniform amplitudes; ``constant``: all equal.

    Both are scaled to unit mean-square amplitude.
    """
    if kind == "uniform":
        gen = RngSpec(seed, TARGET_STREAM).generator()
        amp = gen.uniform(0.0, 1.0, (size, size))
    elif kind == "constant":
        amp = np.ones((size, size))
    else:
        raise ConfigError(f"target: unknown builtin {kind!r}; expected one of {BUILTIN_TARGETS}")
    return TargetImage(normalize_amplitudes(amp), name=kind)


def make_target(config: ExperimentConfig, source: str | None = None, symmetrize: bool | None = None) -> TargetImage:
    source = config.target if source is None else source
    symmetrize = config.symmetrize if symmetrize is None else symmetrize
    if source in BUILTIN_TARGETS:
        t = builtin_target(source, config.size, config.seed)
    else:
        try:
            t = load_target(source, config.normalize)
        except ValueError as exc:
            raise ConfigError(f"normalize: {exc}") from exc
    return induce_symmetry(t) if symmetrize else t


def reference_distribution(source: str, target: TargetImage) -> AmplitudeDistribution:
    """Amplitude distribution fed to the bias integral for a target."""
    if source == "uniform" and not target.symmetric:
        return AmplitudeDistribution.uniform()
    if source == "constant":
        return AmplitudeDistribution.constant()
    return AmplitudeDistribution.from_target(target)


# ---------------------------------------------------------------------------
# Campaign plumbing


def run_stream(n_subframes: int, run: int) -> int:
    """Stream id of run ``run`` at subframe count ``n_subframes``."""
    return (n_subframes << 20) | run


def ordered_map(fn: Callable, items: Iterable, threads: int) -> Iterator:
    """``map`` over a thread pool, yielding in input order, a few tasks ahead."""
    items = list(items)
    if threads <= 1:
        yield from map(fn, items)
        return
    chunk = 2 * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(items), chunk):
            yield from pool.map(fn, items[start : start + chunk])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class CsvSink:
    """CSV writer that flushes after every complete row."""

    def __init__(self, path: Path, columns: Iterable[str]):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._ncols = len(tuple(columns))
        self._writer.writerow(columns)
        self._fh.flush()

    def row(self, values: Iterable) -> None:
        values = [_fmt(v) for v in values]
        if len(values) != self._ncols:
            raise ValueError(f"row has {len(values)} fields, expected {self._ncols}")
        self._writer.writerow(values)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_meta(out: Path, command: str, config: ExperimentConfig, extra: dict | None = None) -> Path:
    meta = {
        "command": command,
        "tool_version": __version__,
        "config": config.echo(),
        "default_sweep": list(DEFAULT_SWEEP),
        "rician_path": DEFAULT_RICIAN_PATH,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    meta.update(extra or {})
    path = out / f"{command}.meta.json"
    out.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Commands


def cmd_generate(config: ExperimentConfig, echo: Callable[[str], None] = print) -> list[Path]:
    """Write every quantised subframe and the mean replay intensity as PGM."""
    target = make_target(config)
    frames: list = []
    acc = run_ospr(target, config.subframes, config.scheme, RngSpec(config.seed), frames=frames)
    config.out.mkdir(parents=True, exist_ok=True)
    written = []
    for n, frame in enumerate(frames):
        if config.scheme is QuantizationScheme.BINARY_PHASE:
            img = np.where(np.real(frame.field) > 0, 255, 0).astype(np.uint8)
        else:
            phase = np.angle(frame.field)
            img = np.round((phase + np.pi) / (2 * np.pi) * 255).astype(np.uint8)
        path = config.out / f"hologram_{n:04d}.pgm"
        write_pgm(path, img)
        written.append(path)
        rep = check_parseval(frame.field, dft_forward(frame.field))
        echo(f"subframe {n}: diffraction energy {rep.diffraction_energy:.12g}, "
             f"replay energy {rep.replay_energy:.12g}, relative mismatch {rep.relative_mismatch:.3g}")
    mean = acc.mean_intensity()
    peak = mean.max()
    img = np.round(mean / peak * 255).astype(np.uint8) if peak > 0 else np.zeros(mean.shape, np.uint8)
    path = config.out / "replay_mean.pgm"
    write_pgm(path, img)
    written.append(path)
    echo(f"target energy {target.energy:.12g}, mean replay energy {float(mean.sum()):.12g}, "
         f"MSE {mse(target.intensity, mean):.12g}")
    write_meta(config.out, "generate", config, {"files": [p.name for p in written]})
    return written


@dataclass
class CampaignResult:
    rows: list[dict]
    fit: ConvergenceFit
    bias: BiasReport
    noise: NoiseModel
    config: dict
    tool_version: str = __version__
    paths: dict = field(default_factory=dict)


def _converge_point(target, params, scheme, seed, n):
    ti = target.intensity

    def one(run):
        acc = run_ospr(target, n, scheme, RngSpec(seed, run_stream(n, run)))
        mean = acc.mean_intensity()
        return mse(ti, mean), ssim(ti, mean, params).global_ssim

    return one


def cmd_converge(config: ExperimentConfig) -> CampaignResult:
    """MSE and SSIM against subframe count, with the ``A + B/N`` fit."""
    target = make_target(config)
    params = SsimParams.for_target(target.intensity)
    noise = estimate_noise_params(target, config.scheme, max(config.runs, 2), RngSpec(config.seed), config.threads)
    out = config.out
    rows = []
    path = out / "converge.csv"
    with CsvSink(path, CONVERGE_COLUMNS) as sink:
        for n in config.sweep:
            res = list(ordered_map(_converge_point(target, params, config.scheme, config.seed, n),
                                   range(config.runs), config.threads))
            mse_mean, mse_std = _mean_std([r[0] for r in res])
            ssim_mean, ssim_std = _mean_std([r[1] for r in res])
            row = {
                "n_subframes": n,
                "mse_mean": mse_mean,
                "mse_std": mse_std,
                "mse_err2": 2 * mse_std,
                "mse_model": noise.predicted_mse(n),
                "ssim_mean": ssim_mean,
                "ssim_std": ssim_std,
                "ssim_err2": 2 * ssim_std,
            }
            sink.row(row.values())
            rows.append(row)
            log.info("N=%d: MSE %.6g +- %.3g, SSIM %.6g", n, mse_mean, 2 * mse_std, ssim_mean)
    result_fit = None
    fit_path = out / "converge_fit.csv"
    with CsvSink(fit_path, FIT_COLUMNS) as sink:
        if len(set(config.sweep)) >= 3:
            result_fit = fit_convergence((r["n_subframes"], r["mse_mean"], r["mse_std"]) for r in rows)
            sink.row([result_fit.A, result_fit.B, result_fit.r_squared, noise.mse_floor,
                      noise.sigma2_eps_prime, noise.mu_eps_prime, noise.bias_id, noise.bias_cs])
        else:
            result_fit = ConvergenceFit(math.nan, math.nan, math.nan, ())
    bias = BiasReport(noise.bias_cs, noise.bias_id, noise.sigma2_eps_prime)
    write_meta(out, "converge", config, {"dynamic_range": params.dynamic_range})
    return CampaignResult(rows, result_fit, bias, noise, config.echo(), paths={"csv": path, "fit": fit_path})


TABLE1_BUILTIN = ("uniform", "constant")


def table1_row(config: ExperimentConfig, name: str, source: str, symmetrize: bool) -> dict:
    target = make_target(config, source, symmetrize)
    measured = estimate_noise_params(target, config.scheme, max(config.runs, 2), RngSpec(config.seed),
                                     config.threads)
    simulated = simulate_noise(reference_distribution(source, target), config.scheme)
    rel = []
    for m, s in ((measured.mse_floor, simulated.mse_floor),
                 (measured.sigma2_eps_prime, simulated.sigma2_eps_prime)):
        if m > 0.01:
            rel.append(abs(s - m) / m)
    return {
        "distribution": name,
        "measured_bias_sq": measured.mse_floor,
        "measured_sigma2": measured.sigma2_eps_prime,
        "simulated_bias_sq": simulated.mse_floor,
        "simulated_sigma2": simulated.sigma2_eps_prime,
        "max_relative_error": max(rel) if rel else 0.0,
        "runs": max(config.runs, 2),
        "seed": config.seed,
    }


def cmd_table1(config: ExperimentConfig) -> list[dict]:
    """Measured and simulated noise parameters per amplitude distribution.

    Builtin rows (uniform, constant) are always produced; image rows appear
    when ``mandrill``/``peppers`` paths are configured and use the
    rotationally symmetrised image.
    """
    sources = [(k, k, False) for k in TABLE1_BUILTIN]
    for name in ("mandrill", "peppers"):
        path = getattr(config, name)
        if path is not None:
            if not Path(path).is_file():
                raise FileNotFoundError(f"{name}: image file not found: {path}")
            sources.append((name, path, True))
    rows = []
    path = config.out / "table1.csv"
    with CsvSink(path, TABLE1_COLUMNS) as sink:
        for name, source, sym in sources:
            row = table1_row(config, name, source, sym)
            sink.row(row.values())
            rows.append(row)
    write_meta(config.out, "table1", config)
    return rows


def _component_values(report):
    return {c: report.component(c).ravel() for c in COMPONENTS}


def cmd_ssim_components(config: ExperimentConfig) -> dict:
    """Histograms of the SSIM window statistics for each subframe count.

    Bin edges for each (component, N) come from the first run, widened by
    half the range on each side; later values outside them land in the end
    bins.
    """
    if len(config.sweep) < 2:
        raise ConfigError("sweep: ssim-components needs at least two subframe counts")
    target = make_target(config)
    ti = target.intensity
    params = SsimParams.for_target(ti)
    out = config.out
    summary: dict = {}
    with CsvSink(out / "ssim_components.csv", COMPONENT_COLUMNS) as hist_sink, \
            CsvSink(out / "ssim_components_summary.csv", COMPONENT_SUMMARY_COLUMNS) as sum_sink:
        for n in config.sweep:
            def report(run, n=n):
                acc = run_ospr(target, n, config.scheme, RngSpec(config.seed, run_stream(n, run)))
                return _component_values(ssim(ti, acc.mean_intensity(), params, n))

            first = report(0)
            edges = {}
            for c, v in first.items():
                e = histogram_edges(v, config.bins)
                if c not in ("mu_t2", "var_t"):
                    pad = (e[-1] - e[0]) / 2
                    e = np.linspace(e[0] - pad, e[-1] + pad, config.bins + 1)
                edges[c] = e
            counts = {c: np.zeros(config.bins, dtype=np.int64) for c in COMPONENTS}
            sums = {c: np.zeros(3) for c in COMPONENTS}

            def reduce(values):
                for c, v in values.items():
                    counts[c] += np.histogram(np.clip(v, edges[c][0], edges[c][-1]), bins=edges[c])[0]
                    sums[c] += (v.size, v.sum(), np.sum(v * v))

            def dev(c, values):
                return float(np.sum(np.abs(1.0 - values))) if c in ("s1", "s2") else 0.0

            absdev = {c: 0.0 for c in COMPONENTS}
            for values in [first, *ordered_map(report, range(1, config.runs), config.threads)]:
                reduce(values)
                for c in COMPONENTS:
                    absdev[c] += dev(c, values[c])
            for c in COMPONENTS:
                for lo, hi, k in zip(edges[c][:-1], edges[c][1:], counts[c]):
                    hist_sink.row([c, n, lo, hi, k])
                cnt, s, s2 = sums[c]
                mean = s / cnt
                std = math.sqrt(max(s2 / cnt - mean * mean, 0.0))
                dev_mean = absdev[c] / cnt if c in ("s1", "s2") else math.nan
                sum_sink.row([c, n, mean, std, dev_mean, int(cnt)])
                summary[(c, n)] = {"mean": mean, "std": std, "mean_abs_dev": dev_mean,
                                   "counts": counts[c].copy(), "edges": edges[c]}
    write_meta(out, "ssim-components", config, {"dynamic_range": params.dynamic_range})
    return summary


def cmd_ssim_converge(config: ExperimentConfig) -> list[dict]:
    """Measured mean SSIM per subframe count next to the two SSIM models."""
    target = make_target(config)
    ti = target.intensity
    params = SsimParams.for_target(ti)
    noise = estimate_noise_params(target, config.scheme, max(config.runs, 2), RngSpec(config.seed), config.threads)
    sigma2_t = float(np.mean(ssim(ti, ti, params).var_t))
    rows = []
    with CsvSink(config.out / "ssim_converge.csv", SSIM_CONVERGE_COLUMNS) as sink:
        for n in config.sweep:
            res = list(ordered_map(_converge_point(target, params, config.scheme, config.seed, n),
                                   range(config.runs), config.threads))
            mean, std = _mean_std([r[1] for r in res])
            row = {
                "n_subframes": n,
                "ssim_mean": mean,
                "ssim_std": std,
                "ssim_err2": 2 * std,
                "ssim_model": ssim_model(sigma2_t, noise.sigma2_eps_prime, n, params),
                "ssim_model_full": ssim_model_full(target, noise.sigma2_eps_prime, n, params, config.scheme),
            }
            sink.row(row.values())
            rows.append(row)
    extra = {"dynamic_range": params.dynamic_range, "sigma2_eps_prime": noise.sigma2_eps_prime}
    if len(rows) >= 3:
        extra["ssim_asymptote"] = fit_ssim_asymptote([r["n_subframes"] for r in rows],
                                                     [r["ssim_mean"] for r in rows])
    write_meta(config.out, "ssim-converge", config, extra)
    return rows


COMMANDS = {
    "generate": cmd_generate,
    "converge": cmd_converge,
    "table1": cmd_table1,
    "ssim-components": cmd_ssim_components,
    "ssim-converge": cmd_ssim_converge,
}

__all__ = [
    "COMMANDS",
    "CampaignResult",
    "ExperimentConfig",
    "build_config",
    "builtin_target",
    "cmd_converge",
    "cmd_generate",
    "cmd_ssim_components",
    "cmd_ssim_converge",
    "cmd_table1",
    "make_target",
]
