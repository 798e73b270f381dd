"""OSPR subframe generation and time-averaged replay accumulation.

One subframe is: give every target pixel an independent uniform phase,
back-propagate to the hologram plane with the inverse DFT, then quantise.
The perceived image after ``N`` subframes is the mean of the ``N`` replay
intensities ``|DFT(H_n)|**2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .field import TargetImage, dft_forward, dft_inverse


class QuantizationScheme(str, enum.Enum):
    """How the back-propagated hologram is restricted before display.

    ``BINARY_PHASE`` is the {0, pi} device model.  ``PHASE_ONLY`` and ``NONE``
    are reference schemes used to separate quantisation error from transform
    error.
    """

    BINARY_PHASE = "binary-phase"
    PHASE_ONLY = "phase-only-continuous"
    NONE = "none"


@dataclass(frozen=True)
class RngSpec:
    """Deterministic random stream identifier.

    Every ``(master_seed, stream_id, subframe)`` triple maps to its own
    counter-based Philox generator, so results do not depend on the order in
    which runs are scheduled.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self, subframe: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, subframe))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream_id: int) -> RngSpec:
        return RngSpec(self.master_seed, stream_id)


@dataclass(frozen=True)
class HologramFrame:
    field: np.ndarray
    scheme: QuantizationScheme
    seed: tuple[int, int, int] | None = None


def randomize_phase(t: TargetImage, rng: RngSpec | np.random.Generator, subframe: int = 0) -> np.ndarray:
    """Attach an independent uniform [0, 2 pi) phase to every target amplitude."""
    gen = rng.generator(subframe) if isinstance(rng, RngSpec) else rng
    phase = gen.random(t.shape) * (2.0 * np.pi)
    return t.amplitudes * np.exp(1j * phase)


def backpropagate(replay: np.ndarray) -> np.ndarray:
    """Hologram-plane field whose forward DFT is ``replay``."""
    return dft_inverse(replay)


def quantize(h: np.ndarray, scheme: QuantizationScheme | str = QuantizationScheme.BINARY_PHASE) -> HologramFrame:
    """Restrict a hologram to the device's modulation set.

    For the binary and phase-only schemes every pixel gets the same modulus
    ``c = rms(h)``, which keeps the total field energy unchanged.  Binary
    pixels take ``+c`` where ``Re(h) >= 0`` and ``-c`` otherwise.
    """
    scheme = QuantizationScheme(scheme)
    h = np.asarray(h)
    if scheme is QuantizationScheme.NONE:
        return HologramFrame(h.copy(), scheme)
    c = np.sqrt(np.mean(np.abs(h) ** 2))
    if scheme is QuantizationScheme.BINARY_PHASE:
        out = np.where(np.real(h) >= 0, c, -c)
    else:
        out = c * np.exp(1j * np.angle(h))
    return HologramFrame(out, scheme)


class ReplayAccumulator:
    """Running sum of subframe replay intensities.

    Accumulators for the same image size can be merged in any order, which
    is how parallel campaigns reduce their partial results.
    """

    def __init__(self, shape: tuple[int, int]):
        self.intensity_sum = np.zeros(shape, dtype=np.float64)
        self.subframes_accumulated = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity_sum.shape

    def add_intensity(self, intensity: np.ndarray) -> None:
        if intensity.shape != self.shape:
            raise DimensionError(f"frame shape {intensity.shape} does not match accumulator {self.shape}")
        self.intensity_sum += intensity
        self.subframes_accumulated += 1

    def merge(self, other: ReplayAccumulator) -> ReplayAccumulator:
        if other.shape != self.shape:
            raise DimensionError(f"cannot merge accumulators of shape {self.shape} and {other.shape}")
        out = ReplayAccumulator(self.shape)
        out.intensity_sum = self.intensity_sum + other.intensity_sum
        out.subframes_accumulated = self.subframes_accumulated + other.subframes_accumulated
        return out

    def mean_intensity(self) -> np.ndarray:
        if self.subframes_accumulated < 1:
            raise ValueError("mean intensity is undefined before any subframe is accumulated")
        return self.intensity_sum / self.subframes_accumulated


def replay_intensity(frame: HologramFrame | np.ndarray) -> np.ndarray:
    f = frame.field if isinstance(frame, HologramFrame) else frame
    return np.abs(dft_forward(f)) ** 2


def accumulate_subframe(acc: ReplayAccumulator, frame: HologramFrame) -> ReplayAccumulator:
    """Add one subframe's replay intensity to ``acc`` (in place) and return it."""
    if frame.field.shape != acc.shape:
        raise DimensionError(f"frame shape {frame.field.shape} does not match accumulator {acc.shape}")
    acc.add_intensity(replay_intensity(frame))
    return acc


def generate_subframe(t: TargetImage, scheme: QuantizationScheme | str, rng: RngSpec, subframe: int) -> HologramFrame:
    h = backpropagate(randomize_phase(t, rng, subframe))
    frame = quantize(h, scheme)
    return HologramFrame(frame.field, frame.scheme, (rng.master_seed, rng.stream_id, subframe))


def run_ospr(
    t: TargetImage,
    n_subframes: int,
    scheme: QuantizationScheme | str,
    rng: RngSpec,
    frames: list | None = None,
) -> ReplayAccumulator:
    """Run ``n_subframes`` OSPR iterations and return the filled accumulator.

    If ``frames`` is a list, the quantised holograms are appended to it.
    """
    if n_subframes < 1:
        raise ValueError(f"n_subframes must be >= 1, got {n_subframes}")
    acc = ReplayAccumulator(t.shape)
    for n in range(n_subframes):
        frame = generate_subframe(t, scheme, rng, n)
        if frames is not None:
            frames.append(frame)
        accumulate_subframe(acc, frame)
    return acc
