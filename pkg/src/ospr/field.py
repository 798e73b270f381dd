"""Complex fields, the unitary 2-D DFT pair and target-image ingestion.

Fields are plain 2-D numpy arrays (``complex128`` or ``float64``), indexed
``[row, column]``.  The transform pair is orthonormal so that the total energy
``sum(|f|**2)`` is identical in the hologram and replay planes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import DimensionError, UnsupportedFormatError, ZeroImageError

ENERGY_POLICIES = ("unit-mean-square", "unit-peak")
_TINY = np.finfo(np.float64).tiny


def _check_field(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim != 2:
        raise DimensionError(f"expected a 2-D field, got shape {f.shape}")
    if min(f.shape) < 2:
        raise DimensionError(f"field dimensions must be >= 2, got {f.shape}")
    return f


def dft_forward(f: np.ndarray) -> np.ndarray:
    """Unitary forward DFT, ``F[u, v] = sum f[x, y] exp(-2 pi i (ux/Nx + vy/Ny)) / sqrt(Nx Ny)``."""
    return scipy.fft.fft2(_check_field(f), norm="ortho")


def dft_inverse(f: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT; exact inverse of :func:`dft_forward`."""
    return scipy.fft.ifft2(_check_field(f), norm="ortho")


def energy(f: np.ndarray) -> float:
    return float(np.sum(np.abs(f) ** 2))


def rotate_180(a: np.ndarray) -> np.ndarray:
    """Return ``a[(-u) mod Nx, (-v) mod Ny]``, the conjugate-partner layout.

    Row and column 0 map onto themselves.
    """
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))


def is_rotationally_symmetric(a: np.ndarray) -> bool:
    return bool(np.array_equal(a, rotate_180(a)))


@dataclass(frozen=True)
class EnergyReport:
    diffraction_energy: float
    replay_energy: float
    relative_mismatch: float


def check_parseval(a: np.ndarray, b: np.ndarray) -> EnergyReport:
    """Compare the energies of a hologram-plane and a replay-plane field.

    The mismatch is relative to the larger of the two energies.
    """
    a = _check_field(a)
    b = _check_field(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    ea, eb = energy(a), energy(b)
    return EnergyReport(ea, eb, abs(ea - eb) / max(ea, eb, _TINY))


@dataclass(frozen=True)
class TargetImage:
    """Non-negative target amplitudes ``T[u, v]``.

    ``symmetric`` records whether the image was passed through
    :func:`induce_symmetry`; the property is re-checked on construction.
    """

    amplitudes: np.ndarray
    symmetric: bool = False
    name: str = dc_field(default="target", compare=False)

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.float64)
        _check_field(amp)
        if np.any(amp < 0) or not np.all(np.isfinite(amp)):
            raise ValueError("target amplitudes must be finite and non-negative")
        if self.symmetric and not is_rotationally_symmetric(amp):
            raise ValueError("symmetric flag set but amplitudes are not rotationally symmetric")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def shape(self) -> tuple[int, int]:
        return self.amplitudes.shape

    @property
    def intensity(self) -> np.ndarray:
        return self.amplitudes**2

    @property
    def energy(self) -> float:
        return float(np.sum(self.amplitudes**2))


def normalize_amplitudes(amp: np.ndarray, policy: str = "unit-mean-square") -> np.ndarray:
    """Scale amplitudes according to an energy policy.

    ``unit-mean-square`` makes ``sum(T**2) == T.size``; ``unit-peak`` leaves
    the values untouched (pixel values are already divided by 255).
    """
    if policy not in ENERGY_POLICIES:
        raise ValueError(f"unknown energy policy {policy!r}; expected one of {ENERGY_POLICIES}")
    amp = np.asarray(amp, dtype=np.float64)
    ms = np.mean(amp**2)
    if ms == 0:
        raise ZeroImageError("image is all zeros")
    if policy == "unit-mean-square":
        amp = amp / np.sqrt(ms)
    return amp


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary 8-bit grayscale PGM (P5) into a ``uint8`` array."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise UnsupportedFormatError(f"{path}: not a binary PGM (P5) file")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnsupportedFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 256:
        raise UnsupportedFormatError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raster.reshape(height, width).copy()


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(img).tobytes())


def _read_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise UnsupportedFormatError("PNG input requires Pillow (pip install artifact[png])") from exc
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            raise UnsupportedFormatError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
        return np.asarray(im.convert("L"), dtype=np.uint8)


def load_target(path: str | os.PathLike, normalize: str = "unit-mean-square") -> TargetImage:
    """Load an 8-bit grayscale image as target amplitudes.

    Pixel values are divided by 255 and then scaled by ``normalize`` (see
    :func:`normalize_amplitudes`).

    Raises:
        OSError: the file cannot be read.
        UnsupportedFormatError: not an 8-bit grayscale PGM/PNG.
        ZeroImageError: every pixel is 0.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P5":
        pixels = read_pgm(path)
    elif magic == b"\x89PNG\r\n\x1a\n":
        pixels = _read_png(path)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported image format")
    amp = normalize_amplitudes(pixels.astype(np.float64) / 255.0, normalize)
    return TargetImage(amp, symmetric=False, name=path.stem)


def induce_symmetry(t: TargetImage) -> TargetImage:
    """Average the target with its 180-degree rotation, keeping total energy.

    Binary-phase holograms can only reproduce rotationally symmetric replay
    intensities; this builds the closest such target.
    """
    amp = t.amplitudes
    sym = (amp + rotate_180(amp)) / 2.0
    e_sym = np.sum(sym**2)
    if e_sym == 0:
        raise ZeroImageError("image is all zeros")
    sym = sym * np.sqrt(np.sum(amp**2) / e_sym)
    return TargetImage(sym, symmetric=True, name=t.name)
