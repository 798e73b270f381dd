import numpy as np
import pytest

from ospr import TargetImage
from ospr.field import normalize_amplitudes

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def brute_dft(f, sign=-1):
    """Unitary DFT by explicit summation matrices."""
    ny, nx = f.shape
    wy = np.exp(sign * 2j * np.pi * np.outer(np.arange(ny), np.arange(ny)) / ny)
    wx = np.exp(sign * 2j * np.pi * np.outer(np.arange(nx), np.arange(nx)) / nx)
    return wy @ f @ wx.T / np.sqrt(nx * ny)


def brute_ssim(t, r, c1, c2, w=8):
    """Per-window SSIM by explicit loops."""
    rows, cols = t.shape
    vals = []
    for i in range(rows - w + 1):
        for j in range(cols - w + 1):
            a = t[i : i + w, j : j + w].ravel()
            b = r[i : i + w, j : j + w].ravel()
            n = a.size
            ma = sum(a) / n
            mb = sum(b) / n
            va = sum((x - ma) ** 2 for x in a) / n
            vb = sum((x - mb) ** 2 for x in b) / n
            cab = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / n
            vals.append((2 * ma * mb + c1) / (ma**2 + mb**2 + c1) * (2 * cab + c2) / (va + vb + c2))
    return float(np.mean(vals)), np.array(vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def uniform_target():
    amp = np.random.default_rng(7).uniform(0, 1, (64, 64))
    return TargetImage(normalize_amplitudes(amp), name="uniform")


def camera_amplitudes(size=512):
    """8-bit natural test image (block-averaged to ``size``), values in [0, 255]."""
    data = pytest.importorskip("skimage.data")
    img = data.camera().astype(np.float64)
    k = img.shape[0] // size
    return img.reshape(size, k, size, k).mean(axis=(1, 3))


@pytest.fixture(scope="session")
def camera_pgm(tmp_path_factory):
    from ospr.field import write_pgm

    path = tmp_path_factory.mktemp("img") / "camera128.pgm"
    write_pgm(path, np.round(camera_amplitudes(128)).astype(np.uint8))
    return path
