"""Simulation and statistics toolkit for One-Step Phase-Retrieval holography."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionError,
    NonConvergenceError,
    OsprError,
    UnsupportedFormatError,
    ZeroImageError,
)
from .field import (
    EnergyReport,
    TargetImage,
    check_parseval,
    dft_forward,
    dft_inverse,
    induce_symmetry,
    load_target,
    rotate_180,
)
from .engine import (
    HologramFrame,
    QuantizationScheme,
    ReplayAccumulator,
    RngSpec,
    accumulate_subframe,
    backpropagate,
    quantize,
    randomize_phase,
    run_ospr,
)
from .noise import (
    AmplitudeDistribution,
    BiasReport,
    ConvergenceFit,
    NoiseModel,
    bias_cs,
    bias_id,
    estimate_noise_params,
    fit_convergence,
    mse_decomposition,
    rician_pdf,
    simulate_noise,
)
from .metrics import (
    SsimComponentHistogram,
    SsimParams,
    SsimReport,
    mse,
    ssim,
    ssim_component_histograms,
    ssim_model,
    ssim_model_full,
)
