"""Entropy gain of discrete-time LTI filters: exact Gaussian computations,
Toeplitz spectra, Monte-Carlo probes and convergence experiments."""

from .gaussian import (
    DisturbanceSpec,
    InputSpec,
    LinearGaussianModel,
    disturbance_gain,
    entropy,
    initial_state_gain,
    input_disturbance_gain,
    mutual_information,
)
from .lti import (
    TransferFunction,
    closed_loop,
    from_coeffs,
    from_impulse,
    impulse_response,
    jensen_log_integral,
    make_tf,
    nmp_summary,
)
from .toeplitz import conv_matrix, effective_entropy_gain, svd_spectrum, tall_conv_matrix

__version__ = "0.1.0"

__all__ = [
    "DisturbanceSpec",
    "InputSpec",
    "LinearGaussianModel",
    "TransferFunction",
    "closed_loop",
    "conv_matrix",
    "disturbance_gain",
    "effective_entropy_gain",
    "entropy",
    "from_coeffs",
    "from_impulse",
    "impulse_response",
    "initial_state_gain",
    "input_disturbance_gain",
    "jensen_log_integral",
    "make_tf",
    "mutual_information",
    "nmp_summary",
    "svd_spectrum",
    "tall_conv_matrix",
]
