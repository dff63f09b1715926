"""Detection laboratory for integer least-squares problems: exact sphere
decoders with visited-node accounting, linear detectors, lossless
size-reduction with calibrated reliability thresholds, and Monte-Carlo
estimation of the minimum achievable search complexity."""

__version__ = "0.1.0"

from . import errors
from ._kernels import backend_name
from .detectors import (
    DetectorOutput,
    RadiusPolicy,
    babai_point,
    brute_force_ml,
    detect_mmse,
    detect_mrc,
    detect_zf,
    fp_radius,
    quantize,
    sphere_decode,
)
from .lsr import (
    ThresholdTable,
    calibrate_exact,
    conditional_qam_ser,
    load_table,
    lsr_detect,
    reduce_problem,
    reliable_set,
    save_table,
    threshold_high_snr,
    threshold_suboptimal,
)
from .mac import InfoSetSpec, MacCurve, estimate_conditional_entropy, mac_lsr, mac_sd, theorem1_limits
from .model import (
    Constellation,
    ComplexChannel,
    RealModel,
    make_constellation,
    per_symbol_snr,
    realify,
    sample_flat_rayleigh,
    toeplitz_from_taps,
    transmit,
)
from .numerics import Rng, chi_square_cdf, chi_square_quantile, gaussian_q, qr_decompose

__all__ = [
    "__version__",
    "errors",
    "backend_name",
    "DetectorOutput",
    "RadiusPolicy",
    "babai_point",
    "brute_force_ml",
    "detect_mmse",
    "detect_mrc",
    "detect_zf",
    "fp_radius",
    "quantize",
    "sphere_decode",
    "ThresholdTable",
    "calibrate_exact",
    "conditional_qam_ser",
    "load_table",
    "lsr_detect",
    "reduce_problem",
    "reliable_set",
    "save_table",
    "threshold_high_snr",
    "threshold_suboptimal",
    "InfoSetSpec",
    "MacCurve",
    "estimate_conditional_entropy",
    "mac_lsr",
    "mac_sd",
    "theorem1_limits",
    "Constellation",
    "ComplexChannel",
    "RealModel",
    "make_constellation",
    "per_symbol_snr",
    "realify",
    "sample_flat_rayleigh",
    "toeplitz_from_taps",
    "transmit",
    "Rng",
    "chi_square_cdf",
    "chi_square_quantile",
    "gaussian_q",
    "qr_decompose",
]
