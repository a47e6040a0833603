"""Floating-point attacks on randomized smoothing and a sound certification procedure."""
from .stats import ABSTAIN, certified_radius, clopper_pearson_lower, hoeffding_lower, phi, phi_inv
from .exact_tables import BreakingPointTable, GridSpec, build_table, failure_probability_bound
from .sampler import FAILURE, NoiseBuffer, QuantizedImage, build_noise_buffer, draw_offset, quantize_gk, shift_clamp
from .pipeline import CertificationOutcome, certify_sound, certify_unsound, run_dataset

__version__ = "0.1.0"
