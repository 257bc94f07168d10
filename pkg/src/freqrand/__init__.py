"""Frequency-space domain randomization.

Images are split into 64 blockwise DCT bands per color channel. Bands that
vary across domains are randomized by matching their coefficient histograms
to those of a reference image, while domain-invariant bands are kept.
Masks come from band-reject analysis (64 wide, shared across colors) or from
entropy-weighted activation ranking of a model (192 wide).
"""
from .errors import ConfigError, DegenerateInputError, FreqRandError, NumericError, StructuralError
from .freq import FcSet, band_pass_decompose, dct_forward, dct_inverse, recompose, to_spatial
from .histmatch import EmpiricalCdf, build_cdf, match_fc, match_values
from .masks import SpectrumMask, rank_select, score_bands, spectrum_analysis, spectrum_learning
from .randomize import randomize_sa, randomize_sl, reconstruct_full

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "EmpiricalCdf",
    "FcSet",
    "FreqRandError",
    "NumericError",
    "SpectrumMask",
    "StructuralError",
    "band_pass_decompose",
    "build_cdf",
    "dct_forward",
    "dct_inverse",
    "match_fc",
    "match_values",
    "randomize_sa",
    "randomize_sl",
    "rank_select",
    "reconstruct_full",
    "recompose",
    "score_bands",
    "spectrum_analysis",
    "spectrum_learning",
    "to_spatial",
]
