"""Frequency-space randomization of source images toward a reference.

Domain-variant bands (mask bit 0) of the source get the reference's
coefficient histograms; domain-invariant bands (mask bit 1) are copied
untouched. The result is recomposed and clamped to [0, 1].
"""
from __future__ import annotations

import numpy as np

from .errors import StructuralError
from .freq import N_BANDS, N_SPATIAL, FcSet, band_pass_decompose, coeffs_to_images, recompose
from .histmatch import DEFAULT_BINS, match_fc, match_rows, variant_pairs


def clamp(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip to [0, 1]; also return the fraction of values that were clipped."""
    out = np.clip(img, 0.0, 1.0)
    rate = float(np.count_nonzero(out != img)) / img.size if img.size else 0.0
    return out, rate


def _mask_bits(mask, width):
    bits = np.asarray(getattr(mask, "bits", mask)).astype(np.int64).ravel()
    if bits.size != width:
        raise StructuralError(f"expected a {width}-wide mask, got {bits.size}")
    return bits


def _randomize(source, reference, bits, n_bins, do_clamp, allow_all_variant):
    source = np.asarray(source, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if source.shape != reference.shape:
        raise StructuralError(
            f"reference shape {reference.shape} differs from source {source.shape}; resize it first"
        )
    if not bits.any() and not allow_all_variant:
        raise StructuralError("all-zero mask would randomize every band; pass allow_all_variant=True")
    if bits.all():
        return source.copy()
    out = recompose(match_fc(band_pass_decompose(source), band_pass_decompose(reference), bits, n_bins))
    return clamp(out)[0] if do_clamp else out


def randomize_sa(source, reference, mask, n_bins: int = DEFAULT_BINS, clamp_output: bool = True,
                 allow_all_variant: bool = False) -> np.ndarray:
    """Randomize with a 64-wide band mask shared by all color channels."""
    return _randomize(source, reference, _mask_bits(mask, N_BANDS), n_bins, clamp_output, allow_all_variant)


def randomize_sl(source, reference, mask, n_bins: int = DEFAULT_BINS, clamp_output: bool = True,
                 allow_all_variant: bool = False) -> np.ndarray:
    """Randomize with a 192-wide (channel, band) mask."""
    return _randomize(source, reference, _mask_bits(mask, N_SPATIAL), n_bins, clamp_output, allow_all_variant)


def reconstruct_full(randomized: FcSet) -> np.ndarray:
    """Collapse a (randomized) band decomposition back to a clamped RGB image."""
    return clamp(recompose(randomized))[0]


def randomize_batch(source_coeffs: np.ndarray, reference_coeffs: np.ndarray, mask,
                    n_bins: int = DEFAULT_BINS) -> tuple[np.ndarray, float]:
    """Randomize a batch of decomposed sources against one reference.

    ``source_coeffs`` is ``(N, 3, h, w, 64)``, ``reference_coeffs`` is
    ``(3, h, w, 64)`` and ``mask`` is 64 or 192 wide. Returns the clamped
    images ``(N, H, W, 3)`` and the batch clamp rate. Each image is matched
    independently, exactly as :func:`randomize_sa` / :func:`randomize_sl`
    would; an all-zero mask is accepted here.
    """
    variant = variant_pairs(mask)
    out = source_coeffs.copy()
    chans, bands = np.nonzero(variant)
    if chans.size:
        n = source_coeffs.shape[0]
        blocks = source_coeffs.shape[2:4]
        src_rows = source_coeffs[:, chans, :, :, bands]  # (k, N, h, w)
        src_rows = src_rows.reshape(chans.size * n, -1)
        ref_rows = reference_coeffs[chans, :, :, bands].reshape(chans.size, -1)
        ref_rows = np.repeat(ref_rows, n, axis=0)
        matched = match_rows(src_rows, ref_rows, n_bins).reshape(chans.size, n, *blocks)
        out[:, chans, :, :, bands] = matched
    images, rate = clamp(coeffs_to_images(out))
    return images, rate
