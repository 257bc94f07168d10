"""CDF-based histogram matching of coefficient populations.

Histograms use ``n_bins`` equal-width bins spanning ``[min, max]`` of the
samples. A sample's CDF value is interpolated linearly inside its bin, and
the reference quantile function is the matching piecewise-linear inverse. With
that pairing, matching a sample set against itself is the identity up to
floating-point rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, StructuralError
from .freq import N_BANDS, N_COLORS, FcSet

DEFAULT_BINS = 256

# spread below this (relative to magnitude) counts as a single value
_DEGENERATE_RTOL = 1e-9


@dataclass(frozen=True)
class EmpiricalCdf:
    bin_edges: np.ndarray
    cumulative: np.ndarray
    sample_min: float
    sample_max: float
    degenerate: bool = False

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])


def _is_degenerate(lo, hi):
    scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    return (hi - lo) <= _DEGENERATE_RTOL * scale


def _row_histograms(x, lo, width, n_bins):
    """Per-row bin indices, fractional positions, and cumulative counts.

    Returns ``(idx, frac, cum)`` where ``cum`` has shape ``(R, n_bins + 1)``
    and starts with 0.
    """
    rows, n = x.shape
    t = (x - lo[:, None]) / width[:, None]
    idx = np.clip(np.floor(t), 0, n_bins - 1).astype(np.int64)
    frac = np.clip(t - idx, 0.0, 1.0)
    flat = (idx + n_bins * np.arange(rows)[:, None]).ravel()
    counts = np.bincount(flat, minlength=rows * n_bins).reshape(rows, n_bins)
    cum = np.zeros((rows, n_bins + 1))
    np.cumsum(counts, axis=1, out=cum[:, 1:])
    cum /= n
    return idx, frac, cum


def _as_samples(samples, name):
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DegenerateInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError(f"{name} contains non-finite values")
    return arr


def build_cdf(samples, n_bins: int = DEFAULT_BINS) -> EmpiricalCdf:
    """Equal-width histogram of ``samples`` with normalized cumulative sums.

    ``cumulative[k]`` is the fraction of samples at or below the right edge of
    bin ``k``. All-equal samples give a single spike and set ``degenerate``.
    """
    if n_bins < 1:
        raise StructuralError("n_bins must be >= 1")
    x = _as_samples(samples, "samples")
    lo, hi = float(x.min()), float(x.max())
    if _is_degenerate(lo, hi):
        edges = lo + np.linspace(-0.5, 0.5, n_bins + 1)
        cumulative = (edges[1:] > lo).astype(np.float64)
        cumulative[-1] = 1.0
        return EmpiricalCdf(edges, cumulative, lo, hi, degenerate=True)
    width = np.array([(hi - lo) / n_bins])
    _, _, cum = _row_histograms(x[None, :], np.array([lo]), width, n_bins)
    edges = np.linspace(lo, hi, n_bins + 1)
    return EmpiricalCdf(edges, cum[0, 1:], lo, hi)


def match_rows(source: np.ndarray, reference: np.ndarray, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Histogram-match every row of ``source`` to the same row of ``reference``.

    Rows are independent; the result equals calling :func:`match_values` on
    each row pair.
    """
    src = np.asarray(source, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if src.ndim != 2 or ref.ndim != 2 or src.shape[0] != ref.shape[0]:
        raise StructuralError(f"row counts differ: {src.shape} vs {ref.shape}")
    if src.shape[1] == 0 or ref.shape[1] == 0:
        raise DegenerateInputError("cannot match empty sample rows")
    if n_bins < 1:
        raise StructuralError("n_bins must be >= 1")

    s_lo, s_hi = src.min(axis=1), src.max(axis=1)
    r_lo, r_hi = ref.min(axis=1), ref.max(axis=1)
    s_deg = _is_degenerate(s_lo, s_hi)
    r_deg = _is_degenerate(r_lo, r_hi)

    out = np.empty_like(src)
    # degenerate reference: everything collapses onto its value
    out[r_deg] = r_lo[r_deg, None]
    # degenerate source against a spread reference: reference median
    only_src = s_deg & ~r_deg
    if only_src.any():
        out[only_src] = np.median(ref[only_src], axis=1)[:, None]

    live = ~(s_deg | r_deg)
    if not live.any():
        return out
    src_l, ref_l = src[live], ref[live]
    s_w = (s_hi[live] - s_lo[live]) / n_bins
    r_w = (r_hi[live] - r_lo[live]) / n_bins
    s_idx, s_frac, s_cum = _row_histograms(src_l, s_lo[live], s_w, n_bins)
    _, _, r_cum = _row_histograms(ref_l, r_lo[live], r_w, n_bins)

    # source CDF at each value, linear inside its bin
    rows = np.arange(src_l.shape[0])[:, None]
    c0 = s_cum[rows, s_idx]
    q = c0 + s_frac * (s_cum[rows, s_idx + 1] - c0)

    # reference quantile function: last cumulative knot not above q, then
    # linear inside the (necessarily non-empty) following bin
    j = _last_knot_at_or_below(r_cum, q)
    nxt = np.minimum(j + 1, n_bins)
    c_lo = r_cum[rows, j]
    step = r_cum[rows, nxt] - c_lo
    frac = np.divide(q - c_lo, step, out=np.zeros_like(q), where=step > 0)
    out[live] = r_lo[live][:, None] + (j + np.clip(frac, 0.0, 1.0)) * r_w[:, None]
    return out


def _last_knot_at_or_below(cum: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per row, the largest ``k`` with ``cum[r, k] <= q[r, i]``.

    One flat ``searchsorted`` over row-offset keys, followed by an exact
    correction against the unshifted values (the offset can round away
    differences below one ulp).
    """
    rows, n_knots = cum.shape
    offset = 2.0 * np.arange(rows)[:, None]
    pos = np.searchsorted((cum + offset).ravel(), (q + offset).ravel(), side="right")
    j = np.clip(pos.reshape(q.shape) - 1 - n_knots * np.arange(rows)[:, None], 0, n_knots - 1)
    r_idx = np.broadcast_to(np.arange(rows)[:, None], q.shape)
    while True:
        high = (cum[r_idx, j] > q) & (j > 0)
        if not high.any():
            break
        j = j - high
    while True:
        nxt = np.minimum(j + 1, n_knots - 1)
        low = (cum[r_idx, nxt] <= q) & (j < n_knots - 1)
        if not low.any():
            break
        j = j + low
    return j


def match_values(source, reference, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Map ``source`` through ``inverse_cdf(reference) o cdf(source)``.

    The map is non-decreasing, so ranks within ``source`` are preserved
    (ties may merge). Degenerate inputs: a constant reference makes every
    output that constant; a constant source maps to the reference median.
    """
    src = _as_samples(source, "source")
    ref = _as_samples(reference, "reference")
    return match_rows(src[None, :], ref[None, :], n_bins)[0]


def variant_pairs(mask) -> np.ndarray:
    """Boolean ``(3, 64)`` array marking (channel, band) pairs to randomize.

    Accepts a 64-wide mask (applied to every channel) or a 192-wide mask in
    color-major order. Mask bit 0 means domain-variant.
    """
    bits = np.asarray(getattr(mask, "bits", mask)).astype(np.int64).ravel()
    if bits.size == N_BANDS:
        keep = np.broadcast_to(bits, (N_COLORS, N_BANDS))
    elif bits.size == N_COLORS * N_BANDS:
        keep = bits.reshape(N_COLORS, N_BANDS)
    else:
        raise StructuralError(f"mask width must be 64 or 192, got {bits.size}")
    return keep == 0


def match_fc(source: FcSet, reference: FcSet, mask, n_bins: int = DEFAULT_BINS) -> FcSet:
    """Match variant (channel, band) coefficient histograms to the reference's.

    Invariant pairs are copied bit-for-bit from ``source``.
    """
    if source.coeffs.shape != reference.coeffs.shape:
        raise StructuralError(
            f"source and reference shapes differ: {source.image_shape} vs {reference.image_shape}"
        )
    variant = variant_pairs(mask)
    out = source.coeffs.copy()
    chans, bands = np.nonzero(variant)
    if chans.size == 0:
        return FcSet(out)
    # rows: one per variant pair, samples: one per block
    src_rows = source.coeffs[chans, :, :, bands].reshape(chans.size, -1)
    ref_rows = reference.coeffs[chans, :, :, bands].reshape(chans.size, -1)
    matched = match_rows(src_rows, ref_rows, n_bins)
    out[chans, :, :, bands] = matched.reshape(src_rows.shape[0], *source.coeffs.shape[1:3])
    return FcSet(out)
