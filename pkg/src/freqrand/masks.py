"""Domain-invariant / domain-variant band masks.

Two ways to build them:

* :func:`spectrum_analysis` retrains the classifier with each candidate band
  range rejected and marks a range variant when dropping it raises target
  accuracy. Output is 64 wide, shared across color channels.
* :func:`spectrum_learning` scores the 192 (channel, band) inputs of the
  current model on a batch of reference images, weighting each image's
  normalized input activations by its prediction entropy, and keeps the
  top-``p`` fraction as invariant.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, StructuralError
from .freq import N_BANDS, N_SPATIAL
from .model import ClassifierState, forward, normalize

# [lo, hi) band ranges; the last one covers the top half of the spectrum
DEFAULT_RANGES = ((0, 1), (1, 2), (2, 4), (4, 8), (8, 16), (16, 32), (32, 64))
# ranges aligned with the toy benchmark's layout (style in 0-1 and 40-63);
# wider mid ranges make each rejection cost a clear share of the shape signal
TOY_RANGES = ((0, 1), (1, 2), (2, 8), (8, 24), (24, 40), (40, 64))


@dataclass
class SpectrumMask:
    """Binary band mask: 1 = domain-invariant (kept), 0 = domain-variant.

    Width 64 indexes bands; width 192 indexes (color, band) pairs in
    color-major order.
    """

    bits: np.ndarray
    provenance: str = "manual"
    p_used: float | None = None
    created_from: str | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(np.int8).ravel()
        if bits.size not in (N_BANDS, N_SPATIAL):
            raise StructuralError(f"mask width must be 64 or 192, got {bits.size}")
        if not np.isin(bits, (0, 1)).all():
            raise StructuralError("mask bits must be 0 or 1")
        self.bits = bits

    @property
    def width(self) -> int:
        return int(self.bits.size)

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "bits": [int(b) for b in self.bits],
            "provenance": self.provenance,
            "p_used": self.p_used,
            "created_from": self.created_from,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumMask":
        try:
            bits = d["bits"]
        except (KeyError, TypeError):
            raise ConfigError("mask document needs a 'bits' list", "bits") from None
        if "width" in d and int(d["width"]) != len(bits):
            raise ConfigError(f"declares width {d['width']} but has {len(bits)} bits", "width")
        return cls(np.asarray(bits), d.get("provenance", "manual"), d.get("p_used"), d.get("created_from"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SpectrumMask":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})", "mask") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_ranges(cls, variant_ranges, provenance="manual") -> "SpectrumMask":
        bits = np.ones(N_BANDS, dtype=np.int8)
        for lo, hi in variant_ranges:
            bits[lo:hi] = 0
        return cls(bits, provenance)


def accuracy_fn(prediction, truth) -> float:
    """1.0 for a correct prediction, else 0.0 (vectorizes over arrays)."""
    hit = np.asarray(prediction) == np.asarray(truth)
    return float(hit) if hit.ndim == 0 else hit.astype(np.float64)


def score_bands(model: ClassifierState, real_batch: np.ndarray) -> np.ndarray:
    """Entropy-weighted activation score per input channel.

    For sample ``b``, ``E_b`` is the prediction entropy (nats) and ``A_b`` the
    per-channel mean absolute value of the standardized model input,
    normalized to sum 1. Returns ``s = sum_b(-A_b * E_b)`` (length 192).
    """
    real_batch = np.asarray(real_batch, dtype=np.float64)
    if real_batch.ndim != 4 or real_batch.shape[0] == 0:
        raise StructuralError(f"expected a non-empty (N, 192, H, W) batch, got {real_batch.shape}")
    entropy = forward(model, real_batch).entropy
    act = np.abs(normalize(model, real_batch)).mean(axis=(2, 3))
    total = act.sum(axis=1, keepdims=True)
    act = np.divide(act, total, out=np.zeros_like(act), where=total > 0)
    if not (np.all(np.isfinite(entropy)) and np.all(np.isfinite(act))):
        raise NumericError("non-finite activations or entropies while scoring bands")
    return -(act * entropy[:, None]).sum(axis=0)


def rank_select(scores, p: float, provenance: str = "learned") -> SpectrumMask | np.ndarray:
    """Mark the top ``round(p * n)`` scores with 1; ties go to lower indices.

    Rounding is half-up. For the standard 64/192 widths a :class:`SpectrumMask`
    is returned, otherwise a plain bit array.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"p must lie in [0, 1], got {p}", "p")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    k = int(np.floor(p * n + 0.5))
    order = np.argsort(-scores, kind="stable")
    bits = np.zeros(n, dtype=np.int8)
    bits[order[:k]] = 1
    if n in (N_BANDS, N_SPATIAL):
        return SpectrumMask(bits, provenance, p_used=float(p))
    return bits


def spectrum_learning(model: ClassifierState, reference_batch: np.ndarray, p: float) -> SpectrumMask:
    """Learned 192-wide mask from one scored batch of reference inputs."""
    return rank_select(score_bands(model, reference_batch), p)


def validate_ranges(ranges) -> list:
    """Check that half-open ranges are non-empty and tile 0..63 in order."""
    out = []
    expect = 0
    for r in ranges:
        lo, hi = int(r[0]), int(r[1])
        if hi <= lo:
            raise StructuralError(f"empty band range [{lo}, {hi})")
        if lo != expect:
            raise StructuralError(f"band ranges must tile 0..63 in order; gap or overlap at {lo}")
        out.append((lo, hi))
        expect = hi
    if expect != N_BANDS:
        raise StructuralError(f"band ranges stop at {expect}, expected {N_BANDS}")
    return out


@dataclass
class RejectionRow:
    band_range: tuple | None
    source_accuracy: float
    target_accuracy: float


@dataclass
class AnalysisResult:
    mask: SpectrumMask
    rows: list = field(default_factory=list)


def band_reject_study(source_train, target_eval, candidate_bands=DEFAULT_RANGES, trainer_config=None,
                      source_eval=None) -> AnalysisResult:
    """Full-spectrum run plus one band-rejected run per candidate range.

    All runs share seeds and schedules; the models differ only in which
    bands of the source images they were trained on. Both are evaluated on
    full-spectrum target data.
    """
    from .train import TrainConfig, evaluate, fit_supervised

    ranges = validate_ranges(candidate_bands)
    cfg = trainer_config if trainer_config is not None else TrainConfig(mode="baseline")
    source_eval = source_eval if source_eval is not None else source_train

    def run(keep):
        state = fit_supervised(cfg, source_train, keep_bands=keep)
        return evaluate(state, source_eval)["accuracy"], evaluate(state, target_eval)["accuracy"]

    src_full, tgt_full = run(None)
    rows = [RejectionRow(None, src_full, tgt_full)]
    bits = np.ones(N_BANDS, dtype=np.int8)
    for lo, hi in ranges:
        keep = np.ones(N_BANDS, dtype=np.int8)
        keep[lo:hi] = 0
        src_acc, tgt_acc = run(keep)
        rows.append(RejectionRow((lo, hi), src_acc, tgt_acc))
        # strictly better without the range -> variant; ties stay invariant
        if tgt_acc > tgt_full:
            bits[lo:hi] = 0
    return AnalysisResult(SpectrumMask(bits, "analysis"), rows)


def spectrum_analysis(source_train, target_eval, candidate_bands=DEFAULT_RANGES, trainer_config=None) -> SpectrumMask:
    """64-wide mask: union of candidate ranges whose rejection helped the target."""
    return band_reject_study(source_train, target_eval, candidate_bands, trainer_config).mask
