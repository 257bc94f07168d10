"""Training with original, analysis-randomized and learning-randomized losses.

Per step the enabled terms are summed with their weights (unit by default):

* ``orig``: cross-entropy on the unmodified source batch;
* ``sa``: the same batch randomized with the fixed 64-wide analysis mask;
* ``sl``: the batch randomized with the current learned 192-wide mask.
  It is skipped during the first ``warmup_epochs`` epochs.

Each step uses one reference image, shared across the batch. References are
drawn from the pool in batches of ``ref_batch_size``. When the learned term is
active, each reference batch is scored once to produce the learned mask, and
its images then serve one per step. When it runs out, the next batch is
drawn and scored.

Metrics CSV columns (one row per epoch, empty cell = term not active)::

    epoch, step, lr, loss_orig, loss_sa, loss_sl, loss_total,
    source_acc, target_acc, target_entropy, sl_popcount, clamp_rate, rescores
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import ConfigError, NumericError, StructuralError
from .freq import BLOCK, N_BANDS, _band_basis, images_to_coeffs, spatial_channels
from .histmatch import DEFAULT_BINS
from .masks import SpectrumMask, spectrum_learning, validate_ranges
from .model import (
    AdamConfig,
    ChannelStats,
    ClassifierState,
    ModelConfig,
    add_grads,
    backward_coeffs,
    cross_entropy,
    forward_coeffs,
    init_state,
    learning_rate,
    optimizer_step,
    save_checkpoint,
)
from .randomize import randomize_batch

log = logging.getLogger(__name__)

MODES = {
    "baseline": ("orig",),
    "sa": ("orig", "sa"),
    "sl": ("orig", "sl"),
    "fsdr": ("orig", "sa", "sl"),
}
METRIC_FIELDS = (
    "epoch", "step", "lr", "loss_orig", "loss_sa", "loss_sl", "loss_total",
    "source_acc", "target_acc", "target_entropy", "sl_popcount", "clamp_rate", "rescores",
)
# keys that only name output locations; excluded from the config hash
OUTPUT_KEYS = ("metrics_csv", "checkpoint")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "fsdr"
    p: float = 0.5
    n_bins: int = DEFAULT_BINS
    seed: int = 0
    epochs: int = 6
    batch_size: int = 32
    ref_batch_size: int = 8
    warmup_epochs: int = 1
    loss_weights: dict = field(default_factory=lambda: {"orig": 1.0, "sa": 1.0, "sl": 1.0})
    model: ModelConfig = ModelConfig()
    optimizer: AdamConfig = AdamConfig(lr=3e-3, step_size=100_000)
    mask_sa: list | None = None
    mask_sa_path: str | None = None
    candidate_bands: list | None = None
    toy: data_mod.ToyDomainSpec | None = None
    data_dir: str | None = None
    reference_dir: str | None = None
    metrics_csv: str | None = None
    checkpoint: str | None = None

    def problems(self) -> list:
        """Every ``(field, message)`` validation failure, in field order."""
        out = []
        if self.mode not in MODES:
            out.append(("mode", f"must be one of {sorted(MODES)}, got {self.mode!r}"))
        if not 0.0 <= self.p <= 1.0:
            out.append(("p", f"must lie in [0, 1], got {self.p}"))
        for name in ("n_bins", "epochs", "batch_size", "ref_batch_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                out.append((name, f"must be an integer >= 1, got {value!r}"))
        if not isinstance(self.warmup_epochs, int) or self.warmup_epochs < 0:
            out.append(("warmup_epochs", f"must be an integer >= 0, got {self.warmup_epochs!r}"))
        unknown = set(self.loss_weights) - {"orig", "sa", "sl"}
        if unknown:
            out.append(("loss_weights", f"unknown terms {sorted(unknown)}"))
        bad = [k for k, v in self.loss_weights.items() if not np.isfinite(v) or v < 0]
        if bad:
            out.append(("loss_weights", f"weights must be finite and >= 0: {sorted(bad)}"))
        if self.optimizer.lr <= 0 or self.optimizer.step_size < 1 or not 0 < self.optimizer.gamma <= 1:
            out.append(("optimizer", "needs lr > 0, step_size >= 1 and 0 < gamma <= 1"))
        if not 0 <= self.optimizer.beta1 < 1 or not 0 <= self.optimizer.beta2 < 1:
            out.append(("optimizer", "betas must lie in [0, 1)"))
        if self.model.in_channels != 3 * N_BANDS:
            out.append(("model.in_channels", f"must be {3 * N_BANDS}, got {self.model.in_channels}"))
        if self.toy is None and self.data_dir is None:
            out.append(("toy", "either 'toy' or 'data_dir' must be given"))
        if self.toy is not None:
            try:
                self.toy.validate()
            except ConfigError as exc:
                out.append((f"toy.{exc.field}", str(exc).split(": ", 1)[-1]))
            else:
                if self.toy.n_classes != self.model.n_classes:
                    out.append(("model.n_classes", f"must match toy.n_classes={self.toy.n_classes}"))
        if self.mask_sa is not None and len(self.mask_sa) != N_BANDS:
            out.append(("mask_sa", f"must have 64 bits, got {len(self.mask_sa)}"))
        if self.candidate_bands is not None:
            try:
                validate_ranges(self.candidate_bands)
            except (StructuralError, TypeError, IndexError, ValueError) as exc:
                out.append(("candidate_bands", str(exc)))
        if self.mask_sa is not None and self.mask_sa_path is not None:
            out.append(("mask_sa_path", "give either mask_sa or mask_sa_path, not both"))
        return out

    def validate(self) -> None:
        """Raise one :class:`ConfigError` listing every problem found."""
        problems = self.problems()
        if problems:
            msg = "; ".join(f"{f}: {m}" for f, m in problems)
            raise ConfigError(msg, problems[0][0], [f for f, _ in problems])

    def weight(self, term: str) -> float:
        return float(self.loss_weights.get(term, 1.0))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.toy is not None:
            d["toy"] = self.toy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
        try:
            if isinstance(d.get("model"), dict):
                d["model"] = ModelConfig(**d["model"])
            if isinstance(d.get("optimizer"), dict):
                d["optimizer"] = AdamConfig(**d["optimizer"])
            if isinstance(d.get("toy"), dict):
                d["toy"] = data_mod.ToyDomainSpec.from_dict(d["toy"])
        except TypeError as exc:
            raise ConfigError(str(exc), "config") from exc
        if "loss_weights" in d:
            d["loss_weights"] = {**{"orig": 1.0, "sa": 1.0, "sl": 1.0}, **d["loss_weights"]}
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in OUTPUT_KEYS}
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- data plumbing -------------------------------------------------------------

@dataclass
class Encoded:
    """Band coefficients ``(N, 3, h, w, 64)`` with 0-based labels."""

    coeffs: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def encode(dataset, chunk: int = 256) -> Encoded:
    if isinstance(dataset, Encoded):
        return dataset
    images = dataset.images
    coeffs = np.concatenate([images_to_coeffs(images[i:i + chunk]) for i in range(0, len(images), chunk)])
    return Encoded(coeffs, np.asarray(dataset.labels, dtype=np.int64))


def _inputs(coeffs: np.ndarray, keep_bands=None) -> np.ndarray:
    """Model input coefficients with rejected bands zeroed.

    The model consumes them through :func:`forward_coeffs`, which is
    equivalent to feeding ``spatial_channels`` of the same array.
    """
    if keep_bands is not None:
        coeffs = coeffs * np.asarray(keep_bands, dtype=np.float64)
    return coeffs


@dataclass
class DataBundle:
    source_train: Encoded
    source_val: Encoded
    target_val: Encoded
    pool: data_mod.ReferencePool | None


def prepare_data(cfg: TrainConfig) -> DataBundle:
    """Generate or load the three splits and the reference pool."""
    if cfg.toy is not None:
        splits = data_mod.generate_toy(cfg.toy, cfg.seed)
        refs = list(data_mod.generate_reference_images(cfg.toy, cfg.seed))
    else:
        root = Path(cfg.data_dir)
        splits = {name: data_mod.read_dataset(root, name) for name in ("source_train", "source_val", "target_val")}
        ref_root = Path(cfg.reference_dir) if cfg.reference_dir else root / "references"
        refs = data_mod.load_image_dir(ref_root) if ref_root.exists() else []
    needs_pool = set(MODES[cfg.mode]) & {"sa", "sl"}
    if needs_pool and not refs:
        raise ConfigError("reference pool is empty but randomization losses are enabled", "reference_dir")
    pool = data_mod.ReferencePool(refs, seed=cfg.seed) if refs else None
    return DataBundle(
        encode(splits["source_train"]), encode(splits["source_val"]), encode(splits["target_val"]), pool
    )


def resolve_mask_sa(cfg: TrainConfig) -> SpectrumMask | None:
    if cfg.mask_sa is not None:
        return SpectrumMask(np.asarray(cfg.mask_sa), "manual")
    if cfg.mask_sa_path is not None:
        return SpectrumMask.load(cfg.mask_sa_path)
    return None


# -- losses ----------------------------------------------------------------------

def fit_normalization(state: ClassifierState, coeffs: np.ndarray, keep_bands=None, chunk: int = 64) -> None:
    """Per-channel standardization of ``spatial_channels(coeffs)``.

    Every band image is its coefficient times one fixed 8x8 basis pattern,
    so pixel sums follow from the coefficient sums and the pattern's sum and
    squared sum; the 192-channel tensor is never built.
    """
    stats = ChannelStats(state.config.in_channels)
    basis = _band_basis()
    b_sum = basis.sum(axis=(1, 2))
    b_sq = (basis**2).sum(axis=(1, 2))
    for i in range(0, len(coeffs), chunk):
        c = _inputs(coeffs[i:i + chunk], keep_bands)
        stats.count += c.shape[0] * c.shape[2] * c.shape[3] * BLOCK * BLOCK
        stats.total += (c.sum(axis=(0, 2, 3)) * b_sum).ravel()
        stats.total_sq += ((c**2).sum(axis=(0, 2, 3)) * b_sq).ravel()
    state.norm_mean, state.norm_scale = stats.finalize()


def _as_batch(batch):
    if isinstance(batch, Encoded):
        return batch
    if isinstance(batch, data_mod.Dataset):
        return encode(batch)
    images, labels = batch
    return Encoded(images_to_coeffs(np.asarray(images)), np.asarray(labels, dtype=np.int64))


def _ref_coeffs(reference):
    reference = np.asarray(reference, dtype=np.float64)
    return reference if reference.ndim == 4 else images_to_coeffs(reference)


def _randomized_inputs(batch: Encoded, ref_coeffs, mask, n_bins):
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.all():
        return batch.coeffs, 0.0
    images, rate = randomize_batch(batch.coeffs, ref_coeffs, bits, n_bins)
    return images_to_coeffs(images), rate


def loss_orig(state: ClassifierState, batch) -> float:
    """Cross-entropy on the unrandomized source batch."""
    b = _as_batch(batch)
    return cross_entropy(forward_coeffs(state, b.coeffs), b.labels)


def _loss_randomized(state, batch, reference, mask, n_bins, width):
    if mask is None:
        raise ConfigError("randomization loss needs a mask", "mask_sa" if width == N_BANDS else "p")
    b = _as_batch(batch)
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.size != width:
        raise ConfigError(f"expected a {width}-wide mask, got {bits.size}", "mask")
    x, _ = _randomized_inputs(b, _ref_coeffs(reference), bits, n_bins)
    return cross_entropy(forward_coeffs(state, x), b.labels)


def loss_sa(state, batch, reference, mask_sa, n_bins: int = DEFAULT_BINS) -> float:
    """Cross-entropy on the batch randomized with the 64-wide analysis mask."""
    return _loss_randomized(state, batch, reference, mask_sa, n_bins, N_BANDS)


def loss_sl(state, batch, reference, mask_sl, n_bins: int = DEFAULT_BINS) -> float:
    """Cross-entropy on the batch randomized with the 192-wide learned mask."""
    return _loss_randomized(state, batch, reference, mask_sl, n_bins, 3 * N_BANDS)


# -- evaluation ----------------------------------------------------------------

def evaluate(state: ClassifierState, dataset, chunk: int = 64, keep_bands=None) -> dict:
    """Accuracy, per-class accuracy and mean prediction entropy."""
    enc = encode(dataset)
    preds, ents = [], []
    for i in range(0, len(enc), chunk):
        pred = forward_coeffs(state, _inputs(enc.coeffs[i:i + chunk], keep_bands))
        preds.append(pred.labels)
        ents.append(pred.entropy)
    pred = np.concatenate(preds)
    ent = np.concatenate(ents)
    hits = pred == enc.labels
    per_class = {}
    for c in range(state.config.n_classes):
        sel = enc.labels == c
        per_class[c] = float(hits[sel].mean()) if sel.any() else float("nan")
    return {"accuracy": float(hits.mean()), "per_class": per_class, "mean_entropy": float(ent.mean())}


# -- reference scheduling ------------------------------------------------------

class ReferenceStream:
    """Serves one reference per step from scored reference batches."""

    def __init__(self, pool: data_mod.ReferencePool, batch_size: int, shape, p: float):
        self.pool = pool
        self.batch_size = batch_size
        self.shape = tuple(shape)
        self.p = p
        self._coeffs = None
        self._cursor = 0
        self.mask = None
        self.events = []

    def _refill(self, step):
        imgs = self.pool.draw_batch(self.batch_size, self.shape)
        self._coeffs = images_to_coeffs(np.stack(imgs))
        self._cursor = 0
        self.mask = None
        self.events.append(("draw", step))

    def next(self, step: int, state: ClassifierState | None = None):
        """Next reference coefficients; scores the batch first if ``state`` is given."""
        if self._coeffs is None or self._cursor >= len(self._coeffs):
            self._refill(step)
        if state is not None and self.mask is None:
            self.mask = spectrum_learning(state, spatial_channels(self._coeffs), self.p)
            self.events.append(("score", step))
        ref = self._coeffs[self._cursor]
        self._cursor += 1
        return ref


# -- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    state: ClassifierState
    metrics: list
    events: list
    config_hash: str


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for row in rows:
        writer.writerow([_fmt(row.get(k)) for k in METRIC_FIELDS])
    return buf.getvalue()


def train_fsdr(cfg: TrainConfig, bundle: DataBundle | None = None, keep_bands=None,
               evaluate_epochs: bool = True, mask_sa: SpectrumMask | None = None) -> TrainResult:
    """Train according to ``cfg.mode`` and return the final state and metrics.

    ``keep_bands`` (64 bits) zeroes rejected bands of every training input;
    it is only used by band-rejection analysis.
    """
    cfg.validate()
    terms = MODES[cfg.mode]
    bundle = bundle if bundle is not None else prepare_data(cfg)
    mask_sa = mask_sa if mask_sa is not None else resolve_mask_sa(cfg)
    if "sa" in terms and mask_sa is None:
        raise ConfigError(f"mode {cfg.mode!r} needs an analysis mask", "mask_sa")
    if mask_sa is not None and mask_sa.width != N_BANDS:
        raise ConfigError("analysis mask must be 64 wide", "mask_sa")
    if set(terms) & {"sa", "sl"} and bundle.pool is None:
        raise ConfigError("reference pool is empty but randomization losses are enabled", "reference_dir")

    ss = np.random.SeedSequence(cfg.seed)
    init_seed, order_seed = ss.spawn(2)
    state = init_state(cfg.model, cfg.optimizer, seed=int(init_seed.generate_state(1)[0]))
    state.seed = cfg.seed
    order_rng = np.random.default_rng(order_seed)

    train = bundle.source_train
    fit_normalization(state, train.coeffs, keep_bands)
    shape = (train.coeffs.shape[2] * 8, train.coeffs.shape[3] * 8)
    stream = ReferenceStream(bundle.pool, cfg.ref_batch_size, shape, cfg.p) if bundle.pool is not None else None

    rows = []
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        sl_on = "sl" in terms and epoch > cfg.warmup_epochs
        sums = {"orig": 0.0, "sa": 0.0, "sl": 0.0, "total": 0.0}
        clamp_total, clamp_count, steps = 0.0, 0, 0
        rescores_before = sum(1 for e in (stream.events if stream else []) if e[0] == "score")
        perm = order_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(perm[start:start + cfg.batch_size])
            batch = Encoded(train.coeffs[idx], train.labels[idx])
            x = _inputs(batch.coeffs, keep_bands)
            loss, grads = backward_coeffs(state, x, batch.labels)
            total_loss = cfg.weight("orig") * loss
            total_grads = add_grads(None, grads, cfg.weight("orig"))
            sums["orig"] += loss

            if "sa" in terms or sl_on:
                ref = stream.next(state.step, state if sl_on else None)
            if "sa" in terms:
                xr, rate = _randomized_inputs(batch, ref, mask_sa.bits, cfg.n_bins)
                loss, grads = backward_coeffs(state, xr, batch.labels)
                total_loss += cfg.weight("sa") * loss
                add_grads(total_grads, grads, cfg.weight("sa"))
                sums["sa"] += loss
                clamp_total += rate
                clamp_count += 1
            if sl_on:
                xr, rate = _randomized_inputs(batch, ref, stream.mask.bits, cfg.n_bins)
                loss, grads = backward_coeffs(state, xr, batch.labels)
                total_loss += cfg.weight("sl") * loss
                add_grads(total_grads, grads, cfg.weight("sl"))
                sums["sl"] += loss
                clamp_total += rate
                clamp_count += 1

            if not np.isfinite(total_loss):
                raise NumericError(f"loss diverged at epoch {epoch}, step {state.step}: {total_loss}")
            sums["total"] += total_loss
            lr = learning_rate(state)
            optimizer_step(state, total_grads)
            steps += 1

        row = {
            "epoch": epoch,
            "step": state.step,
            "lr": lr,
            "loss_orig": sums["orig"] / steps,
            "loss_sa": sums["sa"] / steps if "sa" in terms else None,
            "loss_sl": sums["sl"] / steps if sl_on else None,
            "loss_total": sums["total"] / steps,
            "sl_popcount": stream.mask.popcount if sl_on and stream.mask is not None else None,
            "clamp_rate": clamp_total / clamp_count if clamp_count else None,
            "rescores": (sum(1 for e in stream.events if e[0] == "score") - rescores_before) if stream else 0,
        }
        if evaluate_epochs:
            src = evaluate(state, bundle.source_val, keep_bands=keep_bands)
            tgt = evaluate(state, bundle.target_val)
            row.update(source_acc=src["accuracy"], target_acc=tgt["accuracy"], target_entropy=tgt["mean_entropy"])
        log.info("epoch %d: %s", epoch, {k: v for k, v in row.items() if v is not None})
        rows.append(row)

    result = TrainResult(state, rows, list(stream.events) if stream else [], cfg.hash())
    if cfg.metrics_csv:
        Path(cfg.metrics_csv).write_text(metrics_csv_text(rows))
    if cfg.checkpoint:
        final = rows[-1] if rows else {}
        save_checkpoint(state, cfg.checkpoint, {
            "config_hash": result.config_hash,
            "config": cfg.to_dict(),
            "final_target_acc": final.get("target_acc"),
        })
    return result


def fit_supervised(cfg: TrainConfig, dataset, keep_bands=None) -> ClassifierState:
    """Plain cross-entropy training on (optionally band-rejected) source data."""
    enc = encode(dataset)
    bundle = DataBundle(enc, enc, enc, None)
    base = dataclasses.replace(cfg, mode="baseline", metrics_csv=None, checkpoint=None)
    return train_fsdr(base, bundle, keep_bands=keep_bands, evaluate_epochs=False).state


def sweep_p(cfg: TrainConfig, p_values, bundle: DataBundle | None = None, csv_path=None) -> list:
    """Final target accuracy of learned-mask training for each ``p``."""
    bundle = bundle if bundle is not None else prepare_data(cfg)
    rows = []
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"p values must lie in [0, 1], got {p}", "p")
        run_cfg = dataclasses.replace(cfg, mode="sl", p=float(p), metrics_csv=None, checkpoint=None)
        res = train_fsdr(run_cfg, bundle)
        rows.append({"p": float(p), "target_acc": res.metrics[-1]["target_acc"], "config_hash": res.config_hash})
    if csv_path:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("p", "target_acc", "config_hash"))
        for r in rows:
            writer.writerow((repr(r["p"]), repr(r["target_acc"]), r["config_hash"]))
        Path(csv_path).write_text(buf.getvalue())
    return rows
