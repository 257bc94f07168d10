"""Command-line entry point: ``freqrand <command> ...``.

Every command prints a JSON document to standard output that starts with the
command name, its config hash and the seed, so a run can be repeated from its
own output. ``FREQRAND_SEED`` overrides the seed of config-driven commands.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 file I/O failure,
4 numeric failure (diverged loss, non-finite values).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import ConfigError, DegenerateInputError, NumericError, StructuralError
from .freq import N_BANDS, N_COLORS, band_energy, band_pass_decompose, spatial_channels, zigzag_position
from .histmatch import DEFAULT_BINS, variant_pairs
from .masks import DEFAULT_RANGES, SpectrumMask, band_reject_study
from .model import load_checkpoint
from .randomize import clamp, randomize_sa, randomize_sl
from .train import TrainConfig, evaluate, prepare_data, sweep_p, train_fsdr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
SEED_ENV = "FREQRAND_SEED"

log = logging.getLogger("freqrand")


# -- helpers ------------------------------------------------------------------

def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=False, default=_json_default) + "\n")
    sys.stdout.flush()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"must be an integer, got {raw!r}", SEED_ENV) from None


def load_config(path) -> TrainConfig:
    """Read a JSON training config and apply the ``FREQRAND_SEED`` override."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})", "config") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object", "config")
    if SEED_ENV in os.environ:
        doc["seed"] = _env_seed(doc.get("seed", 0))
    return TrainConfig.from_dict(doc)


def _band_png(values: np.ndarray, scale: float) -> np.ndarray:
    """Grayscale rendering of a signed band plane: magnitude times ``scale``."""
    return np.clip(np.abs(values) * scale, 0.0, 1.0)


def _write_spatial_pngs(fcs, out_dir: Path, size) -> None:
    planes = spatial_channels(fcs.coeffs)  # (192, H, W)
    for k in range(planes.shape[0]):
        c, band = divmod(k, N_BANDS)
        data_mod.save_png(_band_png(planes[k], 1.0), out_dir / f"s{k:03d}_c{c}_b{band:02d}.png", size)


def _ks(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# -- commands -----------------------------------------------------------------

def cmd_decompose(args) -> int:
    img, size = data_mod.load_png(args.input)
    seed = _env_seed(0)
    fcs = band_pass_decompose(img)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.spatial:
        _write_spatial_pngs(fcs, out, size)
    else:
        # one pixel per 8x8 block; a coefficient of 8 (pixel amplitude 1) is white
        for c in range(N_COLORS):
            for band in range(N_BANDS):
                data_mod.save_png(_band_png(fcs.band(c, band), 1.0 / 8.0), out / f"c{c}_b{band:02d}.png")
    energy = band_energy(fcs)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("channel", "band", "u", "v", "energy"))
    for c in range(N_COLORS):
        for band in range(N_BANDS):
            u, v = zigzag_position(band)
            writer.writerow((c, band, u, v, repr(float(energy[c, band]))))
    (out / "energy.csv").write_text(buf.getvalue())
    _emit({
        "command": "decompose",
        "config_hash": _digest({"input": str(args.input), "spatial": bool(args.spatial)}),
        "seed": seed,
        "image_shape": list(img.shape),
        "original_size": list(size),
        "total_energy": float(energy.sum()),
        "band_images": N_COLORS * N_BANDS,
    })
    return EXIT_OK


def cmd_randomize(args) -> int:
    source, size = data_mod.load_png(args.source)
    reference, _ = data_mod.load_png(args.reference)
    mask = SpectrumMask.load(args.mask)
    seed = _env_seed(0)
    if reference.shape != source.shape:
        raise StructuralError(
            f"reference {args.reference} has shape {reference.shape[:2]}, source has {source.shape[:2]}"
        )
    op = randomize_sa if mask.width == N_BANDS else randomize_sl
    raw = op(source, reference, mask, n_bins=args.n_bins, clamp_output=False)
    out_img, rate = clamp(raw)
    data_mod.save_png(out_img, args.out, size)

    src_f, ref_f, out_f = band_pass_decompose(source), band_pass_decompose(reference), band_pass_decompose(out_img)
    # statistics of the matched coefficients themselves (before clamping)
    matched = band_pass_decompose(raw)
    deltas = []
    for c, band in zip(*np.nonzero(variant_pairs(mask))):
        ref_vals = ref_f.band(c, band).ravel()
        before = _ks(src_f.band(c, band).ravel(), ref_vals)
        after = _ks(matched.band(c, band).ravel(), ref_vals)
        deltas.append({"channel": int(c), "band": int(band), "ks_before": before, "ks_after": after,
                       "delta": after - before})
    if args.emit_full_spectrum:
        bands_dir = Path(str(args.out) + ".bands")
        bands_dir.mkdir(parents=True, exist_ok=True)
        _write_spatial_pngs(out_f, bands_dir, size)
    _emit({
        "command": "randomize",
        "config_hash": _digest({"source": str(args.source), "reference": str(args.reference),
                                "mask": mask.to_dict(), "n_bins": args.n_bins}),
        "seed": seed,
        "mask_width": mask.width,
        "clamp_rate": rate,
        "ks_deltas": deltas,
    })
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, mode="baseline")
    bundle = prepare_data(cfg)
    ranges = cfg.candidate_bands if cfg.candidate_bands is not None else DEFAULT_RANGES
    result = band_reject_study(bundle.source_train, bundle.target_val, ranges, cfg, source_eval=bundle.source_val)
    mask = dataclasses.replace(result.mask, created_from=cfg.hash())
    mask.save(args.out)
    _emit({
        "command": "analyze",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "mask": "".join(str(int(b)) for b in mask.bits),
        "rows": [
            {"rejected": list(r.band_range) if r.band_range else None,
             "source_acc": r.source_accuracy, "target_acc": r.target_accuracy}
            for r in result.rows
        ],
    })
    return EXIT_OK


def _default_run_dir(cfg: TrainConfig) -> Path:
    return Path("runs") / cfg.hash()


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_dir = _default_run_dir(cfg)
    updates = {}
    if cfg.metrics_csv is None:
        updates["metrics_csv"] = str(run_dir / "metrics.csv")
    if cfg.checkpoint is None:
        updates["checkpoint"] = str(run_dir / "checkpoint.npz")
    cfg = dataclasses.replace(cfg, **updates)
    for p in (cfg.metrics_csv, cfg.checkpoint):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    result = train_fsdr(cfg)
    final = result.metrics[-1]
    _emit({
        "command": "train",
        "config_hash": result.config_hash,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "n_params": result.state.n_params,
        "input_overhead": cfg.model.input_overhead(),
        "metrics_csv": cfg.metrics_csv,
        "checkpoint": cfg.checkpoint,
        "final": {k: final.get(k) for k in ("source_acc", "target_acc", "target_entropy", "loss_total")},
    })
    return EXIT_OK


def _eval_splits(path: Path) -> dict:
    if path.suffix == ".json":
        cfg = load_config(path)
        bundle = prepare_data(cfg)
        return {"source_val": bundle.source_val, "target_val": bundle.target_val}
    manifest = json.loads((path / data_mod.MANIFEST).read_text())
    names = sorted({e["split"] for e in manifest["samples"] if e["label"] is not None})
    return {name: data_mod.read_dataset(path, name) for name in names}


def cmd_eval(args) -> int:
    state, meta = load_checkpoint(args.checkpoint)
    seed = _env_seed(int(state.seed))
    splits = _eval_splits(Path(args.dataset))
    results = {}
    for name, ds in splits.items():
        res = evaluate(state, ds)
        results[name] = {"accuracy": res["accuracy"], "mean_entropy": res["mean_entropy"],
                         "per_class": {str(k): v for k, v in res["per_class"].items()}}
    _emit({
        "command": "eval",
        "config_hash": meta.get("config_hash"),
        "seed": seed,
        "results": results,
    })
    return EXIT_OK


def _parse_p_list(text: str) -> list:
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if "/" in item:
                num, den = item.split("/")
                values.append(float(num) / float(den))
            else:
                values.append(float(item))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"cannot parse {item!r}", "p-list") from None
    if not values:
        raise ConfigError("no p values given", "p-list")
    bad = [v for v in values if not 0.0 <= v <= 1.0]
    if bad:
        raise ConfigError(f"values must lie in [0, 1], got {bad}", "p-list")
    return values


def cmd_sweep_p(args) -> int:
    cfg = load_config(args.config)
    p_values = _parse_p_list(args.p_list)
    csv_path = cfg.metrics_csv or str(Path("runs") / f"sweep_p_{cfg.hash()}.csv")
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    rows = sweep_p(cfg, p_values, csv_path=csv_path)
    _emit({
        "command": "sweep-p",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "csv": csv_path,
        "rows": rows,
    })
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg.toy is None:
        raise ConfigError("generate needs a 'toy' section", "toy")
    splits = data_mod.generate_toy(cfg.toy, cfg.seed)
    refs = data_mod.generate_reference_images(cfg.toy, cfg.seed)
    root = data_mod.write_dataset(args.out_dir, splits, cfg.toy, refs)
    _emit({
        "command": "generate",
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "out_dir": str(root),
        "counts": {name: len(ds) for name, ds in splits.items()} | {"references": len(refs)},
    })
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqrand", description="Frequency-space domain randomization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="write band images and per-band energies of one image")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--spatial", action="store_true", help="write 192 full-resolution band images instead")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("randomize", help="randomize variant bands of a source toward a reference")
    p.add_argument("--source", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--mask", required=True, help="mask JSON (64 or 192 bits)")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-full-spectrum", action="store_true",
                   help="also write the 192 band images of the result to OUT.bands/")
    p.add_argument("--n-bins", type=int, default=DEFAULT_BINS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_randomize)

    p = sub.add_parser("analyze", help="band-reject analysis; writes a 64-bit mask")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train according to a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory or toy config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-p", help="learned-mask training for several p values")
    p.add_argument("--config", required=True)
    p.add_argument("--p-list", required=True, help="comma-separated values, fractions like 1/6 allowed")
    p.set_defaults(func=cmd_sweep_p)

    p = sub.add_parser("generate", help="write the toy benchmark of a config to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StructuralError, DegenerateInputError) as exc:
        print(f"freqrand: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"freqrand: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"freqrand: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
