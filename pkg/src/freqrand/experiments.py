"""Seeded experiments on the planted toy benchmark.

Each function runs one study over several seeds and returns plain dicts, so
the same code backs the acceptance tests and the scripts in ``scripts/``.
"""
from __future__ import annotations

import time

import numpy as np

from .data import ToyDomainSpec
from .freq import N_BANDS, images_to_coeffs, spatial_channels
from .masks import TOY_RANGES, band_reject_study, spectrum_learning
from .train import MODES, TrainConfig, prepare_data, sweep_p, train_fsdr

ABLATION_MODES = ("baseline", "sa", "sl", "fsdr")
SWEEP_P = (0.0, 1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6, 1.0)


def base_config(spec: ToyDomainSpec | None = None, seed: int = 0, **kw) -> TrainConfig:
    """Training config for the toy benchmark; the analysis mask is the planted one."""
    spec = spec if spec is not None else ToyDomainSpec()
    kw.setdefault("mask_sa", [int(b) for b in spec.planted_mask])
    return TrainConfig(toy=spec, seed=seed, **kw)


def band_recovery(seeds, spec: ToyDomainSpec | None = None, ranges=TOY_RANGES, epochs: int = 5) -> list:
    """Band-reject analysis per seed, scored against the planted layout.

    ``style_recall`` is the fraction of style bands marked variant and
    ``structure_recall`` the fraction of structure bands left invariant.
    """
    spec = spec if spec is not None else ToyDomainSpec()
    out = []
    for seed in seeds:
        start = time.perf_counter()
        cfg = base_config(spec, seed, mode="baseline", epochs=epochs, mask_sa=None)
        bundle = prepare_data(cfg)
        result = band_reject_study(bundle.source_train, bundle.target_val, ranges, cfg,
                                   source_eval=bundle.source_val)
        bits = result.mask.bits
        out.append({
            "seed": seed,
            "mask": "".join(str(int(b)) for b in bits),
            "style_recall": float(np.mean(bits[list(spec.style_bands)] == 0)),
            "structure_recall": float(np.mean(bits[list(spec.structure_bands)] == 1)),
            "rows": [(r.band_range, r.source_accuracy, r.target_accuracy) for r in result.rows],
            "seconds": time.perf_counter() - start,
        })
    return out


def learned_mask_alignment(seeds, spec: ToyDomainSpec | None = None, p: float = 0.5,
                           epochs: int = 1) -> list:
    """Share of a learned mask's kept entries that fall on structure bands.

    The model is trained on source data for ``epochs`` epochs and then
    scores one reference batch of the configured size.
    """
    spec = spec if spec is not None else ToyDomainSpec()
    structure = np.zeros(3 * N_BANDS, dtype=bool)
    for c in range(3):
        structure[[c * N_BANDS + b for b in spec.structure_bands]] = True
    out = []
    for seed in seeds:
        cfg = base_config(spec, seed, mode="baseline", epochs=epochs, mask_sa=None)
        bundle = prepare_data(cfg)
        state = train_fsdr(cfg, bundle, evaluate_epochs=False).state
        size = spec.image_size
        refs = np.stack(bundle.pool.draw_batch(cfg.ref_batch_size, (size, size)))
        mask = spectrum_learning(state, spatial_channels(images_to_coeffs(refs)), p)
        kept = mask.bits.astype(bool)
        out.append({
            "seed": seed,
            "structure_share": float(structure[kept].sum() / max(kept.sum(), 1)),
            "popcount": mask.popcount,
        })
    return out


def ablation(seeds, spec: ToyDomainSpec | None = None, modes=ABLATION_MODES, epochs: int = 6) -> dict:
    """Final target accuracy per mode and seed: ``{mode: [acc per seed]}``."""
    spec = spec if spec is not None else ToyDomainSpec()
    unknown = set(modes) - set(MODES)
    if unknown:
        raise ValueError(f"unknown modes {sorted(unknown)}")
    out = {m: [] for m in modes}
    for seed in seeds:
        bundle = prepare_data(base_config(spec, seed, mode="fsdr"))
        for mode in modes:
            res = train_fsdr(base_config(spec, seed, mode=mode, epochs=epochs), bundle)
            out[mode].append(res.metrics[-1]["target_acc"])
    return out


def p_sweep(seeds, spec: ToyDomainSpec | None = None, p_values=SWEEP_P, epochs: int = 6) -> dict:
    """Final target accuracy of learned-mask training: ``{p: [acc per seed]}``."""
    spec = spec if spec is not None else ToyDomainSpec()
    out = {float(p): [] for p in p_values}
    for seed in seeds:
        cfg = base_config(spec, seed, mode="sl", epochs=epochs)
        for row in sweep_p(cfg, p_values):
            out[row["p"]].append(row["target_acc"])
    return out

