"""Planted two-domain toy benchmark, PNG I/O, and the reference image pool.

Toy images are ``0.5 + structure + style``:

* structure: a few parallel bars whose orientation is the class label
  (horizontal through vertical in equal steps), band-limited so that
  only ``structure_bands`` carry it. It is drawn identically in all three
  color channels and does not depend on the domain.
* style: synthesized directly in the DCT domain inside ``style_bands``.
  Style bands below the structure bands get one per-image constant per
  (channel, band), i.e. color casts and smooth gradients. Style bands above
  them get i.i.d. Gaussian texture whose strength varies per channel. Each
  domain has its own palette of ``n_classes`` styles. With probability
  ``label_correlation`` an image uses the palette entry of its own class,
  otherwise a uniformly random entry.

Source data has strongly label-correlated style and the target data has none,
so a model that leans on style shortcuts transfers poorly. Reference images
(the stand-in for a generic natural-image pool) carry bars at arbitrary angles
and continuously random styles.
"""
from __future__ import annotations

import functools
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import ConfigError, StructuralError
from .freq import BLOCK, N_BANDS, FcSet, band_pass_decompose, recompose

LOW_STYLE_LEVELS = (1.0, -1.0)
TEXTURE_LEVELS = (1.0, 0.5, 0.25)


@dataclass(frozen=True)
class DomainStyle:
    """Style parameters of one domain.

    ``color_amplitude`` scales the per-image constant written into low style
    bands (DCT coefficient units; a DC coefficient of 8 is a pixel offset of
    1). Each image's constant is its palette level plus Gaussian ``jitter``
    (in palette-level units). ``texture_amplitude`` is the coefficient
    standard deviation of the high-band texture in the strongest channel.
    """

    color_amplitude: float = 0.8
    texture_amplitude: float = 0.1
    label_correlation: float = 0.9
    palette_seed: int = 0
    jitter: float = 0.25


@dataclass(frozen=True)
class ToyDomainSpec:
    image_size: int = 32
    n_classes: int = 4
    structure_bands: tuple = tuple(range(2, 40))
    style_bands: tuple = (0, 1) + tuple(range(40, 64))
    shape_amplitude: float = 0.1
    source: DomainStyle = DomainStyle()
    target: DomainStyle = DomainStyle(color_amplitude=1.2, texture_amplitude=0.15, label_correlation=0.0, palette_seed=1)
    reference: DomainStyle = DomainStyle(color_amplitude=1.6, texture_amplitude=0.2, label_correlation=0.0, palette_seed=2)
    n_train: int = 512
    n_val: int = 256
    n_target: int = 1024
    pool_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "structure_bands", tuple(int(b) for b in self.structure_bands))
        object.__setattr__(self, "style_bands", tuple(int(b) for b in self.style_bands))
        for name in ("source", "target", "reference"):
            val = getattr(self, name)
            if isinstance(val, dict):
                object.__setattr__(self, name, DomainStyle(**val))

    def validate(self) -> None:
        struct, style = set(self.structure_bands), set(self.style_bands)
        if not struct:
            raise ConfigError("must be non-empty", "structure_bands")
        if not style:
            raise ConfigError("must be non-empty", "style_bands")
        if struct & style:
            raise ConfigError(f"overlaps style_bands at {sorted(struct & style)}", "structure_bands")
        for name, bands in (("structure_bands", struct), ("style_bands", style)):
            if min(bands) < 0 or max(bands) >= N_BANDS:
                raise ConfigError("band indices must lie in 0..63", name)
        if self.image_size <= 0 or self.image_size % BLOCK:
            raise ConfigError("must be a positive multiple of 8", "image_size")
        if not 2 <= self.n_classes <= 8:
            raise ConfigError("toy generator supports 2..8 classes", "n_classes")
        for name in ("source", "target", "reference"):
            dom = getattr(self, name)
            if not 0.0 <= dom.label_correlation <= 1.0:
                raise ConfigError("must lie in [0, 1]", f"{name}.label_correlation")
            if min(dom.color_amplitude, dom.texture_amplitude, dom.jitter) < 0:
                raise ConfigError("amplitudes must be non-negative", name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["structure_bands"] = list(self.structure_bands)
        d["style_bands"] = list(self.style_bands)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToyDomainSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "toy")
        return cls(**d)

    @property
    def planted_mask(self) -> np.ndarray:
        """64 bits with 0 on the style bands: the ground-truth variant mask."""
        bits = np.ones(N_BANDS, dtype=np.int8)
        bits[list(self.style_bands)] = 0
        return bits

    @property
    def low_style_bands(self) -> tuple:
        lo = min(self.structure_bands)
        return tuple(b for b in self.style_bands if b < lo)

    @property
    def high_style_bands(self) -> tuple:
        lo = min(self.structure_bands)
        return tuple(b for b in self.style_bands if b > lo)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3)
    labels: np.ndarray  # (N,), 0-based
    domain: str = "source"

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.domain)


# -- toy generator -----------------------------------------------------------

def _palette(spec: ToyDomainSpec, style: DomainStyle):
    """Per-class low-band means ``(C, 3, n_low)`` and texture scales ``(C, 3)``."""
    rng = np.random.default_rng([style.palette_seed, 7919])
    n_low = len(spec.low_style_bands)
    low = rng.choice(LOW_STYLE_LEVELS, size=(spec.n_classes, 3, n_low))
    perms = list(itertools.permutations(TEXTURE_LEVELS))
    order = rng.permutation(len(perms))
    tex = np.array([perms[order[z % len(perms)]] for z in range(spec.n_classes)])
    return low, tex


def _bars(size, angle, rng):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    proj = xx * np.cos(angle) + yy * np.sin(angle)
    lo, hi = proj.min(), proj.max()
    img = np.zeros((size, size))
    for _ in range(rng.integers(2, 4)):
        thick = rng.uniform(size / 16, size / 8)
        centre = rng.uniform(lo + thick, hi - thick)
        img[np.abs(proj - centre) < thick / 2] = 1.0
    return img


def class_angle(label: int, n_classes: int) -> float:
    """Bar normal direction for a class; bars run perpendicular to it.

    Classes are spread over a quarter turn rather than a half turn: a
    pattern and its mirror image have identical band energies, so angles
    ``t`` and ``pi - t`` would only differ in coefficient signs.
    """
    return 0.5 * np.pi * label / (n_classes - 1) + np.pi / 2


@functools.lru_cache(maxsize=8)
def _structure_gains(size: int, bands: tuple) -> np.ndarray:
    """Per-band gains that flatten the expected energy of bar patterns.

    Raw bars concentrate their energy in the lowest bands. Equalizing it
    spreads the class evidence over every structure band, so dropping any
    one range of them costs the classifier a comparable share of signal.
    The gains come from a fixed bank of bars at uniformly spaced angles
    and preserve the total energy over ``bands``.
    """
    rng = np.random.default_rng(0xBA5)
    power = np.zeros(N_BANDS)
    for angle in np.linspace(0.0, np.pi, 16, endpoint=False):
        coeffs = band_pass_decompose(np.repeat(_bars(size, angle, rng)[:, :, None], 3, axis=2)).coeffs
        power += (coeffs**2).mean(axis=(0, 1, 2))
    idx = list(bands)
    gains = np.zeros(N_BANDS)
    gains[idx] = np.sqrt(power[idx].mean() / power[idx])
    return gains


def _structure(spec, angle, rng):
    size = spec.image_size
    bars = _bars(size, angle, rng) * spec.shape_amplitude * rng.uniform(0.7, 1.0)
    fcs = band_pass_decompose(np.repeat(bars[:, :, None], 3, axis=2))
    return fcs.coeffs * _structure_gains(size, spec.structure_bands)


def _style_coeffs(spec, style, low_means, tex_scales, rng):
    """Style coefficients ``(3, h, w, 64)`` from per-image palette values."""
    nb = spec.image_size // BLOCK
    coeffs = np.zeros((3, nb, nb, N_BANDS))
    low, high = list(spec.low_style_bands), list(spec.high_style_bands)
    if low:
        values = low_means + style.jitter * rng.normal(size=low_means.shape)
        coeffs[:, :, :, low] = style.color_amplitude * values[:, None, None, :]
    if high:
        noise = rng.normal(size=(3, nb, nb, len(high)))
        coeffs[:, :, :, high] = style.texture_amplitude * tex_scales[:, None, None, None] * noise
    return coeffs


def _render(structure, style):
    img = recompose(FcSet(structure + style))
    img += 0.5
    return np.clip(img, 0.0, 1.0)


def _generate_domain(spec, style, n, rng):
    low_pal, tex_pal = _palette(spec, style)
    size = spec.image_size
    images = np.empty((n, size, size, 3))
    labels = rng.integers(0, spec.n_classes, size=n)
    for k in range(n):
        y = int(labels[k])
        structure = _structure(spec, class_angle(y, spec.n_classes), rng)
        z = y if rng.random() < style.label_correlation else int(rng.integers(spec.n_classes))
        images[k] = _render(structure, _style_coeffs(spec, style, low_pal[z], tex_pal[z], rng))
    return labels, images


def generate_toy(spec: ToyDomainSpec, seed: int) -> dict:
    """Generate ``source_train``, ``source_val`` and ``target_val`` datasets.

    Deterministic per ``(spec, seed)``.
    """
    spec.validate()
    streams = np.random.SeedSequence([seed, 0x70F]).spawn(3)
    out = {}
    for (name, style, n, domain), ss in zip(
        (
            ("source_train", spec.source, spec.n_train, "source"),
            ("source_val", spec.source, spec.n_val, "source"),
            ("target_val", spec.target, spec.n_target, "target"),
        ),
        streams,
    ):
        labels, images = _generate_domain(spec, style, n, np.random.default_rng(ss))
        out[name] = Dataset(images, labels, domain)
    return out


def generate_reference_images(spec: ToyDomainSpec, seed: int, size: int | None = None) -> np.ndarray:
    """Unlabeled stand-in for a natural-image reference pool.

    Bars at uniformly random angles, low-band style drawn uniformly in
    ``[-1, 1]`` and per-channel texture strength uniform in ``[0, 1]``, both
    scaled by ``spec.reference``.
    """
    spec.validate()
    n = spec.pool_size if size is None else size
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EF]))
    style = spec.reference
    out = np.empty((n, spec.image_size, spec.image_size, 3))
    n_low = len(spec.low_style_bands)
    for k in range(n):
        structure = _structure(spec, rng.uniform(0, np.pi), rng)
        low = rng.uniform(-1, 1, size=(3, n_low))
        tex = rng.uniform(0, 1, size=3)
        out[k] = _render(structure, _style_coeffs(spec, style, low, tex, rng))
    return out


# -- PNG I/O -----------------------------------------------------------------

def pad_to_block(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = (-h) % BLOCK, (-w) % BLOCK
    if not (ph or pw):
        return img
    # reflect needs pad < size; symmetric covers tiny images
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode)


def load_png(path, pad: bool = True) -> tuple[np.ndarray, tuple[int, int]]:
    """Read an 8-bit image as ``(H, W, 3)`` floats in [0, 1].

    Grayscale is replicated to three channels and alpha is dropped. With
    ``pad`` the result is reflect-padded to multiples of 8; the original
    ``(height, width)`` is returned alongside for cropping on save.
    """
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "I;16", "I") else im.convert("L"))
    except (OSError, ValueError) as exc:
        raise OSError(f"{path}: cannot read image ({exc})") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    img = arr.astype(np.float64) / 255.0
    size = img.shape[:2]
    if pad:
        img = pad_to_block(img)
    return img, size


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Round-half-up quantization of [0, 1] floats to 8 bits."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(img: np.ndarray, path, size: tuple[int, int] | None = None) -> None:
    """Write an image as 8-bit RGB, cropped to ``size`` if given."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if size is not None:
        img = img[: size[0], : size[1]]
    path = Path(path)
    try:
        PILImage.fromarray(np.ascontiguousarray(to_uint8(img))).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"{path}: cannot write image ({exc})") from exc


def resize_bilinear(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment."""
    h, w = img.shape[:2]
    if (h, w) == tuple(shape):
        return img
    ys = (np.arange(shape[0]) + 0.5) * h / shape[0] - 0.5
    xs = (np.arange(shape[1]) + 0.5) * w / shape[1] - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    return np.stack(
        [ndimage.map_coordinates(img[:, :, c], grid, order=1, mode="nearest") for c in range(img.shape[2])],
        axis=2,
    )


# -- on-disk datasets ----------------------------------------------------------

MANIFEST = "manifest.json"


def write_dataset(root, splits: dict, spec: ToyDomainSpec | None = None, references: np.ndarray | None = None) -> Path:
    """Write splits as PNGs plus ``manifest.json``.

    Manifest entries are ``{"path", "label", "domain", "split"}`` with paths
    relative to ``root`` and 0-based labels. Reference images, if given, go
    to ``references/`` with ``label`` null.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, ds in splits.items():
        (root / split).mkdir(exist_ok=True)
        for k in range(len(ds)):
            rel = f"{split}/{k:05d}.png"
            save_png(ds.images[k], root / rel)
            entries.append({"path": rel, "label": int(ds.labels[k]), "domain": ds.domain, "split": split})
    if references is not None:
        (root / "references").mkdir(exist_ok=True)
        for k, img in enumerate(references):
            rel = f"references/{k:05d}.png"
            save_png(img, root / rel)
            entries.append({"path": rel, "label": None, "domain": "reference", "split": "references"})
    manifest = {"samples": entries}
    if spec is not None:
        manifest["spec"] = spec.to_dict()
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


def read_dataset(root, split: str) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except OSError as exc:
        raise OSError(f"{root / MANIFEST}: cannot read manifest ({exc})") from exc
    rows = [e for e in manifest["samples"] if e["split"] == split]
    if not rows:
        raise ConfigError(f"no samples for split {split!r} in {root / MANIFEST}", "split")
    images = np.stack([load_png(root / e["path"])[0] for e in rows])
    labels = np.array([-1 if e["label"] is None else e["label"] for e in rows], dtype=np.int64)
    return Dataset(images, labels, rows[0]["domain"])


def load_image_dir(root) -> list:
    """All PNG/JPEG images under a directory, sorted by name."""
    root = Path(root)
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    return [load_png(p)[0] for p in paths]


# -- reference pool ------------------------------------------------------------

@dataclass
class ReferencePool:
    """Reference images drawn without replacement, reshuffled on exhaustion."""

    images: list
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)
    _order: list = field(init=False, repr=False, default_factory=list)

    def __post_init__(self):
        if len(self.images) == 0:
            raise ConfigError("reference pool is empty", "reference")
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x9EF]))

    def __len__(self) -> int:
        return len(self.images)

    def _next_index(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.images)))
        return int(self._order.pop(0))

    def draw_batch(self, size: int, shape: tuple[int, int]) -> list:
        """``size`` images, without replacement across consecutive draws."""
        return [resize_bilinear(self.images[self._next_index()], shape) for _ in range(size)]


def sample_reference(pool: ReferencePool, rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """One uniform draw from the pool, resized to ``shape``."""
    if len(pool) == 0:
        raise ConfigError("reference pool is empty", "reference")
    return resize_bilinear(pool.images[int(rng.integers(len(pool)))], shape)
