"""Blockwise DCT and the 64-band decomposition of images.

Images are ``(H, W, 3)`` float arrays with ``H`` and ``W`` multiples of 8.
Each 8x8 block gets an orthonormal 2-D DCT-II; the coefficient at block-local
position ``(u, v)`` (``u`` = row frequency, ``v`` = column frequency) belongs
to band ``zigzag_index(u, v)``, so bands run from DC (0) to the highest
frequency (63) in JPEG scan order.

An :class:`FcSet` stores band coefficients compactly as an array of shape
``(3, H/8, W/8, 64)``. Plane ``i`` of the conceptual ``H x W x 3 x 64`` stack
is recovered with :meth:`FcSet.planes`; every coefficient lives in exactly one
plane, which is what makes the decomposition exact.

Spatial channel layout (``to_spatial``) is color-major, band-minor: channel
``c * 64 + i`` holds band ``i`` of color channel ``c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .errors import StructuralError

BLOCK = 8
N_BANDS = BLOCK * BLOCK
N_COLORS = 3
N_SPATIAL = N_COLORS * N_BANDS


@lru_cache(maxsize=None)
def _zigzag_tables():
    order = []
    for s in range(2 * BLOCK - 1):
        cells = [(u, s - u) for u in range(BLOCK) if 0 <= s - u < BLOCK]
        # odd anti-diagonals run down-left, even ones up-right
        if s % 2 == 0:
            cells.reverse()
        order.extend(cells)
    index = np.empty((BLOCK, BLOCK), dtype=np.int64)
    for i, (u, v) in enumerate(order):
        index[u, v] = i
    index.setflags(write=False)
    return index, tuple(order)


def zigzag_index(u: int, v: int) -> int:
    """Band index of block-local DCT coefficient ``(u, v)``."""
    if not (0 <= u < BLOCK and 0 <= v < BLOCK):
        raise StructuralError(f"coefficient position ({u}, {v}) outside 0..7")
    return int(_zigzag_tables()[0][u, v])


def zigzag_position(band: int) -> tuple[int, int]:
    """Inverse of :func:`zigzag_index`."""
    if not 0 <= band < N_BANDS:
        raise StructuralError(f"band {band} outside 0..63")
    return _zigzag_tables()[1][band]


def zigzag_matrix() -> np.ndarray:
    """8x8 read-only array mapping ``(u, v)`` to band index."""
    return _zigzag_tables()[0]


@lru_cache(maxsize=None)
def _band_basis() -> np.ndarray:
    """``(64, 8, 8)`` spatial basis patterns, indexed by band."""
    n = np.arange(BLOCK)
    k = np.arange(BLOCK)[:, None]
    d = np.sqrt(2.0 / BLOCK) * np.cos(np.pi * (2 * n + 1) * k / (2 * BLOCK))
    d[0] /= np.sqrt(2.0)
    basis = np.empty((N_BANDS, BLOCK, BLOCK))
    for band, (u, v) in enumerate(_zigzag_tables()[1]):
        basis[band] = np.outer(d[u], d[v])
    basis.setflags(write=False)
    return basis


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != N_COLORS:
        raise StructuralError(f"expected (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h % BLOCK or w % BLOCK or h == 0 or w == 0:
        raise StructuralError(
            f"image size {h}x{w} is not a positive multiple of {BLOCK}; pad first"
        )


def _blocks(arr: np.ndarray) -> np.ndarray:
    # (H, W, 3) -> (3, H/8, 8, W/8, 8)
    h, w = arr.shape[:2]
    return arr.transpose(2, 0, 1).reshape(N_COLORS, h // BLOCK, BLOCK, w // BLOCK, BLOCK)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    c, nby, _, nbx, _ = blocks.shape
    return blocks.reshape(c, nby * BLOCK, nbx * BLOCK).transpose(1, 2, 0)


def dct_forward(img: np.ndarray) -> np.ndarray:
    """Orthonormal 8x8 block DCT-II of every channel.

    The result has the image's shape; coefficient ``(u, v)`` of a block sits
    at the block-local position ``(u, v)``.
    """
    img = np.asarray(img, dtype=np.float64)
    _check_image(img)
    coeffs = fft.dctn(_blocks(img), type=2, axes=(2, 4), norm="ortho")
    return _unblocks(coeffs)


def dct_inverse(grid: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_forward`. The output is not clamped."""
    grid = np.asarray(grid, dtype=np.float64)
    _check_image(grid)
    pixels = fft.idctn(_blocks(grid), type=2, axes=(2, 4), norm="ortho")
    return _unblocks(pixels)


@dataclass(frozen=True)
class FcSet:
    """Per-channel 64-band decomposition of one image.

    ``coeffs[c, by, bx, i]`` is the band-``i`` coefficient of block
    ``(by, bx)`` in color channel ``c``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.ndim != 4 or self.coeffs.shape[0] != N_COLORS or self.coeffs.shape[3] != N_BANDS:
            raise StructuralError(f"FcSet coefficients must be (3, h, w, 64), got {self.coeffs.shape}")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        _, nby, nbx, _ = self.coeffs.shape
        return (nby * BLOCK, nbx * BLOCK, N_COLORS)

    def band(self, channel: int, band: int) -> np.ndarray:
        """Flat view of one (channel, band) coefficient population."""
        return self.coeffs[channel, :, :, band].ravel()

    def planes(self) -> np.ndarray:
        """Materialize the ``(3, 64, H, W)`` stack of coefficient planes."""
        c, nby, nbx, _ = self.coeffs.shape
        zz = zigzag_matrix()
        out = np.zeros((c, N_BANDS, nby, BLOCK, nbx, BLOCK))
        for u in range(BLOCK):
            for v in range(BLOCK):
                out[:, zz[u, v], :, u, :, v] = self.coeffs[..., zz[u, v]]
        return out.reshape(c, N_BANDS, nby * BLOCK, nbx * BLOCK)

    def grid(self) -> np.ndarray:
        """Full coefficient grid, i.e. the per-channel sum of all planes."""
        c, nby, nbx, _ = self.coeffs.shape
        zz = zigzag_matrix()
        blocks = self.coeffs[..., zz]  # (c, nby, nbx, 8, 8)
        return blocks.transpose(1, 3, 2, 4, 0).reshape(nby * BLOCK, nbx * BLOCK, c)


def images_to_coeffs(images: np.ndarray) -> np.ndarray:
    """Band coefficients for a stack of images.

    ``images`` has shape ``(..., H, W, 3)``; the result has shape
    ``(..., 3, H/8, W/8, 64)`` in band order.
    """
    images = np.asarray(images, dtype=np.float64)
    *lead, h, w, c = images.shape
    _check_image(images.reshape(-1, h, w, c)[0] if lead else images)
    nby, nbx = h // BLOCK, w // BLOCK
    blocks = images.reshape(*lead, nby, BLOCK, nbx, BLOCK, c)
    coeffs = fft.dctn(blocks, type=2, axes=(-4, -2), norm="ortho")
    # (..., by, u, bx, v, c) -> (..., c, by, bx, u*8+v)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl + 4, nl, nl + 2, nl + 1, nl + 3)
    raster = coeffs.transpose(perm).reshape(*lead, c, nby, nbx, N_BANDS)
    return np.ascontiguousarray(raster[..., _raster_of_band()])


def coeffs_to_images(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`images_to_coeffs` (no clamping)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    *lead, c, nby, nbx, nb = coeffs.shape
    if c != N_COLORS or nb != N_BANDS:
        raise StructuralError(f"expected (..., 3, h, w, 64) coefficients, got {coeffs.shape}")
    blocks = coeffs[..., zigzag_matrix()]  # (..., c, by, bx, u, v)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl + 1, nl + 3, nl + 2, nl + 4, nl)
    blocks = blocks.transpose(perm)  # (..., by, u, bx, v, c)
    pixels = fft.idctn(blocks, type=2, axes=(-4, -2), norm="ortho")
    return pixels.reshape(*lead, nby * BLOCK, nbx * BLOCK, c)


@lru_cache(maxsize=None)
def _raster_of_band() -> np.ndarray:
    return np.array([u * BLOCK + v for u, v in _zigzag_tables()[1]])


def band_pass_decompose(img: np.ndarray) -> FcSet:
    """Split an image into its 64 DCT bands per color channel."""
    img = np.asarray(img, dtype=np.float64)
    _check_image(img)
    return FcSet(images_to_coeffs(img))


def _mask64(mask) -> np.ndarray:
    bits = np.asarray(getattr(mask, "bits", mask))
    if bits.shape != (N_BANDS,):
        raise StructuralError(f"band mask must have 64 entries, got shape {bits.shape}")
    return bits.astype(bool)


def band_reject(fcs: FcSet, mask) -> FcSet:
    """Zero every band whose mask bit is 0; keep the others unchanged."""
    keep = _mask64(mask)
    return FcSet(np.where(keep, fcs.coeffs, 0.0))


def recompose(fcs: FcSet) -> np.ndarray:
    """Inverse DCT of the summed bands (no clamping)."""
    return coeffs_to_images(fcs.coeffs)


def spatial_channels(coeffs: np.ndarray) -> np.ndarray:
    """Spatial band images for raw coefficient arrays.

    ``coeffs`` has shape ``(..., 3, h, w, 64)``; the result has shape
    ``(..., 192, 8h, 8w)``. Each band image is the inverse DCT of a single
    plane, which for one block is just the coefficient times that band's
    basis pattern.
    """
    *lead, c, nby, nbx, nb = coeffs.shape
    if c != N_COLORS or nb != N_BANDS:
        raise StructuralError(f"expected (..., 3, h, w, 64) coefficients, got {coeffs.shape}")
    basis = _band_basis()
    # (..., c, nby, nbx, i) x (i, y, x) -> (..., c, i, nby, y, nbx, x)
    out = np.einsum("...cabi,iyx->...ciaybx", coeffs, basis, optimize=True)
    return out.reshape(*lead, N_SPATIAL, nby * BLOCK, nbx * BLOCK)


def to_spatial(fcs: FcSet) -> np.ndarray:
    """192-channel spatial representation ``(192, H, W)`` of an FcSet."""
    return spatial_channels(fcs.coeffs)


def spatial_index(channel: int, band: int) -> int:
    """Position of (color channel, band) in the 192-wide layout."""
    return channel * N_BANDS + band


def band_energy(fcs: FcSet) -> np.ndarray:
    """Sum of squared coefficients per (channel, band), shape ``(3, 64)``."""
    return np.einsum("cabi,cabi->ci", fcs.coeffs, fcs.coeffs)
