"""Image segmentation by kinetic consensus.

Pixels become particles on [-1, 1]^2 carrying their gray level as a static
feature. After the DSMC evolution particles sit in clusters; every pixel then
takes the mean gray level of its cluster, the result is thresholded, and
small foreground specks and background holes are cleaned up. The patch
variant tunes and segments square tiles independently and stitches them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import ModelParams, ParticleEnsemble, make_rng
from .dsmc import quasi_invariant_params, run_dsmc
from .linkage import link_components


class UnsupportedFormatError(OSError):
    """Readable file that is not a single-channel PGM or PNG."""


@dataclass
class GrayImage:
    """Row-major gray levels in [0, 1] with the bit depth they were read at."""

    pixels: np.ndarray
    bit_depth: int = 8
    name: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"pixels must be a nonempty 2D array, got shape {px.shape}")
        if not np.all((px >= 0) & (px <= 1)):
            raise ValueError("pixels must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class SegOptions:
    threshold: float = 0.5
    link_radius: float | None = None  # None: delta1 / 2
    min_component_fraction: float = 0.005
    scale_sigma: bool = True  # apply the quasi-invariant sigma2 -> epsilon sigma2 before DSMC
    stall_tol: float | None = None

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.link_radius is not None and not self.link_radius > 0:
            raise ValueError("link_radius must be > 0")
        if not 0 <= self.min_component_fraction < 1:
            raise ValueError("min_component_fraction must lie in [0, 1)")

    def min_size(self, area: int) -> int:
        return max(1, int(round(self.min_component_fraction * area)))


@dataclass(frozen=True)
class PatchLayout:
    patch_size: int
    rows: int
    cols: int
    pad_top: int
    pad_bottom: int
    pad_left: int
    pad_right: int

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.rows * self.patch_size, self.cols * self.patch_size

    @property
    def original_shape(self) -> tuple[int, int]:
        h, w = self.padded_shape
        return h - self.pad_top - self.pad_bottom, w - self.pad_left - self.pad_right

    def __len__(self) -> int:
        return self.rows * self.cols


@dataclass
class Segmentation:
    mask: np.ndarray  # bool, True = foreground
    levels: np.ndarray  # cluster-mean gray levels
    n_clusters: int
    steps_run: int


# --- image I/O ---------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens (comments skipped) and the offset after them."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise OSError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def _read_pgm(data: bytes, name: str) -> GrayImage:
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise OSError(f"{name}: malformed PGM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise OSError(f"{name}: bad PGM dimensions or maxval")
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos + 1: pos + 1 + w * h * dtype.itemsize]
        if len(raw) != w * h * dtype.itemsize:
            raise OSError(f"{name}: truncated PGM raster")
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        try:
            values = np.array(data[pos:].split()[: w * h], dtype=np.float64)
        except ValueError as exc:
            raise OSError(f"{name}: malformed ASCII PGM raster") from exc
        if values.size != w * h:
            raise OSError(f"{name}: truncated PGM raster")
    if values.max(initial=0) > maxval:
        raise OSError(f"{name}: sample above maxval")
    depth = 16 if maxval > 255 else 8
    return GrayImage(values.reshape(h, w) / maxval, depth, name)


def load_image(path) -> GrayImage:
    """Read a PGM (P2/P5) or 8/16-bit grayscale PNG, scaled to [0, 1] by the format maximum."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        return _read_pgm(data, path.name)
    if data[:2] in (b"P3", b"P6"):
        raise UnsupportedFormatError(f"{path.name}: color PPM is not supported")
    if not data.startswith(b"\x89PNG"):
        raise OSError(f"{path.name}: not a PGM or PNG file")
    with Image.open(path) as im:
        mode = im.mode
        arr = np.array(im)
    if mode == "L":
        return GrayImage(arr / 255.0, 8, path.name)
    if mode in ("I;16", "I;16B", "I"):
        return GrayImage(arr.astype(np.float64) / 65535.0, 16, path.name)
    if mode == "1":
        return GrayImage(arr.astype(np.float64), 8, path.name)
    raise UnsupportedFormatError(f"{path.name}: PNG mode {mode!r} is not single-channel gray")


def _quantize(pixels: np.ndarray, bit_depth: int) -> np.ndarray:
    top = 65535 if bit_depth == 16 else 255
    return np.rint(np.clip(pixels, 0.0, 1.0) * top).astype(np.uint16 if bit_depth == 16 else np.uint8)


def save_image(path, img: GrayImage) -> None:
    """Write PGM (binary P5) or PNG, chosen by suffix, at the image's bit depth."""
    path = Path(path)
    q = _quantize(img.pixels, img.bit_depth)
    if path.suffix.lower() == ".png":
        Image.fromarray(q).save(path)  # uint8 -> L, uint16 -> I;16
        return
    top = 65535 if img.bit_depth == 16 else 255
    raster = q.astype(">u2").tobytes() if img.bit_depth == 16 else q.tobytes()
    path.write_bytes(f"P5\n{img.width} {img.height}\n{top}\n".encode() + raster)


def save_mask(path, mask: np.ndarray) -> None:
    """Write a boolean mask as an 8-bit 0/255 image."""
    save_image(path, GrayImage(np.asarray(mask, dtype=np.float64), 8))


# --- single-image pipeline ---------------------------------------------------

def image_to_ensemble(img: GrayImage) -> ParticleEnsemble:
    """One particle per pixel on [-1, 1]^2: column -> x, row -> y, gray level -> feature."""
    h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"image must be at least 2x2, got {h}x{w}")
    rows, cols = np.divmod(np.arange(h * w), w)
    pos = np.column_stack([-1.0 + 2.0 * cols / (w - 1), -1.0 + 2.0 * rows / (h - 1)])
    return ParticleEnsemble(pos, img.pixels.reshape(-1), np.column_stack([rows, cols]))


def extract_clusters(ensemble: ParticleEnsemble, link_radius: float) -> np.ndarray:
    """Single-linkage labels over positions, contiguous and ordered by smallest member index."""
    return link_components(ensemble.positions, link_radius)


def cluster_mean_mask(ensemble: ParticleEnsemble, labels, shape: tuple[int, int]) -> np.ndarray:
    """Raster where every pixel holds the mean feature of its particle's cluster."""
    if ensemble.source_index is None:
        raise ValueError("ensemble has no source_index; cannot map back to pixels")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(ensemble),):
        raise ValueError("one label per particle required")
    sums = np.bincount(labels, weights=ensemble.features)
    counts = np.bincount(labels)
    means = sums / np.maximum(counts, 1)
    out = np.zeros(shape)
    r, c = ensemble.source_index[:, 0], ensemble.source_index[:, 1]
    out[r, c] = means[labels]
    return out


def binarize(levels, threshold: float) -> np.ndarray:
    """Foreground where the level is at least ``threshold``."""
    return np.asarray(levels) >= threshold


_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


def _drop_small(mask: np.ndarray, min_size: int, structure) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    small = sizes < min_size
    small[0] = False
    return mask & ~small[labels]


def morph_refine(mask, min_size: int) -> np.ndarray:
    """Remove 8-connected foreground specks, then fill 4-connected background holes, below ``min_size`` pixels.

    When stage one leaves no foreground at all, stage two is skipped, which
    keeps the operation idempotent on tiny all-background images.
    """
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    fg = _drop_small(np.asarray(mask, dtype=bool), min_size, _EIGHT)
    if not fg.any():
        return fg
    return ~_drop_small(~fg, min_size, _FOUR)


def run_params(params: ModelParams, opts: SegOptions) -> ModelParams:
    return quasi_invariant_params(params) if opts.scale_sigma else params


def segment_image(img: GrayImage, params: ModelParams, opts: SegOptions = SegOptions(),
                  rng: np.random.Generator | None = None) -> Segmentation:
    """Particles -> DSMC -> clusters -> cluster means -> threshold -> refinement."""
    rng = make_rng(params.seed) if rng is None else rng
    ens = image_to_ensemble(img)
    res = run_dsmc(ens, run_params(params, opts), rng, stall_tol=opts.stall_tol)
    radius = opts.link_radius if opts.link_radius is not None else params.delta1 / 2.0
    labels = extract_clusters(res.final, radius)
    levels = cluster_mean_mask(res.final, labels, img.shape)
    mask = morph_refine(binarize(levels, opts.threshold), opts.min_size(img.width * img.height))
    return Segmentation(mask, levels, int(labels.max()) + 1, res.steps_run)


# --- patches -----------------------------------------------------------------

def pad_to_square(img: GrayImage, patch_size: int) -> tuple[GrayImage, PatchLayout]:
    """Zero-pad to the smallest square whose side is a multiple of ``patch_size``.

    Padding is split evenly; odd remainders put the extra pixel at the bottom/right.
    """
    if patch_size < 8:
        raise ValueError(f"patch_size must be >= 8, got {patch_size}")
    h, w = img.shape
    side = -(-max(h, w) // patch_size) * patch_size
    top, left = (side - h) // 2, (side - w) // 2
    layout = PatchLayout(patch_size, side // patch_size, side // patch_size,
                         top, side - h - top, left, side - w - left)
    padded = np.zeros((side, side))
    padded[top: top + h, left: left + w] = img.pixels
    return GrayImage(padded, img.bit_depth, img.name), layout


def unpad(array: np.ndarray, layout: PatchLayout) -> np.ndarray:
    h, w = layout.original_shape
    return array[layout.pad_top: layout.pad_top + h, layout.pad_left: layout.pad_left + w]


def split_patches(img, layout: PatchLayout) -> list:
    """Row-major list of patches; accepts a GrayImage or a plain 2D array."""
    arr = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    if arr.shape != layout.padded_shape:
        raise ValueError(f"array shape {arr.shape} does not match layout {layout.padded_shape}")
    p = layout.patch_size
    tiles = [arr[r * p:(r + 1) * p, c * p:(c + 1) * p].copy()
             for r in range(layout.rows) for c in range(layout.cols)]
    if isinstance(img, GrayImage):
        return [GrayImage(t, img.bit_depth, f"{img.name}[{k}]") for k, t in enumerate(tiles)]
    return tiles


def stitch_masks(masks, layout: PatchLayout, original_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Reassemble row-major patch masks and crop the padding."""
    p = layout.patch_size
    if len(masks) != len(layout):
        raise ValueError(f"expected {len(layout)} patches, got {len(masks)}")
    if original_shape is not None and tuple(original_shape) != layout.original_shape:
        raise ValueError(f"original shape {original_shape} does not match layout {layout.original_shape}")
    full = np.zeros(layout.padded_shape, dtype=np.asarray(masks[0]).dtype)
    for k, m in enumerate(masks):
        m = np.asarray(m)
        if m.shape != (p, p):
            raise ValueError(f"patch {k} has shape {m.shape}, expected {(p, p)}")
        r, c = divmod(k, layout.cols)
        full[r * p:(r + 1) * p, c * p:(c + 1) * p] = m
    return unpad(full, layout)


@dataclass
class PatchRecord:
    patch_row: int
    patch_col: int
    delta1: float
    delta2: float
    sigma2: float
    dsc: float


@dataclass
class PatchedSegmentation:
    mask: np.ndarray
    layout: PatchLayout
    records: list[PatchRecord] = field(default_factory=list)


def _segment_one_patch(args):
    from .tune import dsc_metric, random_search

    k, tile, truth, space, base, opts, seed = args
    log, best = random_search(tile, truth, space, opts, seed=seed, base=base, trial_key=(k,))
    seg = segment_image(tile, best, opts)
    return k, seg.mask, best, dsc_metric(seg.mask, truth)


def segment_patched(img: GrayImage, truth, space, opts: SegOptions = SegOptions(), base: ModelParams | None = None,
                    seed: int = 0, jobs: int = 1, patch_size: int = 54) -> PatchedSegmentation:
    """Tune and segment each patch independently, stitch, then refine the whole mask again.

    Coordinates are rescaled per patch, so delta1 is measured in patch units.
    Every patch draws from its own stream keyed by its index, making the
    result independent of ``jobs``.
    """
    truth = np.asarray(truth, dtype=bool)
    if truth.shape != img.shape:
        raise ValueError("truth mask and image differ in shape")
    padded, layout = pad_to_square(img, patch_size)
    tiles = split_patches(padded, layout)
    t_pad = np.zeros(layout.padded_shape, dtype=bool)
    t_pad[layout.pad_top: layout.pad_top + img.height, layout.pad_left: layout.pad_left + img.width] = truth
    truths = split_patches(t_pad, layout)
    base = ModelParams(0.5, 0.1, 0.1, seed=seed) if base is None else base
    work = [(k, tiles[k], truths[k], space, base, opts, seed) for k in range(len(layout))]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_segment_one_patch, work))
    else:
        results = [_segment_one_patch(w) for w in work]
    results.sort(key=lambda r: r[0])
    mask = stitch_masks([r[1] for r in results], layout, img.shape)
    mask = morph_refine(mask, opts.min_size(img.width * img.height))
    records = [PatchRecord(*divmod(k, layout.cols), p.delta1, p.delta2, p.sigma2, d) for k, _, p, d in results]
    return PatchedSegmentation(mask, layout, records)


def write_patch_table(path, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_row", "patch_col", "delta1", "delta2", "sigma2", "dsc"])
        for r in records:
            w.writerow([r.patch_row, r.patch_col, repr(r.delta1), repr(r.delta2), repr(r.sigma2), repr(r.dsc)])
