"""Per-cell multi-label ground truth: mask conversion, annotation files,
synthetic scenes, and label-aware augmentation.

Label layout per cell is a block of M+1 bits: indices 0..M-1 follow the
config's class order, index M is the background bit. Ground truth keeps the
two exclusive: background is set exactly when no object bit is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cellgeom import CellMaskSet

__all__ = [
    "SENTINEL",
    "ANNOTATION_FORMAT",
    "CellLabelVector",
    "ClassIdMask",
    "SyntheticScene",
    "SceneParams",
    "AnnotationError",
    "mask_to_labels",
    "write_annotation",
    "read_annotation",
    "synth_scene",
    "flip_example",
    "color_jitter",
]

ANNOTATION_FORMAT = "yolic-ann/1"
SENTINEL = 255  # mask id meaning background / unlabeled


class AnnotationError(ValueError):
    """Raised for malformed or mismatched annotation documents."""


@dataclass
class CellLabelVector:
    """N x (M+1) binary ground-truth matrix in canonical cell order."""

    n_cells: int
    n_classes: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        expected = (self.n_cells, self.n_classes + 1)
        if self.bits.shape != expected:
            raise AnnotationError(f"bits shape {self.bits.shape} != expected {expected}")
        if not np.isin(self.bits, (0, 1)).all():
            raise AnnotationError("bits must be 0/1")
        obj_any = self.bits[:, : self.n_classes].any(axis=1)
        bg = self.bits[:, self.n_classes].astype(bool)
        bad = np.nonzero(bg == obj_any)[0]
        if bad.size:
            raise AnnotationError(
                f"cell {int(bad[0])}: background bit must be set exactly when no object bit is"
            )

    @property
    def n_outputs(self) -> int:
        return self.n_cells * (self.n_classes + 1)

    def flat(self) -> np.ndarray:
        """C-length vector in output order (cell-major)."""
        return self.bits.reshape(-1)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CellLabelVector)
            and self.n_cells == other.n_cells
            and self.n_classes == other.n_classes
            and np.array_equal(self.bits, other.bits)
        )


@dataclass
class ClassIdMask:
    """Per-pixel class ids; SENTINEL (255) marks background/unlabeled."""

    ids: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.uint8)
        if self.ids.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.ids.shape}")

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def check_classes(self, n_classes: int) -> None:
        ids = self.ids[self.ids != SENTINEL]
        if ids.size and int(ids.max()) >= n_classes:
            raise ValueError(f"mask contains class id {int(ids.max())} >= M={n_classes}")


@dataclass
class SyntheticScene:
    image: np.ndarray = field(repr=False)  # H x W x 3 float32 in [0,1]
    mask: ClassIdMask = field(repr=False)
    seed: int = 0


# ---------------------------------------------------------------------------
# mask -> per-cell labels

def mask_to_labels(
    mask: ClassIdMask, masks: CellMaskSet, n_classes: int, tau: float = 0.05
) -> CellLabelVector:
    """Distill a pixel-wise class mask into per-cell label bits.

    Object bit (i, k) is set when class k covers at least ``tau`` of cell i's
    pixels. Sentinel pixels count toward cell area but toward no class. The
    background bit is derived: set exactly when no object bit is.
    """
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if (mask.height, mask.width) != (masks.height, masks.width):
        raise ValueError(
            f"mask is {mask.width}x{mask.height} but cell rasters are "
            f"{masks.width}x{masks.height}"
        )
    mask.check_classes(n_classes)
    n = len(masks.masks)
    bits = np.zeros((n, n_classes + 1), dtype=np.uint8)
    ids = mask.ids
    for i, cell in enumerate(masks.masks):
        area = int(cell.sum())
        counts = np.bincount(ids[cell], minlength=256)[:n_classes]
        bits[i, :n_classes] = counts / area >= tau
        bits[i, n_classes] = 0 if bits[i, :n_classes].any() else 1
    return CellLabelVector(n_cells=n, n_classes=n_classes, bits=bits)


# ---------------------------------------------------------------------------
# annotation files: coordinate-free, one bit line per cell

def write_annotation(labels: CellLabelVector) -> bytes:
    """Serialize labels to the yolic-ann/1 text format.

    Header line "yolic-ann/1 N M", then N lines of M+1 space-separated bits
    in canonical cell order. No coordinates.
    """
    lines = [f"{ANNOTATION_FORMAT} {labels.n_cells} {labels.n_classes}"]
    for row in labels.bits:
        lines.append(" ".join(str(int(b)) for b in row))
    return ("\n".join(lines) + "\n").encode("ascii")


def read_annotation(data: bytes | str, n_cells: int, n_classes: int) -> CellLabelVector:
    """Parse and validate a yolic-ann/1 document against a config's N and M.

    Errors carry 1-based line numbers.
    """
    if isinstance(data, bytes):
        data = data.decode("ascii")
    lines = [ln for ln in data.splitlines() if ln.strip()]
    if not lines:
        raise AnnotationError("empty annotation document")
    header = lines[0].split()
    if len(header) != 3 or header[0] != ANNOTATION_FORMAT:
        raise AnnotationError(f"line 1: bad header {lines[0]!r} (expected '{ANNOTATION_FORMAT} N M')")
    try:
        n, m = int(header[1]), int(header[2])
    except ValueError:
        raise AnnotationError(f"line 1: N and M must be integers in {lines[0]!r}") from None
    if n != n_cells or m != n_classes:
        raise AnnotationError(
            f"line 1: annotation is for N={n}, M={m} but config has N={n_cells}, M={n_classes}"
        )
    body = lines[1:]
    if len(body) != n_cells:
        raise AnnotationError(f"expected {n_cells} data lines, found {len(body)}")
    bits = np.zeros((n_cells, n_classes + 1), dtype=np.uint8)
    for i, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != n_classes + 1:
            raise AnnotationError(
                f"line {i + 2}: expected {n_classes + 1} bits, found {len(tokens)}"
            )
        for j, tok in enumerate(tokens):
            if tok not in ("0", "1"):
                raise AnnotationError(f"line {i + 2}: non-binary token {tok!r}")
            bits[i, j] = int(tok)
    try:
        return CellLabelVector(n_cells=n_cells, n_classes=n_classes, bits=bits)
    except AnnotationError as e:
        raise AnnotationError(f"inconsistent ground truth: {e}") from None


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class SceneParams:
    """Generator knobs for synthetic scenes; a scene is a function of
    (params, seed) only.

    With snap_rows/snap_cols set, every shape is placed fully inside one
    uniformly chosen grid cell and min_size/max_size become fractions of the
    cell extent: per-cell coverage is then unambiguous (a cell is either
    mostly covered or untouched), which keeps desk-scale training sets
    learnable."""

    width: int = 64
    height: int = 64
    n_classes: int = 3
    min_shapes: int = 1
    max_shapes: int = 3
    min_size: float = 0.25  # shape extent as a fraction of the short side
    max_size: float = 0.55
    noise: float = 0.02
    snap_rows: int = 0
    snap_cols: int = 0


# saturated, well-separated colors; class k uses palette[k % len]
_PALETTE = np.array(
    [
        [0.90, 0.15, 0.15],
        [0.15, 0.60, 0.90],
        [0.95, 0.85, 0.10],
        [0.20, 0.80, 0.25],
        [0.75, 0.20, 0.85],
        [0.95, 0.55, 0.10],
        [0.10, 0.85, 0.80],
        [0.55, 0.35, 0.15],
    ],
    dtype=np.float32,
)


def class_color(k: int) -> np.ndarray:
    return _PALETTE[k % len(_PALETTE)]


def synth_scene(params: SceneParams, seed: int) -> SyntheticScene:
    """Paint solid-color rectangles/ellipses over a textured background.

    Image and mask are painted from the same geometry, so mask ids agree with
    the painted pixels exactly. Fully determined by (params, seed).
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    h, w = params.height, params.width
    # background: a fixed two-way gradient (scene lighting falls off toward
    # the top-left) plus seeded noise; the gradient doubles as an absolute
    # position cue, which keeps tiny training sets learnable under global
    # average pooling
    gy = np.linspace(0.30, 0.55, h, dtype=np.float32)[:, None]
    gx = np.linspace(-0.10, 0.10, w, dtype=np.float32)[None, :]
    base = np.clip(gy + gx, 0.0, 1.0)
    image = np.repeat(base[:, :, None], 3, axis=2)
    image[:, :, 2] = np.clip(image[:, :, 2] - 2.0 * gx, 0.0, 1.0)  # blue falls left-to-right
    if params.noise > 0:
        image = image + rng.normal(0.0, params.noise, size=(h, w, 3)).astype(np.float32)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    ids = np.full((h, w), SENTINEL, dtype=np.uint8)

    n_shapes = int(rng.integers(params.min_shapes, params.max_shapes + 1))
    short = min(w, h)
    snapped = params.snap_rows >= 1 and params.snap_cols >= 1
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_shapes):
        klass = int(rng.integers(0, params.n_classes))
        kind = rng.choice(["rect", "ellipse"])
        if snapped:
            cell_w = w / params.snap_cols
            cell_h = h / params.snap_rows
            r = int(rng.integers(0, params.snap_rows))
            c = int(rng.integers(0, params.snap_cols))
            sw = rng.uniform(params.min_size, params.max_size) * cell_w
            sh = rng.uniform(params.min_size, params.max_size) * cell_h
            cx = (c + 0.5) * cell_w + rng.uniform(-1, 1) * (cell_w - sw) / 2
            cy = (r + 0.5) * cell_h + rng.uniform(-1, 1) * (cell_h - sh) / 2
        else:
            sw = rng.uniform(params.min_size, params.max_size) * short
            sh = rng.uniform(params.min_size, params.max_size) * short
            cx = rng.uniform(0.1, 0.9) * w
            cy = rng.uniform(0.1, 0.9) * h
        if kind == "rect":
            region = (np.abs(xx + 0.5 - cx) <= sw / 2) & (np.abs(yy + 0.5 - cy) <= sh / 2)
        else:
            region = ((xx + 0.5 - cx) / (sw / 2)) ** 2 + ((yy + 0.5 - cy) / (sh / 2)) ** 2 <= 1.0
        color = class_color(klass)
        image[region] = color
        ids[region] = klass
    return SyntheticScene(image=image, mask=ClassIdMask(ids=ids), seed=seed)


# ---------------------------------------------------------------------------
# augmentation

def flip_example(
    image: np.ndarray, labels: CellLabelVector, perm: list[int] | None
) -> tuple[np.ndarray, CellLabelVector]:
    """Mirror an example left-right: reverse image columns and remap cell
    blocks by the config's mirror permutation. Class bits within a block are
    untouched."""
    if perm is None:
        raise ValueError("config has no mirror permutation; flip augmentation is disabled")
    flipped = image[:, ::-1].copy()
    bits = labels.bits[np.asarray(perm, dtype=int)]
    return flipped, CellLabelVector(labels.n_cells, labels.n_classes, bits)


def color_jitter(image: np.ndarray, strength: float, seed: int) -> np.ndarray:
    """Per-channel affine perturbation: gain in [1-s, 1+s], bias in
    [-s/4, s/4], result clamped to [0,1]. Deterministic per seed."""
    if not (0.0 <= strength <= 1.0):
        raise ValueError(f"strength must be in [0,1], got {strength}")
    if strength == 0.0:
        return image.copy()
    rng = np.random.default_rng(np.random.PCG64(seed))
    gain = rng.uniform(1.0 - strength, 1.0 + strength, size=3).astype(image.dtype)
    bias = rng.uniform(-strength / 4.0, strength / 4.0, size=3).astype(image.dtype)
    return np.clip(image * gain + bias, 0.0, 1.0)
