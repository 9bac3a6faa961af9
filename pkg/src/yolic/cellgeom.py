"""Cell-of-interest geometry: shapes, configurations, rasterization, mirroring.

A cell configuration is an ordered list of rectangles/polygons in normalized
[0,1] image coordinates plus an ordered class list. Cell order is canonical:
output index i of the network always refers to cells[i].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

__all__ = [
    "Rect",
    "Polygon",
    "CellConfig",
    "CellMaskSet",
    "ConfigError",
    "RasterError",
    "validate_config",
    "rasterize",
    "mirror_config",
    "save_config",
    "load_config",
    "make_grid_config",
    "builtin_config_names",
    "load_builtin_config",
]

CONFIG_FORMAT = "yolic-config/1"


class ConfigError(ValueError):
    """Raised when a config document cannot be parsed or validated."""


class RasterError(ValueError):
    """Raised when a cell rasterizes to zero pixels at the requested size."""


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def __init__(self, vertices):
        object.__setattr__(self, "vertices", tuple((float(x), float(y)) for x, y in vertices))


CellShape = Rect | Polygon


@dataclass(frozen=True)
class CellConfig:
    """Ordered cells + ordered class names; the canonical output layout.

    n_outputs == n_cells * (n_classes + 1): per cell, one bit per object
    class plus a trailing background bit.
    """

    name: str
    cells: tuple[CellShape, ...]
    class_names: tuple[str, ...]
    ref_width: int = 224
    ref_height: int = 224

    def __init__(self, name, cells, class_names, ref_width=224, ref_height=224):
        object.__setattr__(self, "name", str(name))
        object.__setattr__(self, "cells", tuple(cells))
        object.__setattr__(self, "class_names", tuple(str(c) for c in class_names))
        object.__setattr__(self, "ref_width", int(ref_width))
        object.__setattr__(self, "ref_height", int(ref_height))

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_outputs(self) -> int:
        return self.n_cells * (self.n_classes + 1)


@dataclass
class CellMaskSet:
    """Boolean rasters, one per cell, all width x height."""

    width: int
    height: int
    masks: list[np.ndarray] = field(repr=False)

    def __len__(self) -> int:
        return len(self.masks)

    def pixel_counts(self) -> np.ndarray:
        return np.array([int(m.sum()) for m in self.masks])


# ---------------------------------------------------------------------------
# validation

def _segments_intersect(p1, p2, p3, p4) -> bool:
    """True if closed segments p1p2 and p3p4 share any point."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    def on_segment(a, b, c):
        # collinear c on segment ab
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    o1 = orient(p1, p2, p3)
    o2 = orient(p1, p2, p4)
    o3 = orient(p3, p4, p1)
    o4 = orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, p3):
        return True
    if o2 == 0 and on_segment(p1, p2, p4):
        return True
    if o3 == 0 and on_segment(p3, p4, p1):
        return True
    if o4 == 0 and on_segment(p3, p4, p2):
        return True
    return False


def polygon_is_simple(vertices) -> bool:
    """Pairwise segment-intersection check over non-adjacent edges."""
    n = len(vertices)
    if n < 3:
        return False
    edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for a, b in edges:
        if a == b:
            return False  # zero-length edge
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if adjacent:
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _shape_violations(shape: CellShape, index: int) -> list[str]:
    out = []
    if isinstance(shape, Rect):
        for label, v in (("x0", shape.x0), ("y0", shape.y0), ("x1", shape.x1), ("y1", shape.y1)):
            if not (0.0 <= v <= 1.0):
                out.append(f"cell {index}: rect {label}={v} outside [0,1]")
        if not shape.x0 < shape.x1:
            out.append(f"cell {index}: rect requires x0 < x1 (got x0={shape.x0}, x1={shape.x1})")
        if not shape.y0 < shape.y1:
            out.append(f"cell {index}: rect requires y0 < y1 (got y0={shape.y0}, y1={shape.y1})")
    elif isinstance(shape, Polygon):
        if len(shape.vertices) < 3:
            out.append(f"cell {index}: polygon has {len(shape.vertices)} vertices, needs >= 3")
            return out
        for k, (x, y) in enumerate(shape.vertices):
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                out.append(f"cell {index}: polygon vertex {k} ({x}, {y}) outside [0,1]")
        if not polygon_is_simple(shape.vertices):
            out.append(f"cell {index}: polygon is not a simple polygon (self-intersecting or degenerate)")
    else:
        out.append(f"cell {index}: unknown shape type {type(shape).__name__}")
    return out


def validate_config(cfg: CellConfig) -> list[str]:
    """Return every invariant violation; empty list means the config is valid.

    Violations are data, not failures: callers decide whether to raise.
    """
    violations = []
    if cfg.n_cells < 1:
        violations.append("config has no cells (N >= 1 required)")
    if cfg.n_classes < 1:
        violations.append("config has no classes (M >= 1 required)")
    if cfg.ref_width < 1 or cfg.ref_height < 1:
        violations.append(f"reference raster {cfg.ref_width}x{cfg.ref_height} must be >= 1x1")
    shape_ok = []
    for i, shape in enumerate(cfg.cells):
        v = _shape_violations(shape, i)
        violations.extend(v)
        shape_ok.append(not v)
    if cfg.ref_width >= 1 and cfg.ref_height >= 1:
        for i, shape in enumerate(cfg.cells):
            if not shape_ok[i]:
                continue
            mask = _rasterize_shape(shape, cfg.ref_width, cfg.ref_height)
            if not mask.any():
                violations.append(
                    f"cell {i}: rasterizes to 0 pixels at reference size "
                    f"{cfg.ref_width}x{cfg.ref_height}"
                )
    return violations


def require_valid(cfg: CellConfig) -> None:
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("invalid config: " + "; ".join(violations))


# ---------------------------------------------------------------------------
# rasterization

def _pixel_centers(width: int, height: int):
    cx = (np.arange(width) + 0.5) / width
    cy = (np.arange(height) + 0.5) / height
    return np.meshgrid(cx, cy)  # each (height, width)


def _rasterize_shape(shape: CellShape, width: int, height: int) -> np.ndarray:
    px, py = _pixel_centers(width, height)
    if isinstance(shape, Rect):
        # half-open intervals: boundary pixels belong to the cell on the low side
        return (px >= shape.x0) & (px < shape.x1) & (py >= shape.y0) & (py < shape.y1)
    verts = shape.vertices
    inside = np.zeros((height, width), dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i - 1) % n]
        cross = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            hit = cross & (px < xi)
        inside ^= hit
    return inside


def rasterize(cfg: CellConfig, width: int, height: int) -> CellMaskSet:
    """Rasterize every cell at width x height using pixel-center membership.

    A pixel (r, c) belongs to a cell when its center ((c+0.5)/W, (r+0.5)/H)
    lies inside the shape: even-odd rule for polygons, half-open
    [x0,x1) x [y0,y1) for rects. Cells may overlap. Deterministic.
    """
    if width < 1 or height < 1:
        raise RasterError(f"raster size {width}x{height} must be >= 1x1")
    masks = []
    for i, shape in enumerate(cfg.cells):
        mask = _rasterize_shape(shape, width, height)
        if not mask.any():
            raise RasterError(f"cell {i} rasterizes to 0 pixels at {width}x{height}")
        masks.append(mask)
    return CellMaskSet(width=width, height=height, masks=masks)


# ---------------------------------------------------------------------------
# mirroring

MIRROR_TOL = 1e-6


def _mirror_shape(shape: CellShape) -> CellShape:
    if isinstance(shape, Rect):
        return Rect(1.0 - shape.x1, shape.y0, 1.0 - shape.x0, shape.y1)
    return Polygon([(1.0 - x, y) for x, y in shape.vertices])


def _shape_key(shape: CellShape):
    if isinstance(shape, Rect):
        return ("rect", [(shape.x0, shape.y0), (shape.x1, shape.y1)])
    return ("poly", sorted(shape.vertices))


def _shapes_match(a: CellShape, b: CellShape, tol: float = MIRROR_TOL) -> bool:
    ka, pa = _shape_key(a)
    kb, pb = _shape_key(b)
    if ka != kb or len(pa) != len(pb):
        return False
    return all(abs(x1 - x2) <= tol and abs(y1 - y2) <= tol for (x1, y1), (x2, y2) in zip(pa, pb))


def mirror_config(cfg: CellConfig) -> tuple[CellConfig, list[int] | None]:
    """Mirror every cell left-right and match cells to their mirror partners.

    Returns the mirrored config and a permutation ``perm`` with
    ``perm[i] = j`` such that the mirror of ``cfg.cells[j]`` coincides with
    ``cfg.cells[i]`` (tolerance 1e-6; polygons matched as sorted vertex sets,
    rects as corner pairs). When any cell has no mirror partner the
    permutation is None and horizontal-flip augmentation must stay disabled
    for this config.
    """
    mirrored_cells = [_mirror_shape(s) for s in cfg.cells]
    mirrored = CellConfig(
        name=cfg.name,
        cells=mirrored_cells,
        class_names=cfg.class_names,
        ref_width=cfg.ref_width,
        ref_height=cfg.ref_height,
    )
    n = cfg.n_cells
    perm: list[int] = []
    used = [False] * n
    for i in range(n):
        match = None
        for j in range(n):
            if not used[j] and _shapes_match(mirrored_cells[j], cfg.cells[i]):
                match = j
                break
        if match is None:
            return mirrored, None
        used[match] = True
        perm.append(match)
    return mirrored, perm


# ---------------------------------------------------------------------------
# canonical document format

def _fmt_coord(x: float) -> str:
    # canonical 6-decimal form, trailing zeros trimmed ("0.5", "1", "0.333333")
    s = f"{float(x):.6f}".rstrip("0").rstrip(".")
    return s if s not in ("", "-0") else "0"


def _shape_doc_line(shape: CellShape) -> str:
    if isinstance(shape, Rect):
        box = ", ".join(_fmt_coord(v) for v in (shape.x0, shape.y0, shape.x1, shape.y1))
        return f'{{"kind": "rect", "box": [{box}]}}'
    pts = ", ".join(f"[{_fmt_coord(x)}, {_fmt_coord(y)}]" for x, y in shape.vertices)
    return f'{{"kind": "poly", "pts": [{pts}]}}'


def save_config(cfg: CellConfig) -> bytes:
    """Serialize to the canonical yolic-config/1 document (UTF-8 JSON).

    Field order is fixed, one cell per line, coordinates at 6 decimals:
    byte-stable for diffing and cross-implementation round trips.
    """
    require_valid(cfg)
    lines = [
        "{",
        f'  "version": {json.dumps(CONFIG_FORMAT)},',
        f'  "name": {json.dumps(cfg.name)},',
        f'  "ref_size": [{cfg.ref_width}, {cfg.ref_height}],',
        f'  "classes": [{", ".join(json.dumps(c) for c in cfg.class_names)}],',
        '  "cells": [',
    ]
    for i, shape in enumerate(cfg.cells):
        comma = "," if i < cfg.n_cells - 1 else ""
        lines.append(f"    {_shape_doc_line(shape)}{comma}")
    lines.extend(["  ]", "}", ""])
    return "\n".join(lines).encode("utf-8")


def _parse_coord(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    v = float(value)
    if not (0.0 <= v <= 1.0):
        raise ConfigError(f"{where}: coordinate {v} outside [0,1]")
    return v


def load_config(data: bytes | str) -> CellConfig:
    """Parse and validate a yolic-config/1 document.

    Rejections carry positional diagnostics (cell index, field path).
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("top-level document must be an object")
    for fld in ("version", "name", "ref_size", "classes", "cells"):
        if fld not in doc:
            raise ConfigError(f"missing field {fld!r}")
    if doc["version"] != CONFIG_FORMAT:
        raise ConfigError(f"unsupported version {doc['version']!r} (expected {CONFIG_FORMAT!r})")
    ref = doc["ref_size"]
    if not (isinstance(ref, list) and len(ref) == 2 and all(isinstance(v, int) for v in ref)):
        raise ConfigError("ref_size must be [width, height] integers")
    classes = doc["classes"]
    if not (isinstance(classes, list) and classes and all(isinstance(c, str) for c in classes)):
        raise ConfigError("classes must be a non-empty list of strings")
    raw_cells = doc["cells"]
    if not (isinstance(raw_cells, list) and raw_cells):
        raise ConfigError("cells must be a non-empty list")
    cells: list[CellShape] = []
    for i, entry in enumerate(raw_cells):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"cells[{i}]: expected an object with a 'kind' field")
        kind = entry["kind"]
        if kind == "rect":
            box = entry.get("box")
            if not (isinstance(box, list) and len(box) == 4):
                raise ConfigError(f"cells[{i}]: rect needs box [x0, y0, x1, y1]")
            x0, y0, x1, y1 = (_parse_coord(v, f"cells[{i}].box[{k}]") for k, v in enumerate(box))
            cells.append(Rect(x0, y0, x1, y1))
        elif kind == "poly":
            pts = entry.get("pts")
            if not (isinstance(pts, list) and len(pts) >= 3):
                raise ConfigError(f"cells[{i}]: poly needs pts with >= 3 vertices")
            verts = []
            for k, pt in enumerate(pts):
                if not (isinstance(pt, list) and len(pt) == 2):
                    raise ConfigError(f"cells[{i}].pts[{k}]: expected [x, y]")
                verts.append(
                    (
                        _parse_coord(pt[0], f"cells[{i}].pts[{k}].x"),
                        _parse_coord(pt[1], f"cells[{i}].pts[{k}].y"),
                    )
                )
            cells.append(Polygon(verts))
        else:
            raise ConfigError(f"cells[{i}]: unknown shape kind {kind!r}")
    cfg = CellConfig(
        name=doc["name"],
        cells=cells,
        class_names=classes,
        ref_width=ref[0],
        ref_height=ref[1],
    )
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("document violates config invariants: " + "; ".join(violations))
    return cfg


# ---------------------------------------------------------------------------
# constructors and builtins

def make_grid_config(
    name: str,
    rows: int,
    cols: int,
    class_names,
    region: Rect | None = None,
    ref_size: tuple[int, int] = (224, 224),
) -> CellConfig:
    """Uniform rows x cols grid of rect cells over region, row-major order."""
    if rows < 1 or cols < 1:
        raise ConfigError(f"grid needs rows, cols >= 1 (got {rows}x{cols})")
    region = region or Rect(0.0, 0.0, 1.0, 1.0)
    w = (region.x1 - region.x0) / cols
    h = (region.y1 - region.y0) / rows
    cells = []
    for r in range(rows):
        for c in range(cols):
            cells.append(
                Rect(
                    region.x0 + c * w,
                    region.y0 + r * h,
                    region.x0 + (c + 1) * w,
                    region.y0 + (r + 1) * h,
                )
            )
    return CellConfig(name=name, cells=cells, class_names=class_names,
                      ref_width=ref_size[0], ref_height=ref_size[1])


def builtin_config_names() -> list[str]:
    root = resources.files("yolic").joinpath("configs")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_builtin_config(name: str) -> CellConfig:
    path = resources.files("yolic").joinpath("configs", f"{name}.json")
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(
            f"no builtin config {name!r}; available: {', '.join(builtin_config_names())}"
        ) from None
    return load_config(data)
