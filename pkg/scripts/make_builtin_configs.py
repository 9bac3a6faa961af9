#!/usr/bin/env python3
"""Regenerate the builtin cell configurations under src/yolic/configs/.

Layouts are left-right symmetric by construction (right-half shapes are
exact mirrors of rounded left-half shapes) so every builtin config carries a
mirror permutation and flip augmentation stays available.
"""

from pathlib import Path

from yolic.cellgeom import (
    CellConfig,
    Polygon,
    Rect,
    make_grid_config,
    mirror_config,
    save_config,
    validate_config,
)

OUT = Path(__file__).resolve().parent.parent / "src" / "yolic" / "configs"


def r6(x: float) -> float:
    return round(x, 6)


def rect(x0, y0, x1, y1) -> Rect:
    return Rect(r6(x0), r6(y0), r6(x1), r6(y1))


def poly(*pts) -> Polygon:
    return Polygon([(r6(x), r6(y)) for x, y in pts])


def mirror_poly(p: Polygon) -> Polygon:
    return Polygon([(r6(1.0 - x), y) for x, y in p.vertices])


def grid2x2() -> CellConfig:
    return make_grid_config("grid2x2", 2, 2, ["alpha", "beta", "gamma"])


def outdoor104() -> CellConfig:
    """96 road cells (8x12 grid over the lower half, graded by distance)
    plus 8 traffic-sign cells across the top strip; 11 object classes."""
    road = make_grid_config("road", 8, 12, ["x"], region=Rect(0.0, 0.5, 1.0, 1.0))
    cells = list(road.cells)
    for c in range(8):
        cells.append(rect(c / 8, 0.05, (c + 1) / 8, 0.25))
    classes = [
        "Bump", "Column", "Dent", "Fence", "People", "Vehicle",
        "Wall", "Weed", "ZebraCrossing", "TrafficCone", "TrafficSign",
    ]
    return CellConfig(name="outdoor104", cells=cells, class_names=classes)


def indoor30() -> CellConfig:
    """30 irregular cells: a three-band perspective fan in front (24 quads),
    quarter-circle-style flank cells, slanted side cells, and far wedges;
    6 object classes."""
    cells = []

    # perspective fan: three distance bands x 8 sectors, built as quads
    # between successive band edges; the span narrows with distance
    spans = [(0.05, 0.95), (0.18, 0.82), (0.27, 0.73), (0.33, 0.67)]
    ys = [1.0, 0.78, 0.60, 0.46]
    for band in range(3):
        xl0, xr0 = spans[band]
        xl1, xr1 = spans[band + 1]
        y0, y1 = ys[band], ys[band + 1]
        quads = []
        for j in range(4):  # left half; right half mirrored
            b0 = xl0 + (xr0 - xl0) * j / 8
            b1 = xl0 + (xr0 - xl0) * (j + 1) / 8
            t0 = xl1 + (xr1 - xl1) * j / 8
            t1 = xl1 + (xr1 - xl1) * (j + 1) / 8
            quads.append(poly((b0, y0), (b1, y0), (t1, y1), (t0, y1)))
        row = quads + [mirror_poly(q) for q in reversed(quads)]
        cells.extend(row)

    # quarter-circle-style flank cells at the bottom corners (arc sampled
    # at fixed angles, then closed at the corner)
    arc = [(0.30, 1.0), (0.29, 0.93), (0.26, 0.87), (0.21, 0.82), (0.14, 0.79), (0.06, 0.775), (0.0, 0.77)]
    left_flank = poly((0.0, 1.0), *arc)
    cells.append(left_flank)
    cells.append(mirror_poly(left_flank))

    # slanted mid-height side cells
    left_side = poly((0.0, 0.77), (0.06, 0.775), (0.16, 0.52), (0.0, 0.50))
    cells.append(left_side)
    cells.append(mirror_poly(left_side))

    # far wedges flanking the last band
    left_wedge = poly((0.05, 0.50), (0.27, 0.46), (0.33, 0.38), (0.08, 0.40))
    cells.append(left_wedge)
    cells.append(mirror_poly(left_wedge))

    classes = ["Sofa", "Wall", "Pillar", "People", "Door", "Other"]
    return CellConfig(name="indoor30", cells=cells, class_names=classes)


def cityscapes256() -> CellConfig:
    """160 small central cells for distant objects plus 96 larger cells over
    the near road area; 3 object classes."""
    central = make_grid_config("c", 10, 16, ["x"], region=Rect(0.1, 0.35, 0.9, 0.6))
    lower = make_grid_config("l", 8, 12, ["x"], region=Rect(0.0, 0.6, 1.0, 1.0))
    cells = list(central.cells) + list(lower.cells)
    return CellConfig(name="cityscapes256", cells=cells,
                      class_names=["Vehicle", "People", "Other"])


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (grid2x2, outdoor104, indoor30, cityscapes256):
        cfg = build()
        violations = validate_config(cfg)
        if violations:
            raise SystemExit(f"{cfg.name}: {violations}")
        _, perm = mirror_config(cfg)
        if perm is None:
            raise SystemExit(f"{cfg.name}: no mirror permutation")
        path = OUT / f"{cfg.name}.json"
        path.write_bytes(save_config(cfg))
        print(f"{cfg.name}: N={cfg.n_cells} M={cfg.n_classes} C={cfg.n_outputs} -> {path}")


if __name__ == "__main__":
    main()
