import numpy as np
import pytest

from yolic.cellgeom import (
    CellConfig,
    ConfigError,
    Polygon,
    RasterError,
    Rect,
    load_builtin_config,
    load_config,
    make_grid_config,
    mirror_config,
    rasterize,
    save_config,
    validate_config,
)

from conftest import random_star_polygon, rasterize_polygon_ref


def grid(name="g", rows=2, cols=2, classes=("a",)):
    return make_grid_config(name, rows, cols, list(classes))


class TestValidate:
    def test_canonical_grid_is_valid(self):
        assert validate_config(grid()) == []

    def test_inverted_rect(self):
        cfg = CellConfig("bad", [Rect(0.5, 0.0, 0.2, 1.0)], ["a"])
        violations = validate_config(cfg)
        assert len(violations) == 1
        assert "x0 < x1" in violations[0]
        assert "cell 0" in violations[0]

    def test_bowtie_polygon_not_simple(self):
        bowtie = Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])
        violations = validate_config(CellConfig("bt", [bowtie], ["a"]))
        assert len(violations) == 1
        assert "simple" in violations[0]

    def test_out_of_range_vertex(self):
        cfg = CellConfig("r", [Polygon([(0, 0), (1.2, 0), (0.5, 0.5)])], ["a"])
        assert any("outside [0,1]" in v for v in validate_config(cfg))

    def test_subpixel_cell_reported_empty(self):
        cfg = CellConfig("tinycell", [Rect(0.0, 0.0, 0.001, 0.001)], ["a"],
                         ref_width=32, ref_height=32)
        assert any("0 pixels" in v for v in validate_config(cfg))

    def test_violations_are_data_not_exceptions(self):
        cfg = CellConfig("bad", [Rect(0.5, 0.0, 0.2, 1.0), Rect(0, 0, 2, 1)], ["a"])
        assert len(validate_config(cfg)) >= 2


class TestRasterize:
    def test_quarter_frame(self):
        masks = rasterize(CellConfig("q", [Rect(0, 0, 0.5, 0.5)], ["a"]), 4, 4)
        got = {(r, c) for r, c in zip(*np.nonzero(masks.masks[0]))}
        assert got == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_full_frame(self):
        masks = rasterize(CellConfig("f", [Rect(0, 0, 1, 1)], ["a"]), 7, 5)
        assert masks.masks[0].shape == (5, 7)
        assert masks.masks[0].all()

    def test_triangle_matches_bruteforce(self):
        tri = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
        masks = rasterize(CellConfig("t", [Polygon(tri)], ["a"]), 64, 64)
        ref = rasterize_polygon_ref(tri, 64, 64)
        assert np.array_equal(masks.masks[0], ref)

    def test_random_polygons_match_bruteforce(self):
        rng = np.random.default_rng(1234)
        for _ in range(25):
            n = int(rng.integers(3, 9))
            poly = random_star_polygon(rng, n)
            w = int(rng.integers(5, 65))
            h = int(rng.integers(5, 65))
            cfg = CellConfig("p", [Polygon(poly)], ["a"])
            try:
                masks = rasterize(cfg, w, h)
            except RasterError:
                continue  # degenerate at this resolution; oracle agrees it is empty
            assert np.array_equal(masks.masks[0], rasterize_polygon_ref(poly, w, h))

    def test_determinism(self):
        cfg = load_builtin_config("indoor30")
        a = rasterize(cfg, 224, 224)
        b = rasterize(cfg, 224, 224)
        for ma, mb in zip(a.masks, b.masks):
            assert np.array_equal(ma, mb)

    def test_resolution_consistency(self):
        for name in ("grid2x2", "outdoor104", "indoor30", "cityscapes256"):
            cfg = load_builtin_config(name)
            lo = rasterize(cfg, 224, 224)
            hi = rasterize(cfg, 448, 448)
            for i, (ml, mh) in enumerate(zip(lo.masks, hi.masks)):
                fl = ml.sum() / (224 * 224)
                fh = mh.sum() / (448 * 448)
                assert abs(fl - fh) < 2 / 224, f"{name} cell {i}"

    def test_empty_cell_raises_with_index(self):
        cfg = CellConfig("s", [Rect(0, 0, 1, 1), Rect(0.4999, 0.4999, 0.5001, 0.5001)], ["a"])
        with pytest.raises(RasterError, match="cell 1"):
            rasterize(cfg, 16, 16)

    def test_overlapping_cells_allowed(self):
        cfg = CellConfig("o", [Rect(0, 0, 0.75, 1), Rect(0.25, 0, 1, 1)], ["a"])
        masks = rasterize(cfg, 8, 8)
        both = masks.masks[0] & masks.masks[1]
        assert both.any()


class TestMirror:
    def test_symmetric_grid_permutation(self):
        _, perm = mirror_config(grid())
        assert perm == [1, 0, 3, 2]

    def test_selfsymmetric_single_cell(self):
        cfg = CellConfig("one", [Rect(0, 0, 1, 1)], ["a"])
        _, perm = mirror_config(cfg)
        assert perm == [0]

    def test_unmatched_cell_yields_absent_permutation(self):
        cfg = CellConfig(
            "asym",
            [Rect(0, 0, 1, 1), Polygon([(0.1, 0.1), (0.4, 0.15), (0.2, 0.5)])],
            ["a"],
        )
        _, perm = mirror_config(cfg)
        assert perm is None

    def test_involution(self):
        for name in ("grid2x2", "outdoor104", "indoor30", "cityscapes256"):
            cfg = load_builtin_config(name)
            once, perm = mirror_config(cfg)
            twice, perm2 = mirror_config(once)
            assert perm is not None
            for a, b in zip(cfg.cells, twice.cells):
                if isinstance(a, Rect):
                    assert max(abs(a.x0 - b.x0), abs(a.x1 - b.x1),
                               abs(a.y0 - b.y0), abs(a.y1 - b.y1)) < 1e-9
                else:
                    for (x1, y1), (x2, y2) in zip(a.vertices, b.vertices):
                        assert abs(x1 - x2) < 1e-9 and abs(y1 - y2) < 1e-9
            assert [perm[j] for j in perm] == list(range(cfg.n_cells))

    def test_mirrored_config_still_valid(self):
        mirrored, _ = mirror_config(load_builtin_config("indoor30"))
        assert validate_config(mirrored) == []


class TestDocument:
    def test_round_trip_grid(self):
        cfg = grid(classes=("road", "risk"))
        loaded = load_config(save_config(cfg))
        assert loaded == cfg

    def test_save_is_idempotent_bytes(self):
        cfg = load_builtin_config("indoor30")
        assert save_config(load_config(save_config(cfg))) == save_config(cfg)

    def test_out_of_range_coordinate_names_cell(self):
        doc = save_config(grid()).decode()
        bad = doc.replace('"box": [0, 0, 0.5, 0.5]', '"box": [0, 0, 1.5, 0.5]')
        with pytest.raises(ConfigError, match=r"cells\[0\]"):
            load_config(bad)

    def test_unknown_kind_rejected(self):
        doc = save_config(grid()).decode().replace('"kind": "rect"', '"kind": "blob"', 1)
        with pytest.raises(ConfigError, match="unknown shape kind"):
            load_config(doc)

    def test_missing_field_rejected(self):
        with pytest.raises(ConfigError, match="missing field"):
            load_config('{"version": "yolic-config/1", "name": "x"}')

    def test_wrong_version_rejected(self):
        doc = save_config(grid()).decode().replace("yolic-config/1", "yolic-config/9")
        with pytest.raises(ConfigError, match="version"):
            load_config(doc)

    def test_builtin_indoor30_loads_with_n30(self):
        cfg = load_builtin_config("indoor30")
        assert cfg.n_cells == 30
        assert cfg.n_classes == 6
        assert cfg.n_outputs == 210

    def test_builtin_sizing(self):
        assert load_builtin_config("outdoor104").n_outputs == 1248
        assert load_builtin_config("cityscapes256").n_outputs == 1024
