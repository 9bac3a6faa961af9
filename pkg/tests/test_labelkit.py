import numpy as np
import pytest

from yolic.cellgeom import CellConfig, Rect, load_builtin_config, make_grid_config, mirror_config, rasterize
from yolic.labelkit import (
    SENTINEL,
    AnnotationError,
    CellLabelVector,
    ClassIdMask,
    SceneParams,
    class_color,
    color_jitter,
    flip_example,
    mask_to_labels,
    read_annotation,
    synth_scene,
    write_annotation,
)


def labels_ref(ids: np.ndarray, cell_masks, n_classes: int, tau: float) -> np.ndarray:
    """Independent exhaustive per-pixel counting implementation."""
    n = len(cell_masks)
    bits = np.zeros((n, n_classes + 1), dtype=np.uint8)
    h, w = ids.shape
    for i, cell in enumerate(cell_masks):
        area = 0
        counts = [0] * n_classes
        for r in range(h):
            for c in range(w):
                if cell[r, c]:
                    area += 1
                    v = int(ids[r, c])
                    if v != SENTINEL:
                        counts[v] += 1
        any_obj = False
        for k in range(n_classes):
            if counts[k] / area >= tau:
                bits[i, k] = 1
                any_obj = True
        bits[i, n_classes] = 0 if any_obj else 1
    return bits


class TestMaskToLabels:
    def test_saturated_coverage(self, grid2x2):
        masks = rasterize(grid2x2, 16, 16)
        mask = ClassIdMask(np.zeros((16, 16), dtype=np.uint8))
        labels = mask_to_labels(mask, masks, grid2x2.n_classes, tau=0.05)
        for row in labels.bits:
            assert list(row) == [1, 0, 0, 0]

    def test_topleft_block(self):
        cfg = make_grid_config("g", 2, 2, ["a"])
        masks = rasterize(cfg, 4, 4)
        ids = np.full((4, 4), SENTINEL, dtype=np.uint8)
        ids[:2, :2] = 0
        labels = mask_to_labels(ClassIdMask(ids), masks, 1, tau=0.05)
        assert labels.bits.tolist() == [[1, 0], [0, 1], [0, 1], [0, 1]]

    def test_below_threshold_coverage(self):
        cfg = CellConfig("one", [Rect(0, 0, 1, 1)], ["a"], ref_width=10, ref_height=10)
        masks = rasterize(cfg, 10, 10)
        ids = np.full((10, 10), SENTINEL, dtype=np.uint8)
        ids[0, :4] = 0  # 4 of 100 pixels = 4% < tau
        labels = mask_to_labels(ClassIdMask(ids), masks, 1, tau=0.05)
        assert labels.bits.tolist() == [[0, 1]]

    def test_dimension_mismatch(self, grid2x2):
        masks = rasterize(grid2x2, 8, 8)
        with pytest.raises(ValueError, match="16x16"):
            mask_to_labels(ClassIdMask(np.zeros((16, 16), np.uint8)), masks, 3)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            rows, cols = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            m = int(rng.integers(1, 5))
            w, h = int(rng.integers(4, 17)), int(rng.integers(4, 17))
            tau = float(rng.uniform(0.03, 0.6))
            cfg = make_grid_config("g", rows, cols, [f"c{k}" for k in range(m)],
                                   ref_size=(w, h))
            masks = rasterize(cfg, w, h)
            ids = rng.integers(0, m + 1, size=(h, w)).astype(np.uint8)
            ids[ids == m] = SENTINEL
            labels = mask_to_labels(ClassIdMask(ids), masks, m, tau=tau)
            assert np.array_equal(labels.bits, labels_ref(ids, masks.masks, m, tau))

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(5)
        cfg = make_grid_config("g", 2, 2, ["a", "b"])
        masks = rasterize(cfg, 12, 12)
        for _ in range(20):
            ids = rng.integers(0, 3, size=(12, 12)).astype(np.uint8)
            ids[ids == 2] = SENTINEL
            lo = mask_to_labels(ClassIdMask(ids), masks, 2, tau=0.05)
            hi = mask_to_labels(ClassIdMask(ids), masks, 2, tau=0.3)
            assert not (hi.bits[:, :2] & ~lo.bits[:, :2]).any()

    def test_exclusivity_always_holds(self):
        rng = np.random.default_rng(6)
        cfg = make_grid_config("g", 2, 2, ["a", "b", "c"])
        masks = rasterize(cfg, 10, 10)
        for _ in range(30):
            ids = rng.integers(0, 4, size=(10, 10)).astype(np.uint8)
            ids[ids == 3] = SENTINEL
            labels = mask_to_labels(ClassIdMask(ids), masks, 3, tau=0.1)
            obj = labels.bits[:, :3].any(axis=1)
            bg = labels.bits[:, 3].astype(bool)
            assert (obj != bg).all()


class TestAnnotationFormat:
    def test_exact_bytes(self):
        labels = CellLabelVector(2, 2, np.array([[1, 0, 0], [0, 0, 1]], dtype=np.uint8))
        assert write_annotation(labels) == b"yolic-ann/1 2 2\n1 0 0\n0 0 1\n"

    def test_round_trip_random(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n, m = int(rng.integers(1, 12)), int(rng.integers(1, 6))
            bits = np.zeros((n, m + 1), dtype=np.uint8)
            bits[:, :m] = rng.random((n, m)) < 0.4
            bits[:, m] = ~bits[:, :m].any(axis=1)
            labels = CellLabelVector(n, m, bits)
            assert read_annotation(write_annotation(labels), n, m) == labels

    def test_wrong_line_count_names_expected(self):
        cfg = load_builtin_config("indoor30")
        bits = np.zeros((30, 7), dtype=np.uint8)
        bits[:, 6] = 1
        data = write_annotation(CellLabelVector(30, 6, bits))
        truncated = b"\n".join(data.splitlines()[:-1]) + b"\n"  # 29 data lines
        with pytest.raises(AnnotationError, match="30"):
            read_annotation(truncated, cfg.n_cells, cfg.n_classes)

    def test_non_binary_token(self):
        with pytest.raises(AnnotationError, match="line 2"):
            read_annotation(b"yolic-ann/1 1 1\n1 2\n", 1, 1)

    def test_wrong_width_line(self):
        with pytest.raises(AnnotationError, match="line 3"):
            read_annotation(b"yolic-ann/1 2 1\n1 0\n1 0 0\n", 2, 1)

    def test_header_mismatch_against_config(self):
        with pytest.raises(AnnotationError, match="N=2"):
            read_annotation(b"yolic-ann/1 2 1\n1 0\n0 1\n", 3, 1)

    def test_file_carries_no_coordinates(self):
        labels = CellLabelVector(1, 1, np.array([[1, 0]], dtype=np.uint8))
        text = write_annotation(labels).decode()
        assert set(text.replace("yolic-ann/1", "").split()) <= {"0", "1"}


class TestSynthScene:
    def test_empty_scene(self):
        params = SceneParams(width=16, height=16, n_classes=2, min_shapes=0, max_shapes=0)
        scene = synth_scene(params, seed=3)
        assert (scene.mask.ids == SENTINEL).all()

    def test_deterministic(self):
        params = SceneParams()
        a = synth_scene(params, seed=42)
        b = synth_scene(params, seed=42)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask.ids, b.mask.ids)
        c = synth_scene(params, seed=43)
        assert not np.array_equal(a.image, c.image)

    def test_paint_consistency(self):
        # wherever the mask claims class k, the image holds exactly k's color
        params = SceneParams(width=48, height=48, n_classes=4, min_shapes=2, max_shapes=5)
        for seed in range(8):
            scene = synth_scene(params, seed=seed)
            for k in range(4):
                region = scene.mask.ids == k
                if region.any():
                    assert np.array_equal(
                        scene.image[region],
                        np.broadcast_to(class_color(k), (int(region.sum()), 3)),
                    )

    def test_values_in_range(self):
        scene = synth_scene(SceneParams(noise=0.3), seed=1)
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0

    def test_snapped_shapes_stay_in_cell(self):
        params = SceneParams(width=32, height=32, n_classes=2, min_shapes=1, max_shapes=1,
                             min_size=0.5, max_size=0.9, snap_rows=2, snap_cols=2)
        for seed in range(12):
            scene = synth_scene(params, seed=seed)
            painted = scene.mask.ids != SENTINEL
            if not painted.any():
                continue
            rows, cols = np.nonzero(painted)
            # all painted pixels fall inside exactly one 16x16 quadrant
            assert rows.max() // 16 == rows.min() // 16
            assert cols.max() // 16 == cols.min() // 16


class TestAugmentation:
    def test_flip_moves_object_to_mirror_cell(self, grid2x2):
        _, perm = mirror_config(grid2x2)
        bits = np.zeros((4, 4), dtype=np.uint8)
        bits[:, 3] = 1
        bits[0] = [1, 0, 0, 0]  # object in cell 0
        labels = CellLabelVector(4, 3, bits)
        image = np.zeros((8, 8, 3), dtype=np.float32)
        _, flipped = flip_example(image, labels, perm)
        assert flipped.bits[1].tolist() == [1, 0, 0, 0]
        assert flipped.bits[0].tolist() == [0, 0, 0, 1]

    def test_double_flip_is_identity(self, grid2x2):
        _, perm = mirror_config(grid2x2)
        rng = np.random.default_rng(4)
        image = rng.random((8, 8, 3)).astype(np.float32)
        bits = np.zeros((4, 4), dtype=np.uint8)
        bits[:, :3] = rng.random((4, 3)) < 0.5
        bits[:, 3] = ~bits[:, :3].any(axis=1)
        labels = CellLabelVector(4, 3, bits)
        im2, lab2 = flip_example(*flip_example(image, labels, perm), perm)
        assert np.array_equal(im2, image)
        assert lab2 == labels

    def test_flip_refuses_without_permutation(self):
        labels = CellLabelVector(1, 1, np.array([[0, 1]], dtype=np.uint8))
        with pytest.raises(ValueError, match="permutation"):
            flip_example(np.zeros((4, 4, 3)), labels, None)

    def test_flip_commutes_with_conversion(self, grid2x2):
        # convert(flip(mask)) == permute(convert(mask)), pixel-count oracle
        _, perm = mirror_config(grid2x2)
        masks = rasterize(grid2x2, 16, 16)
        rng = np.random.default_rng(11)
        for _ in range(10):
            ids = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
            ids[ids == 3] = SENTINEL
            direct = mask_to_labels(ClassIdMask(ids[:, ::-1].copy()), masks, 3, tau=0.1)
            base = mask_to_labels(ClassIdMask(ids), masks, 3, tau=0.1)
            _, permuted = flip_example(np.zeros((16, 16, 3), np.float32), base, perm)
            assert direct == permuted

    def test_jitter_zero_strength_is_identity(self):
        rng = np.random.default_rng(2)
        image = rng.random((6, 6, 3)).astype(np.float32)
        assert np.array_equal(color_jitter(image, 0.0, seed=9), image)

    def test_jitter_stays_in_range_and_is_deterministic(self):
        rng = np.random.default_rng(3)
        image = rng.random((6, 6, 3)).astype(np.float32)
        a = color_jitter(image, 1.0, seed=5)
        b = color_jitter(image, 1.0, seed=5)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert not np.array_equal(a, color_jitter(image, 1.0, seed=6))

    def test_jitter_rejects_bad_strength(self):
        with pytest.raises(ValueError):
            color_jitter(np.zeros((2, 2, 3)), 1.5, seed=0)


class TestSizing:
    def test_eq1_arithmetic_for_shipped_configs(self):
        for name, expected in (("outdoor104", 1248), ("indoor30", 210), ("cityscapes256", 1024)):
            cfg = load_builtin_config(name)
            bits = np.zeros((cfg.n_cells, cfg.n_classes + 1), dtype=np.uint8)
            bits[:, cfg.n_classes] = 1
            labels = CellLabelVector(cfg.n_cells, cfg.n_classes, bits)
            assert labels.n_outputs == expected
            assert labels.flat().shape == (expected,)
