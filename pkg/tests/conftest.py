import numpy as np
import pytest

from yolic.cellgeom import load_builtin_config, rasterize
from yolic.labelkit import SceneParams, mask_to_labels, synth_scene
from yolic.yolicnet import LabeledDataset


def point_in_polygon_ref(px: float, py: float, vertices) -> bool:
    """Independent scalar even-odd ray cast (the brute-force oracle)."""
    inside = False
    n = len(vertices)
    j = n - 1
    for i in range(n):
        xi, yi = vertices[i]
        xj, yj = vertices[j]
        if (yi > py) != (yj > py) and px < (xj - xi) * (py - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


def rasterize_polygon_ref(vertices, width: int, height: int) -> np.ndarray:
    """Per-pixel loop over pixel centers; no vectorization shared with the
    implementation under test."""
    out = np.zeros((height, width), dtype=bool)
    for r in range(height):
        for c in range(width):
            out[r, c] = point_in_polygon_ref((c + 0.5) / width, (r + 0.5) / height, vertices)
    return out


def random_star_polygon(rng: np.random.Generator, n_vertices: int):
    """Random simple polygon: vertices at sorted angles around a center."""
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_vertices))
    # reject near-duplicate angles to keep edges non-degenerate
    while np.min(np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))) < 0.15:
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_vertices))
    radii = rng.uniform(0.12, 0.28, size=n_vertices)
    return [
        (float(np.clip(cx + r * np.cos(a), 0.0, 1.0)), float(np.clip(cy + r * np.sin(a), 0.0, 1.0)))
        for r, a in zip(radii, angles)
    ]


ACCEPT_SCENE_PARAMS = SceneParams(
    width=64, height=64, n_classes=3, min_shapes=1, max_shapes=1,
    min_size=0.8, max_size=0.95, noise=0.01, snap_rows=2, snap_cols=2,
)


def make_synthetic_dataset(count: int, seed0: int, params: SceneParams = ACCEPT_SCENE_PARAMS,
                           tau: float = 0.05) -> LabeledDataset:
    cfg = load_builtin_config("grid2x2")
    masks = rasterize(cfg, params.width, params.height)
    images, labels = [], []
    for i in range(count):
        scene = synth_scene(params, seed0 + i)
        images.append(scene.image)
        labels.append(mask_to_labels(scene.mask, masks, cfg.n_classes, tau=tau))
    return LabeledDataset(config=cfg, images=images, labels=labels)


@pytest.fixture(scope="session")
def grid2x2():
    return load_builtin_config("grid2x2")
