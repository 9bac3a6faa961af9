"""Cell-wise multi-label object localization toolkit.

A compact pipeline around predefined cells of interest: configuration
geometry, pixel-mask label distillation, a channel-shuffle CNN trained with
per-output binary cross-entropy, NMS-free threshold decoding, detection
metrics, cost/latency accounting with INT8 post-training quantization, and a
CLI plus HTTP service for the designer UI.
"""

from .cellgeom import (
    CellConfig,
    CellMaskSet,
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
from .decode import CellPrediction, decode, labels_to_predictions, to_binary
from .evalkit import MetricCounts, MetricsReport, accumulate, binary_metrics, finalize
from .labelkit import (
    AnnotationError,
    CellLabelVector,
    ClassIdMask,
    SceneParams,
    SyntheticScene,
    color_jitter,
    flip_example,
    mask_to_labels,
    read_annotation,
    synth_scene,
    write_annotation,
)
from .yolicnet import (
    LabeledDataset,
    ModelSpec,
    TrainConfig,
    YolicModel,
    bce_loss,
    build_model,
    forward,
    load_weights,
    save_weights,
    train,
)

__version__ = "0.1.0"
