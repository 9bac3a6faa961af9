"""Network assembly and training: shuffle-unit backbone, multi-label head,
binary cross-entropy loss, Adam with a multi-step LR schedule, and the
weights file format.

The architecture is a compact channel-shuffle CNN: a stride-2 stem conv,
3x3 max pool, three stages of shuffle units, a pointwise expansion conv,
global average pooling, dropout, and a fully connected head emitting one
sigmoid output per (cell, class) pair plus a background output per cell.
"""

from __future__ import annotations

import io
import json
from bisect import bisect_right
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nnkernel as nk
from .cellgeom import CellConfig, mirror_config
from .labelkit import CellLabelVector, color_jitter, flip_example

__all__ = [
    "ModelSpec",
    "TrainConfig",
    "TrainHistory",
    "LabeledDataset",
    "YolicModel",
    "WeightsError",
    "build_model",
    "forward",
    "bce_loss",
    "bce_grad_logits",
    "train",
    "save_weights",
    "load_weights",
    "image_to_input",
]

WEIGHTS_FORMAT = "yolic-weights/1"

PRESETS = {
    "table1": {"stage_channels": (24, 116, 232, 464, 1024), "stage_repeats": (4, 8, 4)},
    "tiny": {"stage_channels": (8, 16, 32, 64, 128), "stage_repeats": (1, 1, 1)},
}


class WeightsError(ValueError):
    """Raised for corrupt or mismatched weight files."""


@dataclass(frozen=True)
class ModelSpec:
    n_outputs: int
    preset: str = "table1"
    input_size: int = 224
    stage_channels: tuple[int, ...] = (24, 116, 232, 464, 1024)
    stage_repeats: tuple[int, ...] = (4, 8, 4)
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be >= 1")
        if self.input_size % 32 != 0 or self.input_size < 32:
            raise ValueError(f"input_size {self.input_size} must be a positive multiple of 32")
        if len(self.stage_channels) != 5 or len(self.stage_repeats) != 3:
            raise ValueError("expected 5 channel widths (stem, 3 stages, final) and 3 repeats")
        if any(c % 2 for c in self.stage_channels[1:4]):
            raise ValueError("stage output channels must be even (they split into two branches)")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate {self.dropout_rate} outside [0,1)")

    @classmethod
    def table1(cls, n_outputs: int, input_size: int = 224, dropout_rate: float = 0.2):
        return cls(n_outputs=n_outputs, preset="table1", input_size=input_size,
                   dropout_rate=dropout_rate, **PRESETS["table1"])

    @classmethod
    def tiny(cls, n_outputs: int, input_size: int = 64, dropout_rate: float = 0.2):
        return cls(n_outputs=n_outputs, preset="tiny", input_size=input_size,
                   dropout_rate=dropout_rate, **PRESETS["tiny"])

    @classmethod
    def for_preset(cls, preset: str, n_outputs: int, input_size: int | None = None,
                   dropout_rate: float = 0.2):
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        size = input_size if input_size is not None else (224 if preset == "table1" else 64)
        return cls(n_outputs=n_outputs, preset=preset, input_size=size,
                   dropout_rate=dropout_rate, **PRESETS[preset])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            n_outputs=d["n_outputs"],
            preset=d["preset"],
            input_size=d["input_size"],
            stage_channels=tuple(d["stage_channels"]),
            stage_repeats=tuple(d["stage_repeats"]),
            dropout_rate=d["dropout_rate"],
        )


# ---------------------------------------------------------------------------
# layers: thin stateful wrappers over the nnkernel functions

class Conv2d:
    def __init__(self, cin, cout, kernel, stride=1, padding=0, bias=False):
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.stride, self.padding = stride, padding
        self.weight = None
        self.bias = np.zeros(cout) if bias else None
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        fan_in = self.cin * self.kernel * self.kernel
        bound = np.sqrt(6.0 / fan_in)
        self.weight = rng.uniform(-bound, bound,
                                  (self.cout, self.cin, self.kernel, self.kernel)).astype(dtype)
        if self.bias is not None:
            self.bias = np.zeros(self.cout, dtype=dtype)

    def forward(self, x, state):
        self._cache = x
        return nk.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def backward(self, grad_y):
        gx, gw, gb = nk.conv2d_backward(self._cache, self.weight, grad_y,
                                        self.stride, self.padding,
                                        with_bias=self.bias is not None)
        self.grads = {"weight": gw} if gb is None else {"weight": gw, "bias": gb}
        return gx

    def named_params(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix):
        return iter(())


class DepthwiseConv2d:
    def __init__(self, channels, kernel, stride=1, padding=0):
        self.channels, self.kernel = channels, kernel
        self.stride, self.padding = stride, padding
        self.weight = None
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        fan_in = self.kernel * self.kernel
        bound = np.sqrt(6.0 / fan_in)
        self.weight = rng.uniform(-bound, bound,
                                  (self.channels, self.kernel, self.kernel)).astype(dtype)

    def forward(self, x, state):
        self._cache = x
        return nk.depthwise_conv2d(x, self.weight, self.stride, self.padding)

    def backward(self, grad_y):
        gx, gw = nk.depthwise_conv2d_backward(self._cache, self.weight, grad_y,
                                              self.stride, self.padding)
        self.grads = {"weight": gw}
        return gx

    def named_params(self, prefix):
        yield f"{prefix}.weight", self.weight

    def named_buffers(self, prefix):
        return iter(())


class BatchNorm2d:
    def __init__(self, channels, momentum=0.1):
        self.channels = channels
        self.momentum = momentum
        self.gamma = None
        self.beta = None
        self.running_mean = None
        self.running_var = None
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        self.gamma = np.ones(self.channels, dtype=dtype)
        self.beta = np.zeros(self.channels, dtype=dtype)
        self.running_mean = np.zeros(self.channels, dtype=dtype)
        self.running_var = np.ones(self.channels, dtype=dtype)

    def forward(self, x, state):
        y, self._cache = nk.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                                        self.running_var, training=state.training,
                                        momentum=self.momentum)
        return y

    def backward(self, grad_y):
        gx, gg, gb = nk.batchnorm2d_backward(grad_y, self._cache)
        self.grads = {"gamma": gg, "beta": gb}
        return gx

    def named_params(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


class ReLU:
    def __init__(self):
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        pass

    def forward(self, x, state):
        self._cache = x
        return nk.relu(x)

    def backward(self, grad_y):
        return nk.relu_backward(grad_y, self._cache)

    def named_params(self, prefix):
        return iter(())

    def named_buffers(self, prefix):
        return iter(())


class MaxPool2d:
    def __init__(self, kernel, stride, padding=0):
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        pass

    def forward(self, x, state):
        y, arg = nk.maxpool2d(x, self.kernel, self.stride, self.padding)
        self._cache = (arg, x.shape)
        return y

    def backward(self, grad_y):
        arg, shape = self._cache
        return nk.maxpool2d_backward(grad_y, arg, shape, self.kernel, self.stride, self.padding)

    def named_params(self, prefix):
        return iter(())

    def named_buffers(self, prefix):
        return iter(())


class ChannelShuffle:
    def __init__(self, groups):
        self.groups = groups
        self.grads = {}

    def init_params(self, rng, dtype):
        pass

    def forward(self, x, state):
        return nk.channel_shuffle(x, self.groups)

    def backward(self, grad_y):
        return nk.channel_shuffle_backward(grad_y, self.groups)

    def named_params(self, prefix):
        return iter(())

    def named_buffers(self, prefix):
        return iter(())


class GlobalAvgPool:
    def __init__(self):
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        pass

    def forward(self, x, state):
        self._cache = x.shape
        return nk.global_avg_pool(x)

    def backward(self, grad_y):
        return nk.global_avg_pool_backward(grad_y, self._cache)

    def named_params(self, prefix):
        return iter(())

    def named_buffers(self, prefix):
        return iter(())


class Dropout:
    def __init__(self, rate, layer_id=0):
        self.rate = rate
        self.layer_id = layer_id
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        pass

    def forward(self, x, state):
        y, mask = nk.dropout(x, self.rate, state.seed, self.layer_id, state.step,
                             training=state.training)
        self._cache = mask
        return y

    def backward(self, grad_y):
        return nk.dropout_backward(grad_y, self._cache, self.rate)

    def named_params(self, prefix):
        return iter(())

    def named_buffers(self, prefix):
        return iter(())


class Linear:
    def __init__(self, n_in, n_out, bias=True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = None
        self.bias = np.zeros(n_out) if bias else None
        self._cache = None
        self.grads = {}

    def init_params(self, rng, dtype):
        bound = np.sqrt(6.0 / self.n_in)
        self.weight = rng.uniform(-bound, bound, (self.n_out, self.n_in)).astype(dtype)
        if self.bias is not None:
            self.bias = np.zeros(self.n_out, dtype=dtype)

    def forward(self, x, state):
        self._cache = x
        return nk.linear(x, self.weight, self.bias)

    def backward(self, grad_y):
        gx, gw, gb = nk.linear_backward(self._cache, self.weight, grad_y,
                                        with_bias=self.bias is not None)
        self.grads = {"weight": gw} if gb is None else {"weight": gw, "bias": gb}
        return gx

    def named_params(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix):
        return iter(())


class Sequential:
    def __init__(self, *layers):
        self.layers = list(layers)
        self.grads = {}

    def init_params(self, rng, dtype):
        for layer in self.layers:
            layer.init_params(rng, dtype)

    def forward(self, x, state):
        for layer in self.layers:
            x = layer.forward(x, state)
        return x

    def backward(self, grad_y):
        for layer in reversed(self.layers):
            grad_y = layer.backward(grad_y)
        return grad_y

    def named_params(self, prefix):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"{prefix}.{i}")

    def named_buffers(self, prefix):
        for i, layer in enumerate(self.layers):
            yield from layer.named_buffers(f"{prefix}.{i}")


class ShuffleUnit:
    """Channel-shuffle block: identity/downsample split, two branches,
    concat, shuffle with 2 groups."""

    def __init__(self, cin, cout, stride):
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if stride == 1 and cin != cout:
            raise ValueError("stride-1 unit requires cin == cout")
        self.cin, self.cout, self.stride = cin, cout, stride
        mid = cout // 2
        if stride == 2:
            self.branch1 = Sequential(
                DepthwiseConv2d(cin, 3, stride=2, padding=1),
                BatchNorm2d(cin),
                Conv2d(cin, mid, 1),
                BatchNorm2d(mid),
                ReLU(),
            )
        else:
            self.branch1 = None
        b2_in = cin if stride == 2 else mid
        self.branch2 = Sequential(
            Conv2d(b2_in, mid, 1),
            BatchNorm2d(mid),
            ReLU(),
            DepthwiseConv2d(mid, 3, stride=stride, padding=1),
            BatchNorm2d(mid),
            Conv2d(mid, mid, 1),
            BatchNorm2d(mid),
            ReLU(),
        )
        self.shuffle = ChannelShuffle(2)
        self.grads = {}

    def init_params(self, rng, dtype):
        if self.branch1 is not None:
            self.branch1.init_params(rng, dtype)
        self.branch2.init_params(rng, dtype)

    def forward(self, x, state):
        mid = self.cout // 2
        if self.stride == 1:
            x1, x2 = x[:, :mid], x[:, mid:]
            y = np.concatenate([x1, self.branch2.forward(x2, state)], axis=1)
        else:
            y = np.concatenate(
                [self.branch1.forward(x, state), self.branch2.forward(x, state)], axis=1
            )
        return self.shuffle.forward(y, state)

    def backward(self, grad_y):
        mid = self.cout // 2
        g = self.shuffle.backward(grad_y)
        g1, g2 = g[:, :mid], g[:, mid:]
        if self.stride == 1:
            gx2 = self.branch2.backward(g2)
            return np.concatenate([g1, gx2], axis=1)
        return self.branch1.backward(g1) + self.branch2.backward(g2)

    def named_params(self, prefix):
        if self.branch1 is not None:
            yield from self.branch1.named_params(f"{prefix}.branch1")
        yield from self.branch2.named_params(f"{prefix}.branch2")

    def named_buffers(self, prefix):
        if self.branch1 is not None:
            yield from self.branch1.named_buffers(f"{prefix}.branch1")
        yield from self.branch2.named_buffers(f"{prefix}.branch2")


# ---------------------------------------------------------------------------
# model

@dataclass
class _RunState:
    training: bool
    seed: int
    step: int


class YolicModel:
    """Parameter store plus the ordered layer graph for one ModelSpec."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32,
                 config_name: str = ""):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.config_name = config_name
        self.step = 0
        c0, c1, c2, c3, c4 = spec.stage_channels
        stages = []
        cin = c0
        for cout, repeats in zip((c1, c2, c3), spec.stage_repeats):
            units = [ShuffleUnit(cin, cout, stride=2)]
            units.extend(ShuffleUnit(cout, cout, stride=1) for _ in range(repeats - 1))
            stages.append(Sequential(*units))
            cin = cout
        self.blocks = [
            ("stem", Sequential(Conv2d(3, c0, 3, stride=2, padding=1), BatchNorm2d(c0), ReLU())),
            ("maxpool", MaxPool2d(3, 2, 1)),
            ("stage2", stages[0]),
            ("stage3", stages[1]),
            ("stage4", stages[2]),
            ("conv5", Sequential(Conv2d(c3, c4, 1), BatchNorm2d(c4), ReLU())),
            ("gap", GlobalAvgPool()),
            ("dropout", Dropout(spec.dropout_rate, layer_id=0)),
            ("fc", Linear(c4, spec.n_outputs)),
        ]
        rng = np.random.default_rng(np.random.PCG64(seed))
        for _, block in self.blocks:
            block.init_params(rng, self.dtype)

    def forward(self, x: np.ndarray, training: bool = False,
                trace: list | None = None) -> np.ndarray:
        """Run the network; returns logits (B, C). Pass a list as ``trace``
        to collect (block_name, output_shape) pairs."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected input (B, 3, S, S), got {x.shape}")
        if x.shape[2] != self.spec.input_size or x.shape[3] != self.spec.input_size:
            raise ValueError(
                f"input is {x.shape[2]}x{x.shape[3]} but the spec expects "
                f"{self.spec.input_size}x{self.spec.input_size}"
            )
        state = _RunState(training=training, seed=self.seed, step=self.step)
        x = x.astype(self.dtype, copy=False)
        for name, block in self.blocks:
            x = block.forward(x, state)
            if trace is not None:
                trace.append((name, tuple(x.shape)))
        return x

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = grad_logits
        for _, block in reversed(self.blocks):
            g = block.backward(g)
        return g

    def named_params(self):
        for name, block in self.blocks:
            yield from block.named_params(name)

    def named_buffers(self):
        for name, block in self.blocks:
            yield from block.named_buffers(name)

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}

        def walk(prefix, layer):
            for key, g in getattr(layer, "grads", {}).items():
                out[f"{prefix}.{key}"] = g
            for attr in ("layers",):
                for i, sub in enumerate(getattr(layer, attr, [])):
                    walk(f"{prefix}.{i}", sub)
            for attr in ("branch1", "branch2", "shuffle"):
                sub = getattr(layer, attr, None)
                if sub is not None:
                    walk(f"{prefix}.{attr}", sub)

        for name, block in self.blocks:
            walk(name, block)
        return out

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def state_arrays(self):
        """Params then buffers, in build order (the serialization order)."""
        yield from self.named_params()
        yield from self.named_buffers()


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32,
                config_name: str = "") -> YolicModel:
    """He-uniform conv/FC init, BN gamma=1 beta=0, FC zero bias;
    deterministic per seed."""
    return YolicModel(spec, seed=seed, dtype=dtype, config_name=config_name)


def forward(model: YolicModel, images: np.ndarray, mode: str = "eval"):
    """Returns (logits, probs) for images (B, 3, S, S) in [0,1]."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    logits = model.forward(images, training=mode == "train")
    return logits, nk.sigmoid(logits)


def image_to_input(image: np.ndarray) -> np.ndarray:
    """H x W x 3 float image in [0,1] -> (1, 3, H, W)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {image.shape}")
    return np.ascontiguousarray(image.transpose(2, 0, 1))[None]


# ---------------------------------------------------------------------------
# loss

PROB_CLAMP = 1e-7


def bce_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Binary cross-entropy over all outputs, averaged over outputs and
    batch. Probabilities are clamped to [1e-7, 1-1e-7] inside the logs."""
    if probs.shape != targets.shape:
        raise ValueError(f"probs {probs.shape} vs targets {targets.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = targets
    ll = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    return float(-ll.mean())


def bce_grad_logits(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of bce_loss with respect to the pre-sigmoid logits:
    (p - y) / (B * C)."""
    if probs.shape != targets.shape:
        raise ValueError(f"probs {probs.shape} vs targets {targets.shape}")
    return (probs - targets) / probs.size


# ---------------------------------------------------------------------------
# optimizer and schedule

class Adam:
    def __init__(self, params: dict[str, np.ndarray], betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for key, p in self.params.items():
            g = grads.get(key)
            if g is None:
                continue
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_at_epoch(base_lr: float, epoch: int, milestones, gamma: float) -> float:
    """Multi-step schedule: the rate decays by gamma at each milestone epoch
    (0-based epoch index)."""
    return base_lr * gamma ** bisect_right(list(milestones), epoch)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 150
    milestones: tuple[int, ...] = (100, 125)
    gamma: float = 0.1
    flip: bool = True
    jitter: float = 0.1
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        ms = list(self.milestones)
        if ms != sorted(set(ms)) or (ms and ms[-1] >= self.epochs):
            raise ValueError(
                f"milestones {self.milestones} must be strictly increasing and < epochs={self.epochs}"
            )
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class LabeledDataset:
    """Images (H x W x 3 float in [0,1]) with per-cell label vectors, bound
    to the config that defines the cell order."""

    config: CellConfig
    images: list[np.ndarray] = field(repr=False)
    labels: list[CellLabelVector] = field(repr=False)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        for i, lab in enumerate(self.labels):
            if lab.n_outputs != self.config.n_outputs:
                raise ValueError(
                    f"item {i}: labels have {lab.n_outputs} outputs, config defines "
                    f"{self.config.n_outputs}"
                )

    def __len__(self):
        return len(self.images)


@dataclass
class TrainHistory:
    epoch_losses: list[float]
    epoch_lrs: list[float]
    steps: int
    flip_used: bool

    def to_csv(self) -> str:
        lines = ["epoch,loss,lr"]
        for i, (loss, lr) in enumerate(zip(self.epoch_losses, self.epoch_lrs)):
            lines.append(f"{i},{loss:.8f},{lr:.8g}")
        return "\n".join(lines) + "\n"


def train(model: YolicModel, dataset: LabeledDataset, cfg: TrainConfig) -> TrainHistory:
    """Run the training recipe: Adam, multi-step LR decay, shuffled seeded
    batches, optional horizontal flip (only when the config has a mirror
    permutation) and color jitter. Returns the per-epoch mean loss trace."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.config.n_outputs != model.spec.n_outputs:
        raise ValueError(
            f"dataset config defines C={dataset.config.n_outputs} but the model "
            f"emits C={model.spec.n_outputs}"
        )
    perm = None
    if cfg.flip:
        _, perm = mirror_config(dataset.config)
    flip_used = cfg.flip and perm is not None

    opt = Adam(model.param_dict(), betas=cfg.betas, eps=cfg.eps)
    epoch_losses: list[float] = []
    epoch_lrs: list[float] = []
    steps = 0
    done = False
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.lr, epoch, cfg.milestones, cfg.gamma)
        rng = np.random.Generator(np.random.Philox(key=(np.uint64(cfg.seed) << np.uint64(20)) + np.uint64(epoch)))
        order = rng.permutation(len(dataset))
        batch_losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xs = []
            ys = []
            for idx in batch:
                img = dataset.images[idx]
                lab = dataset.labels[idx]
                if flip_used and rng.random() < 0.5:
                    img, lab = flip_example(img, lab, perm)
                if cfg.jitter > 0.0:
                    img = color_jitter(img, cfg.jitter, int(rng.integers(2**31)))
                xs.append(img.transpose(2, 0, 1))
                ys.append(lab.flat())
            x = np.ascontiguousarray(np.stack(xs), dtype=model.dtype)
            y = np.stack(ys).astype(model.dtype)
            logits = model.forward(x, training=True)
            probs = nk.sigmoid(logits)
            loss = bce_loss(probs, y)
            grad = bce_grad_logits(probs, y).astype(model.dtype)
            model.backward(grad)
            opt.step(model.named_grads(), lr)
            model.step += 1
            steps += 1
            batch_losses.append(loss)
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                done = True
                break
        epoch_losses.append(float(np.mean(batch_losses)))
        epoch_lrs.append(lr)
        if done:
            break
    return TrainHistory(epoch_losses=epoch_losses, epoch_lrs=epoch_lrs, steps=steps,
                        flip_used=flip_used)


# ---------------------------------------------------------------------------
# weights file

def save_weights(model: YolicModel) -> bytes:
    """yolic-weights/1: magic line, JSON header line (spec, config name, C,
    seed, tensor manifest), then the raw little-endian payload in build
    order (params first, then running stats)."""
    arrays = list(model.state_arrays())
    kind = "f64" if model.dtype == np.float64 else "f32"
    header = {
        "spec": model.spec.to_dict(),
        "config": model.config_name,
        "n_outputs": model.spec.n_outputs,
        "seed": model.seed,
        "dtype": kind,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    buf = io.BytesIO()
    buf.write(WEIGHTS_FORMAT.encode() + b"\n")
    buf.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
    wire = "<f8" if kind == "f64" else "<f4"
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype=wire).tobytes())
    return buf.getvalue()


def load_weights(data: bytes, expected_outputs: int | None = None) -> YolicModel:
    """Rebuild a model from a yolic-weights/1 blob; refuses mismatched C."""
    nl1 = data.find(b"\n")
    if nl1 < 0 or data[:nl1].decode(errors="replace") != WEIGHTS_FORMAT:
        raise WeightsError(f"not a {WEIGHTS_FORMAT} file")
    nl2 = data.find(b"\n", nl1 + 1)
    if nl2 < 0:
        raise WeightsError("missing header line")
    try:
        header = json.loads(data[nl1 + 1 : nl2])
        spec = ModelSpec.from_dict(header["spec"])
        tensors = header["tensors"]
        kind = header.get("dtype", "f32")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise WeightsError(f"corrupt header: {e}") from e
    if expected_outputs is not None and spec.n_outputs != expected_outputs:
        raise WeightsError(
            f"weight file has C={spec.n_outputs}, expected C={expected_outputs}"
        )
    dtype = np.float64 if kind == "f64" else np.float32
    model = build_model(spec, seed=header.get("seed", 0), dtype=dtype,
                        config_name=header.get("config", ""))
    arrays = list(model.state_arrays())
    names = [n for n, _ in arrays]
    if names != [t["name"] for t in tensors]:
        raise WeightsError("tensor manifest does not match the architecture")
    wire = np.dtype("<f8" if kind == "f64" else "<f4")
    payload = data[nl2 + 1 :]
    offset = 0
    for (name, arr), meta in zip(arrays, tensors):
        if list(arr.shape) != list(meta["shape"]):
            raise WeightsError(f"tensor {name}: shape {meta['shape']} != expected {list(arr.shape)}")
        nbytes = arr.size * wire.itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise WeightsError(f"truncated payload at tensor {name}")
        arr[...] = np.frombuffer(chunk, dtype=wire).reshape(arr.shape)
        offset += nbytes
    if offset != len(payload):
        raise WeightsError(f"{len(payload) - offset} trailing bytes after the last tensor")
    return model
