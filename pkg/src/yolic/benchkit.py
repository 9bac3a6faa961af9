"""Cost accounting and the edge-oriented path: exact parameter counts,
FLOP estimates (1 multiply-accumulate = 2 FLOPs), a wall-clock latency
harness, and post-training INT8 weight quantization with batch-norm folding.

Conventions, stated in every report: conv FLOPs = 2*k^2*Cin*Cout*Hout*Wout
/ groups, fully connected = 2*in*out, pooling and activations cost 1 FLOP
per output element, batch norm costs 2 per element (one fused
multiply-add), channel shuffle and dropout-at-eval are free.
"""

from __future__ import annotations

import json
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import nnkernel as nk
from .cellgeom import CellConfig
from .decode import decode
from .yolicnet import (
    BatchNorm2d,
    ChannelShuffle,
    Conv2d,
    DepthwiseConv2d,
    Dropout,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    ModelSpec,
    ReLU,
    Sequential,
    ShuffleUnit,
    YolicModel,
    WeightsError,
    build_model,
)

__all__ = [
    "LayerCost",
    "LatencyStats",
    "CostReport",
    "QuantizedModel",
    "layer_costs",
    "count_params",
    "count_flops",
    "cost_report",
    "bench_latency",
    "quantize_int8",
    "decode_agreement",
    "save_quantized",
    "load_quantized",
]

QWEIGHTS_FORMAT = "yolic-weights-q8/1"

# Published reference throughput for this architecture class on a
# Raspberry Pi 4B CPU; report-footer context only, never asserted because
# host hardware differs.
REFERENCE_FPS_FOOTER = (
    "context: published Raspberry Pi 4B reference throughput for this "
    "architecture class is 34.01 FPS (fp16) and 40.06 FPS (int8, ncnn "
    "runtime); not comparable to this host."
)


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass(frozen=True)
class LatencyStats:
    median_s: float
    p90_s: float
    decode_median_s: float
    runs: int
    warmup: int
    threads: int
    all_runs_median_s: float  # includes warmup iterations
    samples: tuple[float, ...] = ()


@dataclass
class CostReport:
    entries: list[LayerCost]
    total_params: int
    total_flops: int
    input_size: int
    latency: LatencyStats | None = None
    context: dict = field(default_factory=dict)

    def to_text(self) -> str:
        width = max(len(e.name) for e in self.entries) + 2
        lines = [
            f"{'layer':<{width}}{'params':>12}{'flops':>16}",
            "-" * (width + 28),
        ]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}{e.params:>12}{e.flops:>16}")
        lines.append("-" * (width + 28))
        lines.append(f"{'total':<{width}}{self.total_params:>12}{self.total_flops:>16}")
        lines.append(
            f"total: {self.total_params / 1e6:.3f}M params, "
            f"{self.total_flops / 1e9:.4f}G FLOPs at input {self.input_size} "
            f"(1 MAC = 2 FLOPs)"
        )
        if self.latency is not None:
            la = self.latency
            lines.append(
                f"latency: median {la.median_s * 1e3:.2f} ms, p90 {la.p90_s * 1e3:.2f} ms "
                f"over {la.runs} runs after {la.warmup} warmups "
                f"(decode median {la.decode_median_s * 1e6:.1f} us, {la.threads} threads)"
            )
        for key, value in self.context.items():
            lines.append(f"{key}: {value}")
        lines.append(REFERENCE_FPS_FOOTER)
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = {
            "entries": [{"name": e.name, "params": e.params, "flops": e.flops}
                        for e in self.entries],
            "total_params": self.total_params,
            "total_flops": self.total_flops,
            "input_size": self.input_size,
            "flops_convention": "1 MAC = 2 FLOPs; pool/activation 1 FLOP per output element; batch norm 2 per element",
            "context": dict(self.context),
            "reference_footer": REFERENCE_FPS_FOOTER,
        }
        if self.latency is not None:
            la = self.latency
            d["latency"] = {
                "median_s": la.median_s,
                "p90_s": la.p90_s,
                "decode_median_s": la.decode_median_s,
                "runs": la.runs,
                "warmup": la.warmup,
                "threads": la.threads,
                "all_runs_median_s": la.all_runs_median_s,
            }
        return d

    def to_csv(self) -> str:
        lines = ["layer,params,flops"]
        for e in self.entries:
            lines.append(f"{e.name},{e.params},{e.flops}")
        lines.append(f"total,{self.total_params},{self.total_flops}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parameter / FLOP walk

def _n_params(layer) -> int:
    return sum(int(np.prod(a.shape)) for _, a in layer.named_params(""))


def _leaf_cost(name: str, layer, in_shape):
    """Returns (entries, out_shape) for one leaf layer at batch size 1."""
    if isinstance(layer, Dropout):
        return [LayerCost(name, 0, 0)], in_shape
    if isinstance(layer, Linear):
        return [LayerCost(name, _n_params(layer), 2 * layer.n_in * layer.n_out)], (layer.n_out,)
    c, h, w = in_shape
    if isinstance(layer, Conv2d):
        ho = nk.conv_out_size(h, layer.kernel, layer.stride, layer.padding)
        wo = nk.conv_out_size(w, layer.kernel, layer.stride, layer.padding)
        flops = 2 * layer.kernel**2 * layer.cin * layer.cout * ho * wo
        return [LayerCost(name, _n_params(layer), flops)], (layer.cout, ho, wo)
    if isinstance(layer, DepthwiseConv2d):
        ho = nk.conv_out_size(h, layer.kernel, layer.stride, layer.padding)
        wo = nk.conv_out_size(w, layer.kernel, layer.stride, layer.padding)
        flops = 2 * layer.kernel**2 * layer.channels * ho * wo
        return [LayerCost(name, _n_params(layer), flops)], (layer.channels, ho, wo)
    if isinstance(layer, BatchNorm2d):
        return [LayerCost(name, _n_params(layer), 2 * c * h * w)], in_shape
    if isinstance(layer, ReLU):
        return [LayerCost(name, 0, c * h * w)], in_shape
    if isinstance(layer, MaxPool2d):
        ho = nk.conv_out_size(h, layer.kernel, layer.stride, layer.padding)
        wo = nk.conv_out_size(w, layer.kernel, layer.stride, layer.padding)
        return [LayerCost(name, 0, c * ho * wo)], (c, ho, wo)
    if isinstance(layer, ChannelShuffle):
        return [LayerCost(name, 0, 0)], in_shape
    if isinstance(layer, GlobalAvgPool):
        return [LayerCost(name, 0, c)], (c,)
    raise TypeError(f"no cost rule for layer type {type(layer).__name__}")


def _walk_cost(name: str, layer, in_shape):
    if isinstance(layer, Sequential):
        entries = []
        shape = in_shape
        for i, sub in enumerate(layer.layers):
            sub_entries, shape = _walk_cost(f"{name}.{i}", sub, shape)
            entries.extend(sub_entries)
        return entries, shape
    if isinstance(layer, ShuffleUnit):
        entries = []
        mid = layer.cout // 2
        c, h, w = in_shape
        if layer.stride == 1:
            branch_in = (mid, h, w)
            b2, out2 = _walk_cost(f"{name}.branch2", layer.branch2, branch_in)
            entries.extend(b2)
            out_shape = (mid + out2[0], out2[1], out2[2])
        else:
            b1, out1 = _walk_cost(f"{name}.branch1", layer.branch1, in_shape)
            b2, out2 = _walk_cost(f"{name}.branch2", layer.branch2, in_shape)
            entries.extend(b1)
            entries.extend(b2)
            out_shape = (out1[0] + out2[0], out2[1], out2[2])
        entries.append(LayerCost(f"{name}.shuffle", 0, 0))
        return entries, out_shape
    return _leaf_cost(name, layer, in_shape)


def layer_costs(model: YolicModel, input_size: int | None = None) -> list[LayerCost]:
    """Per-leaf-layer parameter and FLOP accounting at batch size 1, in
    forward order, ending with the sigmoid head activation."""
    size = input_size if input_size is not None else model.spec.input_size
    shape = (3, size, size)
    entries = []
    for name, block in model.blocks:
        block_entries, shape = _walk_cost(name, block, shape)
        entries.extend(block_entries)
    entries.append(LayerCost("sigmoid", 0, model.spec.n_outputs))
    return entries


def count_params(model: YolicModel) -> CostReport:
    """Exact trainable-parameter count per layer (running stats excluded)."""
    entries = layer_costs(model)
    return CostReport(
        entries=entries,
        total_params=sum(e.params for e in entries),
        total_flops=sum(e.flops for e in entries),
        input_size=model.spec.input_size,
    )


def count_flops(model: YolicModel, input_size: int | None = None) -> CostReport:
    entries = layer_costs(model, input_size)
    return CostReport(
        entries=entries,
        total_params=sum(e.params for e in entries),
        total_flops=sum(e.flops for e in entries),
        input_size=input_size if input_size is not None else model.spec.input_size,
    )


def host_descriptor() -> str:
    return (
        f"{platform.platform()} | {platform.machine()} | "
        f"python {platform.python_version()} | numpy {np.__version__}"
    )


def bench_latency(model, cfg: CellConfig, runs: int = 10, warmup: int = 3,
                  threads: int | None = None, theta: float = 0.5,
                  seed: int = 0) -> LatencyStats:
    """Wall-clock single-image forward+decode latency (median / p90).

    Warmup iterations run first and are kept separately so the report can
    show the cold-vs-warm difference; the quoted median excludes them.
    Thread count is pinned through the BLAS thread pools for the duration.
    """
    if runs < 5:
        raise ValueError("need at least 5 measured runs")
    if warmup < 2:
        raise ValueError("need at least 2 warmup runs")
    from threadpoolctl import threadpool_limits

    n_threads = threads if threads is not None else 1
    rng = np.random.default_rng(np.random.PCG64(seed))
    size = model.spec.input_size
    x = rng.random((1, 3, size, size), dtype=np.float32)
    forward_times: list[float] = []
    decode_times: list[float] = []
    with threadpool_limits(limits=n_threads):
        for _ in range(warmup + runs):
            t0 = time.perf_counter()
            logits = model.forward(x)
            probs = nk.sigmoid(logits)[0]
            t1 = time.perf_counter()
            decode(probs, cfg, theta)
            t2 = time.perf_counter()
            forward_times.append(t2 - t0)
            decode_times.append(t2 - t1)
    measured = forward_times[warmup:]
    measured_sorted = sorted(measured)
    p90 = measured_sorted[min(len(measured_sorted) - 1, int(round(0.9 * (len(measured_sorted) - 1))))]
    return LatencyStats(
        median_s=statistics.median(measured),
        p90_s=p90,
        decode_median_s=statistics.median(decode_times[warmup:]),
        runs=runs,
        warmup=warmup,
        threads=n_threads,
        all_runs_median_s=statistics.median(forward_times),
        samples=tuple(forward_times),
    )


def cost_report(model: YolicModel, input_size: int | None = None,
                latency: LatencyStats | None = None) -> CostReport:
    entries = layer_costs(model, input_size)
    return CostReport(
        entries=entries,
        total_params=sum(e.params for e in entries),
        total_flops=sum(e.flops for e in entries),
        input_size=input_size if input_size is not None else model.spec.input_size,
        latency=latency,
        context={
            "host": host_descriptor(),
            "preset": model.spec.preset,
            "n_outputs": model.spec.n_outputs,
            "profile": f"float32 numpy, dtype {model.dtype.name}",
        },
    )


# ---------------------------------------------------------------------------
# INT8 post-training quantization

def quantize_tensor(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor quantization: scale = max|w|/127, zero point 0.
    A degenerate all-zero tensor gets scale 1.0."""
    amax = float(np.abs(w).max()) if w.size else 0.0
    scale = amax / 127.0 if amax > 0.0 else 1.0
    q = np.clip(np.round(w / scale), -127, 127).astype(np.int8)
    return q, scale


class _Identity:
    def forward(self, x, state=None):
        return x


class _QConv2d:
    def __init__(self, q, scale, bias, stride, padding):
        self.q, self.scale, self.bias = q, scale, bias
        self.stride, self.padding = stride, padding

    def forward(self, x, state=None):
        w = self.q.astype(x.dtype) * x.dtype.type(self.scale)
        return nk.conv2d(x, w, self.bias, self.stride, self.padding)


class _QDepthwiseConv2d:
    def __init__(self, q, scale, bias, stride, padding):
        self.q, self.scale, self.bias = q, scale, bias
        self.stride, self.padding = stride, padding

    def forward(self, x, state=None):
        w = self.q.astype(x.dtype) * x.dtype.type(self.scale)
        y = nk.depthwise_conv2d(x, w, self.stride, self.padding)
        if self.bias is not None:
            y += self.bias[None, :, None, None]
        return y


class _QLinear:
    def __init__(self, q, scale, bias):
        self.q, self.scale, self.bias = q, scale, bias

    def forward(self, x, state=None):
        w = self.q.astype(x.dtype) * x.dtype.type(self.scale)
        return nk.linear(x, w, self.bias)


class _QSequential:
    def __init__(self, layers):
        self.layers = layers

    def forward(self, x, state=None):
        for layer in self.layers:
            x = layer.forward(x, state)
        return x


class _QShuffleUnit:
    def __init__(self, branch1, branch2, stride, cout, shuffle):
        self.branch1, self.branch2 = branch1, branch2
        self.stride, self.cout = stride, cout
        self.shuffle = shuffle

    def forward(self, x, state=None):
        mid = self.cout // 2
        if self.stride == 1:
            y = np.concatenate([x[:, :mid], self.branch2.forward(x[:, mid:], state)], axis=1)
        else:
            y = np.concatenate(
                [self.branch1.forward(x, state), self.branch2.forward(x, state)], axis=1
            )
        return self.shuffle.forward(y, state)


def _fold_conv_bn(conv, bn):
    """Fold an eval-mode batch norm into the preceding (bias-free) conv.
    Returns (weight, bias) as float arrays."""
    s = bn.gamma / np.sqrt(bn.running_var + nk.BN_EPS)
    shift = bn.beta - bn.running_mean * s
    if isinstance(conv, Conv2d):
        w = conv.weight * s[:, None, None, None]
        b = shift.copy()
        if conv.bias is not None:
            b += conv.bias * s
    else:  # depthwise: out channel == channel
        w = conv.weight * s[:, None, None]
        b = shift.copy()
    return w, b


class QuantizedModel:
    """Per-tensor INT8 weights with scales; batch norm folded into the
    preceding conv; activations stay float and weights are dequantized on
    the fly during forward."""

    def __init__(self, model: YolicModel):
        self.spec = model.spec
        self.config_name = model.config_name
        self.tensors: dict[str, tuple[np.ndarray, float]] = {}
        self.biases: dict[str, np.ndarray] = {}
        self.blocks = [(name, self._clone(name, block)) for name, block in model.blocks]

    def _register_conv(self, name, conv, bn):
        if bn is not None:
            w, b = _fold_conv_bn(conv, bn)
        else:
            w = conv.weight
            b = None if getattr(conv, "bias", None) is None else conv.bias.copy()
        q, scale = quantize_tensor(w)
        self.tensors[f"{name}.weight"] = (q, scale)
        if b is not None:
            self.biases[f"{name}.bias"] = b.astype(np.float32)
        bias32 = None if b is None else self.biases[f"{name}.bias"]
        if isinstance(conv, Conv2d):
            return _QConv2d(q, scale, bias32, conv.stride, conv.padding)
        return _QDepthwiseConv2d(q, scale, bias32, conv.stride, conv.padding)

    def _clone(self, name, layer):
        if isinstance(layer, Sequential):
            out = []
            children = layer.layers
            i = 0
            while i < len(children):
                child = children[i]
                nxt = children[i + 1] if i + 1 < len(children) else None
                if isinstance(child, (Conv2d, DepthwiseConv2d)) and isinstance(nxt, BatchNorm2d):
                    out.append(self._register_conv(f"{name}.{i}", child, nxt))
                    i += 2
                    continue
                out.append(self._clone(f"{name}.{i}", child))
                i += 1
            return _QSequential(out)
        if isinstance(layer, ShuffleUnit):
            b1 = None if layer.branch1 is None else self._clone(f"{name}.branch1", layer.branch1)
            b2 = self._clone(f"{name}.branch2", layer.branch2)
            return _QShuffleUnit(b1, b2, layer.stride, layer.cout, layer.shuffle)
        if isinstance(layer, (Conv2d, DepthwiseConv2d)):
            return self._register_conv(name, layer, None)
        if isinstance(layer, Linear):
            q, scale = quantize_tensor(layer.weight)
            self.tensors[f"{name}.weight"] = (q, scale)
            bias = None
            if layer.bias is not None:
                bias = layer.bias.astype(np.float32)
                self.biases[f"{name}.bias"] = bias
            return _QLinear(q, scale, bias)
        if isinstance(layer, (BatchNorm2d, Dropout)):
            # standalone BN does not occur in this architecture; dropout is
            # identity at inference
            return _Identity()
        return layer  # ReLU, MaxPool2d, ChannelShuffle, GlobalAvgPool are stateless

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[2] != self.spec.input_size or x.shape[3] != self.spec.input_size:
            raise ValueError(
                f"input is {x.shape[2]}x{x.shape[3]} but the spec expects "
                f"{self.spec.input_size}x{self.spec.input_size}"
            )
        x = x.astype(np.float32, copy=False)
        for _, block in self.blocks:
            x = block.forward(x, None)
        return x


def quantize_int8(model: YolicModel) -> QuantizedModel:
    """Post-training per-tensor symmetric INT8 quantization of all conv and
    fully connected weights, with eval-mode BN folded in first."""
    return QuantizedModel(model)


def decode_agreement(model: YolicModel, qmodel: QuantizedModel,
                     images: np.ndarray, cfg: CellConfig,
                     theta: float = 0.5) -> float:
    """Fraction of (image, cell) pairs whose decoded decision (background
    flag and decided class set) is identical between the float model and its
    quantized counterpart."""
    agree = 0
    total = 0
    for i in range(images.shape[0]):
        x = images[i : i + 1]
        pf = nk.sigmoid(model.forward(x))[0]
        pq = nk.sigmoid(qmodel.forward(x))[0]
        for a, b in zip(decode(pf, cfg, theta), decode(pq, cfg, theta)):
            agree += a.is_background == b.is_background and a.decided_classes == b.decided_classes
            total += 1
    return agree / total if total else 1.0


# ---------------------------------------------------------------------------
# quantized weight file

def save_quantized(qm: QuantizedModel) -> bytes:
    header = {
        "spec": qm.spec.to_dict(),
        "config": qm.config_name,
        "n_outputs": qm.spec.n_outputs,
        "tensors": [
            {"name": n, "shape": list(q.shape), "scale": s, "kind": "q8"}
            for n, (q, s) in qm.tensors.items()
        ]
        + [{"name": n, "shape": list(b.shape), "scale": 1.0, "kind": "f32"}
           for n, b in qm.biases.items()],
    }
    parts = [QWEIGHTS_FORMAT.encode() + b"\n",
             json.dumps(header, separators=(",", ":")).encode() + b"\n"]
    for n, (q, _) in qm.tensors.items():
        parts.append(q.tobytes())
    for n, b in qm.biases.items():
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def load_quantized(data: bytes) -> QuantizedModel:
    nl1 = data.find(b"\n")
    if nl1 < 0 or data[:nl1].decode(errors="replace") != QWEIGHTS_FORMAT:
        raise WeightsError(f"not a {QWEIGHTS_FORMAT} file")
    nl2 = data.find(b"\n", nl1 + 1)
    if nl2 < 0:
        raise WeightsError("missing header line")
    try:
        header = json.loads(data[nl1 + 1 : nl2])
        spec = ModelSpec.from_dict(header["spec"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise WeightsError(f"corrupt header: {e}") from e
    scaffold = build_model(spec, seed=0, config_name=header.get("config", ""))
    qm = QuantizedModel(scaffold)
    by_kind = {t["name"]: t for t in header["tensors"]}
    expected = [f"{n}" for n in qm.tensors] + [f"{n}" for n in qm.biases]
    if sorted(expected) != sorted(by_kind):
        raise WeightsError("tensor manifest does not match the architecture")
    payload = data[nl2 + 1 :]
    offset = 0
    for t in header["tensors"]:
        size = int(np.prod(t["shape"]))
        nbytes = size * (1 if t["kind"] == "q8" else 4)
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise WeightsError(f"truncated payload at tensor {t['name']}")
        offset += nbytes
        if t["kind"] == "q8":
            q = np.frombuffer(chunk, dtype=np.int8).reshape(t["shape"]).copy()
            qm.tensors[t["name"]] = (q, float(t["scale"]))
        else:
            qm.biases[t["name"]][...] = np.frombuffer(chunk, dtype="<f4").reshape(t["shape"])
    if offset != len(payload):
        raise WeightsError(f"{len(payload) - offset} trailing bytes after the last tensor")
    _rebind_quantized(qm)
    return qm


def _rebind_quantized(qm: QuantizedModel) -> None:
    """Point the forward-path layers at the (re)loaded tensor storage."""

    def walk(name, layer):
        if isinstance(layer, _QSequential):
            for i, sub in enumerate(layer.layers):
                walk(f"{name}.{i}", sub)
        elif isinstance(layer, _QShuffleUnit):
            if layer.branch1 is not None:
                walk(f"{name}.branch1", layer.branch1)
            walk(f"{name}.branch2", layer.branch2)
        elif isinstance(layer, (_QConv2d, _QDepthwiseConv2d, _QLinear)):
            q, scale = qm.tensors[f"{name}.weight"]
            layer.q, layer.scale = q, scale
            bias = qm.biases.get(f"{name}.bias")
            if bias is not None:
                layer.bias = bias

    for name, block in qm.blocks:
        walk(name, block)
