"""Command-line interface: one verb per pipeline stage.

Report-producing verbs (train, eval, bench, rasterize, quantize) write the
delimited output (CSV/JSON/text) and render a matplotlib figure next to it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import nnkernel as nk
from .cellgeom import (
    ConfigError,
    RasterError,
    load_config,
    mirror_config,
    rasterize,
    save_config,
    validate_config,
)
from .decode import decode, write_predictions
from .evalkit import MetricCounts, accumulate, finalize
from .imageio import read_ppm, write_pgm, write_ppm
from .labelkit import (
    AnnotationError,
    SceneParams,
    mask_to_labels,
    read_annotation,
    synth_scene,
    write_annotation,
)
from .workspace import Manifest, ManifestItem, Workspace, resolve_config
from .yolicnet import (
    ModelSpec,
    TrainConfig,
    WeightsError,
    build_model,
    forward,
    load_weights,
    save_weights,
    train,
)

__all__ = ["main"]


class CliError(Exception):
    pass


def _load_weights_file(path: str, expected_outputs=None):
    try:
        return load_weights(Path(path).read_bytes(), expected_outputs)
    except FileNotFoundError:
        raise CliError(f"weights file not found: {path}")
    except WeightsError as e:
        raise CliError(f"{path}: {e}")


def _resolve_config(ref: str, workspace_dir: str | None):
    ws = Workspace(workspace_dir) if workspace_dir else None
    try:
        return resolve_config(ref, ws)
    except (ConfigError, FileNotFoundError) as e:
        raise CliError(str(e))


# ---------------------------------------------------------------------------
# verbs

def cmd_config_validate(args) -> int:
    data = Path(args.path).read_bytes()
    try:
        cfg = load_config(data)
    except ConfigError as e:
        print(f"invalid: {e}")
        return 1
    violations = validate_config(cfg)
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 1
    print(f"valid: {cfg.name}  N={cfg.n_cells}  M={cfg.n_classes}  C={cfg.n_outputs}")
    return 0


def cmd_config_mirror(args) -> int:
    cfg = load_config(Path(args.path).read_bytes())
    mirrored, perm = mirror_config(cfg)
    if args.out:
        Path(args.out).write_bytes(save_config(mirrored))
        print(f"wrote mirrored config to {args.out}")
    if perm is None:
        print("mirror permutation: absent (flip augmentation must stay disabled)")
        return 0
    print(f"mirror permutation: {' '.join(str(j) for j in perm)}")
    return 0


def cmd_rasterize(args) -> int:
    cfg = _resolve_config(args.config, args.workspace)
    w, h = args.size
    try:
        masks = rasterize(cfg, w, h)
    except RasterError as e:
        raise CliError(str(e))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["cell,kind,pixels,area_fraction"]
    from .cellgeom import Rect

    for i, (shape, mask) in enumerate(zip(cfg.cells, masks.masks)):
        kind = "rect" if isinstance(shape, Rect) else "poly"
        n = int(mask.sum())
        rows.append(f"{i},{kind},{n},{n / (w * h):.6f}")
    (out / "cells.csv").write_text("\n".join(rows) + "\n")
    from .figures import plot_cell_layout

    plot_cell_layout(cfg, out / "layout.png")
    print(f"rasterized {cfg.n_cells} cells at {w}x{h}; wrote cells.csv and layout.png to {out}")
    return 0


def cmd_convert(args) -> int:
    cfg = _resolve_config(args.config, args.workspace)
    from .imageio import read_pgm
    from .labelkit import ClassIdMask

    ids = read_pgm(Path(args.mask).read_bytes())
    mask = ClassIdMask(ids=ids)
    masks = rasterize(cfg, mask.width, mask.height)
    labels = mask_to_labels(mask, masks, cfg.n_classes, tau=args.tau)
    Path(args.out).write_bytes(write_annotation(labels))
    n_obj = int(labels.bits[:, : cfg.n_classes].sum())
    print(f"wrote {args.out}: {cfg.n_cells} cells, {n_obj} object bits set (tau={args.tau})")
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve_config(args.config, args.workspace or args.out)
    ws = Workspace(args.out).ensure()
    ws.save_config(cfg)
    w, h = args.size
    snap_rows, snap_cols = args.snap if args.snap else (0, 0)
    params = SceneParams(width=w, height=h, n_classes=cfg.n_classes,
                         min_shapes=args.min_shapes, max_shapes=args.max_shapes,
                         min_size=args.min_size, max_size=args.max_size,
                         snap_rows=snap_rows, snap_cols=snap_cols)
    masks = rasterize(cfg, w, h)
    manifest = Manifest(config=cfg.name, tau=args.tau)
    for i in range(args.count):
        scene = synth_scene(params, args.seed + i)
        labels = mask_to_labels(scene.mask, masks, cfg.n_classes, tau=args.tau)
        item_id = f"scene_{args.seed + i:05d}"
        ws.image_path(item_id).write_bytes(write_ppm(scene.image))
        ws.mask_path(item_id).write_bytes(write_pgm(scene.mask.ids))
        ws.annotation_path(item_id).write_bytes(write_annotation(labels))
        manifest.items.append(
            ManifestItem(
                id=item_id,
                image=f"images/{item_id}.ppm",
                mask=f"masks/{item_id}.pgm",
                annotation=f"annotations/{item_id}.txt",
            )
        )
    ws.save_manifest(manifest)
    print(f"wrote {args.count} scenes ({w}x{h}, config {cfg.name}) to {ws.root}")
    return 0


def cmd_train(args) -> int:
    ws = Workspace(args.workspace)
    dataset = ws.load_dataset()
    cfg = dataset.config
    size = dataset.images[0].shape[0]
    spec = ModelSpec.for_preset(args.spec, cfg.n_outputs, input_size=size,
                                dropout_rate=args.dropout)
    model = build_model(spec, seed=args.seed, config_name=cfg.name)
    epochs = args.epochs
    if args.steps is not None:
        # guarantee the step budget is reachable regardless of epoch size
        steps_per_epoch = max(1, -(-len(dataset) // args.batch_size))
        epochs = max(epochs, -(-args.steps // steps_per_epoch))
    tc = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=epochs,
        milestones=tuple(args.milestones),
        gamma=args.gamma,
        flip=not args.no_flip,
        jitter=args.jitter,
        seed=args.seed,
        max_steps=args.steps,
    )
    history = train(model, dataset, tc)
    out = Path(args.out) if args.out else ws.root / "weights" / "model.weights"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_weights(model))
    trace_path = out.with_suffix(".loss.csv")
    trace_path.write_text(history.to_csv())
    from .figures import plot_loss_curve

    plot_loss_curve(history, out.with_suffix(".loss.png"))
    print(
        f"trained {history.steps} steps over {len(history.epoch_losses)} epochs "
        f"(flip={'on' if history.flip_used else 'off'}); "
        f"loss {history.epoch_losses[0]:.4f} -> {history.epoch_losses[-1]:.4f}"
    )
    print(f"wrote {out}, {trace_path.name}, {trace_path.with_suffix('.png').name}")
    return 0


def _iter_eval_pairs(ws: Workspace, cfg, model, theta, oracle: bool):
    from .decode import labels_to_predictions

    manifest = ws.load_manifest()
    for item in manifest.items:
        labels = read_annotation(
            (ws.root / item.annotation).read_bytes(), cfg.n_cells, cfg.n_classes
        )
        if oracle:
            yield labels, labels_to_predictions(labels)
            continue
        image = read_ppm((ws.root / item.image).read_bytes())
        x = np.ascontiguousarray(image.transpose(2, 0, 1))[None]
        _, probs = forward(model, x, "eval")
        yield labels, decode(probs[0], cfg, theta)


def cmd_eval(args) -> int:
    ws = Workspace(args.workspace)
    manifest = ws.load_manifest()
    cfg = ws.load_config(manifest.config)
    model = None
    if not args.oracle:
        if not args.weights:
            raise CliError("eval needs --weights (or --oracle for the self-check mode)")
        model = _load_weights_file(args.weights, cfg.n_outputs)
    counts = MetricCounts(class_names=cfg.class_names)
    for labels, preds in _iter_eval_pairs(ws, cfg, model, args.theta, args.oracle):
        accumulate(counts, labels, preds)
    report = finalize(counts)
    out = Path(args.out) if args.out else ws.root / "reports"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report.to_text())
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "metrics.csv").write_text(report.to_csv())
    from .figures import plot_metrics

    plot_metrics(report, out / "metrics.png")
    print(report.to_text())
    print(f"wrote metrics.txt/.json/.csv/.png to {out}")
    return 0


def cmd_infer(args) -> int:
    model = _load_weights_file(args.weights)
    cfg = _resolve_config(args.config, args.workspace) if args.config else None
    if cfg is None:
        if not model.config_name:
            raise CliError("weights carry no config name; pass --config")
        cfg = _resolve_config(model.config_name, args.workspace)
    if cfg.n_outputs != model.spec.n_outputs:
        raise CliError(
            f"config {cfg.name} defines C={cfg.n_outputs} but weights emit "
            f"C={model.spec.n_outputs}"
        )
    image = read_ppm(Path(args.image).read_bytes())
    if image.shape[0] != model.spec.input_size or image.shape[1] != model.spec.input_size:
        raise CliError(
            f"image is {image.shape[1]}x{image.shape[0]} but the model expects "
            f"{model.spec.input_size}x{model.spec.input_size}"
        )
    x = np.ascontiguousarray(image.transpose(2, 0, 1))[None]
    _, probs = forward(model, x, "eval")
    preds = decode(probs[0], cfg, args.theta)
    data = write_predictions(preds, cfg.n_classes, args.theta)
    if args.out:
        Path(args.out).write_bytes(data)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(data.decode("ascii"))
    if args.overlay:
        from .figures import plot_prediction_overlay

        plot_prediction_overlay(image, cfg, preds, args.overlay)
        print(f"wrote overlay {args.overlay}")
    return 0


def cmd_bench(args) -> int:
    from .benchkit import bench_latency, cost_report
    from .figures import plot_cost_breakdown

    if args.weights:
        model = _load_weights_file(args.weights)
        cfg = _resolve_config(model.config_name or args.config, args.workspace)
    else:
        cfg = _resolve_config(args.config, args.workspace)
        spec = ModelSpec.for_preset(args.spec, cfg.n_outputs, input_size=args.input_size)
        model = build_model(spec, seed=0, config_name=cfg.name)
    latency = None
    if not args.no_latency:
        latency = bench_latency(model, cfg, runs=args.runs, warmup=args.warmup,
                                threads=args.threads)
    report = cost_report(model, latency=latency)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cost.txt").write_text(report.to_text())
    (out / "cost.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "cost.csv").write_text(report.to_csv())
    plot_cost_breakdown(report.entries, out / "cost.png",
                        title=f"{model.spec.preset} cost at input {report.input_size}")
    print(report.to_text())
    print(f"wrote cost.txt/.json/.csv/.png to {out}")
    return 0


def cmd_quantize(args) -> int:
    from .benchkit import decode_agreement, quantize_int8, save_quantized

    model = _load_weights_file(args.weights)
    qm = quantize_int8(model)
    Path(args.out).write_bytes(save_quantized(qm))
    print(f"wrote {args.out}")
    if args.workspace:
        ws = Workspace(args.workspace)
        manifest = ws.load_manifest()
        cfg = ws.load_config(manifest.config)
        if cfg.n_outputs != model.spec.n_outputs:
            raise CliError(
                f"workspace config C={cfg.n_outputs} != weights C={model.spec.n_outputs}"
            )
        images = np.stack(
            [
                read_ppm((ws.root / item.image).read_bytes()).transpose(2, 0, 1)
                for item in manifest.items
            ]
        )
        rate = decode_agreement(model, qm, images, cfg, theta=args.theta)
        print(f"decode agreement vs float parent: {rate:.4f} "
              f"({len(manifest.items)} images, theta={args.theta})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.workspace, weights=args.weights)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser

def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="yolic", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    pc = sub.add_parser("config", help="validate or mirror a config document")
    csub = pc.add_subparsers(dest="config_verb", required=True)
    v = csub.add_parser("validate", help="check a config file and echo N/M/C")
    v.add_argument("path")
    v.set_defaults(func=cmd_config_validate)
    mi = csub.add_parser("mirror", help="mirror a config and print the cell permutation")
    mi.add_argument("path")
    mi.add_argument("-o", "--out")
    mi.set_defaults(func=cmd_config_mirror)

    r = sub.add_parser("rasterize", help="rasterize cells; write cells.csv and layout.png")
    r.add_argument("--config", required=True)
    r.add_argument("--size", type=_size, default=(224, 224))
    r.add_argument("--out", default="raster_report")
    r.add_argument("--workspace")
    r.set_defaults(func=cmd_rasterize)

    c = sub.add_parser("convert", help="pixel mask (PGM) -> annotation file")
    c.add_argument("--config", required=True)
    c.add_argument("--mask", required=True)
    c.add_argument("--tau", type=float, default=0.05)
    c.add_argument("--out", required=True)
    c.add_argument("--workspace")
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", help="generate a synthetic labeled workspace")
    s.add_argument("--config", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=(64, 64))
    s.add_argument("--tau", type=float, default=0.05)
    s.add_argument("--min-shapes", type=int, default=1)
    s.add_argument("--max-shapes", type=int, default=3)
    s.add_argument("--min-size", type=float, default=0.25)
    s.add_argument("--max-size", type=float, default=0.55)
    s.add_argument("--snap", type=_size, default=None, metavar="ROWSxCOLS",
                   help="place each shape fully inside one grid cell")
    s.add_argument("--out", required=True)
    s.add_argument("--workspace")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a workspace dataset")
    t.add_argument("--workspace", required=True)
    t.add_argument("--spec", choices=["table1", "tiny"], default="tiny")
    t.add_argument("--steps", type=int, default=None, help="cap on optimizer steps")
    t.add_argument("--epochs", type=int, default=150)
    t.add_argument("--milestones", type=int, nargs="*", default=[100, 125])
    t.add_argument("--gamma", type=float, default=0.1)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--dropout", type=float, default=0.2)
    t.add_argument("--jitter", type=float, default=0.1)
    t.add_argument("--no-flip", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="weights path (default workspace/weights/model.weights)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate weights (or --oracle) on a workspace")
    e.add_argument("--workspace", required=True)
    e.add_argument("--weights")
    e.add_argument("--theta", type=float, default=0.5)
    e.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (pipeline self-check)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="run one image through the model; dump yolic-pred/1")
    i.add_argument("--weights", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--config")
    i.add_argument("--theta", type=float, default=0.5)
    i.add_argument("--out")
    i.add_argument("--overlay", help="also render a prediction overlay PNG")
    i.add_argument("--workspace")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="params/FLOPs accounting and latency")
    b.add_argument("--weights")
    b.add_argument("--config", default="outdoor104")
    b.add_argument("--spec", choices=["table1", "tiny"], default="table1")
    b.add_argument("--input-size", type=int, default=None)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--threads", type=int, default=None)
    b.add_argument("--no-latency", action="store_true")
    b.add_argument("--out", default="bench_report")
    b.add_argument("--workspace")
    b.set_defaults(func=cmd_bench)

    q = sub.add_parser("quantize", help="post-training INT8 weight quantization")
    q.add_argument("--weights", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--workspace", help="report decode agreement on this workspace's images")
    q.add_argument("--theta", type=float, default=0.5)
    q.set_defaults(func=cmd_quantize)

    sv = sub.add_parser("serve", help="HTTP service for the designer/annotation UI")
    sv.add_argument("--workspace", required=True)
    sv.add_argument("--weights")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8477)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, AnnotationError, ConfigError, RasterError, ValueError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
