"""Local HTTP service for the designer/annotation UI.

Every payload is one of the module file formats verbatim (yolic-config/1,
yolic-ann/1, yolic-pred/1, PPM/PGM); validation is the same code the CLI
uses, so the two paths cannot drift. Stateless between requests except the
workspace on disk; annotation writes are serialized and carry a version echo
so concurrent editors can detect races.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .cellgeom import CONFIG_FORMAT, ConfigError, load_config, save_config
from .decode import PRED_FORMAT, decode, write_predictions
from .imageio import read_ppm
from .labelkit import ANNOTATION_FORMAT, AnnotationError, read_annotation
from .workspace import Workspace
from .yolicnet import WeightsError, forward, load_weights

__all__ = ["create_app"]


def _version_of(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _error(status: int, message: str) -> Response:
    return Response(
        content=json.dumps({"error": message}) + "\n",
        status_code=status,
        media_type="application/json",
    )


def create_app(workspace: str | Path, weights: str | Path | None = None) -> FastAPI:
    ws = Workspace(workspace).ensure()
    write_lock = threading.Lock()
    model = None
    if weights is not None:
        model = load_weights(Path(weights).read_bytes())

    app = FastAPI(title="yolic service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Version", "X-Yolic-Format"],
    )

    # -- configs -----------------------------------------------------------
    @app.get("/api/configs")
    def list_configs():
        out = []
        for name in ws.list_configs():
            cfg = ws.load_config(name)
            out.append(
                {
                    "name": name,
                    "n_cells": cfg.n_cells,
                    "n_classes": cfg.n_classes,
                    "n_outputs": cfg.n_outputs,
                }
            )
        return out

    @app.get("/api/configs/{name}")
    def get_config(name: str):
        path = ws.config_path(name)
        if not path.is_file():
            return _error(404, f"no config {name!r}")
        data = path.read_bytes()
        return Response(
            content=data,
            media_type="application/json",
            headers={"X-Yolic-Format": CONFIG_FORMAT, "X-Version": _version_of(data)},
        )

    @app.put("/api/configs/{name}")
    async def put_config(name: str, request: Request):
        body = await request.body()
        try:
            cfg = load_config(body)
        except ConfigError as e:
            return _error(400, str(e))
        if cfg.name != name:
            return _error(409, f"document is named {cfg.name!r}, URL says {name!r}")
        canonical = save_config(cfg)
        with write_lock:
            ws.config_path(name).parent.mkdir(parents=True, exist_ok=True)
            ws.config_path(name).write_bytes(canonical)
        return Response(
            content=canonical,
            media_type="application/json",
            headers={"X-Yolic-Format": CONFIG_FORMAT, "X-Version": _version_of(canonical)},
        )

    # -- images -------------------------------------------------------------
    @app.get("/api/images")
    def list_images():
        out = []
        for image_id in ws.list_images():
            out.append(
                {
                    "id": image_id,
                    "has_mask": ws.mask_path(image_id).is_file(),
                    "has_annotation": ws.annotation_path(image_id).is_file(),
                }
            )
        return out

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str, kind: str = "image"):
        if kind not in ("image", "mask"):
            return _error(400, f"kind must be 'image' or 'mask', got {kind!r}")
        path = ws.image_path(image_id) if kind == "image" else ws.mask_path(image_id)
        if not path.is_file():
            return _error(404, f"no {kind} for id {image_id!r}")
        media = "image/x-portable-pixmap" if kind == "image" else "image/x-portable-graymap"
        return Response(content=path.read_bytes(), media_type=media)

    # -- annotations ---------------------------------------------------------
    def _bound_config_name() -> str | None:
        try:
            return ws.load_manifest().config
        except (FileNotFoundError, ValueError):
            return None

    @app.get("/api/annotations/{image_id}")
    def get_annotation(image_id: str):
        path = ws.annotation_path(image_id)
        if not path.is_file():
            return _error(404, f"no annotation for id {image_id!r}")
        data = path.read_bytes()
        return Response(
            content=data,
            media_type="text/plain",
            headers={"X-Yolic-Format": ANNOTATION_FORMAT, "X-Version": _version_of(data)},
        )

    @app.put("/api/annotations/{image_id}")
    async def put_annotation(image_id: str, request: Request, config: str | None = None):
        if not ws.image_path(image_id).is_file():
            return _error(404, f"no image with id {image_id!r}")
        bound = _bound_config_name()
        cfg_name = config or bound
        if cfg_name is None:
            return _error(400, "no manifest in workspace; pass ?config=NAME")
        if bound is not None and config is not None and config != bound:
            return _error(409, f"annotation references config {config!r} but the "
                               f"workspace dataset is bound to {bound!r}")
        try:
            cfg = ws.load_config(cfg_name)
        except FileNotFoundError:
            return _error(404, f"no config {cfg_name!r}")
        body = await request.body()
        try:
            read_annotation(body, cfg.n_cells, cfg.n_classes)
        except AnnotationError as e:
            return _error(400, str(e))
        path = ws.annotation_path(image_id)
        expected = request.headers.get("X-Expected-Version")
        with write_lock:
            if expected is not None and path.is_file():
                current = _version_of(path.read_bytes())
                if current != expected:
                    return _error(409, f"version conflict: file is at {current}, "
                                       f"you edited {expected}")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(body)
        return Response(
            content=body,
            media_type="text/plain",
            headers={"X-Yolic-Format": ANNOTATION_FORMAT, "X-Version": _version_of(body)},
        )

    # -- inference -----------------------------------------------------------
    @app.post("/api/infer/{image_id}")
    def infer(image_id: str, theta: float = 0.5):
        if model is None:
            return _error(503, "no model loaded; start the service with --weights")
        path = ws.image_path(image_id)
        if not path.is_file():
            return _error(404, f"no image with id {image_id!r}")
        cfg_name = model.config_name or _bound_config_name()
        if cfg_name is None:
            return _error(409, "weights carry no config name and the workspace has no manifest")
        try:
            cfg = ws.load_config(cfg_name)
        except FileNotFoundError:
            return _error(404, f"no config {cfg_name!r}")
        if cfg.n_outputs != model.spec.n_outputs:
            return _error(409, f"config {cfg_name!r} defines C={cfg.n_outputs} but the "
                               f"model emits C={model.spec.n_outputs}")
        image = read_ppm(path.read_bytes())
        if image.shape[0] != model.spec.input_size or image.shape[1] != model.spec.input_size:
            return _error(400, f"image is {image.shape[1]}x{image.shape[0]} but the model "
                               f"expects {model.spec.input_size}x{model.spec.input_size}")
        x = np.ascontiguousarray(image.transpose(2, 0, 1))[None]
        _, probs = forward(model, x, "eval")
        body = write_predictions(decode(probs[0], cfg, theta), cfg.n_classes, theta)
        return Response(
            content=body,
            media_type="text/plain",
            headers={"X-Yolic-Format": PRED_FORMAT},
        )

    # -- reports ---------------------------------------------------------------
    @app.get("/api/reports")
    def list_reports():
        d = ws.root / "reports"
        if not d.is_dir():
            return []
        return sorted(p.name for p in d.iterdir() if p.is_file())

    @app.get("/api/reports/{name}")
    def get_report(name: str):
        path = ws.root / "reports" / name
        if not path.is_file() or "/" in name or name.startswith("."):
            return _error(404, f"no report {name!r}")
        media = {
            ".json": "application/json",
            ".png": "image/png",
            ".csv": "text/csv",
        }.get(path.suffix, "text/plain")
        return Response(content=path.read_bytes(), media_type=media)

    return app
