"""Workspace layout and the dataset manifest.

A workspace is a directory with configs/, images/, masks/, annotations/,
weights/, and reports/ plus a manifest.json tying items together. The
manifest records which config and coverage threshold produced the
annotations, so converters and trainers stay consistent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .cellgeom import CellConfig, ConfigError, load_builtin_config, load_config, save_config
from .imageio import read_pgm, read_ppm
from .labelkit import ClassIdMask, read_annotation
from .yolicnet import LabeledDataset

__all__ = ["MANIFEST_FORMAT", "Manifest", "ManifestItem", "Workspace", "resolve_config"]

MANIFEST_FORMAT = "yolic-manifest/1"

SUBDIRS = ("configs", "images", "masks", "annotations", "weights", "reports")


@dataclass
class ManifestItem:
    id: str
    image: str
    mask: str | None = None
    annotation: str | None = None


@dataclass
class Manifest:
    config: str
    tau: float = 0.05
    items: list[ManifestItem] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "version": MANIFEST_FORMAT,
            "config": self.config,
            "tau": self.tau,
            "items": [
                {k: v for k, v in vars(item).items() if v is not None} for item in self.items
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        doc = json.loads(text)
        if doc.get("version") != MANIFEST_FORMAT:
            raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
        items = [ManifestItem(**entry) for entry in doc.get("items", [])]
        return cls(config=doc["config"], tau=doc.get("tau", 0.05), items=items)


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def ensure(self) -> "Workspace":
        for sub in SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    # -- configs ----------------------------------------------------------
    def config_path(self, name: str) -> Path:
        return self.root / "configs" / f"{name}.json"

    def list_configs(self) -> list[str]:
        d = self.root / "configs"
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.glob("*.json"))

    def load_config(self, name: str) -> CellConfig:
        path = self.config_path(name)
        if not path.is_file():
            raise FileNotFoundError(f"no config {name!r} in workspace {self.root}")
        return load_config(path.read_bytes())

    def save_config(self, cfg: CellConfig) -> Path:
        path = self.config_path(cfg.name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(save_config(cfg))
        return path

    # -- manifest ---------------------------------------------------------
    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def load_manifest(self) -> Manifest:
        if not self.manifest_path.is_file():
            raise FileNotFoundError(f"no manifest.json in workspace {self.root}")
        return Manifest.from_json(self.manifest_path.read_text())

    def save_manifest(self, manifest: Manifest) -> None:
        self.manifest_path.write_text(manifest.to_json())

    # -- items ------------------------------------------------------------
    def list_images(self) -> list[str]:
        d = self.root / "images"
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.glob("*.ppm"))

    def image_path(self, image_id: str) -> Path:
        return self.root / "images" / f"{image_id}.ppm"

    def mask_path(self, image_id: str) -> Path:
        return self.root / "masks" / f"{image_id}.pgm"

    def annotation_path(self, image_id: str) -> Path:
        return self.root / "annotations" / f"{image_id}.txt"

    def load_dataset(self, config: CellConfig | None = None) -> LabeledDataset:
        """Materialize (image, labels) pairs from the manifest."""
        manifest = self.load_manifest()
        cfg = config if config is not None else self.load_config(manifest.config)
        images = []
        labels = []
        for item in manifest.items:
            if item.annotation is None:
                raise ValueError(f"manifest item {item.id} has no annotation")
            images.append(read_ppm((self.root / item.image).read_bytes()))
            labels.append(
                read_annotation(
                    (self.root / item.annotation).read_bytes(), cfg.n_cells, cfg.n_classes
                )
            )
        return LabeledDataset(config=cfg, images=images, labels=labels)

    def load_mask(self, image_id: str) -> ClassIdMask:
        return ClassIdMask(ids=read_pgm(self.mask_path(image_id).read_bytes()))

    def verify(self) -> list[str]:
        """Check that manifest cross-references resolve and annotations
        validate against the manifest's config. Returns problems found."""
        problems = []
        try:
            manifest = self.load_manifest()
        except (FileNotFoundError, ValueError) as e:
            return [str(e)]
        try:
            cfg = self.load_config(manifest.config)
        except (FileNotFoundError, ConfigError) as e:
            return [f"manifest config: {e}"]
        for item in manifest.items:
            for kind in ("image", "mask", "annotation"):
                rel = getattr(item, kind)
                if rel is None:
                    continue
                path = self.root / rel
                if not path.is_file():
                    problems.append(f"{item.id}: missing {kind} file {rel}")
                    continue
                if kind == "annotation":
                    try:
                        read_annotation(path.read_bytes(), cfg.n_cells, cfg.n_classes)
                    except ValueError as e:
                        problems.append(f"{item.id}: {e}")
        return problems


def resolve_config(ref: str, workspace: Workspace | None = None) -> CellConfig:
    """Resolve --config arguments: a file path, a workspace config name, or
    a builtin name, in that order."""
    path = Path(ref)
    if path.is_file():
        return load_config(path.read_bytes())
    if workspace is not None:
        try:
            return workspace.load_config(ref)
        except FileNotFoundError:
            pass
    return load_builtin_config(ref)
