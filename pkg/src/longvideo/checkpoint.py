"""Checkpoint archives.

A checkpoint is a zip file with two members:

* ``manifest.json``: format tag, version, model kind, every config needed to
  rebuild the networks (including the filter-bank spec, never its kernels)
  and free-form metadata such as the training step and best FVD.
* ``weights.pt``: a ``torch.save`` dict of state dicts (generator, EMA
  generator, discriminator, optimizers, RNG states).

Low-res and super-res models live in separate archives.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import torch

FORMAT = "longvideo-checkpoint"
VERSION = 1
KINDS = ("lowres", "superres")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, kind: str, configs: dict, weights: dict, meta: dict | None = None):
    """Write an archive atomically (temp file + rename)."""
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"format": FORMAT, "version": VERSION, "kind": kind, "configs": configs, "meta": meta or {}}
    buf = io.BytesIO()
    torch.save(weights, buf)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as z:
        z.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        z.writestr("weights.pt", buf.getvalue())
    os.replace(tmp, path)


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as z:
            manifest = json.loads(z.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError) as e:
        raise CheckpointError(f"{path} is not a checkpoint archive: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint archive")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path} has checkpoint version {manifest.get('version')}, expected {VERSION}")
    return manifest


def load_checkpoint(path, kind: str | None = None) -> tuple[dict, dict]:
    """``(manifest, weights)``; checks the format, version and kind."""
    manifest = read_manifest(path)
    if kind is not None and manifest["kind"] != kind:
        raise CheckpointError(f"{path} holds a {manifest['kind']} model, expected {kind}")
    with zipfile.ZipFile(path) as z:
        weights = torch.load(io.BytesIO(z.read("weights.pt")), map_location="cpu", weights_only=False)
    return manifest, weights
