"""Paired-dataset ingestion, normalization, checkpoint persistence, and
comparison-grid export.

Dataset layout: ``root/{sar,opt,cloudy,mask}/<id>.png`` with ``sar`` and
``mask`` single-channel and the others RGB; pairing is by filename stem.
Checkpoints are a JSON manifest plus one raw little-endian float32 blob per
tensor, written atomically (temp dir then rename).
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import models
from .clouds import CloudMask
from .errors import CheckpointError, ConfigurationError, DataError
from .nn import Module

CHECKPOINT_FORMAT_VERSION = 1
GRID_SEPARATOR_PX = 2
GRID_LABEL_STRIP_PX = 14


def normalize(u8_image: np.ndarray) -> np.ndarray:
    """8-bit values to [-1, 1] float32 via x / 127.5 - 1."""
    return (np.asarray(u8_image, dtype=np.float32) / 127.5) - 1.0


def denormalize(t: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1], invert the normalization, and round to uint8."""
    clamped = np.clip(t, -1.0, 1.0)
    return np.clip(np.rint((clamped + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.asarray(img)


def write_image(path: str | Path, u8: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if u8.ndim == 2:
        Image.fromarray(u8).save(path)
    else:
        Image.fromarray(u8).save(path)


def image_to_tensor(u8: np.ndarray) -> np.ndarray:
    """HxW or HxWx3 uint8 to normalized (C, H, W) float32."""
    if u8.ndim == 2:
        return normalize(u8)[None, :, :]
    return np.ascontiguousarray(normalize(u8).transpose(2, 0, 1))


def tensor_to_image(t: np.ndarray) -> np.ndarray:
    """(C, H, W) model-range tensor to uint8 HxW (C=1) or HxWx3."""
    u8 = denormalize(t)
    if t.shape[0] == 1:
        return u8[0]
    return np.ascontiguousarray(u8.transpose(1, 2, 0))


@dataclass
class SamplePair:
    """Co-registered patch bundle; tensors are normalized (C, H, W)."""
    id: str
    sar: np.ndarray
    optical: np.ndarray
    cloudy: np.ndarray | None = None
    mask: CloudMask | None = None


def _stems(directory: Path) -> set[str]:
    if not directory.is_dir():
        return set()
    return {p.stem for p in directory.glob("*.png")}


def load_dataset(root: str | Path, split_seed: int, split: str,
                 train_fraction: float = 0.8) -> list[SamplePair]:
    """Deterministically split, ordered samples paired by filename stem.

    Requires ``sar`` and ``opt`` subdirectories; loads ``cloudy``/``mask``
    when present.  Orphan files across any populated subdirectory are
    reported together in one error.
    """
    if split not in ("train", "test"):
        raise ConfigurationError(f"split must be train or test, got {split!r}")
    root = Path(root)
    sar_dir, opt_dir = root / "sar", root / "opt"
    cloudy_dir, mask_dir = root / "cloudy", root / "mask"

    sar_stems = _stems(sar_dir)
    opt_stems = _stems(opt_dir)
    orphans = []
    orphans += [f"sar/{s}" for s in sorted(sar_stems - opt_stems)]
    orphans += [f"opt/{s}" for s in sorted(opt_stems - sar_stems)]
    stems = sar_stems & opt_stems
    for extra_dir in (cloudy_dir, mask_dir):
        extra = _stems(extra_dir)
        if extra:
            orphans += [f"{extra_dir.name}/{s}" for s in sorted(extra - stems)]
            orphans += [f"{extra_dir.name} missing {s}"
                        for s in sorted(stems - extra)]
    if orphans:
        raise DataError("unpaired dataset files: " + ", ".join(orphans))

    ordered = sorted(stems)
    if not ordered:
        return []
    perm = np.random.default_rng(split_seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train = round(train_fraction * len(shuffled))
    chosen = shuffled[:n_train] if split == "train" else shuffled[n_train:]

    samples = []
    for stem in chosen:
        sar = image_to_tensor(read_image(sar_dir / f"{stem}.png"))
        optical = image_to_tensor(read_image(opt_dir / f"{stem}.png"))
        if sar.shape[0] != 1:
            raise DataError(f"sar/{stem}.png must be single-channel")
        if optical.shape[0] != 3:
            raise DataError(f"opt/{stem}.png must be RGB")
        cloudy = mask = None
        if (cloudy_dir / f"{stem}.png").exists():
            cloudy = image_to_tensor(read_image(cloudy_dir / f"{stem}.png"))
        if (mask_dir / f"{stem}.png").exists():
            alpha_u8 = read_image(mask_dir / f"{stem}.png")
            if alpha_u8.ndim != 2:
                raise DataError(f"mask/{stem}.png must be single-channel")
            mask = CloudMask(alpha_u8.astype(np.float64) / 255.0, seed=-1)
        shapes = {t.shape[-2:] for t in (sar, optical, cloudy) if t is not None}
        if mask is not None:
            shapes.add(mask.alpha.shape)
        if len(shapes) != 1:
            raise DataError(f"pair {stem!r} has mismatched sizes: {shapes}")
        samples.append(SamplePair(id=stem, sar=sar, optical=optical,
                                  cloudy=cloudy, mask=mask))
    return samples


def _tensor_path(tensors_dir: Path, name: str) -> Path:
    return tensors_dir / f"{name}.f32"


def save_checkpoint(net: Module, meta: dict, ckpt_dir: str | Path, *,
                    aux_tensors: dict[str, np.ndarray] | None = None) -> Path:
    """Write manifest + per-tensor f32 blobs; atomic via temp dir + rename.

    ``aux_tensors`` (optimizer moments, companion nets) are stored under an
    ``aux.`` prefix alongside the network's own state.
    """
    ckpt_dir = Path(ckpt_dir)
    spec = getattr(net, "spec", None)
    if isinstance(spec, models.GeneratorSpec):
        arch = models.generator_spec_to_dict(spec)
    elif isinstance(spec, models.DiscriminatorSpec):
        arch = models.discriminator_spec_to_dict(spec)
    else:
        raise CheckpointError(f"network {type(net).__name__} carries no spec")

    named = {f"net.{k}": v for k, v in net.named_state().items()}
    for k, v in (aux_tensors or {}).items():
        named[f"aux.{k}"] = v

    table = {name: {"shape": list(arr.shape), "dtype": "f32"}
             for name, arr in named.items()}
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION, "meta": meta,
                "arch": arch, "tensors": table}

    parent = ckpt_dir.parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=ckpt_dir.name + ".tmp-", dir=parent))
    try:
        (tmp / "tensors").mkdir()
        for name, arr in named.items():
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            _tensor_path(tmp / "tensors", name).write_bytes(blob)
        (tmp / "manifest.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True))
        if ckpt_dir.exists():
            shutil.rmtree(ckpt_dir)
        os.rename(tmp, ckpt_dir)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return ckpt_dir


def _canonical(d: dict) -> dict:
    """JSON-normalized form (tuples become lists) for arch comparison."""
    return json.loads(json.dumps(d, sort_keys=True))


def read_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / "manifest.json"
    if not path.exists():
        raise CheckpointError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {version!r} at {ckpt_dir}")
    return manifest


def _read_blob(tensors_dir: Path, name: str, shape: list[int]) -> np.ndarray:
    path = _tensor_path(tensors_dir, name)
    if not path.exists():
        raise CheckpointError(f"missing tensor blob for {name!r}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise CheckpointError(
            f"tensor {name!r} is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def load_checkpoint(ckpt_dir: str | Path, *,
                    expected_arch: dict | None = None,
                    ) -> tuple[Module, dict, dict[str, np.ndarray]]:
    """Rebuild the network from the manifest and load all blobs.

    Architecture compatibility is validated before any blob is read.
    Returns (network, meta, aux_tensors).
    """
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    arch = manifest["arch"]
    if expected_arch is not None and _canonical(expected_arch) != _canonical(arch):
        raise CheckpointError(
            f"checkpoint {ckpt_dir} holds arch {arch}, expected {expected_arch}")

    spec = models.spec_from_dict(arch)
    rng = np.random.default_rng(0)  # init values are fully overwritten
    if isinstance(spec, models.GeneratorSpec):
        net: Module = models.build_generator(spec, rng)
    else:
        net = models.build_discriminator(spec, rng)

    tensors_dir = ckpt_dir / "tensors"
    table = manifest["tensors"]
    state = {}
    aux = {}
    for name, info in table.items():
        arr = _read_blob(tensors_dir, name, info["shape"])
        if name.startswith("net."):
            state[name[len("net."):]] = arr
        else:
            aux[name[len("aux."):]] = arr
    try:
        net.load_state(state)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing tensor {exc}") from exc
    return net, manifest["meta"], aux


def export_grid(rows, path: str | Path, labels: list[str] | None = None) -> Path:
    """Tile model-range (C, H, W) tensors row-major with 2-px separators.

    Single-channel tiles are replicated to gray RGB.  With ``labels`` given,
    a text strip is added above each column.
    """
    if not rows or not rows[0]:
        raise ConfigurationError("export_grid needs at least one tensor")
    sizes = {t.shape[-2:] for row in rows for t in row}
    if len(sizes) != 1:
        raise ConfigurationError(f"grid tiles have mixed sizes: {sizes}")
    h, w = next(iter(sizes))
    n_cols = max(len(row) for row in rows)
    n_rows = len(rows)
    sep = GRID_SEPARATOR_PX
    strip = GRID_LABEL_STRIP_PX if labels else 0
    canvas = np.full((strip + n_rows * h + (n_rows - 1) * sep,
                      n_cols * w + (n_cols - 1) * sep, 3), 255, np.uint8)
    for i, row in enumerate(rows):
        for j, t in enumerate(row):
            tile = denormalize(t)
            if tile.shape[0] == 1:
                tile = np.repeat(tile, 3, axis=0)
            top = strip + i * (h + sep)
            left = j * (w + sep)
            canvas[top:top + h, left:left + w] = tile.transpose(1, 2, 0)
    img = Image.fromarray(canvas)
    if labels:
        draw = ImageDraw.Draw(img)
        for j, label in enumerate(labels[:n_cols]):
            draw.text((j * (w + sep) + 2, 1), label, fill=(0, 0, 0))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return path
