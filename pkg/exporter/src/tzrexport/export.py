"""Run a vision model over a dataset and dump per-layer activations.

For every sample this writes one TZR tensor per tap point plus the logits,
and a JSON feature manifest tying them together, in the exact on-disk
formats the gating engine consumes:

- TZR: ``b"TZR1"``, rank as uint32 LE, extents as uint32 LE, then the
  row-major float32 LE payload. No padding, no footer.
- manifest: a JSON array of ``{sample_id, label, stage_paths,
  logits_path}`` records with paths relative to the manifest's directory.

Everything is cast to float32 on export regardless of model precision,
and files are written atomically (temp file, then rename) so a crashed
export never leaves a truncated tensor behind.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader
from torchvision import datasets, models, transforms

TZR_MAGIC = b"TZR1"


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportSpec:
    """What to run and where to tap it.

    ``model``: ``torchvision:<name>`` (e.g. ``torchvision:resnet18``),
    optionally with a weights tag (``torchvision:resnet18:IMAGENET1K_V1``).
    ``dataset``: ``fake:<n>:<classes>[:<C>x<H>x<W>]`` for synthetic data,
    ``cifar10:<root>`` / ``cifar100:<root>`` for locally present CIFAR,
    or ``folder:<root>`` for an image folder tree.
    ``taps``: named modules whose outputs become the per-stage tensors,
    shallowest first.
    """

    model: str
    dataset: str
    taps: tuple
    out_dir: str
    batch_size: int = 32
    device: str = "cpu"
    checkpoint: str | None = None  # optional state-dict path
    seed: int = 0
    limit: int | None = None  # cap on exported samples
    prefix: str = "sample"
    extra_transforms: tuple = field(default=(), repr=False)


def write_tzr(array, path) -> None:
    """Serialize a float32 array in the TZR byte layout, atomically."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 4:
        raise ExportError(f"tensor rank must be 1..4, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ExportError("refusing to export non-finite activations")
    path = Path(path)
    blob = (
        TZR_MAGIC
        + struct.pack("<I", arr.ndim)
        + struct.pack(f"<{arr.ndim}I", *arr.shape)
        + arr.tobytes(order="C")
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_model(spec: ExportSpec) -> torch.nn.Module:
    kind, _, rest = spec.model.partition(":")
    if kind != "torchvision" or not rest:
        raise ExportError(f"unsupported model identifier {spec.model!r}; expected torchvision:<name>")
    name, _, weights_tag = rest.partition(":")
    if not hasattr(models, name):
        raise ExportError(f"torchvision has no model named {name!r}")
    builder = getattr(models, name)
    if not weights_tag and not spec.checkpoint:
        # random init: pin the stream so the exported weights are a pure
        # function of the spec
        torch.manual_seed(spec.seed)
    model = builder(weights=weights_tag or None)
    if spec.checkpoint:
        state = torch.load(spec.checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model.to(spec.device)


def load_dataset(spec: ExportSpec):
    kind, _, rest = spec.dataset.partition(":")
    to_tensor = transforms.Compose([transforms.ToTensor(), *spec.extra_transforms])
    if kind == "fake":
        parts = rest.split(":")
        if len(parts) < 2:
            raise ExportError("fake dataset needs fake:<n>:<classes>[:<C>x<H>x<W>]")
        n, classes = int(parts[0]), int(parts[1])
        size = (3, 32, 32)
        if len(parts) > 2:
            size = tuple(int(x) for x in parts[2].lower().split("x"))
        return datasets.FakeData(
            size=n,
            image_size=size,
            num_classes=classes,
            transform=to_tensor,
            random_offset=spec.seed,
        )
    if kind in ("cifar10", "cifar100"):
        cls = datasets.CIFAR10 if kind == "cifar10" else datasets.CIFAR100
        return cls(root=rest or ".", train=False, download=False, transform=to_tensor)
    if kind == "folder":
        return datasets.ImageFolder(rest, transform=to_tensor)
    raise ExportError(f"unsupported dataset identifier {spec.dataset!r}")


def resolve_taps(model: torch.nn.Module, taps) -> dict:
    named = dict(model.named_modules())
    missing = [t for t in taps if t not in named]
    if missing:
        available = ", ".join(sorted(n for n in named if n))
        raise ExportError(
            f"tap points {missing} not found in the model graph; available: {available}"
        )
    return {t: named[t] for t in taps}


def export_features(spec: ExportSpec) -> Path:
    """Export per-tap activations and logits; returns the manifest path.

    Deterministic given fixed weights and dataset: the loader keeps dataset
    order, runs single-process, and every tensor is cast to float32.
    """
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(spec)
    dataset = load_dataset(spec)
    modules = resolve_taps(model, spec.taps)

    captured = {}
    hooks = [
        module.register_forward_hook(
            lambda _m, _i, out, name=name: captured.__setitem__(name, out.detach())
        )
        for name, module in modules.items()
    ]

    loader = DataLoader(dataset, batch_size=spec.batch_size, shuffle=False, num_workers=0)
    records = []
    exported = 0
    try:
        with torch.no_grad():
            for images, labels in loader:
                logits = model(images.to(spec.device))
                for j in range(images.shape[0]):
                    if spec.limit is not None and exported >= spec.limit:
                        break
                    sid = f"{spec.prefix}_{exported:05d}"
                    stage_paths = []
                    for name in spec.taps:
                        fname = f"{sid}_{name.replace('.', '-')}.tzr"
                        write_tzr(captured[name][j].cpu().numpy(), out_dir / fname)
                        stage_paths.append(fname)
                    logits_name = f"{sid}_logits.tzr"
                    write_tzr(logits[j].cpu().numpy(), out_dir / logits_name)
                    records.append(
                        {
                            "sample_id": sid,
                            "label": int(labels[j]),
                            "stage_paths": stage_paths,
                            "logits_path": logits_name,
                        }
                    )
                    exported += 1
                if spec.limit is not None and exported >= spec.limit:
                    break
    finally:
        for h in hooks:
            h.remove()

    manifest_path = out_dir / "manifest.json"
    tmp = manifest_path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(records, indent=1) + "\n")
    os.replace(tmp, manifest_path)
    return manifest_path
