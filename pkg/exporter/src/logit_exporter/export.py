"""Export classifier logits from an image folder to the NPY interchange format.

Bridges real checkpoints to the scoring engine: runs a user-supplied
pretrained model over a dataset directory in eval mode, no gradients, no
shuffling, and writes

* ``<prefix>_logits.npy``  float32, shape (N, C), little-endian NPY v1.0
* ``<prefix>_labels.npy``  int64, length N (labeled datasets only)
* ``<prefix>_fragment.json``  a manifest fragment to splice into a split
  manifest, recording the split name, role, file paths, and the eval
  transform that produced the logits

Dataset layout follows the usual image-folder convention: a directory of
class subdirectories is a labeled set (classes sorted by name), a flat
directory of images is an unlabeled OOD set. Row i of the output is the
i-th image in sorted path order.

The exporter applies no preprocessing beyond the documented eval
transform: resize to a square, scale to [0, 1], optionally normalize with
per-channel mean/std. The transform description lands in the fragment for
provenance.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class ExportError(Exception):
    """Checkpoint, dataset, or shape problems surfaced with exit code 2."""


@dataclass(frozen=True)
class ExportJob:
    checkpoint: Path
    data_dir: Path
    out_prefix: str
    split: str = "export"
    batch_size: int = 32
    device: str = "cpu"
    image_size: int = 32
    expected_classes: int | None = None
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    def transform_description(self) -> str:
        desc = f"resize({self.image_size}x{self.image_size}), scale to [0,1]"
        if self.mean is not None:
            desc += f", normalize(mean={list(self.mean)}, std={list(self.std)})"
        return desc


def load_model(path: Path, device: str) -> torch.nn.Module:
    if not path.exists():
        raise ExportError(f"checkpoint {path} does not exist")
    try:
        model = torch.jit.load(str(path), map_location=device)
    except Exception:
        try:
            model = torch.load(path, map_location=device, weights_only=False)
        except Exception as exc:
            raise ExportError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(model, torch.nn.Module):
        raise ExportError(
            f"checkpoint {path} does not contain a module (got {type(model).__name__})"
        )
    model.eval()
    return model


def discover_images(data_dir: Path) -> tuple[list[Path], np.ndarray | None, list[str]]:
    """Return image paths in deterministic order plus labels if class dirs exist."""
    if not data_dir.is_dir():
        raise ExportError(f"dataset directory {data_dir} does not exist")
    class_dirs = sorted(p for p in data_dir.iterdir() if p.is_dir())
    if class_dirs:
        paths, labels = [], []
        for idx, sub in enumerate(class_dirs):
            found = sorted(
                p for p in sub.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
            )
            paths.extend(found)
            labels.extend([idx] * len(found))
        if not paths:
            raise ExportError(f"no images found under {data_dir}")
        return paths, np.asarray(labels, dtype=np.int64), [d.name for d in class_dirs]
    paths = sorted(p for p in data_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not paths:
        raise ExportError(f"no images found under {data_dir}")
    return paths, None, []


def _load_batch(paths: list[Path], job: ExportJob) -> torch.Tensor:
    arrays = []
    for path in paths:
        with Image.open(path) as img:
            img = img.convert("RGB").resize(
                (job.image_size, job.image_size), Image.BILINEAR
            )
        arr = np.asarray(img, dtype=np.float32) / 255.0
        arrays.append(arr.transpose(2, 0, 1))
    batch = torch.from_numpy(np.stack(arrays))
    if job.mean is not None:
        mean = torch.tensor(job.mean, dtype=torch.float32).view(1, -1, 1, 1)
        std = torch.tensor(job.std, dtype=torch.float32).view(1, -1, 1, 1)
        batch = (batch - mean) / std
    return batch


def export(job: ExportJob) -> dict:
    """Run the model over the dataset and write logits, labels, and fragment.

    Returns the manifest fragment that was written.
    """
    model = load_model(job.checkpoint, job.device)
    paths, labels, class_names = discover_images(job.data_dir)

    chunks = []
    with torch.no_grad():
        for start in range(0, len(paths), job.batch_size):
            batch = _load_batch(paths[start : start + job.batch_size], job).to(job.device)
            out = model(batch)
            if out.ndim != 2:
                raise ExportError(
                    f"model output must be (batch, classes), got shape {tuple(out.shape)}"
                )
            chunks.append(out.to("cpu", torch.float32).numpy())
    logits = np.concatenate(chunks, axis=0)

    if job.expected_classes is not None and logits.shape[1] != job.expected_classes:
        raise ExportError(
            f"checkpoint head width {logits.shape[1]} != expected {job.expected_classes}"
        )

    logits_path = Path(f"{job.out_prefix}_logits.npy")
    np.save(logits_path, np.ascontiguousarray(logits.astype("<f4")))

    labels_path = None
    if labels is not None:
        labels_path = Path(f"{job.out_prefix}_labels.npy")
        np.save(labels_path, labels.astype("<i8"))

    fragment = {
        "name": job.split,
        "role": "id" if labels is not None else "ood",
        "num_samples": int(logits.shape[0]),
        "num_classes": int(logits.shape[1]),
        "transform": job.transform_description(),
        "entry": (
            {"logits": logits_path.name, "labels": labels_path.name}
            if labels_path is not None
            else {"name": job.split, "path": logits_path.name, "group": "near"}
        ),
    }
    if class_names:
        fragment["class_names"] = class_names
    fragment_path = Path(f"{job.out_prefix}_fragment.json")
    fragment_path.write_text(json.dumps(fragment, indent=2, sort_keys=True) + "\n")
    return fragment


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="logit-export",
        description="Export classifier logits from an image folder as NPY",
    )
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--data", required=True, help="image folder (class subdirs = labeled)")
    parser.add_argument("--out-prefix", required=True)
    parser.add_argument("--split", default="export", help="split name for the fragment")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--expected-classes", type=int, default=None)
    parser.add_argument("--mean", type=float, nargs="+", default=None)
    parser.add_argument("--std", type=float, nargs="+", default=None)
    args = parser.parse_args(argv)
    if (args.mean is None) != (args.std is None):
        parser.error("--mean and --std must be given together")
    job = ExportJob(
        checkpoint=Path(args.checkpoint),
        data_dir=Path(args.data),
        out_prefix=args.out_prefix,
        split=args.split,
        batch_size=args.batch_size,
        device=args.device,
        image_size=args.image_size,
        expected_classes=args.expected_classes,
        mean=tuple(args.mean) if args.mean else None,
        std=tuple(args.std) if args.std else None,
    )
    try:
        fragment = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"exported {fragment['num_samples']} samples x {fragment['num_classes']} "
        f"classes to {job.out_prefix}_logits.npy"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
