"""Exports ViT class tokens for an image folder as divfuse embedding manifests.

    python export.py --model openai/clip-vit-large-patch14 --branch pixel \
        --blocks last --in images/ --labels images/labels.jsonl --out pixel.emb

One manifest is written per selected block. With a single block the output
path is used as given; with several, `<stem>.block<k><suffix>` is written for
each block k. Vectors are stored unnormalized; divfuse normalizes on ingest.
Files that fail to decode are skipped and listed in `<out>.errors.jsonl`.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass
class Row:
    id: str
    label: str
    generator: str
    branch: str
    source_path: str
    vector: np.ndarray


def write_manifest(path: Path, rows: Sequence[Row], note: str) -> None:
    if not rows:
        raise ValueError("refusing to write an empty manifest")
    dim = int(rows[0].vector.shape[0])
    header = {"dimension": dim, "count": len(rows), "dtype": "f32", "source_note": note}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        for r in rows:
            v = np.asarray(r.vector, dtype="<f4")
            if v.shape != (dim,):
                raise ValueError(f"{r.id}: expected {dim} values, got {v.shape}")
            f.write(v.tobytes())
    with open(str(path) + ".meta.jsonl", "w") as f:
        for r in rows:
            meta = {k: getattr(r, k) for k in ("id", "label", "generator", "branch", "source_path")}
            f.write(json.dumps(meta) + "\n")


def read_labels(path: Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def parse_blocks(spec: str, depth: int) -> list[int]:
    if spec == "last":
        return [depth - 1]
    if spec == "all":
        return list(range(depth))
    blocks = [int(b) for b in spec.split(",")]
    bad = [b for b in blocks if not 0 <= b < depth]
    if bad:
        raise SystemExit(f"blocks {bad} outside encoder depth {depth}")
    return blocks


def block_paths(out: Path, blocks: Sequence[int]) -> list[Path]:
    if len(blocks) == 1:
        return [out]
    return [out.with_name(f"{out.stem}.block{b}{out.suffix}") for b in blocks]


def load_image(path: Path):
    from PIL import Image

    img = Image.open(path)
    if img.mode in ("I;16", "I;16B", "I"):
        # 16-bit spectrum images: rescale to 8 bits before RGB conversion.
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        img = Image.fromarray((arr * 255.0).round().astype(np.uint8))
    return img.convert("RGB")


class Encoder:
    def __init__(self, name: str, device: str):
        import torch
        from transformers import AutoImageProcessor, AutoModel

        self.torch = torch
        self.device = device
        self.processor = AutoImageProcessor.from_pretrained(name)
        model = AutoModel.from_pretrained(name)
        self.model = getattr(model, "vision_model", model).to(device).eval()
        self.depth = self.model.config.num_hidden_layers

    def class_tokens(self, images: list, blocks: Sequence[int]) -> list[np.ndarray]:
        with self.torch.inference_mode():
            batch = self.processor(images=images, return_tensors="pt").to(self.device)
            out = self.model(**batch, output_hidden_states=True)
            # hidden_states[0] is the patch embedding; block k is index k + 1.
            return [out.hidden_states[b + 1][:, 0, :].float().cpu().numpy() for b in blocks]


def batched(items: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(items), size):
        yield items[i : i + size]


def export(args: argparse.Namespace) -> int:
    labels = read_labels(args.labels)
    root = args.labels.parent
    encoder = Encoder(args.model, args.device)
    blocks = parse_blocks(args.blocks, encoder.depth)
    rows: list[list[Row]] = [[] for _ in blocks]
    errors = []
    for chunk in batched(labels, args.batch_size):
        images, ok = [], []
        for entry in chunk:
            path = args.input / entry["file"]
            try:
                images.append(load_image(path))
                ok.append(entry)
            except Exception as e:  # noqa: BLE001 - any decode failure is a skip
                errors.append({"id": entry["id"], "file": str(path), "error": str(e)})
        if not ok:
            continue
        per_block = encoder.class_tokens(images, blocks)
        for slot, tokens in enumerate(per_block):
            for entry, vec in zip(ok, tokens):
                rows[slot].append(
                    Row(entry["id"], entry["label"], entry.get("generator", ""), args.branch,
                        str((root / entry["file"]).as_posix()), vec)
                )
    for block, path, block_rows in zip(blocks, block_paths(args.out, blocks), rows):
        write_manifest(path, block_rows, f"{args.model} block {block} ({args.branch})")
    if errors:
        with open(str(args.out) + ".errors.jsonl", "w") as f:
            for e in errors:
                f.write(json.dumps(e) + "\n")
    print(f"exported {len(rows[0])} images, skipped {len(errors)}", file=sys.stderr)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="export", description=__doc__.split("\n")[0])
    p.add_argument("--model", required=True, help="pretrained encoder name or local path")
    p.add_argument("--branch", required=True, choices=["pixel", "spectrum"])
    p.add_argument("--blocks", default="last", help="'last', 'all' or comma-separated block indices")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--labels", type=Path, help="defaults to <in>/labels.jsonl")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    args = p.parse_args(argv)
    if args.labels is None:
        args.labels = args.input / "labels.jsonl"
    return export(args)


if __name__ == "__main__":
    sys.exit(main())
