"""Residual corpus construction and its on-disk form.

A dataset is built from a folder of 8-bit images: each image is tiled,
intra-predicted, and the best-mode residual blocks are pooled, shuffled with
a seeded permutation, and split into train/eval partitions.  The store is a
flat little-endian int16 dump per partition plus a JSON manifest recording
the source image hashes, build parameters, prediction-mode histogram, and a
content hash over all of it, so any downstream artifact can name exactly
which corpus it came from.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import intra

BLOCK_MAGIC = b"RDLB"
BLOCK_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class BlockDataset:
    """Shuffled residual blocks split for training and held-out evaluation."""

    n: int
    train: np.ndarray  # (count, n^2) int16
    eval: np.ndarray
    mode_histogram: np.ndarray  # (35,) int64, over all blocks
    sources: list = field(default_factory=list)  # [(relative path, sha256), ...]
    seed: int = 0
    split: float = 0.85

    def content_hash(self) -> str:
        return manifest_hash(self.manifest())

    def manifest(self) -> dict:
        return {
            "format": "rdlt-dataset",
            "version": BLOCK_VERSION,
            "n": self.n,
            "seed": self.seed,
            "split": self.split,
            "counts": {"train": int(self.train.shape[0]), "eval": int(self.eval.shape[0])},
            "mode_histogram": [int(v) for v in self.mode_histogram],
            "sources": [{"path": p, "sha256": h} for p, h in self.sources],
        }


def manifest_hash(manifest: dict) -> str:
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_pgm(image: np.ndarray, path: str, comment: str | None = None) -> None:
    """Write a binary (P5) 8-bit PGM, optionally with a header comment."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        if comment:
            if "\n" in comment:
                raise ValueError("PGM comments must be a single line")
            fh.write(b"# " + comment.encode("utf-8") + b"\n")
        fh.write(b"%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def load_image(path: str) -> np.ndarray:
    """Load an image as 8-bit grayscale.

    Color inputs are converted with BT.601 weights, round(0.299 R + 0.587 G
    + 0.114 B), which keeps the conversion exactly reproducible across
    library versions.  Higher bit depths are rejected rather than silently
    rescaled.
    """
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            arr = np.asarray(img)
    except OSError as exc:
        raise OSError(f"{path}: cannot read image ({exc})") from exc
    if mode == "L":
        return arr.astype(np.uint8)
    if mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64)
        gray = np.rint(rgb @ np.array([0.299, 0.587, 0.114]))
        return np.clip(gray, 0, 255).astype(np.uint8)
    if mode == "P":
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB")).astype(np.float64)
        gray = np.rint(rgb @ np.array([0.299, 0.587, 0.114]))
        return np.clip(gray, 0, 255).astype(np.uint8)
    raise ValueError(f"{path}: unsupported image mode {mode!r}; expected 8-bit grayscale or RGB")


def build_dataset(image_paths: list[str], n: int, split: float = 0.85, seed: int = 0) -> BlockDataset:
    """Extract, shuffle and split residual blocks from a list of images.

    Images contribute blocks in the given path order; the pooled blocks are
    then permuted by a generator seeded with ``seed`` and split so the first
    floor(total * split) blocks train and the remainder evaluate.  The build
    is bit-reproducible from (paths, n, split, seed).
    """
    if not image_paths:
        raise ValueError("no input images given")
    if not 0.0 < split < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {split}")
    pieces = []
    histogram = np.zeros(intra.NUM_MODES, dtype=np.int64)
    sources = []
    for path in image_paths:
        img = load_image(path)
        residuals, modes = intra.best_mode_residuals(img, n)
        if residuals.shape[0]:
            pieces.append(residuals)
            histogram += np.bincount(modes, minlength=intra.NUM_MODES)
        sources.append((os.path.basename(path), file_sha256(path)))
    if not pieces:
        raise ValueError(f"no {n}x{n} blocks could be extracted from the given images")
    blocks = np.concatenate(pieces, axis=0)
    rng = np.random.default_rng(seed)
    order = rng.permutation(blocks.shape[0])
    blocks = blocks[order]
    cut = math.floor(blocks.shape[0] * split)
    if cut == 0 or cut == blocks.shape[0]:
        raise ValueError(
            f"split {split} leaves an empty partition for {blocks.shape[0]} blocks"
        )
    return BlockDataset(
        n=n,
        train=np.ascontiguousarray(blocks[:cut]),
        eval=np.ascontiguousarray(blocks[cut:]),
        mode_histogram=histogram,
        sources=sources,
        seed=seed,
        split=split,
    )


def save_blocks(blocks: np.ndarray, path: str) -> None:
    """Write one partition: magic, version u16, n u16, count u32, int16 LE data."""
    arr = np.asarray(blocks)
    n = math.isqrt(arr.shape[1])
    if n * n != arr.shape[1]:
        raise ValueError(f"block rows of length {arr.shape[1]} are not square tiles")
    if arr.size and (arr.min() < -(1 << 15) or arr.max() >= (1 << 15)):
        raise ValueError("block values outside int16")
    header = BLOCK_MAGIC + struct.pack("<HHI", BLOCK_VERSION, n, arr.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<i2").tobytes())


def load_blocks(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BLOCK_MAGIC:
        raise ValueError(f"{path}: not a block store (bad magic {raw[:4]!r})")
    try:
        version, n, count = struct.unpack_from("<HHI", raw, 4)
    except struct.error as exc:
        raise ValueError(f"{path}: truncated block store header") from exc
    if version != BLOCK_VERSION:
        raise ValueError(f"{path}: unsupported block store version {version}")
    expected = 12 + 2 * count * n * n
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {count} blocks, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<i2", offset=12)
    return data.reshape(count, n * n).astype(np.int16)


def save_dataset(ds: BlockDataset, outdir: str, extra_manifest: dict | None = None) -> str:
    """Write train/eval stores plus manifest; returns the content hash.

    extra_manifest entries (provenance and the like) are merged in after the
    content hash is computed, so the hash depends only on the dataset itself.
    """
    os.makedirs(outdir, exist_ok=True)
    save_blocks(ds.train, os.path.join(outdir, "train.rdlb"))
    save_blocks(ds.eval, os.path.join(outdir, "eval.rdlb"))
    manifest = ds.manifest()
    manifest["stores"] = {
        "train": {"file": "train.rdlb", "sha256": file_sha256(os.path.join(outdir, "train.rdlb"))},
        "eval": {"file": "eval.rdlb", "sha256": file_sha256(os.path.join(outdir, "eval.rdlb"))},
    }
    manifest["content_hash"] = manifest_hash(manifest)
    if extra_manifest:
        overlap = set(extra_manifest) & set(manifest)
        if overlap:
            raise ValueError(f"extra manifest entries would shadow {sorted(overlap)}")
        manifest.update(extra_manifest)
    with open(os.path.join(outdir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest["content_hash"]


def load_dataset(directory: str) -> tuple[BlockDataset, dict]:
    """Read a saved dataset; verifies store hashes against the manifest."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise OSError(f"{directory}: no dataset manifest found") from exc
    if manifest.get("format") != "rdlt-dataset":
        raise ValueError(f"{manifest_path}: not a dataset manifest")
    for part in ("train", "eval"):
        entry = manifest["stores"][part]
        store_path = os.path.join(directory, entry["file"])
        actual = file_sha256(store_path)
        if actual != entry["sha256"]:
            raise ValueError(
                f"{store_path}: store hash {actual} does not match manifest {entry['sha256']}"
            )
    train = load_blocks(os.path.join(directory, manifest["stores"]["train"]["file"]))
    eval_blocks = load_blocks(os.path.join(directory, manifest["stores"]["eval"]["file"]))
    ds = BlockDataset(
        n=manifest["n"],
        train=train,
        eval=eval_blocks,
        mode_histogram=np.asarray(manifest["mode_histogram"], dtype=np.int64),
        sources=[(s["path"], s["sha256"]) for s in manifest["sources"]],
        seed=manifest["seed"],
        split=manifest["split"],
    )
    return ds, manifest
