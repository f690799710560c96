"""Bundle directory writer.

Implements the engine's published wire format directly (the format is the
contract between the two packages):

    manifest.json        UTF-8 JSON
    inputs.f32           n_samples x input_dim float32, little-endian, row-major
    features.f32         n_samples x feature_dim float32
    text_embeddings.f32  n_prompts x n_classes x feature_dim float32
    labels.i64           n_samples int64, present iff has_labels
"""

from __future__ import annotations

import json
import os
import shutil
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def write_bundle(out_dir, *, inputs: np.ndarray, features: np.ndarray,
                 text_embeddings: np.ndarray, labels: np.ndarray | None,
                 class_names: list[str], prompt_names: list[str],
                 train_indices, eval_indices) -> Path:
    """Atomically write one bundle directory; returns its path."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float32)
    features = np.ascontiguousarray(features, dtype=np.float32)
    text_embeddings = np.ascontiguousarray(text_embeddings, dtype=np.float32)
    n, m = inputs.shape
    _, d = features.shape
    p, c, d2 = text_embeddings.shape
    if features.shape[0] != n:
        raise ValueError("inputs and features disagree on sample count")
    if d2 != d:
        raise ValueError("text embeddings and features disagree on dimension")
    if len(class_names) != c or len(prompt_names) != p:
        raise ValueError("name lists do not match embedding shapes")

    manifest = {
        "format_version": FORMAT_VERSION,
        "n_samples": n,
        "input_dim": m,
        "feature_dim": d,
        "n_classes": c,
        "n_prompts": p,
        "class_names": list(class_names),
        "prompt_names": list(prompt_names),
        "has_labels": labels is not None,
        "split": {"train": [int(i) for i in train_indices],
                  "eval": [int(i) for i in eval_indices]},
        "seed": 0,  # exported, not synthesized
    }

    target = Path(out_dir)
    tmp = target.parent / f".{target.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        tmp.mkdir(parents=True)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")
        inputs.astype("<f4").tofile(tmp / "inputs.f32")
        features.astype("<f4").tofile(tmp / "features.f32")
        text_embeddings.astype("<f4").tofile(tmp / "text_embeddings.f32")
        if labels is not None:
            np.ascontiguousarray(labels, dtype="<i8").tofile(tmp / "labels.i64")
        if target.exists():
            old = target.parent / f".{target.name}.old-{os.getpid()}"
            if old.exists():
                shutil.rmtree(old)
            target.rename(old)
            tmp.rename(target)
            shutil.rmtree(old)
        else:
            tmp.rename(target)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return target
