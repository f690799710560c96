"""Bundle verification from the files alone.

Recomputes both zero-shot heads (plain averaged-prompt and per-sample
confidence-weighted) with local numpy arithmetic, proving the written
arrays carry everything needed to reproduce the export-time numbers
without the model. Shape and norm violations are reported rather than
raised, so a tampered bundle yields a diagnosis instead of a stack trace.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

UNIT_NORM_TOL = 1e-4
TAU = 100.0


def verify_bundle(bundle_dir) -> dict:
    """Returns a report dict; ``report["ok"]`` is the overall verdict."""
    root = Path(bundle_dir)
    problems: list[str] = []
    report: dict = {"bundle": str(root), "problems": problems, "ok": False}

    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        problems.append("missing manifest.json")
        return report
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    n = int(manifest["n_samples"])
    m = int(manifest["input_dim"])
    d = int(manifest["feature_dim"])
    c = int(manifest["n_classes"])
    p = int(manifest["n_prompts"])
    report["manifest"] = {k: manifest[k] for k in
                          ("n_samples", "input_dim", "feature_dim", "n_classes",
                           "n_prompts", "has_labels")}

    def read(name, dtype, count):
        path = root / name
        if not path.is_file():
            problems.append(f"missing {name}")
            return None
        raw = np.fromfile(path, dtype=dtype)
        if raw.size != count:
            problems.append(f"{name} holds {raw.size} values, manifest implies {count}")
            return None
        return raw

    inputs = read("inputs.f32", "<f4", n * m)
    features = read("features.f32", "<f4", n * d)
    text = read("text_embeddings.f32", "<f4", p * c * d)
    if features is not None:
        features = features.astype(np.float64).reshape(n, d)
        bad = _nonunit_rows(features)
        if bad.size:
            problems.append(
                f"features row {int(bad[0])} norm deviates beyond {UNIT_NORM_TOL} "
                f"({bad.size} rows total)")
    if text is not None:
        text = text.astype(np.float64).reshape(p, c, d)
        for i in range(p):
            bad = _nonunit_rows(text[i])
            if bad.size:
                problems.append(
                    f"text_embeddings[{i}] row {int(bad[0])} norm deviates "
                    f"beyond {UNIT_NORM_TOL}")
    if inputs is not None and not np.all(np.isfinite(inputs)):
        problems.append("inputs contain non-finite values")

    labels = None
    if manifest.get("has_labels"):
        raw = read("labels.i64", "<i8", n)
        if raw is not None:
            labels = raw
            if labels.size and (labels.min() < 0 or labels.max() >= c):
                problems.append(f"labels outside [0, {c})")

    if problems or features is None or text is None:
        return report

    report["zero_shot"] = _zero_shot_report(features, text, labels,
                                            manifest.get("split", {}))
    report["ok"] = not problems
    return report


def _nonunit_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1)
    return np.where(np.abs(norms - 1.0) > UNIT_NORM_TOL)[0]


def _zero_shot_report(features, text, labels, split) -> dict:
    plain_logits = TAU * features @ text.mean(axis=0).T
    weighted_logits = _weighted_head(features, text)
    out: dict = {"heads": ["plain", "weighted"]}
    if labels is None:
        out["note"] = "no labels: accuracy unavailable, report limited to norms/shapes"
        return out
    for name, logits in (("plain", plain_logits), ("weighted", weighted_logits)):
        preds = logits.argmax(axis=1)
        entry = {"overall_accuracy": float(np.mean(preds == labels))}
        for split_name in ("train", "eval"):
            idx = np.asarray(split.get(split_name, []), dtype=np.int64)
            if idx.size:
                entry[f"{split_name}_accuracy"] = float(np.mean(preds[idx] == labels[idx]))
        out[name] = entry
    return out


def _weighted_head(features: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Per-sample confidence weighting: each prompt head's best class score,
    normalized across prompts, weights that head's logits (uniform fallback
    when any best score is nonpositive)."""
    p = text.shape[0]
    stacks = np.stack([TAU * features @ text[i].T for i in range(p)])  # p x n x c
    maxes = stacks.max(axis=2)  # p x n
    usable = np.all(maxes > 0.0, axis=0)
    weights = np.full_like(maxes, 1.0 / p)
    if np.any(usable):
        weights[:, usable] = maxes[:, usable] / maxes[:, usable].sum(axis=0, keepdims=True)
    return np.einsum("pn,pnc->nc", weights, stacks)
