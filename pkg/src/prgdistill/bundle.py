"""The teacher-bundle dataset format.

A bundle directory decouples the engine from any foundation-model
runtime: it holds the raw student inputs, the frozen teacher's image
features, one text-embedding matrix per prompt template, and optional
eval-only labels.

Directory layout (all arrays raw little-endian, row-major, no header):

    manifest.json        UTF-8 JSON, keys as in :class:`Manifest`
    inputs.f32           n_samples x input_dim float32
    features.f32         n_samples x feature_dim float32
    text_embeddings.f32  n_prompts x n_classes x feature_dim float32
    labels.i64           n_samples int64, present iff has_labels

Arrays are stored at 32-bit precision (matching typical exported
embeddings) and upcast to float64 on load so downstream gradient checks
are meaningful. Labels are structurally hidden from training: the
trainer receives a :class:`TrainView` that simply has no label field,
and every label read on the bundle itself goes through a counting
accessor.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleNotFoundError, FormatError, ValidationError

FORMAT_VERSION = 1
UNIT_NORM_TOL = 1e-4

_MANIFEST_KEYS = {
    "format_version", "n_samples", "input_dim", "feature_dim", "n_classes",
    "n_prompts", "class_names", "prompt_names", "has_labels", "split", "seed",
}


@dataclass(frozen=True)
class Manifest:
    format_version: int
    n_samples: int
    input_dim: int
    feature_dim: int
    n_classes: int
    n_prompts: int
    class_names: tuple[str, ...]
    prompt_names: tuple[str, ...]
    has_labels: bool
    split: dict  # {"train": [...], "eval": [...]}
    seed: int

    def __post_init__(self):
        if self.format_version != FORMAT_VERSION:
            raise FormatError(f"unsupported format_version {self.format_version}")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be at least 1")
        for name in ("input_dim", "feature_dim", "n_classes", "n_prompts"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if len(self.class_names) != self.n_classes:
            raise ValidationError(
                f"class_names has {len(self.class_names)} entries, expected {self.n_classes}")
        if len(self.prompt_names) != self.n_prompts:
            raise ValidationError(
                f"prompt_names has {len(self.prompt_names)} entries, expected {self.n_prompts}")
        train = np.asarray(self.split.get("train", []), dtype=np.int64)
        ev = np.asarray(self.split.get("eval", []), dtype=np.int64)
        if set(self.split) != {"train", "eval"}:
            raise ValidationError("split must have exactly the keys 'train' and 'eval'")
        for label, idx in (("train", train), ("eval", ev)):
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_samples):
                raise ValidationError(f"split.{label} indices out of range [0, {self.n_samples})")
            if len(np.unique(idx)) != len(idx):
                raise ValidationError(f"split.{label} contains duplicate indices")
        if np.intersect1d(train, ev).size:
            raise ValidationError("split.train and split.eval overlap")

    @property
    def train_indices(self) -> np.ndarray:
        return np.asarray(self.split["train"], dtype=np.int64)

    @property
    def eval_indices(self) -> np.ndarray:
        return np.asarray(self.split["eval"], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "n_samples": self.n_samples,
            "input_dim": self.input_dim,
            "feature_dim": self.feature_dim,
            "n_classes": self.n_classes,
            "n_prompts": self.n_prompts,
            "class_names": list(self.class_names),
            "prompt_names": list(self.prompt_names),
            "has_labels": self.has_labels,
            "split": {"train": [int(i) for i in self.split["train"]],
                      "eval": [int(i) for i in self.split["eval"]]},
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Manifest":
        if not isinstance(obj, dict):
            raise FormatError("manifest.json must hold a JSON object")
        unknown = set(obj) - _MANIFEST_KEYS
        if unknown:
            raise FormatError(f"manifest.json has unknown keys: {sorted(unknown)}")
        missing = _MANIFEST_KEYS - set(obj)
        if missing:
            raise FormatError(f"manifest.json is missing keys: {sorted(missing)}")
        try:
            return cls(
                format_version=int(obj["format_version"]),
                n_samples=int(obj["n_samples"]),
                input_dim=int(obj["input_dim"]),
                feature_dim=int(obj["feature_dim"]),
                n_classes=int(obj["n_classes"]),
                n_prompts=int(obj["n_prompts"]),
                class_names=tuple(str(s) for s in obj["class_names"]),
                prompt_names=tuple(str(s) for s in obj["prompt_names"]),
                has_labels=bool(obj["has_labels"]),
                split={"train": list(obj["split"]["train"]),
                       "eval": list(obj["split"]["eval"])},
                seed=int(obj["seed"]),
            )
        except (TypeError, KeyError) as exc:
            raise FormatError(f"manifest.json field error: {exc}") from exc


@dataclass(frozen=True)
class TrainView:
    """Everything the training loop may see. There is no label field."""

    manifest: Manifest
    inputs: np.ndarray
    features: np.ndarray
    text_embeddings: tuple[np.ndarray, ...]
    train_indices: np.ndarray
    eval_indices: np.ndarray


@dataclass
class TeacherBundle:
    manifest: Manifest
    inputs: np.ndarray
    features: np.ndarray
    text_embeddings: tuple[np.ndarray, ...]
    _labels: np.ndarray | None = None
    label_reads: int = field(default=0, compare=False)

    def __post_init__(self):
        self.validate()

    # -- label discipline -------------------------------------------------
    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    def labels_for_eval(self, indices=None) -> np.ndarray:
        """Eval-only ground truth. Every call is counted in ``label_reads``."""
        if self._labels is None:
            raise ValidationError("bundle has no labels; accuracy is unavailable")
        self.label_reads += 1
        if indices is None:
            return self._labels.copy()
        return self._labels[np.asarray(indices, dtype=np.int64)]

    def train_view(self) -> TrainView:
        """The label-free projection handed to the trainer."""
        return TrainView(
            manifest=self.manifest,
            inputs=self.inputs,
            features=self.features,
            text_embeddings=self.text_embeddings,
            train_indices=self.manifest.train_indices,
            eval_indices=self.manifest.eval_indices,
        )

    # -- invariants ---------------------------------------------------------
    def validate(self) -> None:
        m = self.manifest
        n, mm, d, c, p = m.n_samples, m.input_dim, m.feature_dim, m.n_classes, m.n_prompts
        if self.inputs.shape != (n, mm):
            raise FormatError(f"inputs have shape {self.inputs.shape}, expected ({n}, {mm})")
        if self.features.shape != (n, d):
            raise FormatError(f"features have shape {self.features.shape}, expected ({n}, {d})")
        if len(self.text_embeddings) != p:
            raise FormatError(f"expected {p} text-embedding matrices, got {len(self.text_embeddings)}")
        for i, t in enumerate(self.text_embeddings):
            if t.shape != (c, d):
                raise FormatError(
                    f"text_embeddings[{i}] has shape {t.shape}, expected ({c}, {d})")
        for name, arr in (("inputs", self.inputs), ("features", self.features)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
        _check_unit_rows(self.features, "features")
        for i, t in enumerate(self.text_embeddings):
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"text_embeddings[{i}] contains non-finite entries")
            _check_unit_rows(t, f"text_embeddings[{i}]")
        if self.has_labels != m.has_labels:
            raise FormatError("labels presence disagrees with manifest.has_labels")
        if self._labels is not None:
            if self._labels.shape != (n,):
                raise FormatError(f"labels have shape {self._labels.shape}, expected ({n},)")
            if self._labels.size and (self._labels.min() < 0 or self._labels.max() >= c):
                raise ValidationError(f"labels must lie in [0, {c})")


def _check_unit_rows(arr: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(arr, axis=1)
    bad = np.where(np.abs(norms - 1.0) > UNIT_NORM_TOL)[0]
    if bad.size:
        raise ValidationError(
            f"{name} row {int(bad[0])} has norm {norms[bad[0]]:.6f}, expected 1 +/- {UNIT_NORM_TOL}")


# -- disk format --------------------------------------------------------------

def _read_array(path: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if not path.is_file():
        raise BundleNotFoundError(f"missing bundle file: {path}")
    raw = np.fromfile(path, dtype=np.dtype(dtype))
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise FormatError(
            f"{path.name} holds {raw.size} values, manifest implies {expected}")
    return raw.reshape(shape)


def load_bundle(path) -> TeacherBundle:
    """Load and fully validate a bundle directory."""
    root = Path(path)
    if not root.is_dir():
        raise BundleNotFoundError(f"bundle directory not found: {root}")
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise BundleNotFoundError(f"missing bundle file: {manifest_path}")
    try:
        manifest = Manifest.from_json(json.loads(manifest_path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest.json is not valid JSON: {exc}") from exc

    n, mm, d, c, p = (manifest.n_samples, manifest.input_dim, manifest.feature_dim,
                      manifest.n_classes, manifest.n_prompts)
    inputs = _read_array(root / "inputs.f32", "<f4", (n, mm)).astype(np.float64)
    features = _read_array(root / "features.f32", "<f4", (n, d)).astype(np.float64)
    text = _read_array(root / "text_embeddings.f32", "<f4", (p, c, d)).astype(np.float64)
    labels = None
    labels_path = root / "labels.i64"
    if manifest.has_labels:
        labels = _read_array(labels_path, "<i8", (n,))
    elif labels_path.exists():
        raise FormatError("labels.i64 present but manifest.has_labels is false")
    return TeacherBundle(
        manifest=manifest,
        inputs=inputs,
        features=features,
        text_embeddings=tuple(text[i] for i in range(p)),
        _labels=labels,
    )


def save_bundle(bundle: TeacherBundle, path) -> None:
    """Write the on-disk layout atomically (temp directory, then rename)."""
    bundle.validate()
    target = Path(path)
    tmp = target.parent / f".{target.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        tmp.mkdir(parents=True)
        (tmp / "manifest.json").write_text(
            json.dumps(bundle.manifest.to_json(), indent=2) + "\n", encoding="utf-8")
        bundle.inputs.astype("<f4").tofile(tmp / "inputs.f32")
        bundle.features.astype("<f4").tofile(tmp / "features.f32")
        np.stack(bundle.text_embeddings).astype("<f4").tofile(tmp / "text_embeddings.f32")
        if bundle.has_labels:
            bundle._labels.astype("<i8").tofile(tmp / "labels.i64")
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


# -- synthetic generator -------------------------------------------------------

def synth_bundle(c: int, p: int, d: int, m: int, n_per_class: int,
                 noise: float, seed: int) -> TeacherBundle:
    """Deterministic class-cluster bundle standing in for a real export.

    Class directions share a common base component (foundation-model image
    embeddings famously occupy a narrow cone, giving high correlation
    between arbitrary samples) plus a random class-specific part; teacher
    features are noisy normalized copies of their class direction, prompt
    embeddings are per-prompt perturbed copies (perturbation scale varies
    across prompts so prompt quality differs), and inputs are a fixed
    random linear mix of the features plus observation noise. Labels are
    the generating class, stored eval-only. The split is 80/20 per class.
    """
    if c < 2:
        raise ValidationError("need at least 2 classes")
    if p < 1:
        raise ValidationError("need at least 1 prompt")
    if d < 4:
        raise ValidationError("feature_dim must be at least 4")
    if m < d:
        raise ValidationError("input_dim must be at least feature_dim")
    if n_per_class < 2:
        raise ValidationError("need at least 2 samples per class for an 80/20 split")
    if not (0.0 < noise < 1.0):
        raise ValidationError(f"noise must lie in (0, 1), got {noise}")

    rng = np.random.default_rng(seed)
    n = c * n_per_class

    # noise is relative to the unit-norm class direction: a standard-normal
    # perturbation has expected norm ~sqrt(d), so scale by 1/sqrt(d) to make
    # `noise` the perturbation-to-signal norm ratio (hence noise < 1).
    unit = 1.0 / np.sqrt(d)
    # equal-strength shared cone: arbitrary pairs of teacher features
    # correlate ~0.5, the density the correlation diagnostics probe
    base = _normalize_rows(rng.standard_normal((1, d)))
    mu = _normalize_rows(base + _normalize_rows(rng.standard_normal((c, d))))
    labels = np.repeat(np.arange(c, dtype=np.int64), n_per_class)
    features = _normalize_rows(mu[labels] + noise * unit * rng.standard_normal((n, d)))

    prompt_scale = np.linspace(0.5, 1.5, p)
    text = tuple(
        _normalize_rows(mu + 0.5 * noise * prompt_scale[i] * unit * rng.standard_normal((c, d)))
        for i in range(p)
    )

    mixing = rng.standard_normal((d, m))
    inputs = features @ mixing + 0.1 * rng.standard_normal((n, m))

    train_idx: list[int] = []
    eval_idx: list[int] = []
    for j in range(c):
        members = np.where(labels == j)[0]
        perm = rng.permutation(len(members))
        cut = int(len(members) * 0.8)
        train_idx.extend(int(i) for i in members[perm[:cut]])
        eval_idx.extend(int(i) for i in members[perm[cut:]])

    manifest = Manifest(
        format_version=FORMAT_VERSION,
        n_samples=n,
        input_dim=m,
        feature_dim=d,
        n_classes=c,
        n_prompts=p,
        class_names=tuple(f"class_{j}" for j in range(c)),
        prompt_names=tuple(f"prompt_{i}" for i in range(p)),
        has_labels=True,
        split={"train": sorted(train_idx), "eval": sorted(eval_idx)},
        seed=seed,
    )
    # round through storage precision so in-memory and on-disk agree bit-exactly
    return TeacherBundle(
        manifest=manifest,
        inputs=_f32_round(inputs),
        features=_f32_round(features),
        text_embeddings=tuple(_f32_round(t) for t in text),
        _labels=labels,
    )


def _normalize_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("cannot normalize a zero row")
    return arr / norms


def _f32_round(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)
