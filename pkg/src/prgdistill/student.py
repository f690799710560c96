"""The trainable student: a feed-forward backbone over raw input vectors,
a classifier head producing logits, and a two-layer projection mapping
backbone features into the teacher's embedding dimension.

Parameters live as plain float64 arrays; each training step wraps them in
fresh autodiff leaves, runs the forward pass, and reads gradients back
out by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Node, add, constant, leaf, matmul, relu
from .errors import FormatError, ShapeError, ValidationError


@dataclass(frozen=True)
class StudentConfig:
    input_dim: int
    backbone_hidden: tuple[int, ...]
    feature_dim: int  # backbone output width (the raw student feature)
    n_classes: int
    teacher_dim: int
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "backbone_hidden", tuple(int(w) for w in self.backbone_hidden))
        for name in ("input_dim", "feature_dim", "n_classes", "teacher_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if any(w < 1 for w in self.backbone_hidden):
            raise ValidationError("backbone widths must be at least 1")

    def layer_dims(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every affine layer, forward order."""
        dims = [self.input_dim, *self.backbone_hidden, self.feature_dim]
        layers = [(f"backbone.{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        layers.append(("classifier", self.feature_dim, self.n_classes))
        layers.append(("proj.0", self.feature_dim, self.teacher_dim))
        layers.append(("proj.1", self.teacher_dim, self.teacher_dim))
        return layers


@dataclass
class StudentParams:
    config: StudentConfig
    arrays: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = {}
        for name, fan_in, fan_out in self.config.layer_dims():
            expected[f"{name}.weight"] = (fan_in, fan_out)
            expected[f"{name}.bias"] = (1, fan_out)
        if set(self.arrays) != set(expected):
            raise ValidationError(
                f"parameter names {sorted(self.arrays)} do not match config "
                f"{sorted(expected)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.arrays[name].shape}, expected {shape}")

    def copy(self) -> "StudentParams":
        return StudentParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def as_leaves(self) -> dict[str, Node]:
        """Fresh gradient-carrying nodes over the current values."""
        return {name: leaf(arr) for name, arr in self.arrays.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())

    # -- checkpoint format: raw little-endian float64 plus a JSON shape index
    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {}
        blob = []
        offset = 0
        for name in sorted(self.arrays):
            arr = self.arrays[name]
            index[name] = {"offset": offset, "shape": list(arr.shape)}
            blob.append(arr.astype("<f8").ravel())
            offset += arr.size
        np.concatenate(blob).tofile(directory / "params.f64")
        meta = {
            "config": {
                "input_dim": self.config.input_dim,
                "backbone_hidden": list(self.config.backbone_hidden),
                "feature_dim": self.config.feature_dim,
                "n_classes": self.config.n_classes,
                "teacher_dim": self.config.teacher_dim,
                "init_seed": self.config.init_seed,
            },
            "params": index,
        }
        (directory / "params_index.json").write_text(json.dumps(meta, indent=2) + "\n",
                                                     encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "StudentParams":
        directory = Path(directory)
        meta_path = directory / "params_index.json"
        blob_path = directory / "params.f64"
        if not meta_path.is_file() or not blob_path.is_file():
            raise FormatError(f"no student checkpoint at {directory}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        cfg = StudentConfig(
            input_dim=meta["config"]["input_dim"],
            backbone_hidden=tuple(meta["config"]["backbone_hidden"]),
            feature_dim=meta["config"]["feature_dim"],
            n_classes=meta["config"]["n_classes"],
            teacher_dim=meta["config"]["teacher_dim"],
            init_seed=meta["config"]["init_seed"],
        )
        blob = np.fromfile(blob_path, dtype="<f8")
        arrays = {}
        for name, entry in meta["params"].items():
            shape = tuple(entry["shape"])
            size = int(np.prod(shape))
            start = entry["offset"]
            if start + size > blob.size:
                raise FormatError(f"params.f64 too small for entry {name}")
            arrays[name] = blob[start:start + size].reshape(shape).copy()
        return cls(cfg, arrays)


def init_student(config: StudentConfig) -> StudentParams:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(config.init_seed)
    arrays: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in config.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"{name}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"{name}.bias"] = np.zeros((1, fan_out))
    return StudentParams(config, arrays)


@dataclass(frozen=True)
class StudentForward:
    """All three student outputs of one forward pass, on the graph."""

    backbone_features: Node  # b x feature_dim
    projected_features: Node  # b x teacher_dim, comparable to teacher features
    logits: Node  # b x n_classes
    leaves: dict[str, Node] | None = None


def forward_with_nodes(config: StudentConfig, nodes: dict[str, Node],
                       inputs: np.ndarray) -> StudentForward:
    """Forward pass over an explicit name->Node parameter mapping.

    Lets callers (gradient checks, the trainer) control exactly which
    parameters carry gradient.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != config.input_dim:
        raise ShapeError(
            f"inputs have shape {inputs.shape}, expected (b, {config.input_dim})")
    if not np.all(np.isfinite(inputs)):
        raise ValidationError("inputs contain non-finite entries")

    def affine(x: Node, name: str) -> Node:
        return add(matmul(x, nodes[f"{name}.weight"]), nodes[f"{name}.bias"])

    x = constant(inputs)
    n_backbone = len(config.backbone_hidden) + 1
    for i in range(n_backbone):
        x = affine(x, f"backbone.{i}")
        if i < n_backbone - 1:
            x = relu(x)
    s_ori = x
    logits = affine(s_ori, "classifier")
    f_ori = affine(relu(affine(s_ori, "proj.0")), "proj.1")
    return StudentForward(
        backbone_features=s_ori,
        projected_features=f_ori,
        logits=logits,
        leaves=nodes,
    )


def forward(params: StudentParams, inputs: np.ndarray, *,
            trainable: bool = False) -> StudentForward:
    """Run the student on a batch of input rows.

    With ``trainable=True`` the parameters are wrapped as gradient leaves
    (returned in ``leaves``); otherwise the whole pass is constant.
    """
    wrap = leaf if trainable else constant
    nodes = {name: wrap(arr) for name, arr in params.arrays.items()}
    fwd = forward_with_nodes(params.config, nodes, inputs)
    if not trainable:
        return StudentForward(
            backbone_features=fwd.backbone_features,
            projected_features=fwd.projected_features,
            logits=fwd.logits,
            leaves=None,
        )
    return fwd


def parameter_gradients(fwd: StudentForward) -> dict[str, np.ndarray]:
    """Collect gradients by parameter name after a backward pass."""
    if fwd.leaves is None:
        raise ValidationError("forward pass was not built with trainable=True")
    return {name: node.grad for name, node in fwd.leaves.items()}
