"""The annotation-free distillation loop.

Per iteration: slice the precomputed teacher quantities for the batch,
run the student forward, assemble the mode's objective, backprop, take an
AdamW step at the warm-restart learning rate, then pull both proxy banks
toward the batch nodes under the teacher's predicted classes. The teacher
is input-deterministic, so its logits, soft labels, predictions, and
sample nodes are computed once per run.

Labels never enter: the loop works on a :class:`~prgdistill.bundle.TrainView`,
which has no label field, and ``train`` asserts on exit that the bundle's
label-read counter did not move. Per-epoch history records the student's
eval-split predictions so label accuracy can be attached afterwards
without the loop ever touching ground truth.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .autodiff import constant
from .bundle import TeacherBundle, TrainView
from .errors import FormatError, NumericError, StateError, ValidationError
from .graph import (ProxyBank, SampleNodeSet, build_nodes, edge_matrix,
                    feature_only_nodes, init_proxy_bank, node_cross_correlation,
                    update_proxies)
from .student import (StudentConfig, StudentParams, forward, init_student,
                      parameter_gradients)
from .zeroshot import (plain_zero_shot_logits, soft_labels, teacher_predictions,
                       weighted_zero_shot_logits)

MODES = ("prg", "ce_only", "kd_baseline", "prg_plain_logits", "prg_feature_nodes")

METRICS_KEYS = ("epoch", "lr", "loss_ce", "loss_node", "loss_edge", "loss_total",
                "teacher_agreement", "label_accuracy", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 150
    lr_max: float = 0.03
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    t0: int = 10
    t_mult: int = 2
    lr_min: float = 0.0
    lambda_node: float = 0.4
    lambda_edge: float = 0.2
    alpha: float | None = None  # None: resolved to batch_size / n_train
    tau: float = 100.0
    seed: int = 0
    mode: str = "prg"
    kd_temperature: float = 4.0
    reduction: str = "frobenius"
    standardize_nodes: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be at least 2")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if not (self.lr_max > 0 and 0 <= self.lr_min <= self.lr_max):
            raise ValidationError("need lr_max > 0 and 0 <= lr_min <= lr_max")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValidationError("adam_eps must be positive")
        if self.t0 < 1 or self.t_mult < 1:
            raise ValidationError("need t0 >= 1 and t_mult >= 1")
        if self.lambda_node < 0 or self.lambda_edge < 0:
            raise ValidationError("loss weights must be nonnegative")
        if self.alpha is not None and not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kd_temperature <= 0:
            raise ValidationError("kd_temperature must be positive")
        if self.reduction not in L.REDUCTIONS:
            raise ValidationError(f"reduction must be one of {L.REDUCTIONS}")

    def resolve_alpha(self, n_train: int) -> float:
        """Default update intensity: batch size over training-set size."""
        if self.alpha is not None:
            return self.alpha
        alpha = self.batch_size / n_train
        if not (0.0 < alpha < 1.0):
            raise ValidationError(
                f"resolved alpha {alpha} is not in (0, 1); pass alpha explicitly")
        return alpha


def cosine_restart_lr(step_epoch: float, cfg: TrainConfig) -> float:
    """Warm-restart cosine schedule over epochs.

    Restart periods are t0, t0*t_mult, t0*t_mult**2, ...; within a period
    of length T at offset t the rate is
    ``lr_min + 0.5*(lr_max - lr_min)*(1 + cos(pi*t/T))``.
    """
    if step_epoch < 0:
        raise ValidationError("step_epoch must be nonnegative")
    t = float(step_epoch)
    period = float(cfg.t0)
    while t >= period:
        t -= period
        period *= cfg.t_mult
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / period))


# -- AdamW ---------------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adamw(params: StudentParams) -> AdamWState:
    return AdamWState(
        m={k: np.zeros_like(a) for k, a in params.arrays.items()},
        v={k: np.zeros_like(a) for k, a in params.arrays.items()},
    )


def adamw_step(params: StudentParams, grads: dict[str, np.ndarray],
               state: AdamWState, lr: float, cfg: TrainConfig):
    """In-place bias-corrected Adam update followed by decoupled weight
    decay on the weights (biases undecayed)."""
    if set(grads) != set(params.arrays):
        raise ValidationError("gradient names do not match parameter names")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient {name} has shape {g.shape}, expected {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if cfg.weight_decay and not name.endswith(".bias"):
            p -= lr * cfg.weight_decay * p
    return params, state


# -- teacher precomputation ------------------------------------------------------

@dataclass(frozen=True)
class TeacherContext:
    """Input-deterministic teacher quantities for the whole dataset."""

    train_logits: np.ndarray     # N x c, the mode's supervisory logits
    train_soft: np.ndarray       # N x c
    train_predictions: np.ndarray  # N, assignment source for both banks
    node_values: np.ndarray      # N x D
    node_dim: int
    eval_reference: np.ndarray   # N, canonical weighted-head predictions


def build_teacher_context(view: TrainView, cfg: TrainConfig) -> TeacherContext:
    feats = view.features
    weighted = weighted_zero_shot_logits(feats, view.text_embeddings, cfg.tau)
    if cfg.mode == "prg_plain_logits":
        logits = plain_zero_shot_logits(feats, view.text_embeddings, cfg.tau)
    else:
        logits = weighted.logits
    soft = soft_labels(logits)
    preds = teacher_predictions(logits)
    if cfg.mode == "prg_feature_nodes":
        nodes = feature_only_nodes(feats, side="teacher",
                                   standardize=cfg.standardize_nodes)
    else:
        nodes = build_nodes(feats, logits, side="teacher",
                            standardize=cfg.standardize_nodes)
    return TeacherContext(
        train_logits=logits,
        train_soft=soft,
        train_predictions=preds,
        node_values=nodes.values,
        node_dim=nodes.dim,
        eval_reference=teacher_predictions(weighted.logits),
    )


# -- history -----------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_ce: float
    loss_node: float
    loss_edge: float
    loss_kd: float
    loss_total: float
    teacher_agreement: float
    label_accuracy: float | None
    seconds: float
    eval_predictions: np.ndarray = field(repr=False)

    def metrics_row(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "loss_ce": self.loss_ce,
            "loss_node": self.loss_node,
            "loss_edge": self.loss_edge,
            "loss_total": self.loss_total,
            "teacher_agreement": self.teacher_agreement,
            "label_accuracy": self.label_accuracy,
            "seconds": self.seconds,
        }


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    resolved_alpha: float = 0.0
    mode: str = "prg"

    def attach_label_accuracy(self, bundle: TeacherBundle) -> None:
        """Fill per-epoch label accuracy from the recorded eval predictions.

        Runs after training so the loop itself never reads ground truth.
        """
        if not bundle.has_labels or not self.records:
            return
        eval_idx = bundle.manifest.eval_indices
        truth = bundle.labels_for_eval(eval_idx)
        for rec in self.records:
            rec.label_accuracy = float(np.mean(rec.eval_predictions == truth))

    def to_json(self) -> list[dict]:
        return [rec.metrics_row() for rec in self.records]


# -- checkpointing -------------------------------------------------------------------

def save_checkpoint(directory, params: StudentParams, state: AdamWState,
                    teacher_bank: ProxyBank, student_bank: ProxyBank,
                    cfg: TrainConfig, epoch_completed: int, resolved_alpha: float) -> None:
    directory = Path(directory)
    tmp = directory.parent / f".{directory.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        params.save(tmp)
        teacher_bank.proxies.astype("<f8").tofile(tmp / "proxy_t.f64")
        student_bank.proxies.astype("<f8").tofile(tmp / "proxy_s.f64")
        order = sorted(params.arrays)
        np.concatenate([state.m[k].ravel() for k in order]).astype("<f8").tofile(tmp / "opt_m.f64")
        np.concatenate([state.v[k].ravel() for k in order]).astype("<f8").tofile(tmp / "opt_v.f64")
        meta = {
            "epoch_completed": epoch_completed,
            "global_step": state.step,
            "resolved_alpha": resolved_alpha,
            "train_config": _config_json(cfg),
            "banks": {
                "n_classes": teacher_bank.n_classes,
                "dim": teacher_bank.dim,
                "teacher_seed": teacher_bank.init_seed,
                "student_seed": student_bank.init_seed,
                "teacher_update_count": teacher_bank.update_count,
                "student_update_count": student_bank.update_count,
            },
        }
        (tmp / "state.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        if directory.exists():
            old = directory.parent / f".{directory.name}.old-{os.getpid()}"
            if old.exists():
                shutil.rmtree(old)
            directory.rename(old)
            tmp.rename(directory)
            shutil.rmtree(old)
        else:
            tmp.rename(directory)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_checkpoint(directory):
    """Returns (params, adam state, teacher bank, student bank, meta dict)."""
    directory = Path(directory)
    state_path = directory / "state.json"
    if not state_path.is_file():
        raise FormatError(f"no checkpoint state at {directory}")
    meta = json.loads(state_path.read_text(encoding="utf-8"))
    params = StudentParams.load(directory)
    order = sorted(params.arrays)
    sizes = [params.arrays[k].size for k in order]
    total = sum(sizes)

    def read_blob(name):
        blob = np.fromfile(directory / name, dtype="<f8")
        if blob.size != total:
            raise FormatError(f"{name} holds {blob.size} values, expected {total}")
        out = {}
        offset = 0
        for k, size in zip(order, sizes):
            out[k] = blob[offset:offset + size].reshape(params.arrays[k].shape).copy()
            offset += size
        return out

    state = AdamWState(m=read_blob("opt_m.f64"), v=read_blob("opt_v.f64"),
                       step=int(meta["global_step"]))
    banks = meta["banks"]
    c, dim = int(banks["n_classes"]), int(banks["dim"])
    alpha = float(meta["resolved_alpha"])

    def read_bank(name, seed_key, count_key):
        arr = np.fromfile(directory / name, dtype="<f8")
        if arr.size != c * dim:
            raise FormatError(f"{name} holds {arr.size} values, expected {c * dim}")
        return ProxyBank(proxies=arr.reshape(c, dim), alpha=alpha,
                         update_count=int(banks[count_key]),
                         init_seed=int(banks[seed_key]))

    teacher_bank = read_bank("proxy_t.f64", "teacher_seed", "teacher_update_count")
    student_bank = read_bank("proxy_s.f64", "student_seed", "student_update_count")
    return params, state, teacher_bank, student_bank, meta


def _config_json(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def bank_seeds(seed: int) -> tuple[int, int]:
    """Distinct, reproducible init seeds for the teacher and student banks."""
    return 2 * seed + 1, 2 * seed + 2


# -- the loop --------------------------------------------------------------------------

def train(bundle: TeacherBundle, student_cfg: StudentConfig, train_cfg: TrainConfig,
          out_dir=None, resume=None, iteration_hook=None):
    """Run distillation; returns (trained params, history).

    ``out_dir``, when given, receives metrics.jsonl (one JSON object per
    epoch) and a ``checkpoint/`` directory refreshed after every epoch.
    ``resume`` points at a previous checkpoint directory to continue from.
    ``iteration_hook`` (testing/diagnostics) is called once per iteration
    with the iteration's losses, assignment, node values, and bank states.
    """
    cfg = train_cfg
    view = bundle.train_view()
    label_reads_at_entry = bundle.label_reads

    mani = view.manifest
    if student_cfg.input_dim != mani.input_dim:
        raise ValidationError(
            f"student input_dim {student_cfg.input_dim} != bundle input_dim {mani.input_dim}")
    if student_cfg.n_classes != mani.n_classes:
        raise ValidationError(
            f"student n_classes {student_cfg.n_classes} != bundle n_classes {mani.n_classes}")
    if student_cfg.teacher_dim != mani.feature_dim:
        raise ValidationError(
            f"student teacher_dim {student_cfg.teacher_dim} != bundle feature_dim {mani.feature_dim}")

    train_idx = view.train_indices
    eval_idx = view.eval_indices
    n_train = train_idx.size
    if n_train == 0:
        raise ValidationError("train split is empty")
    if n_train < cfg.batch_size:
        raise ValidationError(
            f"train split ({n_train}) smaller than one batch ({cfg.batch_size})")
    alpha = cfg.resolve_alpha(n_train)

    ctx = build_teacher_context(view, cfg)

    t_seed, s_seed = bank_seeds(cfg.seed)
    if resume is not None:
        params, opt, t_bank, s_bank, meta = load_checkpoint(resume)
        _check_resume_compatible(meta["train_config"], cfg)
        if params.config != student_cfg:
            raise ValidationError("checkpoint student config does not match")
        if t_bank.dim != ctx.node_dim:
            raise FormatError(
                f"checkpoint bank dim {t_bank.dim} != node dim {ctx.node_dim}")
        start_epoch = int(meta["epoch_completed"]) + 1
        if start_epoch >= cfg.epochs:
            raise ValidationError(
                f"checkpoint already covers epoch {start_epoch - 1}; nothing to resume")
    else:
        params = init_student(student_cfg)
        opt = init_adamw(params)
        t_bank = init_proxy_bank(mani.n_classes, ctx.node_dim, alpha, t_seed)
        s_bank = init_proxy_bank(mani.n_classes, ctx.node_dim, alpha, s_seed)
        start_epoch = 0

    weights = L.LossWeights(cfg.lambda_node, cfg.lambda_edge, cfg.reduction)
    history = TrainHistory(resolved_alpha=alpha, mode=cfg.mode)
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        if resume is None and metrics_path.exists():
            metrics_path.unlink()

    n_batches = n_train // cfg.batch_size
    global_step = opt.step

    for epoch in range(start_epoch, cfg.epochs):
        epoch_start = time.perf_counter()
        lr = cosine_restart_lr(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_train)
        sums = {"ce": 0.0, "node": 0.0, "edge": 0.0, "kd": 0.0, "total": 0.0}

        for b in range(n_batches):
            idx = train_idx[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            parts = _iteration_losses(params, view, ctx, cfg, weights, idx,
                                      t_bank, s_bank)
            total = parts["total_node"]
            total_val = total.item()
            if not np.isfinite(total_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, iteration {global_step}")
            total.backward()
            grads = parameter_gradients(parts["forward"])
            adamw_step(params, grads, opt, lr, cfg)
            if not params.all_finite():
                raise NumericError(
                    f"non-finite parameter after epoch {epoch}, iteration {global_step}")

            assignment = ctx.train_predictions[idx]
            t_nodes_batch = ctx.node_values[idx]
            s_node_values = parts["student_nodes"].values
            t_bank = update_proxies(t_bank, t_nodes_batch, assignment)
            s_bank = update_proxies(s_bank, s_node_values, assignment)
            global_step += 1

            sums["ce"] += parts["ce"]
            sums["node"] += parts["node"]
            sums["edge"] += parts["edge"]
            sums["kd"] += parts["kd"]
            sums["total"] += total_val

            if iteration_hook is not None:
                iteration_hook({
                    "epoch": epoch,
                    "iteration": b,
                    "global_step": global_step,
                    "loss_ce": parts["ce"],
                    "loss_node": parts["node"],
                    "loss_edge": parts["edge"],
                    "loss_kd": parts["kd"],
                    "loss_total": total_val,
                    "assignment": assignment.copy(),
                    "teacher_nodes": t_nodes_batch.copy(),
                    "student_nodes": s_node_values.copy(),
                    "teacher_bank": t_bank,
                    "student_bank": s_bank,
                })

        eval_preds = student_class_predictions(params, view.inputs[eval_idx])
        agreement = float(np.mean(eval_preds == ctx.eval_reference[eval_idx]))
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            loss_ce=sums["ce"] / n_batches,
            loss_node=sums["node"] / n_batches,
            loss_edge=sums["edge"] / n_batches,
            loss_kd=sums["kd"] / n_batches,
            loss_total=sums["total"] / n_batches,
            teacher_agreement=agreement,
            label_accuracy=None,
            seconds=time.perf_counter() - epoch_start,
            eval_predictions=eval_preds,
        )
        history.records.append(record)
        if metrics_path is not None:
            with metrics_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.metrics_row()) + "\n")
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint", params, opt, t_bank, s_bank,
                            cfg, epoch, alpha)

    if bundle.label_reads != label_reads_at_entry:
        raise StateError("training loop read labels; annotation-free contract broken")
    return params, history


def _iteration_losses(params, view, ctx, cfg, weights, idx, t_bank, s_bank):
    """Build one iteration's objective graph. Returns the forward pass,
    the student node set, the total-loss node, and float diagnostics."""
    fwd = forward(params, view.inputs[idx], trainable=True)
    soft_batch = ctx.train_soft[idx]
    ce = L.soft_cross_entropy(fwd.logits, soft_batch)

    if cfg.mode == "prg_feature_nodes":
        student_nodes = feature_only_nodes(fwd.projected_features, side="student",
                                           standardize=cfg.standardize_nodes)
    else:
        student_nodes = build_nodes(fwd.projected_features, fwd.logits,
                                    side="student", standardize=cfg.standardize_nodes)

    node_val = edge_val = kd_val = 0.0
    total = ce
    if cfg.mode in ("prg", "prg_plain_logits", "prg_feature_nodes"):
        teacher_nodes = SampleNodeSet(
            nodes=constant(ctx.node_values[idx]), side="teacher")
        if weights.lambda_node > 0.0:
            cross = node_cross_correlation(teacher_nodes, student_nodes)
            node_loss = L.node_alignment_loss(cross, weights.reduction)
            node_val = node_loss.item()
            total = total + weights.lambda_node * node_loss
        if weights.lambda_edge > 0.0:
            # losses see this iteration's pre-update banks; the banks move
            # only after the optimizer step
            e_t = edge_matrix(teacher_nodes, t_bank)
            e_s = edge_matrix(student_nodes, s_bank)
            edge_loss = L.edge_alignment_loss(e_t, e_s, weights.reduction)
            edge_val = edge_loss.item()
            total = total + weights.lambda_edge * edge_loss
    elif cfg.mode == "kd_baseline":
        kd = L.kd_baseline_loss(fwd.logits, ctx.train_logits[idx], cfg.kd_temperature)
        kd_val = kd.item()
        total = total + kd

    return {
        "forward": fwd,
        "student_nodes": student_nodes,
        "total_node": total,
        "ce": ce.item(),
        "node": node_val,
        "edge": edge_val,
        "kd": kd_val,
    }


def _check_resume_compatible(saved: dict, cfg: TrainConfig) -> None:
    core = ("batch_size", "lr_max", "weight_decay", "beta1", "beta2", "adam_eps",
            "t0", "t_mult", "lr_min", "lambda_node", "lambda_edge", "tau",
            "seed", "mode", "kd_temperature", "reduction", "standardize_nodes")
    current = _config_json(cfg)
    for key in core:
        if saved.get(key) != current[key]:
            raise ValidationError(
                f"resume config mismatch on {key}: checkpoint {saved.get(key)!r} "
                f"vs requested {current[key]!r}")


# -- evaluation and diagnostics ---------------------------------------------------------

def student_class_predictions(params: StudentParams, inputs: np.ndarray) -> np.ndarray:
    return forward(params, inputs).logits.value.argmax(axis=1)


def evaluate(params: StudentParams, bundle: TeacherBundle, split: str = "eval",
             tau: float = 100.0) -> dict:
    """Teacher agreement (always) and label accuracy (when labels exist)."""
    if split not in ("train", "eval"):
        raise ValidationError(f"split must be 'train' or 'eval', got {split!r}")
    idx = (bundle.manifest.train_indices if split == "train"
           else bundle.manifest.eval_indices)
    if idx.size == 0:
        raise ValidationError(f"{split} split is empty")
    teacher = weighted_zero_shot_logits(bundle.features[idx], bundle.text_embeddings, tau)
    t_preds = teacher_predictions(teacher.logits)
    s_preds = student_class_predictions(params, bundle.inputs[idx])
    result = {"teacher_agreement": float(np.mean(s_preds == t_preds))}
    if bundle.has_labels:
        truth = bundle.labels_for_eval(idx)
        result["label_accuracy"] = float(np.mean(s_preds == truth))
    return result


def heatmap_metrics(params: StudentParams, bundle: TeacherBundle, k_classes: int,
                    n_per_class: int, seed: int = 0) -> dict:
    """Inter-sample correlation heatmaps for teacher and student features.

    Picks ``n_per_class`` labeled samples from each of ``k_classes``
    classes (class-major order), computes the pairwise correlations of
    teacher features and of the student's own backbone features (each
    model's native representation; the dimensions need not match for an
    inter-sample correlation matrix), and reports the mean absolute
    correlation over pairs from different classes. Diagnostic only:
    needs labels.
    """
    from .autodiff import pcc_matrix_np

    if not bundle.has_labels:
        raise ValidationError("heatmap diagnostics need a labeled bundle")
    if k_classes < 2 or k_classes > bundle.manifest.n_classes:
        raise ValidationError(
            f"k_classes must lie in [2, {bundle.manifest.n_classes}]")
    if n_per_class < 1:
        raise ValidationError("n_per_class must be at least 1")
    labels = bundle.labels_for_eval()
    rng = np.random.default_rng(seed)
    classes = np.sort(rng.choice(bundle.manifest.n_classes, size=k_classes, replace=False))
    selected: list[int] = []
    for cls in classes:
        members = np.where(labels == cls)[0]
        if members.size < n_per_class:
            raise ValidationError(
                f"class {int(cls)} has only {members.size} samples, need {n_per_class}")
        selected.extend(int(i) for i in rng.choice(members, size=n_per_class, replace=False))
    sel = np.asarray(selected, dtype=np.int64)

    teacher_matrix = pcc_matrix_np(bundle.features[sel], bundle.features[sel])
    student_feats = forward(params, bundle.inputs[sel]).backbone_features.value
    student_matrix = pcc_matrix_np(student_feats, student_feats)

    block = np.repeat(classes, n_per_class)
    off_block = block[:, None] != block[None, :]
    return {
        "classes": [int(c) for c in classes],
        "sample_indices": [int(i) for i in sel],
        "teacher_matrix": teacher_matrix,
        "student_matrix": student_matrix,
        "mean_offdiag_teacher": float(np.abs(teacher_matrix[off_block]).mean()),
        "mean_offdiag_student": float(np.abs(student_matrix[off_block]).mean()),
    }
