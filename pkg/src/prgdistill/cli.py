"""Command-line entry point.

Subcommands: ``synth`` (generate a synthetic bundle), ``train`` (run
distillation), ``eval`` (score a checkpoint), ``gradcheck`` (finite-
difference verification of every objective end to end), and ``heatmap``
(inter-sample correlation diagnostics).

Exit codes: 0 success, 2 usage or validation failure, 3 numeric abort,
4 gradient-check failure. Runs are reproducible: a JSON config file plus
flag overrides resolve into one ``resolved_config.json`` written next to
the outputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import losses as L
from .autodiff import Node, constant, leaf
from .bundle import load_bundle, save_bundle, synth_bundle
from .errors import NumericError, PRGError, ValidationError
from .graph import build_nodes, edge_matrix, init_proxy_bank, node_cross_correlation
from .student import StudentConfig, StudentParams, forward_with_nodes, init_student
from .trainer import (MODES, TrainConfig, evaluate, heatmap_metrics, train)
from .zeroshot import soft_labels, weighted_zero_shot_logits

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Flat union of the training and student knobs, file- and flag-settable."""

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
    alpha: float | None = None
    tau: float = 100.0
    seed: int = 0
    mode: str = "prg"
    kd_temperature: float = 4.0
    reduction: str = "frobenius"
    standardize_nodes: bool = False
    backbone_hidden: tuple[int, ...] = (128,)
    feature_dim: int = 64
    init_seed: int | None = None  # None: falls back to seed

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_sources(cls, config_path=None, overrides=None) -> "RunConfig":
        values: dict = {}
        if config_path is not None:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
            if not isinstance(raw, dict):
                raise ValidationError("config file must hold a JSON object")
            unknown = set(raw) - set(cls.field_names())
            if unknown:
                raise ValidationError(f"config file has unknown keys: {sorted(unknown)}")
            values.update(raw)
        for key, val in (overrides or {}).items():
            if val is not None:
                values[key] = val
        if "backbone_hidden" in values:
            values["backbone_hidden"] = _parse_widths(values["backbone_hidden"])
        return cls(**values)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, lr_max=self.lr_max,
            weight_decay=self.weight_decay, beta1=self.beta1, beta2=self.beta2,
            adam_eps=self.adam_eps, t0=self.t0, t_mult=self.t_mult,
            lr_min=self.lr_min, lambda_node=self.lambda_node,
            lambda_edge=self.lambda_edge, alpha=self.alpha, tau=self.tau,
            seed=self.seed, mode=self.mode, kd_temperature=self.kd_temperature,
            reduction=self.reduction, standardize_nodes=self.standardize_nodes,
        )

    def student_config(self, input_dim: int, n_classes: int, teacher_dim: int) -> StudentConfig:
        return StudentConfig(
            input_dim=input_dim,
            backbone_hidden=tuple(self.backbone_hidden),
            feature_dim=self.feature_dim,
            n_classes=n_classes,
            teacher_dim=teacher_dim,
            init_seed=self.seed if self.init_seed is None else self.init_seed,
        )

    def resolved(self, **extra) -> dict:
        out = dataclasses.asdict(self)
        out["backbone_hidden"] = list(self.backbone_hidden)
        out.update(extra)
        return out


def _parse_widths(value) -> tuple[int, ...]:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        return tuple(int(p) for p in parts)
    return tuple(int(v) for v in value)


# -- gradcheck suite --------------------------------------------------------------

GRADCHECK_DIMS = dict(b=4, c=3, d=5, p=2, s=6, m=7)


def run_gradcheck_suite(n_seeds: int = 10, h: float = 1e-6,
                        gradient_transform=None) -> dict[str, float]:
    """Finite-difference check of every objective, end to end through the
    student network and graph construction, on seeded random instances.

    Returns the max relative error per loss over all seeds and all
    parameter matrices. ``gradient_transform`` is a test hook applied to
    the reverse-mode gradient before comparison (e.g. a sign flip to
    verify the harness catches faults).
    """
    dims = GRADCHECK_DIMS
    worst: dict[str, float] = {}
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed + 1)
        feats = rng.standard_normal((dims["b"], dims["d"]))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        text = []
        for _ in range(dims["p"]):
            t = rng.standard_normal((dims["c"], dims["d"]))
            text.append(t / np.linalg.norm(t, axis=1, keepdims=True))
        tau = 10.0
        weighted = weighted_zero_shot_logits(feats, text, tau)
        soft = soft_labels(weighted.logits)
        teacher_nodes = build_nodes(feats, weighted.logits, side="teacher")
        node_dim = teacher_nodes.dim
        t_bank = init_proxy_bank(dims["c"], node_dim, 0.5, seed * 2 + 1)
        s_bank = init_proxy_bank(dims["c"], node_dim, 0.5, seed * 2 + 2)
        weights = L.LossWeights()
        x = rng.standard_normal((dims["b"], dims["m"]))
        cfg = StudentConfig(input_dim=dims["m"], backbone_hidden=(6,),
                            feature_dim=dims["s"], n_classes=dims["c"],
                            teacher_dim=dims["d"], init_seed=seed)
        params = init_student(cfg)
        # generic check point: fresh zero biases can leave a relu row fully
        # dead, which parks a node row exactly on the correlation guard's
        # kink where no two-sided derivative exists
        for name, arr in params.arrays.items():
            if name.endswith(".bias"):
                arr += 0.1 * rng.standard_normal(arr.shape)

        def build(fwd, which):
            s_nodes = build_nodes(fwd.projected_features, fwd.logits, side="student")
            if which == "soft_cross_entropy":
                return L.soft_cross_entropy(fwd.logits, soft)
            if which == "node_alignment":
                return L.node_alignment_loss(node_cross_correlation(teacher_nodes, s_nodes))
            if which == "edge_alignment":
                return L.edge_alignment_loss(edge_matrix(teacher_nodes, t_bank),
                                             edge_matrix(s_nodes, s_bank))
            if which == "total_prg":
                ce = L.soft_cross_entropy(fwd.logits, soft)
                node = L.node_alignment_loss(node_cross_correlation(teacher_nodes, s_nodes))
                edge = L.edge_alignment_loss(edge_matrix(teacher_nodes, t_bank),
                                             edge_matrix(s_nodes, s_bank))
                return L.total_loss(ce, L.prg_loss(node, edge, weights))
            if which == "kd_baseline":
                ce = L.soft_cross_entropy(fwd.logits, soft)
                return ce + L.kd_baseline_loss(fwd.logits, weighted.logits, 4.0)
            raise ValueError(which)

        for which in ("soft_cross_entropy", "node_alignment", "edge_alignment",
                      "total_prg", "kd_baseline"):
            err = _max_param_gradcheck(params, cfg, x, lambda fwd: build(fwd, which),
                                       h, gradient_transform)
            worst[which] = max(worst.get(which, 0.0), err)
    return worst


def _max_param_gradcheck(params, cfg, x, loss_of_forward, h, gradient_transform):
    """Max relative AD-vs-FD gradient error over every parameter matrix."""
    worst = 0.0
    for target in sorted(params.arrays):

        def f(probe: Node) -> Node:
            nodes = {name: (probe if name == target else constant(arr))
                     for name, arr in params.arrays.items()}
            return loss_of_forward(forward_with_nodes(cfg, nodes, x))

        base = params.arrays[target]
        probe = leaf(base.copy())
        out = f(probe)
        if not np.isfinite(out.value).all():
            raise NumericError(f"non-finite loss while checking {target}")
        out.backward()
        g_ad = probe.grad.copy()
        if gradient_transform is not None:
            g_ad = gradient_transform(g_ad)

        g_fd = np.zeros_like(base)
        pert = base.copy()
        flat = pert.ravel()
        fd = g_fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(constant(pert)).item()
            flat[i] = orig - h
            fm = f(constant(pert)).item()
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * h)
        rel = np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd))
        worst = max(worst, float(rel.max()))
    return worst


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    bundle = synth_bundle(c=args.classes, p=args.prompts, d=args.dim,
                          m=args.input_dim, n_per_class=args.per_class,
                          noise=args.noise, seed=args.seed)
    save_bundle(bundle, args.out)
    print(json.dumps({"out": str(args.out), "n_samples": bundle.manifest.n_samples}))
    return EXIT_OK


def _overrides_from_args(args) -> dict:
    return {name: getattr(args, name, None) for name in RunConfig.field_names()}


def cmd_train(args) -> int:
    run_cfg = RunConfig.from_sources(args.config, _overrides_from_args(args))
    bundle = load_bundle(args.bundle)
    mani = bundle.manifest
    student_cfg = run_cfg.student_config(mani.input_dim, mani.n_classes, mani.feature_dim)
    train_cfg = run_cfg.train_config()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, history = train(bundle, student_cfg, train_cfg, out_dir=out_dir,
                            resume=args.resume)
    resolved = run_cfg.resolved(
        bundle=str(args.bundle),
        input_dim=mani.input_dim,
        n_classes=mani.n_classes,
        teacher_dim=mani.feature_dim,
        resolved_alpha=history.resolved_alpha,
        resolved_init_seed=student_cfg.init_seed,
    )
    (out_dir / "resolved_config.json").write_text(
        json.dumps(resolved, indent=2) + "\n", encoding="utf-8")
    # ground truth may only be consulted after the loop has finished
    history.attach_label_accuracy(bundle)
    (out_dir / "history.json").write_text(
        json.dumps(history.to_json(), indent=2) + "\n", encoding="utf-8")
    final = history.records[-1]
    print(json.dumps({
        "epochs": len(history.records),
        "teacher_agreement": final.teacher_agreement,
        "label_accuracy": final.label_accuracy,
        "out": str(out_dir),
    }))
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    params = StudentParams.load(args.checkpoint)
    result = evaluate(params, bundle, split=args.split, tau=args.tau)
    print(json.dumps(result))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    transform = (lambda g: -g) if args.fault_inject else None
    errors = run_gradcheck_suite(n_seeds=args.seeds, h=args.h,
                                 gradient_transform=transform)
    failed = [name for name, err in errors.items() if err >= args.threshold]
    for name, err in errors.items():
        status = "ok" if name not in failed else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_heatmap(args) -> int:
    bundle = load_bundle(args.bundle)
    params = StudentParams.load(args.checkpoint)
    report = heatmap_metrics(params, bundle, k_classes=args.classes,
                             n_per_class=args.per_class, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for side in ("teacher", "student"):
        with (out / f"{side}_matrix.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerows(report[f"{side}_matrix"].tolist())
    summary = {
        "classes": report["classes"],
        "sample_indices": report["sample_indices"],
        "mean_offdiag_teacher": report["mean_offdiag_teacher"],
        "mean_offdiag_student": report["mean_offdiag_student"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                      encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prgdistill",
        description="Annotation-free distillation against exported zero-shot teachers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic teacher bundle")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--classes", type=int, required=True)
    p_synth.add_argument("--prompts", type=int, required=True)
    p_synth.add_argument("--dim", type=int, required=True)
    p_synth.add_argument("--input-dim", type=int, required=True)
    p_synth.add_argument("--per-class", type=int, required=True)
    p_synth.add_argument("--noise", type=float, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a student against a bundle")
    p_train.add_argument("--bundle", required=True)
    p_train.add_argument("--config", default=None, help="JSON config file")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--resume", default=None, help="checkpoint directory")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a bundle split")
    p_eval.add_argument("--bundle", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("train", "eval"), default="eval")
    p_eval.add_argument("--tau", type=float, default=100.0)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--seeds", type=int, default=10)
    p_grad.add_argument("--h", type=float, default=1e-6)
    p_grad.add_argument("--threshold", type=float, default=1e-5)
    p_grad.add_argument("--fault-inject", action="store_true",
                        help=argparse.SUPPRESS)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_heat = sub.add_parser("heatmap", help="inter-sample correlation diagnostics")
    p_heat.add_argument("--bundle", required=True)
    p_heat.add_argument("--checkpoint", required=True)
    p_heat.add_argument("--classes", type=int, required=True)
    p_heat.add_argument("--per-class", type=int, required=True)
    p_heat.add_argument("--out", required=True)
    p_heat.add_argument("--seed", type=int, default=0)
    p_heat.set_defaults(func=cmd_heatmap)
    return parser


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lr-max", dest="lr_max", type=float, default=None)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    parser.add_argument("--beta1", type=float, default=None)
    parser.add_argument("--beta2", type=float, default=None)
    parser.add_argument("--adam-eps", dest="adam_eps", type=float, default=None)
    parser.add_argument("--t0", type=int, default=None)
    parser.add_argument("--t-mult", dest="t_mult", type=int, default=None)
    parser.add_argument("--lr-min", dest="lr_min", type=float, default=None)
    parser.add_argument("--lambda-node", dest="lambda_node", type=float, default=None)
    parser.add_argument("--lambda-edge", dest="lambda_edge", type=float, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--mode", choices=MODES, default=None)
    parser.add_argument("--kd-temperature", dest="kd_temperature", type=float, default=None)
    parser.add_argument("--reduction", choices=("frobenius", "mean_square"), default=None)
    parser.add_argument("--standardize-nodes", dest="standardize_nodes",
                        action="store_const", const=True, default=None)
    parser.add_argument("--backbone-hidden", dest="backbone_hidden", default=None,
                        help="comma-separated widths, e.g. 128,96")
    parser.add_argument("--feature-dim", dest="feature_dim", type=int, default=None)
    parser.add_argument("--init-seed", dest="init_seed", type=int, default=None)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PRGError, FileNotFoundError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
