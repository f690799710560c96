"""Command line: export a bundle from a real model, or verify one."""

from __future__ import annotations

import argparse
import json
import sys

from .export import export
from .spec import ExportSpec, TemplateError, load_templates
from .verify import verify_bundle


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-bundle-export",
        description="Materialize teacher bundles from a vision-language model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="run the model over a dataset")
    p_exp.add_argument("--dataset", required=True, help="e.g. cifar10")
    p_exp.add_argument("--model", required=True,
                       help="e.g. openai/clip-vit-large-patch14")
    p_exp.add_argument("--templates", required=True,
                       help="file with one {class} template per line")
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--input-repr", choices=("pooled_pixels", "teacher_features"),
                       default="pooled_pixels")
    p_exp.add_argument("--batch-size", type=int, default=64)
    p_exp.add_argument("--device", default="cpu")
    p_exp.add_argument("--limit-train", type=int, default=None)
    p_exp.add_argument("--limit-eval", type=int, default=None)
    p_exp.set_defaults(func=cmd_export)

    p_ver = sub.add_parser("verify", help="recheck a bundle from its files alone")
    p_ver.add_argument("--bundle", required=True)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def cmd_export(args) -> int:
    spec = ExportSpec(
        dataset=args.dataset,
        model=args.model,
        templates=load_templates(args.templates),
        out_dir=args.out,
        device=args.device,
        batch_size=args.batch_size,
        input_repr=args.input_repr,
        limit_train=args.limit_train,
        limit_eval=args.limit_eval,
    )
    path = export(spec)
    report = verify_bundle(path)
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 1


def cmd_verify(args) -> int:
    report = verify_bundle(args.bundle)
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TemplateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
