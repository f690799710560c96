"""Export configuration and prompt-template handling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

PLACEHOLDER = "{class}"

INPUT_REPRS = ("pooled_pixels", "teacher_features")


class TemplateError(ValueError):
    """A prompt template does not carry exactly one class placeholder."""


@dataclass(frozen=True)
class ExportSpec:
    dataset: str
    model: str
    templates: tuple[str, ...]
    out_dir: str
    device: str = "cpu"
    batch_size: int = 64
    input_repr: str = "pooled_pixels"
    limit_train: int | None = None
    limit_eval: int | None = None

    def __post_init__(self):
        if len(self.templates) < 1:
            raise TemplateError("need at least one prompt template")
        for i, tpl in enumerate(self.templates):
            if tpl.count(PLACEHOLDER) != 1:
                raise TemplateError(
                    f"template {i} ({tpl!r}) must contain exactly one "
                    f"{PLACEHOLDER} placeholder")
        if self.input_repr not in INPUT_REPRS:
            raise ValueError(f"input_repr must be one of {INPUT_REPRS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def load_templates(path) -> tuple[str, ...]:
    """One template per line; blank lines and '#' comments skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    templates = tuple(line.strip() for line in lines
                      if line.strip() and not line.lstrip().startswith("#"))
    if not templates:
        raise TemplateError(f"no templates found in {path}")
    return templates


def fill_template(template: str, class_name: str) -> str:
    return template.replace(PLACEHOLDER, class_name)
