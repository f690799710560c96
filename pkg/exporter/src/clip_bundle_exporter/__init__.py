"""Offline exporter: runs a frozen vision-language model over an image
dataset and its prompt templates, writing self-contained teacher bundles
in the distillation engine's on-disk format.

The engine is consumed only through that format; this package never
imports it.
"""

from .spec import ExportSpec, load_templates
from .export import export
from .verify import verify_bundle

__version__ = "0.1.0"

__all__ = ["ExportSpec", "load_templates", "export", "verify_bundle", "__version__"]
