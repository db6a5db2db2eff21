"""Bridge from pretrained vision models to the gating engine's on-disk
feature format (TZR tensors plus a JSON feature manifest)."""

from .export import ExportError, ExportSpec, export_features, load_dataset, load_model, write_tzr

__version__ = "0.1.0"
