"""Exporter: runs a detector over images and writes detrefine scene records.

All refinement logic lives in the primary engine; this package only
captures per-proposal pooled features, converts boxes to the engine's
(cx, cy, w, h, theta) convention, and writes the interchange format.
"""

from .boxes import aligned_to_rotated, annotation_to_box
from .manifest import ExportManifest
from .export import ExportError, export_features

__all__ = [
    "ExportManifest",
    "ExportError",
    "export_features",
    "aligned_to_rotated",
    "annotation_to_box",
]
