"""Token-graph document layout analysis.

Builds visibility graphs over word-level page tokens, attaches geometric,
textual, and representation-embedding features to every node, classifies
nodes with a weighted GraphSAGE-GCN, and post-processes predictions into
labeled blocks with metrics and overlay rendering.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    BBox,
    Document,
    Page,
    RegionAnnotation,
    Token,
    TokenLabel,
    load_document,
    load_regions,
    save_document,
    save_regions,
    validate_document,
    validate_page,
)
