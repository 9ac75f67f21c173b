"""cirforge: synthetic caption datasets and evaluation for composed image retrieval.

The toolkit covers the full dataset lifecycle: mining visually similar
image pairs, driving a staged vision-language-model prompting protocol,
permuting difference captions into compound modification texts under a
token budget, attaching distractor images, and scoring retrieval runs.
"""

from cirforge.core import (
    Caption,
    CIRTriplet,
    EmbeddingRecord,
    ImagePair,
    ImageRef,
    ObjectEntry,
    ObjectInventory,
    ValidationConfig,
    cosine_similarity,
    validate_triplet,
)

__version__ = "0.1.0"

__all__ = [
    "Caption",
    "CIRTriplet",
    "EmbeddingRecord",
    "ImagePair",
    "ImageRef",
    "ObjectEntry",
    "ObjectInventory",
    "ValidationConfig",
    "cosine_similarity",
    "validate_triplet",
]
