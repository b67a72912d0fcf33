"""rodfind: text-to-shape retrieval for parametric linking rods.

Library layout mirrors the pipeline: taxonomy (feature schema and canonical
text), geometry (CSG solids, STL, voxel grids), dataset (paired corpus and
its codecs), encoders (text and shape networks), training (bidirectional
triplet objective), doe (orthogonal-experiment tuning), retrieval (gallery
index and queries), cli (batch front end).
"""

from . import dataset, doe, encoders, geometry, retrieval, taxonomy, training
from .taxonomy import (
    FeatureSchema,
    FeatureTriplet,
    LinkingRodSpec,
    SizeClass,
    default_schema,
    load_schema,
    parse_text,
    render_text,
    spec_to_triplets,
    validate_spec,
)

__version__ = "0.1.0"
