"""Back-and-forth systems, flat structures, subgroup codes and reductions on finite structures."""

from .structures import (
    FinStructure,
    Formula,
    QfDiagram,
    SubseqMap,
    Vocabulary,
    eval_formula,
    parse_structure,
    qf_type,
    relationalize,
    serialize_structure,
    subsequence,
)
from .backforth import (
    Report,
    TruncatedSystem,
    compute_F_infinity,
    downward_closure,
    orbit_oracle,
    sharp_closure,
    validate_sharp,
)

__all__ = [
    "FinStructure",
    "Formula",
    "QfDiagram",
    "Report",
    "SubseqMap",
    "TruncatedSystem",
    "Vocabulary",
    "compute_F_infinity",
    "downward_closure",
    "eval_formula",
    "orbit_oracle",
    "parse_structure",
    "qf_type",
    "relationalize",
    "serialize_structure",
    "sharp_closure",
    "subsequence",
    "validate_sharp",
]
