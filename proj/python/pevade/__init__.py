from ._pevade import (
    ParseError,
    PlanError,
    apply_manipulations,
    check_equivalence,
    edit_cost,
    editable_length,
    functional_digest,
    levenshtein,
    roundtrip,
    score,
    section_names,
    synthesize,
)

__all__ = [
    "ParseError",
    "PlanError",
    "apply_manipulations",
    "check_equivalence",
    "edit_cost",
    "editable_length",
    "functional_digest",
    "levenshtein",
    "roundtrip",
    "score",
    "section_names",
    "synthesize",
]
