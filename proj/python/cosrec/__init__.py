"""CosRec sequential recommender (C++ engine)."""

from ._cosrec import (
    Dataset,
    Metrics,
    Model,
    NumericError,
    evaluate_poprec,
    real_is_double,
    run_cli,
    train,
)

__all__ = [
    "Dataset",
    "Metrics",
    "Model",
    "NumericError",
    "evaluate_poprec",
    "real_is_double",
    "run_cli",
    "train",
]
