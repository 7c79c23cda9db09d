"""Trajectory prediction workbench: synthetic scenario generation, a
selective state-space sequence model, training/evaluation harness and the
fused scan primitive.

Structured data crosses the boundary as JSON text (configs, scenarios,
reports) and numpy arrays (the scan); see `default_config()` for the full
configuration surface.
"""

from tamba._core import (
    DimensionError,
    Error,
    NumericError,
    ValidationError,
    default_config,
    derive_seed,
    evaluate,
    generate_dataset,
    generate_scenario,
    predict,
    selective_scan,
    train,
    validate_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "Error",
    "NumericError",
    "ValidationError",
    "default_config",
    "derive_seed",
    "evaluate",
    "generate_dataset",
    "generate_scenario",
    "predict",
    "selective_scan",
    "train",
    "validate_scenario",
    "__version__",
]
