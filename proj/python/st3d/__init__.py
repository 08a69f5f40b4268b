"""Python bindings for the st3d imputation library."""

from ._core import (
    DataError,
    DegenerateFeatureError,
    Error,
    FormatError,
    GeometryError,
    SampleStack,
    SyntheticSpec,
    TrainingDivergedError,
    UsageError,
    build_2d_graph,
    build_3d_graph,
    circle_iou,
    cosine_similarity,
    cross_layer_expression_correlation,
    cross_layer_weight,
    generate_synthetic,
    load_dataset,
    metric_mae,
    metric_mse,
    metric_pcc,
    propagate,
    run_experiment,
    save_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
