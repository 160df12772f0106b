"""Segmentation-first instance segmentation toolkit (pybind11 bindings)."""

from ._core import (
    __version__,
    average_precision,
    argmax_channels,
    bootstrapped_cross_entropy,
    box_iou,
    compute_fov,
    eval_instances,
    eval_semantic,
    fov_table,
    generate_dataset,
    generate_sample,
    read_tensor,
    run_instance_pipeline,
    semantic_metrics,
    smoothed_l1,
    softmax_channels,
    train_localization,
    train_semantic,
    write_tensor,
)

__all__ = [
    "__version__",
    "average_precision",
    "argmax_channels",
    "bootstrapped_cross_entropy",
    "box_iou",
    "compute_fov",
    "eval_instances",
    "eval_semantic",
    "fov_table",
    "generate_dataset",
    "generate_sample",
    "read_tensor",
    "run_instance_pipeline",
    "semantic_metrics",
    "smoothed_l1",
    "softmax_channels",
    "train_localization",
    "train_semantic",
    "write_tensor",
]
