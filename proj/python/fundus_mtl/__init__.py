"""Optic disc/cup segmentation and glaucoma prediction (C++ core with numpy bindings)."""

from ._core import (
    Ensemble,
    FundusError,
    architecture_summary,
    crop_roi,
    fit_ellipse,
    hard_dice,
    locate_disc,
    postprocess_pair,
    rasterize_ellipse,
    roc_auc,
    soft_dice,
    stratified_kfold,
    synth_dataset,
    vertical_cdr,
    youden_cutoff,
)

__all__ = [
    "Ensemble",
    "FundusError",
    "architecture_summary",
    "crop_roi",
    "fit_ellipse",
    "hard_dice",
    "locate_disc",
    "postprocess_pair",
    "rasterize_ellipse",
    "roc_auc",
    "soft_dice",
    "stratified_kfold",
    "synth_dataset",
    "vertical_cdr",
    "youden_cutoff",
]
