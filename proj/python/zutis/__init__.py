"""Zero-shot instance and semantic segmentation from retrieved pseudo-labels."""

from ._zutis import (
    ArgumentError,
    DataError,
    IoError,
    NumericError,
    RunConfig,
    bce_mask_loss,
    binary_iou,
    build_archives,
    compute_mask_ap,
    compute_miou,
    dice_loss,
    evaluate,
    generate_shapes_corpus,
    hungarian_match,
    make_pseudo_labels,
    mask_nms,
    predict,
    predict_image,
    rle_decode,
    rle_encode,
    run_ablation,
    run_demo,
    semantic_ce_loss,
    train,
)

__all__ = [
    "ArgumentError",
    "DataError",
    "IoError",
    "NumericError",
    "RunConfig",
    "bce_mask_loss",
    "binary_iou",
    "build_archives",
    "compute_mask_ap",
    "compute_miou",
    "dice_loss",
    "evaluate",
    "generate_shapes_corpus",
    "hungarian_match",
    "make_pseudo_labels",
    "mask_nms",
    "predict",
    "predict_image",
    "rle_decode",
    "rle_encode",
    "run_ablation",
    "run_demo",
    "semantic_ce_loss",
    "train",
]
