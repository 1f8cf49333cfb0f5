"""Detection of GAN-inference artifacts in paired super-resolution outputs.

The toolkit compares a GAN-trained model's output against the smoother
output of a pixel-loss model for the same scene, flags regions whose
local texture diverges beyond what the semantic class tolerates, splices
flagged pixels back to the smooth source to build pseudo ground truth,
and scores masks at pixel and region level.
"""

from .calibration import AdjustmentTable, ClassAccumulator, accumulate, finalize, merge
from .errors import DesraError
from .evaluation import EvalReport, ImageEval, aggregate, evaluate_pair, iou
from .image_io import ManifestRecord, RgbImage, load_rgb, read_manifest, save_rgb, to_luma
from .mask import DetectionConfig, clean_mask, detect, similarity_map
from .pseudo_gt import composite
from .stats import (
    DistanceMap,
    local_sigma,
    texture_distance_abs,
    texture_distance_rel,
    texture_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustmentTable",
    "ClassAccumulator",
    "DesraError",
    "DetectionConfig",
    "DistanceMap",
    "EvalReport",
    "ImageEval",
    "ManifestRecord",
    "RgbImage",
    "accumulate",
    "aggregate",
    "clean_mask",
    "composite",
    "detect",
    "evaluate_pair",
    "finalize",
    "iou",
    "load_rgb",
    "local_sigma",
    "merge",
    "read_manifest",
    "save_rgb",
    "similarity_map",
    "texture_distance_abs",
    "texture_distance_rel",
    "texture_similarity",
    "to_luma",
]
