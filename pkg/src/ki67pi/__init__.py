"""Ki67 proliferation index from IHC images with a UV-Net heatmap regressor."""

__version__ = "0.1.0"

from .annotations import AnnotatedImage, CentroidLabel, Klass, gaussian_encode, load_annotations
from .estimator import HeatmapDetector, UVNetDetector
from .metrics import f1_score, match_centroids, proliferation_index
from .postprocess import DetectionSet, detect
from .uvnet import UVNet, UVNetConfig

__all__ = [
    "AnnotatedImage",
    "CentroidLabel",
    "DetectionSet",
    "HeatmapDetector",
    "Klass",
    "UVNet",
    "UVNetConfig",
    "UVNetDetector",
    "detect",
    "f1_score",
    "gaussian_encode",
    "load_annotations",
    "match_centroids",
    "proliferation_index",
]
