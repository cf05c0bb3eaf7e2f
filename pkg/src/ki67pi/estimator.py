"""scikit-learn style front ends for the detector and its post-processing stage."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import postprocess as pp
from ._validation import check_heatmap, check_images, check_label_sets
from .annotations import DEFAULT_SIGMA, Klass, gaussian_encode
from .evaluation import evaluate
from .metrics import DEFAULT_MATCH_RADIUS, PIRecord
from .pipeline import predict_heatmap
from .tiling import DEFAULT_TILE_SIZE
from .training import TrainConfig, seed_everything, train
from .uvnet import UVNet, UVNetConfig, load_checkpoint


def _mean_f1(predictions, label_sets, match_radius):
    preds = {str(i): d for i, d in enumerate(predictions)}
    gts = {str(i): lbls for i, lbls in enumerate(label_sets)}
    agg = evaluate(preds, gts, match_radius=match_radius).aggregates
    return 0.5 * (agg["f1_pos_pooled"] + agg["f1_neg_pooled"])


class HeatmapDetector(BaseEstimator):
    """Turns H x W x 3 heatmaps into classed centroids.

    Stateless; ``fit`` only validates its input so the object can sit at the
    end of a pipeline.
    """

    def __init__(self, median_kernel=pp.DEFAULT_MEDIAN_KERNEL, min_distance=pp.DEFAULT_MIN_DISTANCE,
                 min_area=pp.DEFAULT_MIN_AREA, min_threshold=pp.DEFAULT_MIN_THRESHOLD,
                 min_foreground_fraction=pp.DEFAULT_MIN_FOREGROUND_FRACTION,
                 match_radius=DEFAULT_MATCH_RADIUS):
        self.median_kernel = median_kernel
        self.min_distance = min_distance
        self.min_area = min_area
        self.min_threshold = min_threshold
        self.min_foreground_fraction = min_foreground_fraction
        self.match_radius = match_radius

    def _detect_params(self):
        return dict(median_kernel=self.median_kernel, min_distance=self.min_distance,
                    min_area=self.min_area, min_threshold=self.min_threshold,
                    min_foreground_fraction=self.min_foreground_fraction)

    def fit(self, X, y=None):
        for i, h in enumerate(_as_list(X)):
            check_heatmap(h, f"X[{i}]")
        self.is_fitted_ = True
        return self

    def predict(self, X, image_ids=None):
        heatmaps = [check_heatmap(h, f"X[{i}]") for i, h in enumerate(_as_list(X))]
        ids = image_ids or [""] * len(heatmaps)
        return [pp.detect(h, image_id, **self._detect_params()) for h, image_id in zip(heatmaps, ids)]

    def score(self, X, y):
        heatmaps = _as_list(X)
        return _mean_f1(self.predict(heatmaps), y, self.match_radius)


def _as_list(X):
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [X]
    return list(X)


class UVNetDetector(HeatmapDetector):
    """Ki67 nucleus detector: UV-Net heatmap regression plus classical post-processing.

    ``fit(X, y)`` takes RGB images and per-image lists of CentroidLabel (or
    ``(x, y, klass)`` triples); ``transform`` returns stitched heatmaps,
    ``predict`` returns DetectionSets and ``score`` the mean of the pooled
    Ki67+ and Ki67- F1 scores.

    Parameters
    ----------
    base_f, depth, batch_norm : architecture, see UVNetConfig.
    sigma : Gaussian width in pixels used to encode training targets.
    epochs, batch_size, learning_rate, huber_delta, augmentations, seed,
    deterministic : training protocol, see TrainConfig.
    tile_size : inference tile edge; images of any size are tiled and stitched.
    median_kernel, min_distance, min_area, min_threshold,
    min_foreground_fraction : post-processing, see postprocess.detect.
    match_radius : centroid matching radius used by ``score``.
    checkpoint_path : where the best-validation weights are written during fit.
    """

    def __init__(self, base_f=16, depth=4, batch_norm=False, sigma=DEFAULT_SIGMA, epochs=100,
                 batch_size=4, learning_rate=1e-3, huber_delta=1.0,
                 augmentations=("hflip", "vflip", "scale"), seed=0, deterministic=True,
                 tile_size=DEFAULT_TILE_SIZE, median_kernel=pp.DEFAULT_MEDIAN_KERNEL,
                 min_distance=pp.DEFAULT_MIN_DISTANCE, min_area=pp.DEFAULT_MIN_AREA,
                 min_threshold=pp.DEFAULT_MIN_THRESHOLD,
                 min_foreground_fraction=pp.DEFAULT_MIN_FOREGROUND_FRACTION,
                 match_radius=DEFAULT_MATCH_RADIUS, checkpoint_path=None):
        super().__init__(median_kernel=median_kernel, min_distance=min_distance, min_area=min_area,
                         min_threshold=min_threshold, min_foreground_fraction=min_foreground_fraction,
                         match_radius=match_radius)
        self.base_f = base_f
        self.depth = depth
        self.batch_norm = batch_norm
        self.sigma = sigma
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.huber_delta = huber_delta
        self.augmentations = augmentations
        self.seed = seed
        self.deterministic = deterministic
        self.tile_size = tile_size
        self.checkpoint_path = checkpoint_path

    def model_config(self) -> UVNetConfig:
        return UVNetConfig(base_f=self.base_f, depth=self.depth, batch_norm=self.batch_norm)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           huber_delta=self.huber_delta, augmentations=tuple(self.augmentations),
                           seed=self.seed, sigma=self.sigma, deterministic=self.deterministic)

    def _encode(self, images, label_sets):
        return [(img, gaussian_encode(img.shape[:2], lbls, self.sigma)) for img, lbls in zip(images, label_sets)]

    def fit(self, X, y, eval_set=None):
        """Train from scratch. ``eval_set=(X_val, y_val)`` drives best-epoch selection."""
        images = check_images(X)
        labels = check_label_sets(y, images)
        val = None
        if eval_set is not None:
            val_images = check_images(eval_set[0])
            val = self._encode(val_images, check_label_sets(eval_set[1], val_images))
        config = self.train_config()
        # seed before construction so initial weights follow the seed too
        seed_everything(config.seed, config.deterministic)
        model = UVNet(self.model_config())
        self.model_, self.history_ = train(model, self._encode(images, labels), config, val,
                                           checkpoint_path=self.checkpoint_path)
        return self

    @classmethod
    def from_checkpoint(cls, path, **params) -> "UVNetDetector":
        model = load_checkpoint(path)
        c = model.config
        est = cls(base_f=c.base_f, depth=c.depth, batch_norm=c.batch_norm, **params)
        est.model_ = model
        est.history_ = None
        return est

    def transform(self, X):
        check_is_fitted(self, "model_")
        return [predict_heatmap(img, self.model_, self.tile_size) for img in check_images(X)]

    def predict(self, X, image_ids=None):
        return HeatmapDetector.predict(self, self.transform(X), image_ids)

    def predict_pi(self, X, image_ids=None):
        """Per-image PIRecords; the index is None when no nucleus was found."""
        dets = self.predict(X, image_ids)
        return [PIRecord(d.source_image_id, *d.counts()) for d in dets]

    def score(self, X, y):
        images = check_images(X)
        return _mean_f1(self.predict(images), check_label_sets(y, images), self.match_radius)


__all__ = ["HeatmapDetector", "UVNetDetector", "Klass"]
