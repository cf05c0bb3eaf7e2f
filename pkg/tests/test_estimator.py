import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ki67pi import HeatmapDetector, UVNetDetector
from ki67pi.annotations import CentroidLabel, Klass, gaussian_encode
from ki67pi.postprocess import DetectionSet
from ki67pi.synthgen import SynthConfig, generate_dataset
from ki67pi.uvnet import save_checkpoint

SMALL = SynthConfig(image_size=64, n_neg_range=(2, 3), n_pos_range=(1, 2), distractor_fraction=0.0)


def small_data(n, seed=0):
    items = generate_dataset(SMALL, n, seed=seed)
    return [i.pixels for i in items], [i.labels for i in items]


def tiny_estimator(**kw):
    params = dict(base_f=4, depth=2, epochs=1, batch_size=2, tile_size=64, seed=0)
    params.update(kw)
    return UVNetDetector(**params)


def test_get_set_params_and_clone():
    est = tiny_estimator(sigma=3.0)
    params = est.get_params()
    assert params["sigma"] == 3.0 and params["base_f"] == 4 and params["match_radius"] == 6.0
    est.set_params(depth=3)
    assert est.depth == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        tiny_estimator().predict([np.zeros((64, 64, 3), np.uint8)])


def test_fit_predict_transform():
    X, y = small_data(4)
    est = tiny_estimator().fit(X, y, eval_set=small_data(2, seed=9))
    assert len(est.history_.train_loss) == 1
    odd = np.random.default_rng(0).integers(0, 256, (100, 70, 3), dtype=np.uint8)
    heatmaps = est.transform([X[0], odd])
    assert heatmaps[0].shape == (64, 64, 3) and heatmaps[1].shape == (100, 70, 3)
    dets = est.predict(X[:2], image_ids=["a", "b"])
    assert all(isinstance(d, DetectionSet) for d in dets)
    assert [d.source_image_id for d in dets] == ["a", "b"]
    assert 0.0 <= est.score(X, y) <= 1.0
    records = est.predict_pi(X[:2], image_ids=["a", "b"])
    assert [r.image_id for r in records] == ["a", "b"]


def test_fit_is_reproducible():
    X, y = small_data(4)
    a = tiny_estimator().fit(X, y)
    b = tiny_estimator().fit(X, y)
    assert a.history_.train_loss == b.history_.train_loss
    np.testing.assert_array_equal(a.transform(X[:1])[0], b.transform(X[:1])[0])


def test_fit_accepts_triples():
    X, _ = small_data(2)
    y = [[(10, 10, "pos"), (30, 30, Klass.KI67_NEG)], []]
    tiny_estimator().fit(X, y)


@pytest.mark.parametrize(
    "X, y",
    [
        ([np.zeros((64, 64), np.uint8)], [[]]),
        ([np.zeros((64, 64, 3), np.uint8)], [[], []]),
        ([np.zeros((64, 64, 3), np.uint8)], [[CentroidLabel(64, 0, Klass.KI67_POS)]]),
        ([np.full((64, 64, 3), 2.0)], [[]]),
    ],
)
def test_fit_validates_input(X, y):
    with pytest.raises(ValueError):
        tiny_estimator().fit(X, y)


def test_from_checkpoint(tmp_path):
    X, y = small_data(2)
    est = tiny_estimator().fit(X, y)
    save_checkpoint(tmp_path / "m.pt", est.model_)
    back = UVNetDetector.from_checkpoint(tmp_path / "m.pt", tile_size=64)
    assert (back.base_f, back.depth) == (4, 2)
    np.testing.assert_array_equal(back.transform(X[:1])[0], est.transform(X[:1])[0])


def test_heatmap_detector_on_rendered_targets():
    labels = [CentroidLabel(20, 20, Klass.KI67_POS), CentroidLabel(60, 50, Klass.KI67_NEG)]
    hm = gaussian_encode((80, 80), labels, 2.0)
    det = HeatmapDetector().fit([hm])
    assert det.predict(hm)[0].counts() == (1, 1)
    assert det.score([hm], [labels]) == 1.0
    assert HeatmapDetector(median_kernel=5).get_params()["median_kernel"] == 5


def test_heatmap_detector_rejects_bad_heatmap():
    with pytest.raises(ValueError):
        HeatmapDetector().predict([np.zeros((8, 8, 2))])
