import itertools

import numpy as np
import pytest
from PIL import Image

from ki67pi.annotations import Klass, load_annotations
from ki67pi.metrics import f1_score, match_centroids
from ki67pi.synthgen import (
    GenerationError,
    SynthConfig,
    generate_dataset,
    generate_image,
    read_manifest,
    split_counts,
    write_dataset,
)


def fixed(**kw):
    base = dict(n_neg_range=(3, 3), n_pos_range=(1, 1), nucleus_radius_range=(5.0, 5.0),
                overlap_fraction=0.0, distractor_fraction=0.0)
    base.update(kw)
    return SynthConfig(**base)


def test_exact_counts_and_separation():
    for seed in range(10):
        img = generate_image(fixed(), seed)
        assert len(img.labels) == 4
        assert sum(l.klass is Klass.KI67_POS for l in img.labels) == 1
        for a, b in itertools.combinations(img.labels, 2):
            assert np.hypot(a.x - b.x, a.y - b.y) > 10


def test_same_seed_bit_identical():
    a = generate_image(SynthConfig(), 7)
    b = generate_image(SynthConfig(), 7)
    assert np.array_equal(a.pixels, b.pixels) and a.labels == b.labels
    assert not np.array_equal(a.pixels, generate_image(SynthConfig(), 8).pixels)


def test_distractor_patch():
    img = generate_image(SynthConfig(distractor_fraction=1.0), 3)
    assert img.labels == []
    assert img.pixels.astype(float).var() > 0


def test_pixels_and_bounds():
    img = generate_image(SynthConfig(image_size=128, overlap_fraction=0.5), 1)
    assert img.pixels.shape == (128, 128, 3) and img.pixels.dtype == np.uint8
    assert all(l.in_bounds(img.shape) for l in img.labels)


def classify_by_colour(pixels, x, y):
    patch = pixels[max(y - 1, 0) : y + 2, max(x - 1, 0) : x + 2].reshape(-1, 3).astype(float).mean(0)
    return Klass.KI67_POS if patch[0] > patch[2] else Klass.KI67_NEG


def test_oracle_detector_scores_perfectly():
    # detector that looks only at the pixels under each recorded centre
    config = SynthConfig(overlap_fraction=0.0, distractor_fraction=0.0, noise_sigma=4.0)
    for item in generate_dataset(config, 8, seed=5):
        dets = [(l.x, l.y, classify_by_colour(item.pixels, l.x, l.y)) for l in item.labels]
        for klass in Klass:
            m = match_centroids([(x, y) for x, y, k in dets if k is klass],
                                [(l.x, l.y) for l in item.labels if l.klass is klass], 6)
            assert f1_score(m) == 1.0


def close_pairs(config, seeds):
    total = 0
    for s in seeds:
        img = generate_image(config, s)
        radius = config.nucleus_radius_range[1]
        for a, b in itertools.combinations(img.labels, 2):
            total += np.hypot(a.x - b.x, a.y - b.y) < 1.5 * radius
    return total


def test_overlap_fraction_monotone_in_aggregate():
    seeds = range(12)
    counts = [close_pairs(fixed(n_neg_range=(10, 10), n_pos_range=(4, 4), overlap_fraction=f), seeds)
              for f in (0.0, 0.3, 0.7)]
    assert counts[0] == 0
    assert counts[0] <= counts[1] <= counts[2]
    assert counts[2] > counts[0]


def test_impossible_placement_raises():
    with pytest.raises(GenerationError):
        generate_image(fixed(image_size=24, n_neg_range=(40, 40)), 0)


@pytest.mark.parametrize("kw", [dict(n_neg_range=(5, 2)), dict(overlap_fraction=1.5), dict(distractor_fraction=-0.1),
                                dict(nucleus_radius_range=(0.0, 2.0))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


@pytest.mark.parametrize("n, counts", [(10, [6, 2, 2]), (100, [62, 20, 18]), (1, [1, 0, 0]), (3, [2, 1, 0])])
def test_split_counts(n, counts):
    assert split_counts(n, (0.62, 0.20, 0.18)) == counts


def test_write_dataset(tmp_path):
    images = generate_dataset(SynthConfig(image_size=64, n_neg_range=(1, 3), n_pos_range=(0, 2)), 10, seed=2)
    manifest = write_dataset(tmp_path, images, seed=4)
    rows = read_manifest(manifest)
    assert [r["split"] for r in rows].count("train") == 6
    assert [r["split"] for r in rows].count("val") == 2
    for row, item in zip(rows, images):
        assert np.array_equal(np.asarray(Image.open(row["image"])), item.pixels)
        assert load_annotations(row["annotations"], (64, 64)) == item.labels
    again = tmp_path / "again"
    write_dataset(again, images, seed=4)
    assert (again / "manifest.csv").read_text() == manifest.read_text()
