import json

import numpy as np
import pytest

from metattr import tvet
from metattr.data import TASKS, load_split, make_corpus, make_task, save_corpus
from metattr.grid import GridSpec


@pytest.mark.parametrize("task", sorted(TASKS))
def test_exact_balance(task):
    ds = make_task(task, 40, seed=3)
    assert np.bincount(ds.labels, minlength=TASKS[task]).tolist() == [40 // TASKS[task]] * TASKS[task]
    assert ds.images.shape == (40, 3, 32, 32) and ds.images.dtype == np.float32


def test_deterministic_per_seed():
    a, b = make_task("quadrant", 10, seed=5), make_task("quadrant", 10, seed=5)
    assert a.images.tobytes() == b.images.tobytes()
    assert not np.array_equal(a.images, make_task("quadrant", 10, seed=6).images)


def test_splits_and_tasks_differ():
    assert not np.array_equal(make_task("quadrant", 4, seed=0).images,
                              make_task("quadrant", 4, seed=0, split="test").images)


def test_images_are_channel_centred():
    ds = make_task("blob_shape", 8, seed=1)
    np.testing.assert_allclose(ds.images.mean(axis=(2, 3)), 0, atol=1e-5)


def test_quadrant_label_locates_blob():
    # the blob is the brightest structure; its quadrant must match the label
    ds = make_task("quadrant", 40, seed=2)
    smooth = ds.images[:, 0]
    for img, label in zip(smooth, ds.labels):
        q = [img[:16, :16], img[:16, 16:], img[16:, :16], img[16:, 16:]]
        assert int(np.argmax([b.sum() for b in q])) == label


def test_unknown_task_rejected():
    with pytest.raises(ValueError):
        make_task("colour", 4)


def test_corpus_round_trip(tmp_path):
    grid = GridSpec()
    corpus = make_corpus(grid, seed=0, n_train=8, n_test=4, n_down_train=4, n_down_test=2)
    save_corpus(tmp_path, corpus, grid, 0)
    ds, g = load_split(tmp_path, "quadrant_parity", "train")
    assert g == grid
    np.testing.assert_array_equal(ds.images, corpus[("quadrant_parity", "train")].images)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert {it["task"] for it in manifest["items"]} == set(TASKS)


def test_tampered_image_detected(tmp_path):
    grid = GridSpec()
    save_corpus(tmp_path, make_corpus(grid, 0, 4, 4, 2, 2), grid, 0)
    first = sorted((tmp_path / "images").iterdir())[0]
    tvet.save(first, np.zeros((3, 32, 32)))
    with pytest.raises(tvet.TVETError):
        for task in TASKS:
            for split in ("train", "test"):
                load_split(tmp_path, task, split)
