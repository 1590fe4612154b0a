"""Synthetic planted-blob corpora and the on-disk dataset format.

Every image is Gaussian noise with one bright blob (a disc or a ring) placed
inside one of the four quadrants. Tasks differ only in which attribute is the
label:

* ``quadrant``        4 classes, the quadrant holding the blob (pre-training)
* ``quadrant_parity`` 2 classes, left vs right half (quadrant index mod 2)
* ``blob_shape``      2 classes, disc vs ring

Images are centred per channel so that 0 (the masking baseline) is the image mean.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tvet
from .grid import GridSpec

TASKS = {"quadrant": 4, "quadrant_parity": 2, "blob_shape": 2}
PRETRAIN_TASK = "quadrant"
CHANNELS = 3
_CHANNEL_GAIN = np.array([1.0, 0.8, 0.6], dtype=np.float64)
_TASK_KEYS = {name: k for k, name in enumerate(TASKS)}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    task: str
    n_classes: int

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        return Dataset(self.images[index], self.labels[index], self.task, self.n_classes)


def _draw_image(rng, grid, quadrant, shape, noise=0.5, amplitude=1.6):
    W = grid.W
    half = W / 2
    radius = max(1.5, W / 10)
    lo = radius + 1
    hi = half - radius - 1
    cy = (quadrant // 2) * half + rng.uniform(lo, max(lo, hi))
    cx = (quadrant % 2) * half + rng.uniform(lo, max(lo, hi))
    yy, xx = np.mgrid[0:W, 0:W] + 0.5
    dist = np.hypot(yy - cy, xx - cx)
    if shape == 0:
        blob = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    else:
        blob = np.clip(0.9 - np.abs(dist - radius), 0.0, 1.0)
    img = rng.normal(0.0, noise, size=(CHANNELS, W, W))
    img += amplitude * _CHANNEL_GAIN[:, None, None] * blob[None]
    img -= img.mean(axis=(1, 2), keepdims=True)
    return img.astype(np.float32)


def _balanced_labels(rng, n, n_classes):
    labels = np.arange(n) % n_classes
    return rng.permutation(labels)


def make_task(task, n, grid=GridSpec(), seed=0, split="train"):
    """Generate ``n`` images for ``task`` with an exactly balanced label quota."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    n_classes = TASKS[task]
    split_key = 0 if split == "train" else 1
    root = np.random.SeedSequence(seed, spawn_key=(_TASK_KEYS[task], split_key))
    labels = _balanced_labels(np.random.default_rng(root), n, n_classes)
    images = np.empty((n, CHANNELS, grid.W, grid.W), dtype=np.float32)
    for k, child in enumerate(root.spawn(n)):
        rng = np.random.default_rng(child)
        label = int(labels[k])
        if task == "quadrant":
            quadrant, shape = label, int(rng.integers(2))
        elif task == "quadrant_parity":
            quadrant, shape = label + 2 * int(rng.integers(2)), int(rng.integers(2))
        else:
            quadrant, shape = int(rng.integers(4)), label
        images[k] = _draw_image(rng, grid, quadrant, shape)
    return Dataset(images, labels, task, n_classes)


def make_corpus(grid=GridSpec(), seed=0, n_train=2000, n_test=400, n_down_train=600, n_down_test=200):
    """All splits: the pre-training task plus every downstream task."""
    sizes = {PRETRAIN_TASK: (n_train, n_test)}
    sizes.update({t: (n_down_train, n_down_test) for t in TASKS if t != PRETRAIN_TASK})
    corpus = {}
    for task, (ntr, nte) in sizes.items():
        corpus[(task, "train")] = make_task(task, ntr, grid, seed, "train")
        corpus[(task, "test")] = make_task(task, nte, grid, seed, "test")
    return corpus


def save_corpus(path, corpus, grid, seed):
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    items = []
    for (task, split), ds in corpus.items():
        for k in range(len(ds)):
            name = f"images/{task}_{split}_{k:05d}.tvet"
            digest = tvet.save(path / name, ds.images[k])
            items.append({"file": name, "label": int(ds.labels[k]), "task": task,
                          "split": split, "sha256": digest})
    manifest = {"format": "metattr-dataset/1", "grid": grid.to_dict(), "seed": seed,
                "tasks": {t: TASKS[t] for t in sorted({t for t, _ in corpus})}, "items": items}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_split(path, task, split):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if task not in manifest["tasks"]:
        raise ValueError(f"dataset at {path} has no task {task!r}")
    rows = [it for it in manifest["items"] if it["task"] == task and it["split"] == split]
    if not rows:
        raise ValueError(f"dataset at {path} has no {split} split for {task!r}")
    images = np.stack([tvet.load(path / it["file"], it.get("sha256")) for it in rows])
    labels = np.array([it["label"] for it in rows])
    return Dataset(images, labels, task, manifest["tasks"][task]), GridSpec(**manifest["grid"])
