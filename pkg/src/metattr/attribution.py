"""Patch attributions: two-state log-ratio, Monte-Carlo oracle, meta-attribution transfer."""

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, PatchId, PatchSubset, apply_masks, complement, neighbor_matrix, neighbors
from .validation import check_class

PROVENANCES = ("exact_eq5", "transferred_eq7", "amortized_eq9", "mc_oracle_eq3", "random_control")


@dataclass
class MetaAttribution:
    """Per-patch embedding pair: g[z] = G(N(z); x), h[z] = G(Z \\ N(z); x).

    ``g`` and ``h`` are float32 [P, P, D]; ``source`` is ``"exact"`` or ``"predicted"``.
    """

    g: np.ndarray
    h: np.ndarray
    grid: GridSpec
    source: str = "exact"

    def __post_init__(self):
        P = self.grid.P
        if self.g.shape != self.h.shape or self.g.shape[:2] != (P, P):
            raise ValueError(f"g {self.g.shape} / h {self.h.shape} do not fit a {P}x{P} grid")
        if self.source not in ("exact", "predicted"):
            raise ValueError(f"unknown source {self.source!r}")
        if not (np.isfinite(self.g).all() and np.isfinite(self.h).all()):
            raise ValueError("meta-attribution is not finite")

    @property
    def embed_dim(self):
        return self.g.shape[-1]

    def stacked(self):
        """[P², 2D] with g in the first D columns."""
        n = self.grid.n_patches
        return np.concatenate([self.g.reshape(n, -1), self.h.reshape(n, -1)], axis=1)


@dataclass
class ExplanationHeatmap:
    values: np.ndarray
    y: int
    provenance: str
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(self.grid.P, self.grid.P)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.isfinite(self.values).all():
            raise ValueError("heatmap is not finite")


def _masks_for(z, grid):
    nb = neighbors(z, grid)
    return nb, complement(nb, grid)


def exact_attribution(target, image, z, y):
    """log f(N(z); x, y) - log f(Z \\ N(z); x, y)."""
    y = check_class(y, target.n_classes)
    nb, rest = _masks_for(z, target.grid)
    p = target.masked_proba(image, np.stack([nb.mask(), rest.mask()]))[:, y].astype(np.float64)
    return float(np.log(p[0]) - np.log(p[1]))


def exact_heatmap(target, image, y):
    """Two-state attributions of every patch from 2P² masked model evaluations."""
    y = check_class(y, target.n_classes)
    nb = neighbor_matrix(target.grid)
    p = target.masked_proba(image, np.concatenate([nb, ~nb]))[:, y].astype(np.float64)
    n = target.grid.n_patches
    return ExplanationHeatmap(np.log(p[:n]) - np.log(p[n:]), y, "exact_eq5", target.grid)


def mc_attribution(target, image, z, y, n_samples=16, rng=None, subsets=None):
    """Mean of log f(N(z) ∪ B) - log f(B) over background subsets B ⊆ Z \\ N(z).

    B is drawn by keeping each background patch with probability 1/2, unless
    ``subsets`` lists the B's to use explicitly.
    """
    y = check_class(y, target.n_classes)
    grid = target.grid
    nb, rest = _masks_for(z, grid)
    if subsets is None:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if rng is None:
            raise ValueError("rng is required when sampling subsets")
        members = np.array(rest.indices(), dtype=np.int64)
        draws = rng.random((n_samples, len(members))) < 0.5
        bg = np.zeros((n_samples, grid.n_patches), dtype=bool)
        bg[:, members] = draws
    else:
        bg = np.stack([s.mask() for s in subsets])
        if (bg & nb.mask()).any():
            raise ValueError("background subsets must avoid N(z)")
    p = target.masked_proba(image, np.concatenate([bg, bg | nb.mask()]))[:, y].astype(np.float64)
    k = len(bg)
    return float(np.mean(np.log(p[k:]) - np.log(p[:k])))


def compute_meta_attribution(encoder, image, grid=None):
    """Exact meta-attribution from 2P² masked encoder calls."""
    grid = grid or encoder.grid
    nb = neighbor_matrix(grid)
    emb = encoder.encode(apply_masks(image, np.concatenate([nb, ~nb]), grid))
    n, P = grid.n_patches, grid.P
    return MetaAttribution(emb[:n].reshape(P, P, -1), emb[n:].reshape(P, P, -1), grid, "exact")


def transfer_explain(meta, head, y):
    """phi[z] = log H(g[z]; y) - log H(h[z]; y), one batched head evaluation."""
    if meta.embed_dim != head.embed_dim:
        raise ValueError(f"meta-attribution D={meta.embed_dim} but head expects {head.embed_dim}")
    y = check_class(y, head.n_classes)
    n = meta.grid.n_patches
    both = np.concatenate([meta.g.reshape(n, -1), meta.h.reshape(n, -1)])
    logp = head.log_prob(both, y)
    provenance = "transferred_eq7" if meta.source == "exact" else "amortized_eq9"
    return ExplanationHeatmap(logp[:n] - logp[n:], y, provenance, meta.grid)


def random_control(rng, grid, y=None):
    """I.i.d. uniform[-1, 1] scores; a control with no information about the model."""
    values = rng.uniform(-1.0, 1.0, size=(grid.P, grid.P))
    return ExplanationHeatmap(values, y, "random_control", grid)


def image_rng(seed, index):
    """Independent generator for image ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


__all__ = ["MetaAttribution", "ExplanationHeatmap", "PatchId", "PatchSubset", "exact_attribution",
           "exact_heatmap", "mc_attribution", "compute_meta_attribution", "transfer_explain",
           "random_control", "image_rng"]
