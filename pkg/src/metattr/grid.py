"""Patch grids, neighbourhoods, patch subsets and pixel masking."""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

METRICS = ("chebyshev", "manhattan")


@dataclass(frozen=True)
class GridSpec:
    """A W x W image cut into P x P square patches of side C."""

    W: int = 32
    C: int = 4
    P: int = 8
    hop_radius: int = 2
    metric: str = "chebyshev"

    def __post_init__(self):
        if self.P < 1 or self.C < 1 or self.hop_radius < 0:
            raise ValueError(f"invalid grid {self}")
        if self.W != self.C * self.P:
            raise ValueError(f"W={self.W} must equal C*P={self.C * self.P}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")

    @classmethod
    def vit_base(cls):
        return cls(W=224, C=16, P=14)

    @property
    def n_patches(self):
        return self.P * self.P

    def to_dict(self):
        return {"W": self.W, "C": self.C, "P": self.P, "hop_radius": self.hop_radius, "metric": self.metric}


class PatchId(NamedTuple):
    """1-based (row, column) patch coordinates."""

    i: int
    j: int

    def flat(self, P):
        return (self.i - 1) * P + (self.j - 1)

    @classmethod
    def from_flat(cls, index, P):
        return cls(index // P + 1, index % P + 1)


def _check_patch(z, spec):
    if not (1 <= z.i <= spec.P and 1 <= z.j <= spec.P):
        raise ValueError(f"patch {tuple(z)} outside a {spec.P}x{spec.P} grid")


@dataclass(frozen=True)
class PatchSubset:
    """Set of patches stored as a bitmask; bit ``(i-1)*P + (j-1)`` is patch (i, j)."""

    bits: int
    P: int

    def __post_init__(self):
        if self.bits < 0 or self.bits >> (self.P * self.P):
            raise ValueError("bitmask exceeds the grid")

    @classmethod
    def empty(cls, P):
        return cls(0, P)

    @classmethod
    def full(cls, P):
        return cls((1 << (P * P)) - 1, P)

    @classmethod
    def from_indices(cls, indices, P):
        bits = 0
        for k in indices:
            if not 0 <= k < P * P:
                raise ValueError(f"patch index {k} outside a {P}x{P} grid")
            bits |= 1 << int(k)
        return cls(bits, P)

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool).ravel()
        P = int(round(np.sqrt(mask.size)))
        if P * P != mask.size:
            raise ValueError(f"mask of size {mask.size} is not a square grid")
        return cls.from_indices(np.flatnonzero(mask), P)

    @classmethod
    def from_hex(cls, text, P):
        return cls(int(text, 16), P)

    def to_hex(self):
        return format(self.bits, f"0{(self.P * self.P + 3) // 4}x")

    def indices(self):
        """Flat patch indices in row-major order."""
        return [k for k in range(self.P * self.P) if self.bits >> k & 1]

    def patches(self):
        return [PatchId.from_flat(k, self.P) for k in self.indices()]

    def mask(self):
        return np.array([self.bits >> k & 1 for k in range(self.P * self.P)], dtype=bool)

    def __len__(self):
        return bin(self.bits).count("1")

    def __iter__(self):
        return iter(self.patches())

    def __contains__(self, z):
        k = z.flat(self.P) if isinstance(z, PatchId) else int(z)
        return bool(self.bits >> k & 1)

    def _same_grid(self, other):
        if self.P != other.P:
            raise ValueError(f"subsets live on different grids ({self.P} vs {other.P})")

    def __and__(self, other):
        self._same_grid(other)
        return PatchSubset(self.bits & other.bits, self.P)

    def __or__(self, other):
        self._same_grid(other)
        return PatchSubset(self.bits | other.bits, self.P)

    def issubset(self, other):
        self._same_grid(other)
        return self.bits & ~other.bits == 0


@lru_cache(maxsize=32)
def neighbor_matrix(spec):
    """Boolean [P², P²] matrix; row z marks N(z)."""
    r, c = np.divmod(np.arange(spec.n_patches), spec.P)
    dr = np.abs(r[:, None] - r[None, :])
    dc = np.abs(c[:, None] - c[None, :])
    dist = np.maximum(dr, dc) if spec.metric == "chebyshev" else dr + dc
    out = dist <= spec.hop_radius
    out.flags.writeable = False
    return out


def neighbors(z, spec):
    """N(z): patches within ``hop_radius`` of ``z`` (``z`` included)."""
    z = PatchId(*z)
    _check_patch(z, spec)
    return PatchSubset.from_mask(neighbor_matrix(spec)[z.flat(spec.P)])


def complement(subset, spec):
    if subset.P != spec.P:
        raise ValueError(f"subset grid {subset.P} does not match grid {spec.P}")
    return PatchSubset(PatchSubset.full(spec.P).bits & ~subset.bits, spec.P)


def pixel_mask(subset, spec):
    """W x W boolean map; True where the containing patch is kept."""
    grid = subset.mask().reshape(spec.P, spec.P)
    return np.kron(grid, np.ones((spec.C, spec.C), dtype=bool)).astype(bool)


def _check_image(image, spec):
    if image.ndim != 3 or image.shape[1:] != (spec.W, spec.W):
        raise ValueError(f"image shape {image.shape} does not match a {spec.W}x{spec.W} grid")


def apply_mask(image, subset, spec):
    """Zero every pixel (all channels) of patches not in ``subset``."""
    image = np.asarray(image, dtype=np.float32)
    _check_image(image, spec)
    if subset.P != spec.P:
        raise ValueError(f"subset grid {subset.P} does not match grid {spec.P}")
    return np.where(pixel_mask(subset, spec)[None], image, np.float32(0)).astype(np.float32)


def apply_masks(image, masks, spec):
    """Batched :func:`apply_mask`: ``masks`` is bool [M, P²] -> images [M, ch, W, W]."""
    image = np.asarray(image, dtype=np.float32)
    _check_image(image, spec)
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 2 or masks.shape[1] != spec.n_patches:
        raise ValueError(f"masks shape {masks.shape} does not match {spec.n_patches} patches")
    M, P, C = len(masks), spec.P, spec.C
    pix = np.broadcast_to(masks.reshape(M, P, 1, P, 1), (M, P, C, P, C)).reshape(M, spec.W, spec.W)
    return np.where(pix[:, None], image[None], np.float32(0)).astype(np.float32)


def sample_subset(rng, universe):
    """Keep each patch of ``universe`` independently with probability 1/2."""
    members = universe.indices()
    keep = rng.random(len(members)) < 0.5
    return PatchSubset.from_indices([k for k, b in zip(members, keep) if b], universe.P)
