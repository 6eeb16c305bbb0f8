"""Energy, gradient and Laplacian of the cluster potential.

Three families are supported:

* ``Log``        E(x) = -sum log|x - x_i|
* ``Power(a)``   E(x) = sum |x - x_i|^(-a), a > 0
* ``NearestMax`` E(x) = max 1/|x - x_i|

Gradients point toward the attracting masses (the ascent direction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import DomainError, TieError, UnsupportedOperation


@dataclass(frozen=True)
class PotentialKind:
    variant: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.variant not in ("log", "power", "max"):
            raise ValueError(f"unknown potential variant {self.variant!r}")
        if self.variant == "power":
            if not (self.alpha > 0 and math.isfinite(self.alpha)):
                raise ValueError("Power requires 0 < alpha < inf; use Log for 0 and NearestMax for inf")

    @classmethod
    def log(cls) -> "PotentialKind":
        return cls("log", 0.0)

    @classmethod
    def power(cls, alpha: float) -> "PotentialKind":
        return cls("power", float(alpha))

    @classmethod
    def nearest_max(cls) -> "PotentialKind":
        return cls("max", math.inf)

    @classmethod
    def parse(cls, text) -> "PotentialKind":
        """Parse ``log``, ``inf`` or a real alpha (``0`` maps to Log)."""
        s = str(text).strip().lower()
        if s in ("log", "0", "0.0"):
            return cls.log()
        if s in ("inf", "infinity", "max"):
            return cls.nearest_max()
        return cls.power(float(s))

    @property
    def code(self) -> int:
        return {"log": K.LOG, "power": K.POWER, "max": K.NEARMAX}[self.variant]

    @property
    def exponent(self) -> float:
        """alpha as a number: 0 for Log, inf for NearestMax."""
        return self.alpha

    def label(self) -> str:
        if self.variant == "log":
            return "log"
        if self.variant == "max":
            return "inf"
        return repr(self.alpha)

    def __str__(self):
        return {"log": "Log", "max": "NearestMax"}.get(self.variant, f"Power({self.alpha:g})")


Log = PotentialKind.log
Power = PotentialKind.power
NearestMax = PotentialKind.nearest_max


@dataclass(frozen=True)
class FieldSample:
    energy: float
    gradient: np.ndarray
    laplacian: float


def _prep(points, x):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2:
        pts = pts.reshape(-1, len(x))
    x = np.ascontiguousarray(x, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    if pts.shape[1] != x.shape[0]:
        raise ValueError("dimension mismatch between points and x")
    d2 = np.einsum("ij,ij->i", pts - x, pts - x)
    if np.any(d2 == 0.0):
        raise DomainError("x coincides with a particle; the energy is singular there")
    return pts, x, d2


def energy(points, x, kind: PotentialKind) -> float:
    pts, x, _ = _prep(points, x)
    return float(K.energy_exact(pts, x, kind.code, kind.alpha))


def _nearest_unique(pts, x, d2):
    i = int(np.argmin(d2))
    if np.count_nonzero(d2 == d2[i]) > 1:
        raise TieError("nearest particle is not unique; NearestMax gradient undefined")
    return i


def gradient(points, x, kind: PotentialKind) -> np.ndarray:
    pts, x, d2 = _prep(points, x)
    if kind.code == K.NEARMAX:
        i = _nearest_unique(pts, x, d2)
        v = pts[i] - x
        return v / math.sqrt(d2[i])
    g = np.empty_like(x)
    K.field(pts, pts.shape[0], 0, K.empty_tree(x.shape[0]), 0.0, 0.0, x, kind.code, kind.alpha, g)
    return g


def laplacian(points, x, kind: PotentialKind) -> float:
    """Laplacian in the ambient dimension of ``points``.

    For r^-a in d dimensions this is a(a + 2 - d) r^-(a+2), which is exactly
    zero in the harmonic case a = d - 2; -log r gives -(d - 2)/r^2.
    """
    if kind.code == K.NEARMAX:
        raise UnsupportedOperation("the NearestMax energy has no Laplacian")
    pts, x, d2 = _prep(points, x)
    d = x.shape[0]
    if kind.code == K.LOG:
        if d == 2:
            return 0.0
        return float(-(d - 2) * np.sum(1.0 / d2))
    a = kind.alpha
    coef = a * (a + 2.0 - d)
    if coef == 0.0:
        return 0.0
    return float(coef * np.sum(d2 ** (-0.5 * (a + 2.0))))


def field_sample(points, x, kind: PotentialKind) -> FieldSample:
    lap = math.nan if kind.code == K.NEARMAX else laplacian(points, x, kind)
    return FieldSample(energy(points, x, kind), gradient(points, x, kind), lap)


class BHTree:
    """Barnes-Hut tree (quadtree in 2D, octree in 3D) over a fixed point set.

    ``order`` is the permutation in which leaves store the points; a full
    traversal sums points in exactly this order.
    """

    def __init__(self, points, leaf_size: int = 8):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.dim = self.points.shape[1]
        self.leaf_size = leaf_size
        self.arrays = K.build_tree(self.points, leaf_size)

    @property
    def order(self) -> np.ndarray:
        return self.arrays[-1]

    @property
    def n_nodes(self) -> int:
        return self.arrays[0].shape[0]

    def __len__(self):
        return self.points.shape[0]


def gradient_fast(tree: BHTree, x, kind: PotentialKind, opening: float = 0.5) -> np.ndarray:
    """Barnes-Hut approximation of :func:`gradient` (monopole cells).

    A cell of side s whose centroid is at distance r is replaced by its total
    mass at the centroid when s/r <= opening; ``opening = 0`` forces a full
    traversal.
    """
    if kind.code == K.NEARMAX:
        raise UnsupportedOperation("Barnes-Hut summation needs a summable (Log/Power) energy")
    if opening < 0:
        raise ValueError("opening must be >= 0")
    _prep(tree.points, x)
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.empty_like(x)
    n = len(tree)
    K.field(tree.points, n, n, tree.arrays, float(opening), 0.0, x, kind.code, kind.alpha, g)
    return g
