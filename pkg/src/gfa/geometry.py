"""Cluster storage and spatial queries.

Particles are unit-diameter disks (balls in 3D) identified with their
centers. A uniform hash grid with cell edge 1 backs nearest/contact queries;
in 2D a strictly convex hull is kept up to date on every append.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .rng import unit_dir2

FORMAT_VERSION = "gfa-1"


@dataclass(frozen=True)
class Tolerances:
    contact: float = 1e-9
    hull: float = 1e-9
    angle_sum: float = 1e-9


TOL = Tolerances()


class ConvexHull:
    """Strictly convex hull of a planar point set, counter-clockwise.

    Collinear boundary points are dropped; a degenerate hull has one or two
    vertices.
    """

    def __init__(self, capacity: int = 16):
        self._ids = np.empty(max(4, capacity), dtype=np.int64)
        self.m = 0

    @property
    def vertex_ids(self) -> list[int]:
        return self._ids[: self.m].tolist()

    def __len__(self):
        return self.m

    def __contains__(self, vid):
        return vid in self._ids[: self.m]

    def copy(self) -> "ConvexHull":
        h = ConvexHull(self._ids.shape[0])
        h._ids[: self.m] = self._ids[: self.m]
        h.m = self.m
        return h

    @classmethod
    def from_ids(cls, ids) -> "ConvexHull":
        ids = np.asarray(ids, dtype=np.int64)
        h = cls(ids.shape[0] + 4)
        h._ids[: ids.shape[0]] = ids
        h.m = ids.shape[0]
        return h

    def insert(self, positions: np.ndarray, new_id: int) -> "ConvexHull":
        if self.m + 2 > self._ids.shape[0]:
            self._ids = np.concatenate([self._ids, np.empty(self._ids.shape[0], dtype=np.int64)])
        self.m = K.hull_insert(positions, self._ids, self.m, int(new_id))
        return self

    def select(self, positions: np.ndarray, theta: float) -> int:
        """Vertex maximizing <x, (cos theta, sin theta)>, smallest id on ties."""
        if self.m == 0:
            raise ValueError("empty hull")
        c, s = unit_dir2(float(theta))
        return int(K.hull_argmax(positions, self._ids, self.m, c, s))

    def angles(self, positions: np.ndarray) -> np.ndarray:
        """Interior angle at every vertex (order of ``vertex_ids``)."""
        m = self.m
        if m == 1:
            raise ValueError("interior angle undefined for a one-vertex hull")
        if m == 2:
            return np.zeros(2)
        ids = self._ids[:m]
        p = positions[ids]
        a = np.roll(p, 1, axis=0) - p
        b = np.roll(p, -1, axis=0) - p
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        dot = np.einsum("ij,ij->i", a, b)
        return np.arctan2(np.abs(cross), dot)

    def attachment_law(self, positions: np.ndarray) -> dict[int, float]:
        """Limit attachment probability per hull vertex, (pi - angle)/(2 pi)."""
        if self.m == 1:
            return {int(self._ids[0]): 1.0}
        ang = self.angles(positions)
        return {int(v): float((math.pi - a) / (2.0 * math.pi)) for v, a in zip(self._ids[: self.m], ang)}


class Cluster:
    """Growing particle set with parent links and attachment order."""

    def __init__(self, dim: int = 2, contact_tol: float = TOL.contact, capacity: int = 256):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        self.dim = dim
        self.contact_tol = contact_tol
        self._pos = np.empty((max(1, capacity), dim))
        self._parent = np.empty(max(1, capacity), dtype=np.int64)
        self._order = np.empty(max(1, capacity), dtype=np.int64)
        self.n = 0
        self.grid: dict[tuple, list[int]] = {}
        self.hull = ConvexHull() if dim == 2 else None
        self.rho = 0.0

    # -- construction --------------------------------------------------------

    @classmethod
    def single(cls, dim: int = 2, **kw) -> "Cluster":
        c = cls(dim, **kw)
        c.append(np.zeros(dim), -1)
        return c

    @classmethod
    def from_points(cls, points, parents=None, order=None, contact_tol: float = TOL.contact,
                    hull_ids=None) -> "Cluster":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        n, dim = pts.shape
        c = cls(dim, contact_tol, capacity=max(n, 1) * 2)
        c._pos[:n] = pts
        c._parent[:n] = -1 if parents is None else np.asarray(parents, dtype=np.int64)
        c._order[:n] = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
        c.n = n
        keys = np.floor(pts).astype(np.int64)
        grid = c.grid
        for i, key in enumerate(map(tuple, keys.tolist())):
            cell = grid.get(key)
            if cell is None:
                grid[key] = [i]
            else:
                cell.append(i)
        if n:
            c.rho = float(np.sqrt(np.max(np.einsum("ij,ij->i", pts, pts))))
        if dim == 2:
            c.hull = ConvexHull.from_ids(batch_hull(pts) if hull_ids is None else hull_ids)
        return c

    def append(self, pos, parent: int = -1, order: int | None = None) -> int:
        pos = np.asarray(pos, dtype=np.float64)
        i = self.n
        if i == self._pos.shape[0]:
            cap = 2 * i
            self._pos = np.concatenate([self._pos, np.empty((cap - i, self.dim))])
            self._parent = np.concatenate([self._parent, np.empty(cap - i, dtype=np.int64)])
            self._order = np.concatenate([self._order, np.empty(cap - i, dtype=np.int64)])
        self._pos[i] = pos
        self._parent[i] = parent
        self._order[i] = i if order is None else order
        self.n = i + 1
        key = tuple(int(math.floor(v)) for v in pos)
        self.grid.setdefault(key, []).append(i)
        self.rho = max(self.rho, math.sqrt(float(pos @ pos)))
        if self.hull is not None:
            self.hull.insert(self._pos, i)
        return i

    def copy(self) -> "Cluster":
        c = Cluster(self.dim, self.contact_tol, capacity=self._pos.shape[0])
        c._pos[: self.n] = self._pos[: self.n]
        c._parent[: self.n] = self._parent[: self.n]
        c._order[: self.n] = self._order[: self.n]
        c.n = self.n
        c.grid = {k: list(v) for k, v in self.grid.items()}
        c.hull = self.hull.copy() if self.hull is not None else None
        c.rho = self.rho
        return c

    # -- views ---------------------------------------------------------------

    @property
    def positions(self) -> np.ndarray:
        return self._pos[: self.n]

    @property
    def buffer(self) -> np.ndarray:
        """Backing array (rows beyond ``n`` are garbage); for hull kernels."""
        return self._pos

    @property
    def parent(self) -> np.ndarray:
        return self._parent[: self.n]

    @property
    def order(self) -> np.ndarray:
        return self._order[: self.n]

    def __len__(self):
        return self.n

    def cells_around(self, x, radius: float):
        lo = [int(math.floor(v - radius)) for v in x]
        hi = [int(math.floor(v + radius)) for v in x]
        grid = self.grid
        if self.dim == 2:
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    cell = grid.get((i, j))
                    if cell:
                        yield from cell
        else:
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    for k in range(lo[2], hi[2] + 1):
                        cell = grid.get((i, j, k))
                        if cell:
                            yield from cell


def _sqdist(p, x):
    s = 0.0
    for a, b in zip(p, x):
        t = a - b
        s += t * t
    return s


def nearest(cluster: Cluster, x) -> tuple[int, float]:
    """Closest particle to x and its distance; smallest id wins ties."""
    if cluster.n == 0:
        raise ValueError("empty cluster")
    x = [float(v) for v in x]
    pos = cluster.positions
    best_d2 = math.inf
    best = -1
    # ring search over grid cells; fall back to a scan when x is far away
    cx = [int(math.floor(v)) for v in x]
    max_ring = (int(math.isqrt(cluster.n)) if cluster.dim == 2 else int(round(cluster.n ** (1 / 3)))) + 2
    ring = 0
    while ring <= max_ring:
        for i in _ring_cells(cx, ring, cluster.dim):
            cell = cluster.grid.get(i)
            if not cell:
                continue
            for j in cell:
                d2 = _sqdist(pos[j], x)
                if d2 < best_d2 or (d2 == best_d2 and j < best):
                    best_d2 = d2
                    best = j
        # every unvisited cell is at least `ring` away from x
        if best >= 0 and best_d2 < ring * ring:
            return best, math.sqrt(best_d2)
        ring += 1
    diff = pos - np.asarray(x)
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
    if cluster.dim == 3:
        d2 = d2 + diff[:, 2] * diff[:, 2]
    j = int(np.argmin(d2))
    return j, math.sqrt(float(d2[j]))


def _ring_cells(c, r, dim):
    if r == 0:
        yield tuple(c)
        return
    if dim == 2:
        for i in range(-r, r + 1):
            yield (c[0] + i, c[1] - r)
            yield (c[0] + i, c[1] + r)
        for j in range(-r + 1, r):
            yield (c[0] - r, c[1] + j)
            yield (c[0] + r, c[1] + j)
        return
    for i in range(-r, r + 1):
        for j in range(-r, r + 1):
            for k in range(-r, r + 1):
                if max(abs(i), abs(j), abs(k)) == r:
                    yield (c[0] + i, c[1] + j, c[2] + k)


def contact(cluster: Cluster, x, contact_tol: float | None = None) -> int | None:
    """Smallest id within 1 + contact_tol of x, else None."""
    tol = cluster.contact_tol if contact_tol is None else contact_tol
    radius = 1.0 + tol
    pos = cluster.positions
    best = None
    for j in cluster.cells_around(x, radius):
        if (best is None or j < best) and math.sqrt(_sqdist(pos[j], x)) <= radius:
            best = j
    return best


def neighbors_within(cluster: Cluster, x, radius: float) -> list[int]:
    pos = cluster.positions
    return sorted(j for j in cluster.cells_around(x, radius) if math.sqrt(_sqdist(pos[j], x)) <= radius)


def batch_hull(points) -> np.ndarray:
    """Strictly convex hull (monotone chain), ids counter-clockwise."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.lexsort((pts[:, 1], pts[:, 0]))
    # drop exact duplicates, keeping the smallest id
    keep = [idx[0]]
    for i in idx[1:]:
        j = keep[-1]
        if pts[i, 0] == pts[j, 0] and pts[i, 1] == pts[j, 1]:
            if i < j:
                keep[-1] = i
            continue
        keep.append(i)
    if len(keep) <= 2:
        return np.asarray(keep, dtype=np.int64)
    xs = pts[:, 0]
    ys = pts[:, 1]

    def cross(o, a, b):
        return (xs[a] - xs[o]) * (ys[b] - ys[o]) - (ys[a] - ys[o]) * (xs[b] - xs[o])

    lower: list[int] = []
    for i in keep:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(keep):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        hull = hull[:1]
    return np.asarray(hull, dtype=np.int64)


def hull_insert(hull: ConvexHull, cluster: Cluster, new_id: int) -> ConvexHull:
    return hull.insert(cluster.buffer, new_id)


def hull_select(hull: ConvexHull, cluster_or_positions, theta: float) -> int:
    pos = cluster_or_positions.buffer if isinstance(cluster_or_positions, Cluster) else cluster_or_positions
    return hull.select(np.ascontiguousarray(pos, dtype=np.float64), theta)


def interior_angle(hull: ConvexHull, cluster_or_positions, vertex_id: int) -> float:
    pos = cluster_or_positions.buffer if isinstance(cluster_or_positions, Cluster) else cluster_or_positions
    ids = hull.vertex_ids
    if vertex_id not in ids:
        raise ValueError(f"particle {vertex_id} is not a hull vertex")
    return float(hull.angles(pos)[ids.index(vertex_id)])


def diameter(cluster_or_points) -> float:
    """Exact largest pairwise distance."""
    if isinstance(cluster_or_points, Cluster):
        pts = cluster_or_points.positions
        hull = cluster_or_points.hull
        ids = np.asarray(hull.vertex_ids) if hull is not None else None
    else:
        pts = np.asarray(cluster_or_points, dtype=np.float64)
        ids = batch_hull(pts) if pts.shape[1] == 2 else None
    if pts.shape[0] <= 1:
        return 0.0
    if pts.shape[1] == 2:
        return _calipers(pts[ids])
    return _hull_pair_scan_3d(pts)


def _calipers(p: np.ndarray) -> float:
    m = p.shape[0]
    if m == 1:
        return 0.0
    if m == 2:
        return float(math.dist(p[0], p[1]))

    def area2(i, j, k):
        return abs((p[j, 0] - p[i, 0]) * (p[k, 1] - p[i, 1]) - (p[j, 1] - p[i, 1]) * (p[k, 0] - p[i, 0]))

    best = 0.0
    j = 1
    for i in range(m):
        i2 = (i + 1) % m
        # advance the antipodal pointer while the triangle area grows
        while area2(i, i2, (j + 1) % m) > area2(i, i2, j):
            j = (j + 1) % m
        for a in (i, i2):
            for b in (j, (j + 1) % m):
                best = max(best, math.dist(p[a], p[b]))
    return float(best)


def _hull_pair_scan_3d(pts: np.ndarray) -> float:
    if pts.shape[0] <= 4:
        cand = pts
    else:
        from scipy.spatial import ConvexHull as QHull
        try:
            cand = pts[QHull(pts).vertices]
        except Exception:
            cand = pts
    best = 0.0
    for i in range(cand.shape[0] - 1):
        diff = cand[i + 1:] - cand[i]
        best = max(best, float(np.sqrt(np.max(np.einsum("ij,ij->i", diff, diff)))))
    return best


# -- CSV -----------------------------------------------------------------------

def write_cluster_csv(cluster: Cluster, path) -> None:
    axes = ["x", "y", "z"][: cluster.dim]
    pos = cluster.positions
    with open(path, "w", newline="") as fh:
        fh.write(f"# format={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *axes, "parent", "order"])
        for i in range(cluster.n):
            w.writerow([i, *(repr(float(v)) for v in pos[i]), int(cluster._parent[i]), int(cluster._order[i])])


def read_cluster_csv(path, contact_tol: float = TOL.contact) -> Cluster:
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or "x" not in reader.fieldnames or "y" not in reader.fieldnames:
        raise ValueError(f"{path}: not a cluster file (need id,x,y[,z],parent,order)")
    dim = 3 if "z" in reader.fieldnames else 2
    axes = ["x", "y", "z"][:dim]
    for r in reader:
        rows.append((int(r["id"]), [float(r[a]) for a in axes], int(r.get("parent") or -1),
                     int(r.get("order") or r["id"])))
    rows.sort(key=lambda t: t[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: ids must be 0..n-1")
    pts = np.array([r[1] for r in rows], dtype=np.float64).reshape(-1, dim)
    return Cluster.from_points(pts, [r[2] for r in rows], [r[3] for r in rows], contact_tol)


def file_digest(path) -> str:
    import hashlib
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
