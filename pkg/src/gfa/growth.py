"""The aggregation loop: sample a direction, flow in, attach, repeat."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .errors import GrowthAbort
from .flow import Attached, FieldSource, FlowConfig, Stalled, launch
from .geometry import FORMAT_VERSION, TOL, Cluster, batch_hull
from .potential import PotentialKind
from .rng import MASK64, substream_angle, substream_direction

log = logging.getLogger(__name__)

STALL_RATE_ALERT = 1e-3


@dataclass(frozen=True)
class GrowthConfig:
    kind: PotentialKind
    n_target: int
    seed: int = 0
    dim: int = 2
    flow: FlowConfig = FlowConfig()
    snapshot_schedule: tuple[int, ...] = ()
    max_resamples: int = 100

    def __post_init__(self):
        if self.n_target < 1:
            raise ValueError("n_target must be >= 1")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.dim == 3 and not (self.kind.variant == "max"
                                  or (self.kind.variant == "power" and self.kind.alpha == 1.0)):
            raise ValueError("3D growth supports only the harmonic case Power(1) and NearestMax")
        object.__setattr__(self, "snapshot_schedule", tuple(sorted(set(int(s) for s in self.snapshot_schedule))))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.label(),
            "n_target": self.n_target,
            "seed": self.seed,
            "dim": self.dim,
            "flow": self.flow.to_dict(),
            "snapshot_schedule": list(self.snapshot_schedule),
            "max_resamples": self.max_resamples,
        }


@dataclass
class GrowthTrace:
    """Per-particle records plus the running diameter.

    ``theta`` holds angles in 2D and unit vectors (n, 3) in 3D. Row k
    describes particle k; rows of the initial cluster carry parent -1 or
    their file parent and no direction (nan).
    """
    seed: int
    kind: str
    dim: int
    theta: np.ndarray
    parent: np.ndarray
    steps: np.ndarray
    resamples: np.ndarray
    diam: np.ndarray
    stalls: int = 0
    failures: int = 0
    n_init: int = 1
    hull_sizes: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.diam.shape[0]

    @property
    def launches(self) -> int:
        return int(len(self) - self.n_init + self.stalls + self.failures)

    @property
    def stall_rate(self) -> float:
        return self.stalls / self.launches if self.launches else 0.0

    def records(self) -> list[dict]:
        out = []
        for k in range(len(self)):
            th = self.theta[k]
            th = [float(v) for v in th] if self.dim == 3 else float(th)
            out.append({"id": k, "theta": th, "parent": int(self.parent[k]), "steps": int(self.steps[k]),
                        "stall_resamples": int(self.resamples[k])})
        return out

    def to_json(self) -> dict:
        d = {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "kind": self.kind,
            "dim": self.dim,
            "n_init": self.n_init,
            "records": self.records(),
            "diam": [float(v) for v in self.diam],
            "stalls": self.stalls,
            "failures": self.failures,
        }
        if self.hull_sizes is not None:
            d["hull_sizes"] = [int(v) for v in self.hull_sizes]
        d.update(self.extra)
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_nan_to_none(self.to_json()), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GrowthTrace":
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_json(d)

    @classmethod
    def from_json(cls, d: dict) -> "GrowthTrace":
        recs = d["records"]
        dim = int(d["dim"])
        def th(r):
            t = r["theta"]
            if dim == 3:
                return [math.nan] * 3 if t is None else t
            return math.nan if t is None else t
        hs = d.get("hull_sizes")
        return cls(
            seed=int(d["seed"]), kind=str(d["kind"]), dim=dim,
            theta=np.array([th(r) for r in recs], dtype=np.float64),
            parent=np.array([r["parent"] for r in recs], dtype=np.int64),
            steps=np.array([r["steps"] for r in recs], dtype=np.int64),
            resamples=np.array([r["stall_resamples"] for r in recs], dtype=np.int64),
            diam=np.asarray(d["diam"], dtype=np.float64),
            stalls=int(d.get("stalls", 0)), failures=int(d.get("failures", 0)),
            n_init=int(d.get("n_init", 1)),
            hull_sizes=None if hs is None else np.asarray(hs, dtype=np.int64),
        )


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    return obj


def _initial(config: GrowthConfig, init: Cluster | None) -> Cluster:
    if init is None:
        return Cluster.single(config.dim, contact_tol=config.flow.contact_tol,
                              capacity=min(config.n_target, 1 << 20) + 1)
    if init.dim != config.dim:
        raise ValueError("initial cluster dimension does not match the config")
    if init.n == 0:
        raise ValueError("initial cluster is empty")
    return init.copy()


def _initial_diam(cluster: Cluster) -> np.ndarray:
    """Running diameter over the initial rows (in id order)."""
    pos = cluster.positions
    out = np.zeros(cluster.n)
    for k in range(1, cluster.n):
        out[k] = max(out[k - 1], K.max_dist_from(pos, k + 1, k))
    return out


SnapshotHook = Callable[[int, Cluster], None]


def grow(config: GrowthConfig, init: Cluster | None = None,
         on_snapshot: SnapshotHook | None = None) -> tuple[Cluster, GrowthTrace]:
    """Grow a cluster to ``config.n_target`` particles.

    Particle k's direction for attempt a comes from substream (seed, k, a).
    Stalled and failed launches are logged and resampled with the next
    attempt; more than ``max_resamples`` for one particle raises GrowthAbort.
    """
    if config.kind.variant == "max":
        return grow_nearestmax(config, init, on_snapshot)
    cluster = _initial(config, init)
    n0 = cluster.n
    n = max(config.n_target, n0)
    dim = config.dim
    theta = np.full((n, 3) if dim == 3 else n, math.nan)
    parent = np.full(n, -1, dtype=np.int64)
    parent[:n0] = cluster.parent
    steps = np.zeros(n, dtype=np.int64)
    resamples = np.zeros(n, dtype=np.int64)
    diam = np.zeros(n)
    diam[:n0] = _initial_diam(cluster)
    stalls = failures = 0
    source = FieldSource(cluster, config.flow.opening)
    schedule = [s for s in config.snapshot_schedule if s >= n0]
    _snap(cluster, schedule, on_snapshot)

    for k in range(n0, n):
        attempt = 0
        while True:
            if dim == 2:
                th = substream_angle(config.seed, k, attempt)
            else:
                th = substream_direction(config.seed, k, attempt, 3)
            out = launch(cluster, config.kind, th, config.flow, source=source)
            if isinstance(out, Attached):
                break
            if isinstance(out, Stalled):
                stalls += 1
                log.info("particle %d attempt %d stalled at %s; resampling", k, attempt, out.position)
            else:
                failures += 1
                log.warning("particle %d attempt %d failed (%s); resampling", k, attempt, out.reason)
            attempt += 1
            if attempt > config.max_resamples:
                raise GrowthAbort(f"particle {k}: {attempt} consecutive launches without attachment "
                                  "(degenerate configuration?)")
        cluster.append(out.position, out.parent)
        theta[k] = th
        parent[k] = out.parent
        steps[k] = out.steps
        resamples[k] = attempt
        diam[k] = max(diam[k - 1], _dist_to_far(cluster, k))
        _snap(cluster, schedule, on_snapshot)

    trace = GrowthTrace(config.seed, config.kind.label(), dim, theta, parent, steps, resamples, diam,
                        stalls, failures, n0)
    if trace.launches and trace.stall_rate > STALL_RATE_ALERT:
        log.warning("stall rate %.2e exceeds %.0e", trace.stall_rate, STALL_RATE_ALERT)
    return cluster, trace


def _dist_to_far(cluster: Cluster, k: int) -> float:
    """Largest distance from particle k to the rest (via hull vertices in 2D)."""
    pos = cluster.positions
    if cluster.hull is not None:
        ids = cluster.hull.vertex_ids
        if len(ids):
            return float(np.sqrt(np.max(np.sum((pos[ids] - pos[k]) ** 2, axis=1))))
    return float(K.max_dist_from(pos, cluster.n, k))


def _snap(cluster, schedule, hook):
    while schedule and schedule[0] <= cluster.n:
        s = schedule.pop(0)
        if s == cluster.n and hook is not None:
            hook(s, cluster)


def grow_nearestmax(config: GrowthConfig, init: Cluster | None = None,
                    on_snapshot: SnapshotHook | None = None) -> tuple[Cluster, GrowthTrace]:
    """alpha = infinity growth: each particle lands at x_parent + theta_hat,
    with the parent the far-field nearest particle. 2D keeps the convex hull
    incrementally, 3D takes the argmax over all points."""
    if config.kind.variant != "max":
        raise ValueError("grow_nearestmax needs the NearestMax kind")
    cluster = _initial(config, init)
    n0 = cluster.n
    n = max(config.n_target, n0)
    dim = config.dim
    seed = np.uint64(config.seed & MASK64)
    pos = np.empty((n, dim))
    pos[:n0] = cluster.positions
    parent = np.full(n, -1, dtype=np.int64)
    parent[:n0] = cluster.parent
    diam = np.zeros(n)
    diam[:n0] = _initial_diam(cluster)
    theta = np.full((n, 3) if dim == 3 else n, math.nan)
    hull_sizes = None
    if dim == 2:
        hull = np.empty(n + 1, dtype=np.int64)
        ids = batch_hull(pos[:n0])
        m = len(ids)
        hull[:m] = ids
        hull_sizes = np.zeros(n, dtype=np.int64)
        hull_sizes[:n0] = m

    stops = [s for s in config.snapshot_schedule if n0 <= s <= n]
    k = n0
    for stop in stops + [n]:
        if stop > k:
            if dim == 2:
                m = K.grow_nearmax_2d(pos, parent, k, stop, seed, hull, m, diam, theta, hull_sizes)
            else:
                K.grow_nearmax_3d(pos, parent, k, stop, seed, theta, diam)
            k = stop
        if on_snapshot is not None and stop in stops:
            on_snapshot(stop, _as_cluster(pos[:stop], parent[:stop], config,
                                          hull[:m] if dim == 2 else None))
    cluster = _as_cluster(pos, parent, config, hull[:m] if dim == 2 else None)
    trace = GrowthTrace(config.seed, config.kind.label(), dim, theta, parent.copy(),
                        np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), diam,
                        0, 0, n0, hull_sizes)
    return cluster, trace


def _as_cluster(pos, parent, config, hull_ids):
    return Cluster.from_points(pos, parent, None, config.flow.contact_tol,
                               None if hull_ids is None else hull_ids.copy())


@dataclass
class VerifyReport:
    n: int
    violations: list[str]
    min_separation: float
    max_degree: int

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_cluster(cluster: Cluster, contact_tol: float | None = None, max_listed: int = 50,
                   roots: int = 1) -> VerifyReport:
    """Check 1-separation, unit parent distance, tree shape and contact degree.

    ``roots`` is the expected number of parentless particles (more than one
    for multi-seed starts, where the links form a forest). Never raises on a
    bad cluster; problems are returned as strings.
    """
    tol = TOL.contact if contact_tol is None else contact_tol
    roots_expected = roots
    pos = np.asarray(cluster.positions, dtype=np.float64)
    par = np.asarray(cluster.parent, dtype=np.int64)
    n = pos.shape[0]
    dim = pos.shape[1] if pos.ndim == 2 else cluster.dim
    bad: list[str] = []
    total = 0

    def add(msg):
        nonlocal total
        total += 1
        if len(bad) < max_listed:
            bad.append(msg)

    if n == 0:
        return VerifyReport(0, [], math.inf, 0)
    tree = cKDTree(pos)
    min_sep = math.inf
    if n > 1:
        dd, _ = tree.query(pos, k=2)
        min_sep = float(dd[:, 1].min())
        for i, j in sorted(tree.query_pairs(1.0 - tol)):
            add(f"separation: particles {i} and {j} at distance {np.linalg.norm(pos[i] - pos[j]):.12g} < 1")

    roots = []
    for i in range(n):
        p = int(par[i])
        if p < 0:
            roots.append(i)
            continue
        if p >= n or p == i:
            add(f"parent: particle {i} has invalid parent {p}")
            continue
        r = float(np.linalg.norm(pos[i] - pos[p]))
        if abs(r - 1.0) > tol:
            add(f"parent distance: particle {i} to parent {p} is {r:.15g}")
    # acyclicity: follow parents with path compression
    state = np.zeros(n, dtype=np.int8)  # 0 new, 1 on stack, 2 done
    for s in range(n):
        path = []
        v = s
        while 0 <= v < n and state[v] == 0:
            state[v] = 1
            path.append(v)
            p = int(par[v])
            v = p if 0 <= p < n and p != v else -1
        if 0 <= v < n and state[v] == 1:
            add(f"cycle: parent links through particle {v} form a cycle")
        for u in path:
            state[u] = 2
    if len(roots) != roots_expected:
        add(f"tree: expected {roots_expected} root(s), found {len(roots)}")

    kiss = 6 if dim == 2 else 12
    counts = np.array([len(c) - 1 for c in tree.query_ball_point(pos, 1.0 + tol)]) if n > 1 else np.zeros(1, int)
    max_deg = int(counts.max())
    for i in np.nonzero(counts > kiss)[0]:
        add(f"degree: particle {i} touches {counts[i]} particles (> {kiss})")
    if total > len(bad):
        bad.append(f"... {total - len(bad)} more violations")
    return VerifyReport(n, bad, min_sep, max_deg)


def initial_polygon(k: int, radius: float, dim: int = 2) -> Cluster:
    """Regular k-gon of particles at the given radius (no parent links)."""
    t = 2 * np.pi * np.arange(k) / k
    pts = np.column_stack([radius * np.cos(t), radius * np.sin(t)])
    if dim == 3:
        pts = np.column_stack([pts, np.zeros(k)])
    return Cluster.from_points(pts)
