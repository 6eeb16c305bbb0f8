"""Monte Carlo and regression experiments on grown or hand-built clusters.

Sampling is split into fixed-size chunks of sample indices; sample i always
uses direction substream (seed, i), so results do not depend on how many
worker processes evaluate the chunks.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np
from scipy import stats

from . import _kernels as K
from .errors import TooManyFailures
from .flow import FlowConfig, launch_many, start_radius
from .geometry import FORMAT_VERSION, Cluster, batch_hull
from .potential import PotentialKind
from .rng import directions, unit_dirs2

CHUNK = 8192
MAX_FAILURE_RATE = 1e-3
Z95 = 1.959963984540054

# per-sample outcome codes (ids >= 0 mean attached to that particle)
STALL = -1
FAIL = -2
ABSORB = -3


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("GFA_THREADS", "1")))
    except ValueError:
        return 1


def wilson(k, n, z: float = Z95):
    """Wilson score interval for k successes out of n (vectorized)."""
    k = np.asarray(k, dtype=np.float64)
    if n <= 0:
        return np.zeros_like(k), np.ones_like(k)
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(cfg: dict, seed: int) -> dict:
    return {"format_version": FORMAT_VERSION, "seed": int(seed), "config_hash": config_hash(cfg)}


def cluster_digest(cluster: Cluster) -> str:
    h = hashlib.sha256(np.ascontiguousarray(cluster.positions).tobytes())
    h.update(np.ascontiguousarray(cluster.parent).tobytes())
    return h.hexdigest()[:16]


# -- sampling engine ---------------------------------------------------------

def _classify(status, parent):
    out = parent.copy()
    out[status == K.STALLED] = STALL
    out[status == K.ABSORBED] = ABSORB
    out[(status != K.ATTACHED) & (status != K.STALLED) & (status != K.ABSORBED)] = FAIL
    return out


def _nearestmax_parents(pts, dirs):
    """Far-field argmax of <x, u>; ties go to the smallest id."""
    ids = batch_hull(pts).astype(np.int64) if pts.shape[1] == 2 else np.zeros(0, dtype=np.int64)
    out = np.empty(dirs.shape[0], dtype=np.int64)
    K.nearmax_batch(pts, np.ascontiguousarray(ids), np.ascontiguousarray(dirs), out)
    return out


def _chunk_task(args):
    pts, parents, kind, cfg, seed, lo, hi, radius, absorb, fixed_dirs = args
    if fixed_dirs is not None:
        dirs = fixed_dirs
    else:
        dirs = directions(seed, np.arange(lo, hi, dtype=np.uint64), pts.shape[1])
    if kind.variant == "max":
        return _nearestmax_parents(pts, dirs)
    cluster = Cluster.from_points(pts, parents)
    starts = radius * dirs
    status, parent, _, _ = launch_many(cluster, kind, starts, cfg, absorb=absorb, escape_radius=2 * radius)
    return _classify(status, parent)


def sample_outcomes(cluster: Cluster, kind: PotentialKind, samples: int, config: FlowConfig = FlowConfig(),
                    seed: int = 0, workers: int | None = None, radius: float | None = None,
                    absorb: tuple | None = None, dirs: np.ndarray | None = None) -> np.ndarray:
    """Outcome code per sample: attached particle id or STALL / FAIL / ABSORB.

    Sample i starts at radius * u_i with u_i from substream (seed, i) unless
    explicit unit vectors ``dirs`` are given.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    if radius is None:
        radius = start_radius(cluster, config)
    if dirs is not None:
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        samples = dirs.shape[0]
    pts = np.ascontiguousarray(cluster.positions)
    par = np.ascontiguousarray(cluster.parent)
    tasks = []
    for lo in range(0, samples, CHUNK):
        hi = min(lo + CHUNK, samples)
        tasks.append((pts, par, kind, config, seed, lo, hi, float(radius), absorb,
                      None if dirs is None else dirs[lo:hi]))
    if workers == 1 or len(tasks) <= 1:
        parts = [_chunk_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(workers, mp_context=get_context("fork")) as ex:
            parts = list(ex.map(_chunk_task, tasks))
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)


# -- hitting probabilities ---------------------------------------------------

@dataclass
class HitStats:
    hits: np.ndarray
    total_samples: int
    stall_count: int
    start_radius: float
    failure_count: int = 0
    absorbed_count: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def p_hat(self) -> np.ndarray:
        return self.hits / self.total_samples if self.total_samples else np.zeros(len(self.hits))

    @property
    def wilson_low(self) -> np.ndarray:
        return wilson(self.hits, self.total_samples)[0]

    @property
    def wilson_high(self) -> np.ndarray:
        return wilson(self.hits, self.total_samples)[1]

    @property
    def sigma(self) -> np.ndarray:
        p = self.p_hat
        return np.sqrt(p * (1 - p) / max(self.total_samples, 1))

    @property
    def stall_fraction(self) -> float:
        return self.stall_count / self.total_samples if self.total_samples else 0.0

    def argmax(self) -> int:
        return int(np.argmax(self.hits))

    def to_json(self) -> dict:
        lo, hi = wilson(self.hits, self.total_samples)
        return {
            **provenance(self.config, self.seed),
            "total_samples": self.total_samples,
            "stall_count": self.stall_count,
            "failure_count": self.failure_count,
            "absorbed_count": self.absorbed_count,
            "start_radius": self.start_radius,
            "config": self.config,
            "particles": [
                {"id": i, "hits": int(h), "p_hat": float(h / self.total_samples), "wilson_low": float(a),
                 "wilson_high": float(b)}
                for i, (h, a, b) in enumerate(zip(self.hits, lo, hi))
            ],
        }

    def csv_rows(self):
        lo, hi = wilson(self.hits, self.total_samples)
        yield ["id", "hits", "p_hat", "wilson_low", "wilson_high"]
        for i, (h, a, b) in enumerate(zip(self.hits, lo, hi)):
            yield [i, int(h), repr(float(h / self.total_samples)), repr(float(a)), repr(float(b))]


def _stats_from(outcomes, n, radius, seed, cfg) -> HitStats:
    att = outcomes[outcomes >= 0]
    hits = np.bincount(att, minlength=n).astype(np.int64)
    stalls = int(np.count_nonzero(outcomes == STALL))
    fails = int(np.count_nonzero(outcomes == FAIL))
    absorbed = int(np.count_nonzero(outcomes == ABSORB))
    return HitStats(hits, int(outcomes.shape[0]), stalls, float(radius), fails, absorbed, seed, cfg)


def _check_failures(st: HitStats):
    if st.total_samples and st.failure_count > MAX_FAILURE_RATE * st.total_samples:
        raise TooManyFailures(f"{st.failure_count} of {st.total_samples} launches failed")


def _run_config(cluster, kind, samples, config, radius, extra=None) -> dict:
    d = {"cluster": cluster_digest(cluster), "n": cluster.n, "kind": kind.label(), "samples": samples,
         "radius": radius, "flow": config.to_dict()}
    if extra:
        d.update(extra)
    return d


def hit_probabilities(cluster: Cluster, kind: PotentialKind, samples: int,
                      flow_config: FlowConfig = FlowConfig(), workers: int | None = None, seed: int = 0,
                      radius: float | None = None) -> HitStats:
    """Attachment counts per particle over ``samples`` launches from the
    standard start radius (or ``radius``)."""
    r = start_radius(cluster, flow_config) if radius is None else float(radius)
    out = sample_outcomes(cluster, kind, samples, flow_config, seed, workers, r)
    st = _stats_from(out, cluster.n, r, seed, _run_config(cluster, kind, samples, flow_config, r))
    _check_failures(st)
    return st


# -- cluster families --------------------------------------------------------

def line_cluster(n: int, dim: int = 2) -> Cluster:
    """n collinear particles at unit spacing, centred on the origin, chained
    parent links."""
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    pts = np.zeros((n, dim))
    pts[:, 0] = x
    parents = np.arange(-1, n - 1)
    return Cluster.from_points(pts, parents)


def family_cluster(family: str, n: int, seed: int = 0, kind: PotentialKind | None = None,
                   flow_config: FlowConfig = FlowConfig()) -> Cluster:
    if family == "line":
        return line_cluster(n)
    if family == "gfa":
        from .growth import GrowthConfig, grow
        c, _ = grow(GrowthConfig(kind or PotentialKind.log(), n, seed=seed, flow=flow_config))
        return c
    raise ValueError(f"unknown cluster family {family!r} (expected 'line' or 'gfa')")


@dataclass
class BeurlingRow:
    n: int
    max_p_hat: float
    argmax_id: int
    wilson_low: float
    wilson_high: float
    stall_count: int
    samples: int


def beurling_scan(kind: PotentialKind, n_list, cluster_family: str = "line", samples: int = 100_000,
                  flow_config: FlowConfig = FlowConfig(), workers: int | None = None, seed: int = 0
                  ) -> list[BeurlingRow]:
    """Largest per-particle hitting probability for each cluster size."""
    rows = []
    for n in n_list:
        c = family_cluster(cluster_family, int(n), seed, kind, flow_config)
        st = hit_probabilities(c, kind, samples, flow_config, workers, seed)
        i = st.argmax()
        lo, hi = wilson(st.hits[i], st.total_samples)
        rows.append(BeurlingRow(int(n), float(st.p_hat[i]), i, float(lo), float(hi), st.stall_count,
                                st.total_samples))
    return rows


# -- arc structure -----------------------------------------------------------

@dataclass
class ArcReport:
    counts: np.ndarray
    grid_size: int
    outcomes: np.ndarray
    dropped_singletons: int

    @property
    def max_arcs(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0

    def to_json(self, seed: int = 0, cfg: dict | None = None) -> dict:
        cfg = cfg or {}
        return {**provenance(cfg, seed), "grid_size": self.grid_size, "max_arcs": self.max_arcs,
                "dropped_singletons": self.dropped_singletons,
                "stalled": int(np.count_nonzero(self.outcomes < 0)),
                "arcs": [{"id": i, "arcs": int(c)} for i, c in enumerate(self.counts)]}


def _runs(labels):
    """Circular runs as (label, length) with the first run merged with the last."""
    if labels.size == 0:
        return []
    change = np.nonzero(labels[1:] != labels[:-1])[0] + 1
    bounds = np.concatenate([[0], change, [labels.size]])
    runs = [(int(labels[a]), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:])]
    if len(runs) > 1 and runs[0][0] == runs[-1][0]:
        runs[0] = (runs[0][0], runs[0][1] + runs[-1][1])
        runs.pop()
    return runs


def count_arcs(outcomes: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Arcs per particle from outcome codes on an equispaced circular grid.

    Non-attached entries are removed (a stall splits a run only if its two
    neighbours differ); runs of a single grid angle are then dropped and the
    neighbouring runs merged.
    """
    lab = outcomes[outcomes >= 0]
    runs = _runs(lab)
    dropped = 0
    if len(runs) > 1:
        keep = [r for r in runs if r[1] > 1]
        dropped = len(runs) - len(keep)
        if keep:
            runs = _runs(np.repeat([r[0] for r in keep], [r[1] for r in keep]))
        else:
            runs = []
    counts = np.zeros(n, dtype=np.int64)
    for label, _ in runs:
        counts[label] += 1
    return counts, dropped


def arc_structure(cluster: Cluster, kind: PotentialKind, grid_size: int = 7200,
                  flow_config: FlowConfig = FlowConfig(), workers: int | None = None) -> ArcReport:
    if grid_size < 360:
        raise ValueError("grid_size must be at least 360")
    if cluster.dim != 2:
        raise ValueError("arc structure is defined for planar clusters")
    th = 2.0 * np.pi * np.arange(grid_size) / grid_size
    dirs = np.empty((grid_size, 2))
    unit_dirs2(th, dirs)
    out = sample_outcomes(cluster, kind, grid_size, flow_config, 0, workers, dirs=dirs)
    counts, dropped = count_arcs(out, cluster.n)
    return ArcReport(counts, grid_size, out, dropped)


# -- radius convergence ------------------------------------------------------

@dataclass
class TVRow:
    r_from: float
    r_to: float
    tv: float
    ci_low: float
    ci_high: float
    bound: float  # 10 n / r_from


def tv_distance(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """Total variation between two outcome samples over particle ids (stalls
    and failures form their own classes)."""
    pa = np.bincount(a + 3, minlength=n + 3) / a.size
    pb = np.bincount(b + 3, minlength=n + 3) / b.size
    return 0.5 * float(np.abs(pa - pb).sum())


def radius_convergence(cluster: Cluster, kind: PotentialKind, samples: int, radii,
                       flow_config: FlowConfig = FlowConfig(), workers: int | None = None, seed: int = 0,
                       bootstrap: int = 200) -> list[TVRow]:
    """TV distance between hit distributions at consecutive start radii.

    The same directions are reused at every radius, so the estimate is
    driven by samples whose parent actually changes. Confidence intervals
    come from a paired bootstrap over samples.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    if radii and radii[0] < 10 * cluster.n:
        raise ValueError("radii must be at least 10 n")
    outs = [sample_outcomes(cluster, kind, samples, flow_config, seed, workers, r) for r in radii]
    for o in outs:
        if np.count_nonzero(o == FAIL) > MAX_FAILURE_RATE * o.size:
            raise TooManyFailures("too many failed launches")
    rng = np.random.default_rng(seed)
    rows = []
    for (ra, a), (rb, b) in zip(zip(radii, outs), zip(radii[1:], outs[1:])):
        tv = tv_distance(a, b, cluster.n)
        boot = np.empty(bootstrap)
        for j in range(bootstrap):
            idx = rng.integers(0, a.size, a.size)
            boot[j] = tv_distance(a[idx], b[idx], cluster.n)
        lo, hi = np.quantile(boot, [0.025, 0.975]) if bootstrap else (tv, tv)
        rows.append(TVRow(ra, rb, tv, float(lo), float(hi), 10.0 * cluster.n / ra))
    return rows


# -- eps-disk ----------------------------------------------------------------

@dataclass
class EpsDiskResult:
    p_hat: float
    wilson_low: float
    wilson_high: float
    hits: int
    samples: int
    stall_count: int


def eps_disk_probability(cluster: Cluster, kind: PotentialKind, y, eps: float, samples: int,
                         flow_config: FlowConfig = FlowConfig(), workers: int | None = None,
                         seed: int = 0) -> EpsDiskResult:
    """Probability that a flow from infinity enters B_eps(y) before touching
    the cluster."""
    y = np.asarray(y, dtype=np.float64)
    if not 0 < eps <= 0.1:
        raise ValueError("eps must lie in (0, 1/10]")
    d = np.linalg.norm(cluster.positions - y, axis=1)
    if np.any(d < 1.0):
        raise ValueError("y must be at distance >= 1 from every particle")
    if kind.variant == "max":
        raise ValueError("the eps-disk experiment needs a finite alpha")
    out = sample_outcomes(cluster, kind, samples, flow_config, seed, workers, absorb=(y, float(eps)))
    hits = int(np.count_nonzero(out == ABSORB))
    if np.count_nonzero(out == FAIL) > MAX_FAILURE_RATE * samples:
        raise TooManyFailures("too many failed launches")
    lo, hi = wilson(hits, samples)
    return EpsDiskResult(hits / samples, float(lo), float(hi), hits, samples,
                         int(np.count_nonzero(out == STALL)))


# -- growth exponent ---------------------------------------------------------

@dataclass
class ExponentFit:
    slope: float
    intercept: float
    r_squared: float
    n_range: tuple[int, int]
    per_seed_slopes: list[float]
    n_grid: list[int] = field(default_factory=list)
    median_diam: list[float] = field(default_factory=list)

    def to_json(self, seed: int = 0, cfg: dict | None = None) -> dict:
        return {**provenance(cfg or {}, seed), "slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "n_range": list(self.n_range),
                "per_seed_slopes": self.per_seed_slopes, "n_grid": self.n_grid,
                "median_diam": self.median_diam}


def _diam_of(t):
    return np.asarray(getattr(t, "diam", t), dtype=np.float64)


def geometric_grid(n_min: int, n_max: int, points: int = 25) -> np.ndarray:
    return np.unique(np.round(np.geomspace(n_min, n_max, points)).astype(np.int64))


def _fit(x, y):
    if np.ptp(y) == 0.0 or np.ptp(x) == 0.0:
        raise ValueError("degenerate input: diameter is constant over the fit range")
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


def growth_exponent(traces, n_min: int, n_max: int, points: int = 25, min_traces: int = 3) -> ExponentFit:
    """Least-squares slope of log(median diam) against log n on a geometric
    grid of n in [n_min, n_max]. ``traces`` are GrowthTrace objects or plain
    arrays with diam[k - 1] = diam of the first k particles."""
    diams = [_diam_of(t) for t in traces]
    if len(diams) < min_traces:
        raise ValueError(f"need at least {min_traces} traces")
    if n_min < 100 and min_traces >= 3:
        raise ValueError("n_min must be at least 100")
    if n_max <= n_min:
        raise ValueError("n_max must exceed n_min")
    if any(d.shape[0] < n_max for d in diams):
        raise ValueError("n_max exceeds the length of a trace")
    grid = geometric_grid(n_min, n_max, points)
    mat = np.stack([d[grid - 1] for d in diams])
    med = np.median(mat, axis=0)
    if np.any(med <= 0):
        raise ValueError("degenerate input: non-positive diameter")
    lx = np.log(grid.astype(np.float64))
    slope, icpt, r2 = _fit(lx, np.log(med))
    per_seed = []
    for row in mat:
        try:
            per_seed.append(_fit(lx, np.log(row))[0])
        except ValueError:
            per_seed.append(math.nan)
    return ExponentFit(slope, icpt, r2, (int(n_min), int(n_max)), per_seed, grid.tolist(), med.tolist())
