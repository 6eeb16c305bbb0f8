"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""
import math
import sys

import numpy as np
import pytest
from scipy.spatial import ConvexHull as QHull

from gfa import analysis as A
from gfa.flow import launch_many, reference_many, start_point
from gfa.geometry import Cluster, write_cluster_csv
from gfa.growth import GrowthConfig, grow, grow_nearestmax, verify_cluster
from gfa.potential import Log, NearestMax, Power, gradient, laplacian

RESULTS: list[str] = []


def check(k: int, ok: bool, detail: str) -> None:
    line = f"[criterion {k}] {'PASS' if ok else 'FAIL'} {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def separated(n, box, rng, dim=2):
    pts = [np.zeros(dim)]
    while len(pts) < n:
        p = rng.uniform(-box, box, dim)
        if min(np.linalg.norm(p - q) for q in pts) >= 1.0:
            pts.append(p)
    return np.array(pts)


_GROWN: dict = {}


def grown(kind, n, seed, dim=2):
    """Grow once per key; criterion 10 verifies every cluster grown here."""
    key = (kind, n, seed, dim)
    if key not in _GROWN:
        cfg = GrowthConfig(kind, n, seed=seed, dim=dim)
        _GROWN[key] = grow_nearestmax(cfg) if kind == NearestMax() else grow(cfg)
    return _GROWN[key]


def energy_oracle(pts, x, kind):
    r = np.linalg.norm(pts - x, axis=1)
    return float(-np.sum(np.log(r))) if kind == Log() else float(np.sum(r ** -kind.alpha))


# -- 1 ---------------------------------------------------------------------------

def test_criterion_1_analytic_field():
    rng = np.random.default_rng(2024)
    worst_fd = worst_log = worst_pow = 0.0
    configs = 0
    for _ in range(120):
        m = int(rng.integers(1, 9))
        pts = rng.uniform(-5, 5, (m, 2))
        x = rng.uniform(8, 15, 2) * rng.choice([-1, 1], 2)
        alpha = float(rng.uniform(0.2, 4.0))
        for kind in (Log(), Power(alpha)):
            g = gradient(pts, x, kind)
            fd = np.zeros(2)
            for j in range(2):
                e = np.zeros(2)
                e[j] = 1e-5
                fd[j] = (energy_oracle(pts, x + e, kind) - energy_oracle(pts, x - e, kind)) / 2e-5
            worst_fd = max(worst_fd, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
        d = x - pts
        r = np.linalg.norm(d, axis=1)
        hess_trace = float(np.sum(-(2 / r ** 2 - 2 * np.sum(d * d, axis=1) / r ** 4)))
        worst_log = max(worst_log, abs(laplacian(pts, x, Log())), abs(hess_trace))
        exact = alpha ** 2 * np.sum(r ** (-alpha - 2))
        worst_pow = max(worst_pow, abs(laplacian(pts, x, Power(alpha)) - exact) / exact)
        configs += 1
    ok = configs >= 100 and worst_fd < 1e-6 and worst_log < 1e-9 and worst_pow < 1e-9
    check(1, ok, f"{configs} configs: grad vs FD rel {worst_fd:.2e} (<1e-6), |lap Log| {worst_log:.2e} "
                 f"(<1e-9), lap Power rel {worst_pow:.2e} (<1e-9)")


# -- 2 ---------------------------------------------------------------------------

def oracle_clusters():
    rng = np.random.default_rng(77)
    kinds = [Log(), Power(1), Power(2)]
    out = [(Cluster.from_points([[0.0, 0.0], [1.5, 0.0], [0.75, 1.3]]), Power(2))]
    for i in range(11):
        n = 3 + i % 4
        out.append((Cluster.from_points(separated(n, 2.5, rng)), kinds[i % 3]))
    return out


@pytest.mark.slow
def test_criterion_2_oracle_equivalence():
    angles = 2 * math.pi * np.arange(256) / 256
    agree = total = 0
    worst = 0.0
    clusters = oracle_clusters()
    for c, kind in clusters:
        starts = np.array([start_point(c, t) for t in angles])
        st, par, _, pos = launch_many(c, kind, starts)
        _, rpar, rpos = reference_many(c, kind, starts)
        same = par == rpar
        agree += int(same.sum())
        total += same.size
        if same.any():
            worst = max(worst, float(np.max(np.linalg.norm(pos[same] - rpos[same], axis=1))))
    frac = agree / total
    check(2, len(clusters) >= 10 and frac >= 0.99 and worst < 1e-4,
          f"{len(clusters)} clusters x 256 angles: parent agreement {frac:.4f} (>=0.99), "
          f"max position error {worst:.2e} (<1e-4)")


# -- 3 ---------------------------------------------------------------------------

def exact_law(pts):
    h = QHull(pts)
    ids = h.vertices  # counterclockwise
    law = {}
    for k, v in enumerate(ids):
        a, b = pts[ids[k - 1]] - pts[v], pts[ids[(k + 1) % len(ids)]] - pts[v]
        ang = math.acos(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1, 1))
        law[int(v)] = (math.pi - ang) / (2 * math.pi)
    return law


def test_criterion_3_nearestmax_exact_law():
    samples = 1_000_000
    details = []
    ok = True
    sq = Cluster.from_points([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    st = A.hit_probabilities(sq, NearestMax(), samples, seed=1)
    sig = math.sqrt(0.25 * 0.75 / samples)
    dev = float(np.max(np.abs(st.p_hat - 0.25)) / sig)
    ok &= dev <= 3
    details.append(f"square max |p-0.25| = {dev:.2f} sigma")
    rng = np.random.default_rng(3)
    worst = 0.0
    interior_hits = 0
    for j in range(3):
        pts = separated(40, 7.0, rng)
        c = Cluster.from_points(pts)
        st = A.hit_probabilities(c, NearestMax(), samples, seed=10 + j)
        law = exact_law(pts)
        for v, p in law.items():
            worst = max(worst, abs(st.p_hat[v] - p) / math.sqrt(p * (1 - p) / samples))
        interior_hits += int(sum(st.hits[i] for i in range(c.n) if i not in law))
    ok &= worst <= 3 and interior_hits == 0
    details.append(f"3 random clusters worst hull-vertex deviation {worst:.2f} sigma, "
                   f"non-hull hits {interior_hits}")
    check(3, ok, f"{samples} samples: " + "; ".join(details) + " (limit 3 sigma, 0 hits)")


# -- 4 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_radius_consistency():
    samples = 100_000
    c, _ = grown(Log(), 20, 0)
    st = A.hit_probabilities(c, Log(), samples, seed=4)
    total = float(st.p_hat.sum())
    R = float(st.start_radius)
    rows = A.radius_convergence(c, Log(), samples, [R, 2 * R, 4 * R], seed=4, bootstrap=100)
    ok = (abs(total + st.stall_fraction - 1) < 1e-12 and st.stall_fraction < 1e-3
          and rows[0].tv <= rows[0].bound and rows[1].tv <= rows[0].tv)
    check(4, ok, f"n=20 Log, {samples} samples: sum p = {total:.6f}, stall fraction {st.stall_fraction:.1e} "
                 f"(<1e-3); TV(R,2R) = {rows[0].tv:.5f} <= 10n/R = {rows[0].bound:.3f}; "
                 f"TV(2R,4R) = {rows[1].tv:.5f} (must not exceed TV(R,2R))")


# -- 5 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_arc_bound():
    worst = {}
    for alpha, kind in (("0", Log()), ("0.5", Power(0.5)), ("1", Power(1))):
        m = 0
        for seed in range(20):
            c, _ = grown(kind, 50, 100 + seed)
            m = max(m, A.arc_structure(c, kind, 7200).max_arcs)
        worst[alpha] = m
    ok = max(worst.values()) <= 6
    check(5, ok, "20 GFA clusters (n=50) per alpha at grid 7200, max arcs per particle: "
                 + ", ".join(f"alpha={a}: {m}" for a, m in worst.items()) + " (limit 6)")


# -- 6 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_beurling_scaling():
    rows = A.beurling_scan(Log(), [100, 400], "line", samples=1_000_000, seed=6)
    ratio = rows[1].max_p_hat / rows[0].max_p_hat
    check(6, abs(ratio - 0.5) <= 0.15,
          f"line clusters at alpha=0: max p(100) = {rows[0].max_p_hat:.5f}, max p(400) = "
          f"{rows[1].max_p_hat:.5f}, ratio {ratio:.3f} (target 0.5 +- 0.15)")


# -- 7 ---------------------------------------------------------------------------

def exponent_of(kind, n, seeds, n_min, n_max, dim=2):
    traces = [grown(kind, n, s, dim)[1] for s in seeds]
    return A.growth_exponent(traces, n_min, n_max)


@pytest.mark.slow
def test_criterion_7_log_exponent():
    fit = exponent_of(Log(), 5000, range(5), 200, 5000)
    check(7, 0.48 <= fit.slope <= 0.62,
          f"alpha=0, 5 seeds, n in [200, 5000]: slope {fit.slope:.4f} (R^2 {fit.r_squared:.4f}), "
          f"per seed " + ", ".join(f"{s:.3f}" for s in fit.per_seed_slopes) + " (target [0.48, 0.62])")


# -- 8 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_nearestmax_exponent():
    traces = [grow_nearestmax(GrowthConfig(NearestMax(), 1_000_000, seed=s))[1] for s in range(5)]
    fit = A.growth_exponent(traces, 10_000, 1_000_000)
    check(8, fit.slope >= 0.8,
          f"alpha=inf, 5 seeds, n in [1e4, 1e6]: slope {fit.slope:.4f}, per seed "
          + ", ".join(f"{s:.3f}" for s in fit.per_seed_slopes) + " (target >= 0.8)")


# -- 9 ---------------------------------------------------------------------------

def hessian_trace_newton(pts, x):
    d = x - pts
    r = np.linalg.norm(d, axis=1)
    return float(np.sum(3 * np.sum(d * d, axis=1) / r ** 5 - 3 / r ** 3))


@pytest.mark.slow
def test_criterion_9_three_dimensions():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        pts = rng.uniform(-4, 4, (int(rng.integers(1, 10)), 3))
        x = rng.uniform(6, 12, 3) * rng.choice([-1, 1], 3)
        worst = max(worst, abs(laplacian(pts, x, Power(1))), abs(hessian_trace_newton(pts, x)))
    fit = exponent_of(Power(1), 3000, range(5), 200, 3000, dim=3)
    check(9, worst < 1e-9 and fit.slope <= 0.85,
          f"d=3 alpha=1: max |Laplacian| {worst:.2e} (<1e-9); slope over n in [200, 3000] "
          f"{fit.slope:.4f} (limit 0.85, bound 2/3)")


# -- 10 --------------------------------------------------------------------------

def test_criterion_10_structural_invariants():
    own = [(Log(), 500, 2), (Power(0.5), 400, 2), (Power(2), 400, 2), (Power(4), 300, 2),
           (NearestMax(), 20_000, 2), (Power(1), 400, 3), (NearestMax(), 5000, 3)]
    for kind, n, dim in own:
        grown(kind, n, 10, dim)
    checked = 0
    bad = []
    for key, (c, _) in list(_GROWN.items()):
        rep = verify_cluster(c)
        limit = 6 if c.dim == 2 else 12
        checked += 1
        if not rep.ok or rep.max_degree > limit:
            bad.append(f"{key}: {rep.violations[:3]}")
    check(10, not bad, f"{checked} grown clusters verified (1-separation, parent distance 1 +- 1e-9, "
                       f"acyclic, degree <= 6 / 12)" + (f"; violations: {bad}" if bad else ""))


# -- 11 --------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    import json
    blobs = []
    for run in range(2):
        c, t = grow(GrowthConfig(Power(1.5), 300, seed=11))
        p = tmp_path / f"c{run}.csv"
        write_cluster_csv(c, p)
        t.save(tmp_path / f"t{run}.json")
        blobs.append((p.read_bytes(), (tmp_path / f"t{run}.json").read_bytes()))
    files_same = blobs[0] == blobs[1]
    c, _ = grown(Log(), 60, 11)
    stats = [json.dumps(A.hit_probabilities(c, Log(), 30_000, workers=w, seed=11).to_json(), sort_keys=True)
             for w in (1, 2, 4)]
    stats_same = len(set(stats)) == 1
    check(11, files_same and stats_same,
          f"repeat runs byte-identical: cluster+trace files {files_same}; hit stats JSON across 1/2/4 "
          f"workers {stats_same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
