import json
import math

import numpy as np
import pytest

from gfa.errors import GrowthAbort
from gfa.flow import FlowConfig
from gfa.geometry import Cluster, batch_hull, diameter, write_cluster_csv
from gfa.growth import GrowthConfig, GrowthTrace, grow, grow_nearestmax, initial_polygon, verify_cluster
from gfa.potential import Log, NearestMax, Power
from gfa.rng import substream_angle, substream_direction


def brute_running_diam(pos):
    out = np.zeros(len(pos))
    for k in range(1, len(pos)):
        out[k] = max(out[k - 1], np.max(np.linalg.norm(pos[:k] - pos[k], axis=1)))
    return out


class TestConfig:
    def test_3d_restricted_to_harmonic_and_max(self):
        with pytest.raises(ValueError):
            GrowthConfig(Log(), 10, dim=3)
        with pytest.raises(ValueError):
            GrowthConfig(Power(2), 10, dim=3)
        GrowthConfig(Power(1), 10, dim=3)
        GrowthConfig(NearestMax(), 10, dim=3)

    def test_bad_values(self):
        with pytest.raises(ValueError):
            GrowthConfig(Log(), 0)
        with pytest.raises(ValueError):
            GrowthConfig(Log(), 5, dim=4)


class TestGrow:
    def test_single(self):
        c, t = grow(GrowthConfig(Log(), 1))
        assert c.n == 1 and np.array_equal(c.positions, [[0.0, 0.0]]) and t.diam[0] == 0.0

    @pytest.mark.parametrize("kind", [Log(), Power(0.5), Power(2), NearestMax()], ids=str)
    def test_second_particle_along_sampled_direction(self, kind):
        c, t = grow(GrowthConfig(kind, 2, seed=11))
        th = substream_angle(11, 1, 0)
        assert t.theta[1] == th
        assert abs(np.linalg.norm(c.positions[1]) - 1.0) <= 1e-9
        np.testing.assert_allclose(c.positions[1], [math.cos(th), math.sin(th)], atol=1e-9)

    def test_second_particle_3d(self):
        c, _ = grow(GrowthConfig(Power(1), 2, seed=4, dim=3))
        np.testing.assert_allclose(c.positions[1], substream_direction(4, 1, 0, 3), atol=1e-9)

    @pytest.mark.parametrize("kind,dim,n", [(Log(), 2, 200), (Power(0.5), 2, 150), (Power(2), 2, 150),
                                            (Power(1), 3, 120), (NearestMax(), 2, 3000),
                                            (NearestMax(), 3, 2000)], ids=str)
    def test_invariants(self, kind, dim, n):
        c, t = grow(GrowthConfig(kind, n, seed=3, dim=dim))
        rep = verify_cluster(c)
        assert rep.ok, rep.violations
        assert c.n == n and len(t) == n
        assert np.all(np.diff(t.diam) >= 0)
        assert np.all(t.diam <= 2 * np.arange(1, n + 1))
        assert t.diam[-1] == pytest.approx(diameter(c), abs=1e-12)
        if n <= 300:
            np.testing.assert_allclose(t.diam, brute_running_diam(c.positions), atol=1e-12)
        assert t.stall_rate < 1e-3

    @pytest.mark.parametrize("kind", [Power(2), NearestMax()], ids=str)
    def test_reproducible(self, kind):
        cfg = GrowthConfig(kind, 150, seed=9)
        c1, t1 = grow(cfg)
        c2, t2 = grow(cfg)
        assert np.array_equal(c1.positions, c2.positions) and np.array_equal(c1.parent, c2.parent)
        assert json.dumps(t1.to_json(), default=str) == json.dumps(t2.to_json(), default=str)

    def test_snapshots(self):
        seen = {}
        cfg = GrowthConfig(Log(), 60, seed=1, snapshot_schedule=(10, 40, 60))
        c, _ = grow(cfg, on_snapshot=lambda k, cl: seen.setdefault(k, cl.positions.copy()))
        assert sorted(seen) == [10, 40, 60]
        assert np.array_equal(seen[40], c.positions[:40])

    def test_nearestmax_snapshots(self):
        seen = {}
        cfg = GrowthConfig(NearestMax(), 500, seed=1, snapshot_schedule=(100, 300))
        c, _ = grow(cfg, on_snapshot=lambda k, cl: seen.setdefault(k, cl))
        assert np.array_equal(seen[100].positions, c.positions[:100])
        assert sorted(seen[300].hull.vertex_ids) == sorted(batch_hull(c.positions[:300]).tolist())

    def test_abort_after_resample_cap(self):
        cfg = GrowthConfig(Log(), 3, flow=FlowConfig(max_steps=2), max_resamples=5)
        with pytest.raises(GrowthAbort):
            grow(cfg)

    def test_init_cluster(self):
        init = initial_polygon(10, 100.0)
        c, t = grow(GrowthConfig(NearestMax(), 400, seed=2), init)
        assert np.array_equal(c.positions[:10], init.positions)
        assert verify_cluster(c, roots=10).ok
        assert t.n_init == 10

    def test_init_dimension_mismatch(self):
        with pytest.raises(ValueError):
            grow(GrowthConfig(Log(), 5), Cluster.single(dim=3))


class TestNearestMax:
    def test_three_particle_split(self):
        # particle 3 joins particle 0 or 1 with probability 1/2 each
        seeds = 4000
        hits0 = sum(grow_nearestmax(GrowthConfig(NearestMax(), 3, seed=s))[0].parent[2] == 0 for s in range(seeds))
        assert abs(hits0 / seeds - 0.5) < 3 * math.sqrt(0.25 / seeds)

    def test_parents_are_hull_vertices(self):
        c, t = grow_nearestmax(GrowthConfig(NearestMax(), 2000, seed=5))
        pos = c.positions
        replay = Cluster(2, capacity=2000)
        replay.append(pos[0])
        for k in range(1, c.n):
            assert c.parent[k] in replay.hull.vertex_ids
            replay.append(pos[k], int(c.parent[k]))
            assert len(replay.hull) == t.hull_sizes[k]

    def test_parent_is_argmax(self):
        c, t = grow_nearestmax(GrowthConfig(NearestMax(), 300, seed=6))
        for k in range(1, c.n):
            u = np.array([math.cos(t.theta[k]), math.sin(t.theta[k])])
            assert c.parent[k] == int(np.argmax(c.positions[:k] @ u))
            np.testing.assert_allclose(c.positions[k], c.positions[c.parent[k]] + u, atol=1e-12)

    def test_3d_parent_is_argmax(self):
        c, t = grow_nearestmax(GrowthConfig(NearestMax(), 300, seed=6, dim=3))
        for k in range(1, c.n):
            assert c.parent[k] == int(np.argmax(c.positions[:k] @ t.theta[k]))

    def test_requires_nearestmax(self):
        with pytest.raises(ValueError):
            grow_nearestmax(GrowthConfig(Log(), 5))


class TestTrace:
    def test_json_round_trip(self, tmp_path):
        _, t = grow(GrowthConfig(Power(1), 40, seed=2))
        p = tmp_path / "t.json"
        t.save(p)
        d = json.loads(p.read_text())
        assert {"seed", "kind", "dim", "records", "diam", "stalls", "format_version"} <= set(d)
        assert d["records"][0]["theta"] is None
        r = GrowthTrace.load(p)
        assert np.array_equal(r.diam, t.diam) and np.array_equal(r.parent, t.parent)
        assert np.array_equal(r.theta[1:], t.theta[1:])


class TestVerify:
    def test_close_pair(self):
        c = Cluster.from_points([[0.0, 0.0], [0.5, 0.0]], [-1, 0])
        rep = verify_cluster(c)
        assert not rep.ok and any("separation" in v for v in rep.violations)

    def test_hexagon_is_fine(self):
        pts = [[0.0, 0.0]] + [[math.cos(k * math.pi / 3), math.sin(k * math.pi / 3)] for k in range(6)]
        rep = verify_cluster(Cluster.from_points(pts, [-1, 0, 0, 0, 0, 0, 0]))
        assert rep.ok, rep.violations
        assert rep.max_degree == 6

    def test_degree_seven_reported(self):
        pts = [[0.0, 0.0]] + [[math.cos(k * 2 * math.pi / 7), math.sin(k * 2 * math.pi / 7)] for k in range(7)]
        rep = verify_cluster(Cluster.from_points(pts, [-1] + [0] * 7))
        assert any("degree" in v for v in rep.violations)

    def test_cycle_and_bad_parent_distance(self):
        c = Cluster.from_points([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [2, 0, 1])
        rep = verify_cluster(c)
        assert any("cycle" in v for v in rep.violations)
        assert any("parent distance" in v for v in rep.violations)
        assert any("root" in v for v in rep.violations)

    def test_never_raises(self):
        assert verify_cluster(Cluster(2)).ok
        rep = verify_cluster(Cluster.from_points([[0.0, 0.0], [0.0, 0.0]], [-1, 7]))
        assert not rep.ok

    def test_grown_3d(self, tmp_path):
        c, _ = grow(GrowthConfig(NearestMax(), 500, seed=1, dim=3))
        assert verify_cluster(c).ok
        write_cluster_csv(c, tmp_path / "c.csv")
