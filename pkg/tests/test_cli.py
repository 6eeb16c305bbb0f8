import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from gfa.cli import build_parser, main
from gfa.flow import FlowConfig
from gfa.geometry import Cluster, read_cluster_csv, write_cluster_csv
from gfa.growth import GrowthConfig, grow
from gfa.potential import Log, Power


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("GFA_THREADS", raising=False)
    return tmp_path


def write_two(path):
    write_cluster_csv(Cluster.from_points([[0.0, 0.0], [1.0, 0.0]], [-1, 0]), path)


class TestGrow:
    def test_log_then_verify(self, work):
        assert main(["grow", "--alpha", "log", "--n", "1000", "--seed", "7", "--out-prefix", "c"]) == 0
        for name in ("c.csv", "c_trace.json", "c_manifest.json"):
            assert (work / name).exists()
        assert read_cluster_csv(work / "c.csv").n == 1000
        assert main(["verify", "--cluster", "c.csv", "--out", "v.json"]) == 0
        assert json.loads((work / "v.json").read_text())["ok"] is True

    def test_byte_identical_reruns(self, work):
        args = ["grow", "--alpha", "2", "--n", "1000", "--seed", "3", "--snapshots", "500"]
        assert main(args + ["--out-prefix", "a"]) == 0
        assert main(args + ["--out-prefix", "b"]) == 0
        for suffix in (".csv", "_n500.csv", "_trace.json"):
            assert (work / f"a{suffix}").read_bytes() == (work / f"b{suffix}").read_bytes()

    @pytest.mark.slow
    def test_million_particle_fast_path(self, work):
        assert main(["grow", "--alpha", "inf", "--n", "1000000", "--seed", "1", "--out-prefix", "m"]) == 0
        assert json.loads((work / "m_trace.json").read_text())["records"][-1]["id"] == 999_999

    def test_abort_exit_code(self, work, capsys):
        code = main(["grow", "--n", "3", "--max-steps", "2", "--max-resamples", "5", "--out-prefix", "x"])
        assert code == 3
        assert "aborted" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["grow", "--alpha", "-1"], ["grow", "--alpha", "abc"],
                                      ["grow", "--dim", "4"], ["grow", "--bogus"], ["grow", "--n", "0"],
                                      ["grow", "--dim", "3", "--alpha", "2"], ["frobnicate"]])
    def test_usage_errors(self, work, argv):
        assert main(argv) == 2

    def test_init_polygon(self, work):
        from gfa.growth import initial_polygon
        write_cluster_csv(initial_polygon(5, 20.0), work / "init.csv")
        assert main(["grow", "--alpha", "inf", "--n", "50", "--init", "init.csv", "--out-prefix", "p"]) == 0


class TestMeasure:
    def test_hitprob_two(self, work):
        write_two(work / "two.csv")
        assert main(["measure", "hitprob", "--cluster", "two.csv", "--alpha", "1", "--samples", "100000",
                     "--out", "h", "--figure", "h.png",
                     "--assert", "max_p_hat<=0.505", "--assert", "min_p_hat>=0.495"]) == 0
        res = json.loads((work / "h.json").read_text())
        assert [round(p["p_hat"], 2) for p in res["particles"]] == [0.5, 0.5]
        assert (work / "h.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert (work / "h.csv").read_text().startswith("id,")
        man = json.loads((work / "h_manifest.json").read_text())
        assert man["command"] == ["measure", "hitprob"] and man["config"]["samples"] == 100000
        assert set(man["outputs"]) == {"h.json", "h.csv", "h.png"}

    def test_failed_assert_exit_4(self, work):
        write_two(work / "two.csv")
        assert main(["measure", "hitprob", "--cluster", "two.csv", "--samples", "1000",
                     "--assert", "max_p_hat<0.1"]) == 4

    @pytest.mark.parametrize("expr", ["nonsense", "max_p_hat<<1", "no_such_metric<1"])
    def test_bad_assert_exit_2(self, work, expr):
        write_two(work / "two.csv")
        assert main(["measure", "hitprob", "--cluster", "two.csv", "--samples", "1000", "--assert", expr]) == 2

    def test_missing_cluster_exit_2(self, work):
        assert main(["measure", "hitprob", "--cluster", "nope.csv"]) == 2
        assert main(["render", "--cluster", "nope.csv"]) == 2

    def test_arcs_gfa50(self, work):
        c, _ = grow(GrowthConfig(Log(), 50, seed=5))
        write_cluster_csv(c, work / "gfa50.csv")
        assert main(["measure", "arcs", "--cluster", "gfa50.csv", "--alpha", "0", "--grid", "7200",
                     "--assert", "max_arcs<=6", "--out", "arcs"]) == 0
        assert json.loads((work / "arcs.json").read_text())["grid_size"] == 7200

    def test_exponent_from_traces(self, work):
        for s in range(3):
            assert main(["grow", "--alpha", "inf", "--n", "5000", "--seed", str(s), "--out-prefix", f"t{s}"]) == 0
        assert main(["measure", "exponent", "--traces", "t*_trace.json", "--nmin", "200", "--nmax", "5000",
                     "--out", "e", "--figure", "e.png", "--assert", "slope>=0.8"]) == 0
        res = json.loads((work / "e.json").read_text())
        assert len(res["per_seed_slopes"]) == 3

    def test_beurling_and_radius_and_epsdisk(self, work):
        assert main(["measure", "beurling", "--n-list", "5,20", "--samples", "5000", "--out", "b"]) == 0
        write_cluster_csv(Cluster.from_points([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), work / "l3.csv")
        assert main(["measure", "radius", "--cluster", "l3.csv", "--samples", "5000", "--bootstrap", "20",
                     "--out", "r"]) == 0
        assert main(["measure", "epsdisk", "--cluster", "l3.csv", "--y", "1,1.6", "--samples", "5000",
                     "--out", "d"]) == 0
        assert main(["measure", "epsdisk", "--cluster", "l3.csv", "--y", "1,0.2", "--samples", "10"]) == 2

    def test_worker_count_does_not_change_output(self, work, monkeypatch):
        write_two(work / "two.csv")
        assert main(["measure", "hitprob", "--cluster", "two.csv", "--samples", "20000", "--workers", "1",
                     "--out", "w1"]) == 0
        monkeypatch.setenv("GFA_THREADS", "3")
        assert main(["measure", "hitprob", "--cluster", "two.csv", "--samples", "20000", "--out", "w3"]) == 0
        assert json.loads((work / "w3_manifest.json").read_text())["config"]["workers"] == 3
        assert (work / "w1.json").read_bytes() == (work / "w3.json").read_bytes()


class TestConfigAndManifest:
    def test_precedence(self, work):
        (work / "cfg.json").write_text(json.dumps({"n": 30, "seed": 4, "alpha": "1"}))
        assert main(["grow", "--config", "cfg.json", "--n", "20", "--out-prefix", "c"]) == 0
        man = json.loads((work / "c_manifest.json").read_text())
        assert (man["config"]["n"], man["config"]["seed"], man["config"]["alpha"]) == (20, 4, "1.0")
        assert read_cluster_csv(work / "c.csv").n == 20

    def test_unknown_config_key(self, work):
        (work / "cfg.json").write_text(json.dumps({"colour": "red"}))
        assert main(["grow", "--config", "cfg.json"]) == 2

    def test_manifest_materializes_defaults(self, work):
        assert main(["grow", "--n", "10", "--out-prefix", "c"]) == 0
        cfg = json.loads((work / "c_manifest.json").read_text())["config"]
        fc = FlowConfig()
        assert cfg["h_max"] == fc.h_max and cfg["dir_tol"] == fc.dir_tol and cfg["max_steps"] == fc.max_steps

    def test_rerun_check(self, work):
        assert main(["grow", "--alpha", "0.5", "--n", "80", "--seed", "2", "--out-prefix", "g"]) == 0
        original = (work / "g.csv").read_bytes()
        (work / "g.csv").write_text("tampered")
        assert main(["rerun", "g_manifest.json", "--check"]) == 0
        assert (work / "g.csv").read_bytes() == original
        assert main(["render", "--cluster", "g.csv", "--flow-lines", "10", "--alpha", "0.5", "--out", "r.svg"]) == 0
        assert main(["rerun", "r_manifest.json", "--check"]) == 0

    def test_rerun_detects_mismatch(self, work):
        assert main(["grow", "--n", "20", "--out-prefix", "g"]) == 0
        man = json.loads((work / "g_manifest.json").read_text())
        man["outputs"]["g.csv"] = "0" * 64
        (work / "m.json").write_text(json.dumps(man))
        assert main(["rerun", "m.json", "--check"]) == 4
        assert main(["rerun", "missing.json"]) == 2


class TestRenderAndLaunch:
    def test_render_svg(self, work):
        write_cluster_csv(Cluster.single(), work / "one.csv")
        assert main(["render", "--cluster", "one.csv", "--out", "one.svg"]) == 0
        text = (work / "one.svg").read_text()
        assert text.count("<circle") == 1 and 'r="0.5"' in text

    def test_render_flow_lines(self, work):
        c, _ = grow(GrowthConfig(Power(2), 40, seed=1))
        write_cluster_csv(c, work / "c.csv")
        assert main(["render", "--cluster", "c.csv", "--flow-lines", "100", "--alpha", "2",
                     "--color-by", "parent"]) == 0
        assert (work / "c.svg").read_text().count("<polyline") == 100

    def test_launch_trajectory(self, work, capsys):
        write_two(work / "two.csv")
        assert main(["launch", "--cluster", "two.csv", "--alpha", "1", "--theta", "0",
                     "--trajectory", "t.csv"]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["outcome"] == "Attached" and info["parent"] == 1
        assert (work / "t.csv").read_text().startswith("step,x,y,grad_norm")


def _help(argv):
    p = build_parser()
    for name in argv:
        p = next(a for a in p._actions if a.__class__.__name__ == "_SubParsersAction").choices[name]
    return p.format_help()


def test_help_lists_defaults():
    text = _help(["grow"])
    fc = FlowConfig()
    for flag, value in [("--h-max", fc.h_max), ("--dir-tol", fc.dir_tol), ("--max-steps", fc.max_steps),
                        ("--start-radius-factor", fc.start_radius_factor), ("--contact-tol", fc.contact_tol),
                        ("--stall-grad-tol", fc.stall_grad_tol), ("--max-resamples", 100), ("--n", 1000)]:
        m = re.search(r"^\s+" + re.escape(flag) + r"\b.*?\(default:\s+([^)]*)\)", text, re.S | re.M)
        assert m and float(m.group(1)) == float(value), flag
    for sub in ("hitprob", "beurling", "arcs", "radius", "epsdisk", "exponent"):
        assert "(default:" in _help(["measure", sub])


def test_console_script(tmp_path):
    exe = shutil.which("gfa")
    cmd = [exe] if exe else [sys.executable, "-m", "gfa.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, cwd=tmp_path)
    assert out.returncode == 0 and out.stdout.startswith("gfa ")
    out = subprocess.run(cmd + ["grow", "--alpha", "nope"], capture_output=True, text=True, cwd=tmp_path)
    assert out.returncode == 2 and "alpha" in out.stderr
    assert not any(Path(tmp_path).iterdir())
