import hashlib
import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from gfa.geometry import Cluster
from gfa.growth import GrowthConfig, grow
from gfa.potential import Log, NearestMax, Power
from gfa.render import COLOR_MODES, flow_line_paths, particle_colors, render_svg, write_svg

NS = "{http://www.w3.org/2000/svg}"
GOLDEN_LOG_1000 = "576b987be9ee09ab19d22029f9600a78014bae298de05ca424040d6a8220da73"


def test_single_particle_svg():
    root = ET.fromstring(render_svg(Cluster.single()))
    circles = root.findall(f".//{NS}circle")
    assert len(circles) == 1
    c = circles[0]
    assert (c.get("cx"), c.get("cy"), c.get("r")) == ("0.0000", "0.0000", "0.5")


def test_deterministic_and_golden(tmp_path):
    c, _ = grow(GrowthConfig(Log(), 1000, seed=1))
    a, b = render_svg(c), render_svg(c)
    assert a == b
    p = tmp_path / "c.svg"
    write_svg(a, p)
    assert hashlib.sha256(p.read_bytes()).hexdigest() == GOLDEN_LOG_1000
    assert len(ET.parse(p).getroot().findall(f".//{NS}circle")) == 1000


def test_no_negative_zero():
    c = Cluster.from_points([[0.0, 0.0], [1e-9, -1.0]], [-1, 0])
    assert "-0.0000" not in render_svg(c)


@pytest.mark.parametrize("mode", COLOR_MODES)
def test_color_modes(mode):
    c, _ = grow(GrowthConfig(Power(1), 30, seed=2))
    cols = particle_colors(c, mode)
    assert len(cols) == 30 and all(re.fullmatch(r"#[0-9a-f]{6}", x) for x in cols)
    ET.fromstring(render_svg(c, color_by=mode))


def test_unknown_color_mode():
    with pytest.raises(ValueError):
        particle_colors(Cluster.single(), "rainbow")


def test_flow_lines_end_on_parent_shell():
    c, _ = grow(GrowthConfig(Power(2), 60, seed=4))
    paths = flow_line_paths(c, Power(2), 100)
    assert len(paths) >= 99
    for p in paths:
        d = np.linalg.norm(c.positions - p[-1], axis=1)
        assert abs(d.min() - 1.0) <= 1e-9
    root = ET.fromstring(render_svg(c, flow_lines=paths))
    assert len(root.findall(f".//{NS}polyline")) == len(paths)


def test_nearestmax_flow_lines_are_segments():
    c = Cluster.from_points([[0.0, 0.0], [1.0, 0.0]])
    paths = flow_line_paths(c, NearestMax(), 8)
    assert all(p.shape == (2, 2) for p in paths)
    np.testing.assert_allclose(paths[0][-1], [2.0, 0.0], atol=1e-12)
    assert abs(np.linalg.norm(paths[2][-1] - c.positions[0]) - 1.0) < 1e-12 or \
        abs(np.linalg.norm(paths[2][-1] - c.positions[1]) - 1.0) < 1e-12


def test_flow_lines_reject_3d():
    with pytest.raises(ValueError):
        flow_line_paths(Cluster.single(dim=3), Power(1), 4)


def test_3d_projection():
    c, _ = grow(GrowthConfig(Power(1), 20, seed=1, dim=3))
    root = ET.fromstring(render_svg(c))
    assert len(root.findall(f".//{NS}circle")) == 20
    assert math.isfinite(float(root.get("width")))
