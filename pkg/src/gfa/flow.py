"""Launching a single particle and following it to first contact.

The particle moves along the normalized ascent field dx/ds = grad E/|grad E|
(unit speed: only the flow line matters). Steps are classical four-stage
Runge-Kutta updates (``stages=2`` selects the two-stage midpoint rule),
halved until the field direction turns by less than ``dir_tol`` across the
step. Far from the cluster the step grows with the clearance ``d_nn - 1``;
within ``2 h_max`` of a shell the chord of every step is tested against all
unit shells and shortened until it ends on the first one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .geometry import Cluster
from .potential import PotentialKind
from .rng import unit_dir2

TRAJECTORY_CAP = 200_000


@dataclass(frozen=True)
class FlowConfig:
    start_radius_factor: float = 10.0
    h_max: float = 0.25
    dir_tol: float = 0.05
    stall_grad_tol: float = 1e-14
    contact_tol: float = 1e-9
    max_steps: int = 10_000_000
    far_step_fraction: float = 0.15
    opening: float = 0.0
    stages: int = 4
    err_tol: float = 1e-7

    def __post_init__(self):
        for name in ("start_radius_factor", "h_max", "dir_tol", "stall_grad_tol", "contact_tol",
                     "max_steps", "far_step_fraction"):
            if not getattr(self, name) > 0:
                raise ValueError(f"FlowConfig.{name} must be positive")
        if self.h_max > 0.5:
            raise ValueError("FlowConfig.h_max must be <= 0.5")
        if self.far_step_fraction > 0.5:
            raise ValueError("FlowConfig.far_step_fraction must be <= 0.5 (no-tunneling bound)")
        if self.stages not in (2, 4):
            raise ValueError("FlowConfig.stages must be 2 (midpoint) or 4 (Runge-Kutta)")
        if not self.err_tol >= 0.0:
            raise ValueError("FlowConfig.err_tol must be >= 0 (0 disables the error test)")
        if not 0.0 <= self.opening <= 1.0:
            raise ValueError("FlowConfig.opening must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def params(self, start_radius: float) -> np.ndarray:
        prm = np.empty(K.N_PARAMS)
        prm[K.P_HMAX] = self.h_max
        prm[K.P_DIRTOL] = self.dir_tol
        prm[K.P_STALL] = self.stall_grad_tol
        prm[K.P_TOL] = self.contact_tol
        prm[K.P_MAXSTEPS] = self.max_steps
        prm[K.P_FARFRAC] = self.far_step_fraction
        prm[K.P_ESCAPE] = 2.0 * start_radius
        prm[K.P_OPENING] = self.opening
        prm[K.P_NEAR] = 2.0 + 2.0 * self.h_max
        prm[K.P_STAGES] = self.stages
        prm[K.P_ERRTOL] = self.err_tol if self.err_tol > 0 else np.inf
        return prm


@dataclass
class Attached:
    parent: int
    position: np.ndarray
    steps: int
    path_length: float
    trajectory: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Stalled:
    position: np.ndarray
    steps: int
    trajectory: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Failed:
    reason: str
    position: np.ndarray | None = None
    steps: int = 0
    trajectory: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Absorbed:
    """The flow entered an extra absorbing ball before touching the cluster."""
    position: np.ndarray
    steps: int


FlowOutcome = Attached | Stalled | Failed | Absorbed

FAIL_REASONS = {K.FAIL_MAXSTEPS: "MaxSteps", K.FAIL_ESCAPED: "Escaped", K.FAIL_START: "StartInsideShell"}


def start_radius(cluster: Cluster, config: FlowConfig) -> float:
    return config.start_radius_factor * max(cluster.n, cluster.rho + 10.0)


def direction(theta, dim: int = 2) -> np.ndarray:
    """Unit vector for an angle (2D) or a 3-vector (normalized)."""
    if dim == 2 and np.ndim(theta) == 0:
        return np.array(unit_dir2(float(theta)))
    u = np.asarray(theta, dtype=np.float64)
    return u / np.linalg.norm(u)


def start_point(cluster: Cluster, theta, config: FlowConfig = FlowConfig()) -> np.ndarray:
    if cluster.n == 0:
        raise ValueError("empty cluster")
    return start_radius(cluster, config) * direction(theta, cluster.dim)


class FieldSource:
    """Point arrays handed to the integrator, with an optional Barnes-Hut
    tree over a prefix of the points.

    New points are summed exactly until the untreed tail exceeds
    ``rebuild_fraction`` of the cluster, then the tree is rebuilt.
    """

    def __init__(self, cluster: Cluster, opening: float = 0.0, rebuild_fraction: float = 0.125,
                 min_tail: int = 512):
        self.cluster = cluster
        self.opening = opening
        self.rebuild_fraction = rebuild_fraction
        self.min_tail = min_tail
        self._n_tree = 0
        self._tree = K.empty_tree(cluster.dim)

    def arrays(self):
        c = self.cluster
        pts = c.positions
        if self.opening > 0.0:
            tail = c.n - self._n_tree
            if tail > max(self.min_tail, self.rebuild_fraction * c.n):
                self._tree = K.build_tree(pts)
                self._n_tree = c.n
        return pts, c.n, self._n_tree, self._tree


def _outcome(status, parent, steps, path, xout, traj):
    pos = xout.copy()
    if status == K.ATTACHED:
        return Attached(int(parent), pos, int(steps), float(path), traj)
    if status == K.STALLED:
        return Stalled(pos, int(steps), traj)
    if status == K.ABSORBED:
        return Absorbed(pos, int(steps))
    return Failed(FAIL_REASONS.get(status, "Unknown"), pos, int(steps), traj)


def launch(cluster: Cluster, kind: PotentialKind, theta, config: FlowConfig = FlowConfig(), *,
           record: bool = False, start=None, source: FieldSource | None = None,
           absorb: tuple | None = None) -> FlowOutcome:
    """Flow one particle in from direction ``theta`` until first contact.

    ``start`` overrides the standard start point; ``absorb=(y, eps)`` adds
    the ball B_eps(y) as an absorbing target.
    """
    if kind.code == K.NEARMAX:
        return launch_nearestmax(cluster, theta)
    if start is None:
        start = start_point(cluster, theta, config)
        radius = start_radius(cluster, config)
    else:
        start = np.asarray(start, dtype=np.float64)
        radius = max(float(np.linalg.norm(start)), start_radius(cluster, config))
    if source is None:
        source = FieldSource(cluster, config.opening)
    pts, n, n_tree, tree = source.arrays()
    d = cluster.dim
    ab_c, ab_r = _absorb_args(absorb, d)
    traj = np.empty((TRAJECTORY_CAP if record else 0, d + 1))
    xout = np.empty(d)
    status, parent, steps, path, nrec = K.integrate(
        pts, n, n_tree, tree, kind.code, kind.alpha, np.ascontiguousarray(start, dtype=np.float64),
        config.params(radius), ab_c, ab_r, traj, xout)
    return _outcome(status, parent, steps, path, xout, traj[:nrec].copy() if record else None)


def _absorb_args(absorb, d):
    if absorb is None:
        return np.zeros(d), -1.0
    y, eps = absorb
    return np.ascontiguousarray(y, dtype=np.float64), float(eps)


def launch_nearestmax(cluster: Cluster, theta) -> Attached:
    """Closed-form alpha = infinity flow: a straight line onto the far-field
    nearest particle, ending at x_parent + theta_hat."""
    u = direction(theta, cluster.dim)
    if cluster.dim == 2 and cluster.hull is not None and len(cluster.hull) > 0:
        parent = cluster.hull.select(cluster.buffer, float(theta) if np.ndim(theta) == 0
                                     else math.atan2(u[1], u[0]))
    else:
        parent = int(K.far_argmax(cluster.positions, cluster.n, u))
    pos = cluster.positions[parent] + u
    return Attached(parent, pos, 0, 0.0)


def launch_many(cluster: Cluster, kind: PotentialKind, starts: np.ndarray,
                config: FlowConfig = FlowConfig(), absorb: tuple | None = None,
                escape_radius: float | None = None):
    """Integrate many flows against one immutable cluster.

    Returns (status, parent, steps, final_positions) arrays.
    """
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    m = starts.shape[0]
    d = cluster.dim
    status = np.empty(m, dtype=np.int64)
    parent = np.empty(m, dtype=np.int64)
    steps = np.empty(m, dtype=np.int64)
    pos = np.empty((m, d))
    if m == 0:
        return status, parent, steps, pos
    src = FieldSource(cluster, config.opening, min_tail=0)
    pts, n, n_tree, tree = src.arrays()
    if escape_radius is None:
        escape_radius = max(float(np.max(np.linalg.norm(starts, axis=1))), start_radius(cluster, config))
    ab_c, ab_r = _absorb_args(absorb, d)
    K.launch_batch(pts, n, n_tree, tree, kind.code, kind.alpha, starts, config.params(escape_radius),
                   ab_c, ab_r, status, parent, steps, pos)
    return status, parent, steps, pos


def reference_launch(cluster: Cluster, kind: PotentialKind, theta, h: float = 1e-5,
                     config: FlowConfig = FlowConfig(), start=None) -> FlowOutcome:
    """Fixed-step oracle: midpoint steps of length h with no adaptivity."""
    if start is None:
        start = start_point(cluster, theta, config)
    radius = float(np.linalg.norm(start))
    xout = np.empty(cluster.dim)
    max_steps = int(4 * radius / h) + 1000
    status, parent, steps = K.integrate_reference(
        np.ascontiguousarray(cluster.positions), kind.code, kind.alpha,
        np.ascontiguousarray(start, dtype=np.float64), h, config.contact_tol, max_steps, 2 * radius, xout)
    return _outcome(status, parent, steps, steps * h, xout, None)


def reference_many(cluster: Cluster, kind: PotentialKind, starts: np.ndarray, h: float = 1e-5,
                   config: FlowConfig = FlowConfig()):
    """Fixed-step oracle for many starts; returns (status, parent, positions)."""
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    m = starts.shape[0]
    status = np.empty(m, dtype=np.int64)
    parent = np.empty(m, dtype=np.int64)
    pos = np.empty((m, cluster.dim))
    radius = float(np.max(np.linalg.norm(starts, axis=1)))
    max_steps = int(4 * radius / h) + 1000
    pts = np.ascontiguousarray(cluster.positions)
    if cluster.dim == 2:
        K.reference_lanes_2d(pts, kind.code, kind.alpha, starts, h, config.contact_tol, max_steps,
                             2 * radius, status, parent, pos)
    else:
        K.reference_batch(pts, kind.code, kind.alpha, starts, h, config.contact_tol, max_steps,
                          2 * radius, status, parent, pos)
    return status, parent, pos


def write_trajectory_csv(trajectory: np.ndarray, path) -> None:
    d = trajectory.shape[1] - 1
    axes = ["x", "y", "z"][:d]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *axes, "grad_norm"])
        for i, row in enumerate(trajectory):
            w.writerow([i, *(repr(float(v)) for v in row)])
