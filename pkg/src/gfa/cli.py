"""Command-line interface: ``gfa grow | measure | render | verify | launch | rerun``.

Exit codes: 0 success, 2 usage or unreadable input, 3 aborted run,
4 failed ``--assert`` (or a verify/rerun check).
Settings resolve as flags > ``--config`` JSON > built-in defaults, and every
command that writes files also writes a manifest recording the merged
settings and the digests of its inputs and outputs.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import operator
import re
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GFAError, GrowthAbort, TooManyFailures
from .flow import FlowConfig
from .geometry import FORMAT_VERSION, file_digest, read_cluster_csv, write_cluster_csv
from .growth import GrowthConfig, GrowthTrace
from .potential import PotentialKind

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_ASSERT = 0, 2, 3, 4
MEASURES = ("hitprob", "beurling", "arcs", "radius", "epsdisk", "exponent")
_INTERNAL = {"command", "measure", "func", "config"}

log = logging.getLogger("gfa")


class UsageError(Exception):
    pass


# -- argument types ------------------------------------------------------------

def alpha_text(s: str) -> str:
    """Validate an --alpha value and return its canonical label."""
    try:
        return PotentialKind.parse(s).label()
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid alpha {s!r}: {e}") from None


def int_list(s: str) -> list[int]:
    try:
        return [int(float(v)) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def float_list(s: str) -> list[float]:
    try:
        return [float(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


# -- parser ----------------------------------------------------------------------

class _Builder:
    """Adds arguments with real defaults, or with every default suppressed
    (used to find which flags were given explicitly)."""

    def __init__(self, suppress: bool):
        self.suppress = suppress

    def __call__(self, p, *flags, default=None, **kw):
        if self.suppress:
            default = argparse.SUPPRESS
        p.add_argument(*flags, default=default, **kw)


def _flow_args(p, add):
    d = FlowConfig()
    g = p.add_argument_group("flow integration")
    add(g, "--start-radius-factor", type=float, default=d.start_radius_factor,
        help="start radius R = factor * max(n, rho + 10)")
    add(g, "--h-max", type=float, default=d.h_max, help="largest step near the cluster")
    add(g, "--dir-tol", type=float, default=d.dir_tol, help="max direction change across a step (rad)")
    add(g, "--stall-grad-tol", type=float, default=d.stall_grad_tol, help="relative stall threshold")
    add(g, "--contact-tol", type=float, default=d.contact_tol, help="contact distance tolerance")
    add(g, "--max-steps", type=int, default=d.max_steps, help="step cap per launch")
    add(g, "--far-step-fraction", type=float, default=d.far_step_fraction,
        help="far-zone step as a fraction of the clearance")
    add(g, "--opening", type=float, default=d.opening, help="Barnes-Hut opening angle (0 = exact sums)")
    add(g, "--stages", type=int, choices=(2, 4), default=d.stages, help="2 = midpoint, 4 = Runge-Kutta")
    add(g, "--err-tol", type=float, default=d.err_tol, help="local error bound per Runge-Kutta step (0 = off)")


def _common(p, add, seed=True):
    add(p, "--config", type=str, default=None, help="JSON settings file or a manifest to replay")
    if seed:
        add(p, "--seed", type=int, default=0, help="master seed for all randomness")


def _measure_common(p, add, cluster=True, samples=100_000):
    if cluster:
        add(p, "--cluster", type=str, default=None, help="cluster CSV file")
    add(p, "--alpha", type=alpha_text, default="log", help="potential exponent: log, inf or a real > 0")
    add(p, "--samples", type=int, default=samples, help="number of launches")
    add(p, "--workers", type=int, default=None, help="worker processes (default: $GFA_THREADS or 1)")
    add(p, "--out", type=str, default=None, help="output prefix (default: derived from the subcommand)")
    add(p, "--figure", type=str, default=None, help="also write a PNG figure to this path")
    add(p, "--assert", dest="asserts", action="append", default=[], metavar="EXPR",
        help="check a result, e.g. 'max_arcs<=6'; exit 4 when false (repeatable)")
    _common(p, add)
    _flow_args(p, add)


def build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    add = _Builder(suppress)
    fmt = argparse.ArgumentDefaultsHelpFormatter
    top = argparse.ArgumentParser(prog="gfa", description="Gradient flow aggregation toolkit.",
                                  formatter_class=fmt)
    top.add_argument("--version", action="version", version=f"gfa {__version__}")
    top.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0,
                     help="more logging")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grow", help="grow a cluster", formatter_class=fmt)
    gd = GrowthConfig(PotentialKind.log(), 1)
    add(g, "--alpha", type=alpha_text, default="log", help="potential exponent: log, inf or a real > 0")
    add(g, "--dim", type=int, choices=(2, 3), default=gd.dim, help="space dimension")
    add(g, "--n", type=int, default=1000, help="target number of particles")
    add(g, "--snapshots", type=int_list, default=[], help="comma-separated sizes to save along the way")
    add(g, "--out-prefix", type=str, default="gfa_cluster", help="prefix for all output files")
    add(g, "--init", type=str, default=None, help="initial cluster CSV; None starts from one particle at the origin")
    add(g, "--max-resamples", type=int, default=gd.max_resamples, help="abort after this many failed attempts")
    _common(g, add)
    _flow_args(g, add)
    g.set_defaults(func=cmd_grow)

    m = sub.add_parser("measure", help="run a measurement", formatter_class=fmt)
    ms = m.add_subparsers(dest="measure", required=True)

    p = ms.add_parser("hitprob", help="per-particle hitting probabilities", formatter_class=fmt)
    _measure_common(p, add)
    add(p, "--radius", type=float, default=None, help="start radius (default: standard R)")

    p = ms.add_parser("beurling", help="max hit probability against cluster size", formatter_class=fmt)
    _measure_common(p, add, cluster=False)
    add(p, "--n-list", type=int_list, default=[100, 400], help="cluster sizes")
    add(p, "--family", choices=("line", "gfa"), default="line", help="cluster family")

    p = ms.add_parser("arcs", help="attachment arcs per particle on an angle grid", formatter_class=fmt)
    _measure_common(p, add, samples=0)
    add(p, "--grid", type=int, default=7200, help="number of equispaced angles")

    p = ms.add_parser("radius", help="hit distribution against start radius", formatter_class=fmt)
    _measure_common(p, add)
    add(p, "--radii", type=float_list, default=None,
        help="increasing start radii (default: R, 2R, 4R for the standard R)")
    add(p, "--bootstrap", type=int, default=200, help="bootstrap resamples for the TV intervals")

    p = ms.add_parser("epsdisk", help="probability of entering a small ball first", formatter_class=fmt)
    _measure_common(p, add)
    add(p, "--y", type=float_list, default=None, help="ball centre, e.g. '0,1.5'")
    add(p, "--eps", type=float, default=0.1, help="ball radius (at most 0.1)")

    p = ms.add_parser("exponent", help="fit the diameter growth exponent from traces", formatter_class=fmt)
    add(p, "--traces", nargs="+", default=[], help="trace JSON files (glob patterns allowed)")
    add(p, "--nmin", type=int, default=200, help="smallest n in the fit")
    add(p, "--nmax", type=int, default=5000, help="largest n in the fit")
    add(p, "--points", type=int, default=25, help="points on the geometric n grid")
    add(p, "--out", type=str, default=None, help="output prefix")
    add(p, "--figure", type=str, default=None, help="also write a PNG figure to this path")
    add(p, "--assert", dest="asserts", action="append", default=[], metavar="EXPR", help="check a result")
    _common(p, add, seed=False)
    for name in MEASURES:
        ms.choices[name].set_defaults(func=cmd_measure)

    r = sub.add_parser("render", help="draw a cluster as SVG", formatter_class=fmt)
    add(r, "--cluster", type=str, default=None, help="cluster CSV file")
    add(r, "--out", type=str, default=None, help="SVG path (default: cluster path with .svg)")
    add(r, "--flow-lines", type=int, default=0, help="overlay this many equispaced-angle flow lines")
    add(r, "--alpha", type=alpha_text, default="log", help="potential used for the flow lines")
    add(r, "--color-by", choices=("parent", "order", "attach-angle"), default="order", help="fill colors")
    _common(r, add, seed=False)
    _flow_args(r, add)
    r.set_defaults(func=cmd_render)

    v = sub.add_parser("verify", help="check structural invariants of a cluster", formatter_class=fmt)
    add(v, "--cluster", type=str, default=None, help="cluster CSV file")
    add(v, "--contact-tol", type=float, default=FlowConfig().contact_tol, help="distance tolerance")
    add(v, "--roots", type=int, default=1, help="expected number of parentless particles")
    add(v, "--out", type=str, default=None, help="optional JSON report path")
    _common(v, add, seed=False)
    v.set_defaults(func=cmd_verify)

    ln = sub.add_parser("launch", help="follow one flow line (debugging)", formatter_class=fmt)
    add(ln, "--cluster", type=str, default=None, help="cluster CSV file")
    add(ln, "--alpha", type=alpha_text, default="log", help="potential exponent")
    add(ln, "--theta", type=float, default=0.0, help="arrival angle (rad)")
    add(ln, "--trajectory", type=str, default=None, help="write step,x,y[,z],grad_norm CSV here")
    _common(ln, add, seed=False)
    _flow_args(ln, add)
    ln.set_defaults(func=cmd_launch)

    rr = sub.add_parser("rerun", help="repeat a run from its manifest", formatter_class=fmt)
    rr.add_argument("manifest", help="manifest JSON written by an earlier run")
    rr.add_argument("--check", action="store_true", default=argparse.SUPPRESS if suppress else False,
                    help="exit 4 unless every output digest matches the manifest")
    rr.set_defaults(func=cmd_rerun)
    return top


# -- settings --------------------------------------------------------------------

def _command_path(args) -> list[str]:
    return [args.command] + ([args.measure] if getattr(args, "measure", None) else [])


def resolve(argv: list[str]) -> argparse.Namespace:
    """Parse flags and merge in the --config file (flags win)."""
    args = build_parser().parse_args(argv)
    explicit = set(vars(build_parser(suppress=True).parse_args(argv))) - _INTERNAL
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        if isinstance(cfg, dict) and "config" in cfg and "command" in cfg:
            if cfg["command"] != _command_path(args):
                raise UsageError(f"manifest is for '{' '.join(cfg['command'])}'")
            cfg = cfg["config"]
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(vars(args)) - _INTERNAL
        for key, value in cfg.items():
            k = key.replace("-", "_")
            if k in ("assert",):
                k = "asserts"
            if k not in known:
                raise UsageError(f"unknown setting {key!r} in {args.config}")
            if k not in explicit:
                setattr(args, k, value)
    if hasattr(args, "alpha"):
        try:
            args.alpha = alpha_text(str(args.alpha))
        except argparse.ArgumentTypeError as e:
            raise UsageError(str(e)) from None
    if getattr(args, "workers", "absent") is None:
        from .analysis import default_workers
        args.workers = default_workers()
    return args


def settings(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL and k != "verbose"}


def flow_config(args) -> FlowConfig:
    kw = {f.name: getattr(args, f.name) for f in fields(FlowConfig) if hasattr(args, f.name)}
    try:
        return FlowConfig(**kw)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def kind_of(args) -> PotentialKind:
    try:
        return PotentialKind.parse(args.alpha)
    except ValueError as e:
        raise UsageError(str(e)) from None


def load_cluster(path, contact_tol=None):
    if not path:
        raise UsageError("--cluster is required")
    try:
        if contact_tol is None:
            return read_cluster_csv(path)
        return read_cluster_csv(path, contact_tol)
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read cluster {path}: {e}") from None


def write_manifest(path, args, inputs, outputs, resolved=None) -> dict:
    man = {
        "tool": "gfa",
        "version": __version__,
        "format_version": FORMAT_VERSION,
        "command": _command_path(args),
        "config": settings(args),
        "seed": getattr(args, "seed", None),
        "resolved": resolved or {},
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# -- assertions --------------------------------------------------------------------

_OPS = {"<=": operator.le, ">=": operator.ge, "==": operator.eq, "!=": operator.ne,
        "<": operator.lt, ">": operator.gt}
_ASSERT_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*(<=|>=|==|!=|<|>)\s*([-+0-9.eE]+|inf|nan)\s*$")


def parse_assert(expr: str):
    m = _ASSERT_RE.match(expr)
    if not m:
        raise UsageError(f"bad --assert expression {expr!r} (expected NAME OP NUMBER)")
    return m.group(1), m.group(2), float(m.group(3))


def check_asserts(exprs, metrics: dict) -> list[str]:
    """Return the failed expressions; unknown names are usage errors."""
    failed = []
    for expr in exprs:
        name, op, value = parse_assert(expr)
        if name not in metrics:
            raise UsageError(f"--assert: unknown quantity {name!r}; available: {', '.join(sorted(metrics))}")
        if not _OPS[op](metrics[name], value):
            failed.append(f"{expr} (got {name}={metrics[name]!r})")
    return failed


# -- commands --------------------------------------------------------------------

def cmd_grow(args) -> int:
    from .growth import grow, verify_cluster

    kind = kind_of(args)
    init = load_cluster(args.init, args.contact_tol) if args.init else None
    try:
        cfg = GrowthConfig(kind, args.n, seed=args.seed, dim=args.dim, flow=flow_config(args),
                           snapshot_schedule=tuple(args.snapshots), max_resamples=args.max_resamples)
    except ValueError as e:
        raise UsageError(str(e)) from None
    prefix = args.out_prefix
    outputs = []

    def snapshot(k, cluster):
        path = f"{prefix}_n{k}.csv"
        write_cluster_csv(cluster, path)
        outputs.append(path)

    cluster, trace = grow(cfg, init, snapshot)
    path = f"{prefix}.csv"
    write_cluster_csv(cluster, path)
    trace_path = f"{prefix}_trace.json"
    trace.save(trace_path)
    outputs += [path, trace_path]
    roots = int(np.count_nonzero(init.parent < 0)) if init is not None else 1
    rep = verify_cluster(cluster, args.contact_tol, roots=roots)
    write_manifest(f"{prefix}_manifest.json", args, [args.init] if args.init else [], outputs,
                   {"growth": cfg.to_dict()})
    print(f"grew {cluster.n} particles ({kind}, seed {args.seed}): diam {trace.diam[-1]:.6g}, "
          f"stalls {trace.stalls}, failures {trace.failures} -> {path}")
    if not rep.ok:
        print("verify: " + "; ".join(rep.violations), file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def _expand(patterns) -> list[str]:
    files = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        files += hits if hits else [p]
    return files


def _write_csv(rows, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def cmd_measure(args) -> int:
    from . import analysis as A

    sub = args.measure
    for expr in args.asserts:
        parse_assert(expr)
    prefix = args.out or f"{sub}"
    inputs, outputs = [], []
    fig = None
    if sub == "exponent":
        files = _expand(args.traces)
        if not files:
            raise UsageError("--traces is required")
        try:
            traces = [GrowthTrace.load(f) for f in files]
        except (OSError, ValueError, KeyError) as e:
            raise UsageError(f"cannot read traces: {e}") from None
        inputs = files
        try:
            fit = A.growth_exponent(traces, args.nmin, args.nmax, args.points)
        except ValueError as e:
            raise UsageError(str(e)) from None
        cfg = {"traces": [file_digest(f) for f in files], "nmin": args.nmin, "nmax": args.nmax,
               "points": args.points}
        result = fit.to_json(0, cfg)
        metrics = {"slope": fit.slope, "r_squared": fit.r_squared,
                   "min_seed_slope": float(np.nanmin(fit.per_seed_slopes)),
                   "max_seed_slope": float(np.nanmax(fit.per_seed_slopes))}
        print(f"slope {fit.slope:.4f} (R^2 {fit.r_squared:.4f}) over n in [{args.nmin}, {args.nmax}], "
              f"{len(files)} traces; per seed: " + ", ".join(f"{s:.3f}" for s in fit.per_seed_slopes))
        if args.figure:
            from .plotting import plot_exponent
            fig = lambda p: plot_exponent(fit, p, traces)  # noqa: E731
    else:
        kind = kind_of(args)
        fc = flow_config(args)
        cluster = None
        if sub != "beurling":
            cluster = load_cluster(args.cluster, fc.contact_tol)
            inputs = [args.cluster]
        if args.samples < 0 or (sub != "arcs" and args.samples == 0):
            raise UsageError("--samples must be positive")
        result, metrics, csv_rows, fig = _run_measure(A, sub, args, kind, fc, cluster)
        if csv_rows is not None:
            _write_csv(csv_rows, f"{prefix}.csv")
            outputs.append(f"{prefix}.csv")
    _dump(result, f"{prefix}.json")
    outputs.insert(0, f"{prefix}.json")
    if args.figure and fig is not None:
        fig(args.figure)
        outputs.append(args.figure)
    write_manifest(f"{prefix}_manifest.json", args, inputs, outputs)
    failed = check_asserts(args.asserts, metrics)
    for f in failed:
        print(f"assertion failed: {f}", file=sys.stderr)
    return EXIT_ASSERT if failed else EXIT_OK


def _run_measure(A, sub, args, kind, fc, cluster):
    from . import plotting as P

    if sub == "hitprob":
        st = A.hit_probabilities(cluster, kind, args.samples, fc, args.workers, args.seed, args.radius)
        p = st.p_hat
        metrics = {"max_p_hat": float(p.max()), "min_p_hat": float(p.min()), "sum_p_hat": float(p.sum()),
                   "stall_fraction": st.stall_fraction, "failure_count": st.failure_count,
                   "argmax": st.argmax(), **{f"p_hat_{i}": float(v) for i, v in enumerate(p)}}
        top = np.argsort(-p, kind="stable")[:5]
        print(f"{st.total_samples} launches at R={st.start_radius:g}: "
              + ", ".join(f"p[{i}]={p[i]:.5f}" for i in top)
              + f"; stalls {st.stall_count}, failures {st.failure_count}")
        return st.to_json(), metrics, list(st.csv_rows()), lambda path: P.plot_hit_probabilities(st, path)

    if sub == "beurling":
        rows = A.beurling_scan(kind, args.n_list, args.family, args.samples, fc, args.workers, args.seed)
        cfg = {"kind": kind.label(), "family": args.family, "n_list": list(args.n_list),
               "samples": args.samples, "flow": fc.to_dict()}
        result = {**A.provenance(cfg, args.seed), "config": cfg,
                  "rows": [vars(r) | {"argmax_id": int(r.argmax_id)} for r in rows]}
        metrics = {f"max_p_hat_{r.n}": r.max_p_hat for r in rows}
        if len(rows) >= 2:
            metrics["ratio"] = rows[-1].max_p_hat / rows[0].max_p_hat
        for r in rows:
            print(f"n={r.n}: max p_hat {r.max_p_hat:.6f} (id {r.argmax_id}) "
                  f"[{r.wilson_low:.6f}, {r.wilson_high:.6f}]")
        if "ratio" in metrics:
            print(f"ratio last/first: {metrics['ratio']:.4f}")
        csv_rows = [["n", "max_p_hat", "argmax_id", "wilson_low", "wilson_high", "stall_count", "samples"]]
        csv_rows += [[r.n, repr(r.max_p_hat), r.argmax_id, repr(r.wilson_low), repr(r.wilson_high),
                      r.stall_count, r.samples] for r in rows]
        return result, metrics, csv_rows, lambda path: P.plot_beurling(rows, path)

    if sub == "arcs":
        rep = A.arc_structure(cluster, kind, args.grid, fc, args.workers)
        cfg = {"cluster": A.cluster_digest(cluster), "kind": kind.label(), "grid": args.grid,
               "flow": fc.to_dict()}
        metrics = {"max_arcs": rep.max_arcs, "dropped_singletons": rep.dropped_singletons,
                   "stalled": int(np.count_nonzero(rep.outcomes < 0))}
        print(f"max arcs per particle: {rep.max_arcs} (grid {args.grid}, "
              f"{rep.dropped_singletons} singleton runs ignored)")
        csv_rows = [["id", "arcs"]] + [[i, int(c)] for i, c in enumerate(rep.counts)]
        return rep.to_json(0, cfg), metrics, csv_rows, lambda path: P.plot_arcs(rep, path)

    if sub == "radius":
        from .flow import start_radius
        radii = args.radii or [start_radius(cluster, fc) * f for f in (1, 2, 4)]
        try:
            rows = A.radius_convergence(cluster, kind, args.samples, radii, fc, args.workers, args.seed,
                                        args.bootstrap)
        except ValueError as e:
            raise UsageError(str(e)) from None
        cfg = {"cluster": A.cluster_digest(cluster), "kind": kind.label(), "samples": args.samples,
               "radii": list(radii), "flow": fc.to_dict()}
        tv = [r.tv for r in rows]
        metrics = {"max_tv": max(tv), "max_tv_over_bound": max(r.tv / r.bound for r in rows),
                   "tv_decreasing": float(all(b <= a for a, b in zip(tv, tv[1:])))}
        for r in rows:
            print(f"TV(R={r.r_from:g}, {r.r_to:g}) = {r.tv:.3e} [{r.ci_low:.3e}, {r.ci_high:.3e}], "
                  f"bound 10n/R = {r.bound:.3e}")
        result = {**A.provenance(cfg, args.seed), "config": cfg, "rows": [vars(r) for r in rows]}
        csv_rows = [["r_from", "r_to", "tv", "ci_low", "ci_high", "bound"]]
        csv_rows += [[repr(r.r_from), repr(r.r_to), repr(r.tv), repr(r.ci_low), repr(r.ci_high),
                      repr(r.bound)] for r in rows]
        return result, metrics, csv_rows, lambda path: P.plot_radius(rows, path)

    if sub == "epsdisk":
        if not args.y or len(args.y) != cluster.dim:
            raise UsageError(f"--y needs {cluster.dim} coordinates")
        try:
            res = A.eps_disk_probability(cluster, kind, args.y, args.eps, args.samples, fc, args.workers,
                                         args.seed)
        except ValueError as e:
            raise UsageError(str(e)) from None
        cfg = {"cluster": A.cluster_digest(cluster), "kind": kind.label(), "y": list(args.y),
               "eps": args.eps, "samples": args.samples, "flow": fc.to_dict()}
        print(f"P(enter B_{args.eps:g}({', '.join(f'{v:g}' for v in args.y)}) first) = {res.p_hat:.6f} "
              f"[{res.wilson_low:.6f}, {res.wilson_high:.6f}]")
        metrics = {"p_hat": res.p_hat, "wilson_low": res.wilson_low, "wilson_high": res.wilson_high}
        return ({**A.provenance(cfg, args.seed), "config": cfg, **vars(res)}, metrics, None,
                lambda path: P.plot_epsdisk(res, path))
    raise UsageError(f"unknown measurement {sub!r}")


def cmd_render(args) -> int:
    from .render import flow_line_paths, render_svg, write_svg

    cluster = load_cluster(args.cluster)
    if args.flow_lines < 0:
        raise UsageError("--flow-lines must be >= 0")
    paths = []
    if args.flow_lines:
        try:
            paths = flow_line_paths(cluster, kind_of(args), args.flow_lines, flow_config(args))
        except ValueError as e:
            raise UsageError(str(e)) from None
    out = args.out or str(Path(args.cluster).with_suffix(".svg"))
    write_svg(render_svg(cluster, args.color_by, paths), out)
    write_manifest(str(Path(out).with_suffix("")) + "_manifest.json", args, [args.cluster], [out])
    print(f"wrote {out} ({cluster.n} particles, {len(paths)} flow lines)")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .growth import verify_cluster

    cluster = load_cluster(args.cluster, args.contact_tol)
    rep = verify_cluster(cluster, args.contact_tol, roots=args.roots)
    if args.out:
        _dump({"n": rep.n, "ok": rep.ok, "violations": rep.violations,
               "min_separation": rep.min_separation if math.isfinite(rep.min_separation) else None,
               "max_degree": rep.max_degree}, args.out)
        write_manifest(str(Path(args.out).with_suffix("")) + "_manifest.json", args, [args.cluster], [args.out])
    if rep.ok:
        print(f"OK: {rep.n} particles, min separation {rep.min_separation:.12g}, max degree {rep.max_degree}")
        return EXIT_OK
    for v in rep.violations:
        print(v)
    return EXIT_ASSERT


def cmd_launch(args) -> int:
    from .flow import Attached, launch, write_trajectory_csv

    cluster = load_cluster(args.cluster)
    theta = args.theta if cluster.dim == 2 else [math.cos(args.theta), math.sin(args.theta), 0.0]
    out = launch(cluster, kind_of(args), theta, flow_config(args), record=args.trajectory is not None)
    info = {"outcome": type(out).__name__, "steps": out.steps,
            "position": None if out.position is None else [float(v) for v in out.position]}
    if isinstance(out, Attached):
        info["parent"] = out.parent
    elif hasattr(out, "reason"):
        info["reason"] = out.reason
    if args.trajectory and getattr(out, "trajectory", None) is not None:
        write_trajectory_csv(out.trajectory, args.trajectory)
    print(json.dumps(info))
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        man = json.loads(Path(args.manifest).read_text())
        command = man["command"]
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read manifest {args.manifest}: {e}") from None
    code = main(command + ["--config", args.manifest])
    if code != EXIT_OK or not args.check:
        return code
    bad = [p for p, h in man["outputs"].items() if not Path(p).exists() or file_digest(p) != h]
    for p in bad:
        print(f"digest mismatch: {p}", file=sys.stderr)
    if not bad:
        print(f"all {len(man['outputs'])} outputs reproduced byte for byte")
    return EXIT_ASSERT if bad else EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = resolve(argv)
    except SystemExit as e:  # argparse usage errors and --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"gfa: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gfa: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GrowthAbort, TooManyFailures) as e:
        print(f"gfa: aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    except (GFAError, ValueError) as e:
        print(f"gfa: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
