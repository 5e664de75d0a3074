"""Command-line interface: run scenarios, convergence studies, validation.

Exit codes: 0 on success, 1 on configuration or usage errors, 2 on
runtime failures (including failing validation suites).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, PlaneScenarioConfig, parse_config
from .lubrication import StepUnderflow
from .neighbors import GluedPairLost
from .obstacles import ParticleInsideObstacle
from .plane import pushpull_closed_form, pushpull_force, run_plane_scenario
from .projection import ProjectionError, SolverOptions
from .sim import InitializationError, Simulation
from .validate import run_suites

_RUNTIME_ERRORS = (ProjectionError, GluedPairLost, InitializationError,
                   ParticleInsideObstacle, StepUnderflow)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gluey",
                     description="Gluey-contact particle simulations")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("--config", required=True,
                     help="path to a config/. manifest, or a bundled "
                          "scenario name (e.g. lotto)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--scale", type=float, default=1.0,
                     help="multiply the sampled particle count")

    conv = sub.add_parser("convergence",
                          help="push-pull step refinement study against the "
                               "closed-form trajectory")
    conv.add_argument("--h-list", default="1e-2,5e-3,2.5e-3,1.25e-3",
                      help="comma-separated, strictly decreasing steps")
    conv.add_argument("--out", default=None,
                      help="optional directory for the error table CSV")

    val = sub.add_parser("validate", help="run randomized oracle suites")
    val.add_argument("--suites", default=None,
                     help="comma-separated subset: projection,nonexpansion,"
                          "kkt,grid,lemmas")
    val.add_argument("--seed", type=int, default=2024)
    val.add_argument("--inject-fault", default=None,
                     choices=["dual_projection_off"],
                     help="testing hook: deliberately break the solver")
    return parser


def _resolve_config_source(spec: str) -> str:
    path = Path(spec)
    if path.exists():
        return path.read_text()
    bundled = resources.files("gluey").joinpath(f"scenarios/{spec}.cfg")
    if bundled.is_file():
        return bundled.read_text()
    raise _UsageError(f"config {spec!r} is neither a file nor a bundled "
                      f"scenario name")


def _load_config(spec: str, scale: float, seed_override):
    text = _resolve_config_source(spec)
    doc = yaml.safe_load(text)
    if isinstance(doc, dict) and doc.get("format") == "gluey-run-manifest":
        doc = doc["config"]
    cfg = parse_config(doc, scale=scale)
    if seed_override is not None:
        cfg.seed = int(seed_override)
        cfg.resolved["seed"] = int(seed_override)
    return cfg


def _fmt(x) -> str:
    return repr(float(x))


def _write_manifest(out: Path, cfg, invariants: dict, outputs: dict) -> None:
    manifest = {
        "format": "gluey-run-manifest",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.resolved,
        "invariants": invariants,
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.scale, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(cfg, PlaneScenarioConfig):
        traj = run_plane_scenario(cfg.q0, cfg.u0, cfg.mass, cfg.force,
                                  cfg.horizon, cfg.h, cfg.rough, cfg.radius)
        traj_path = out / cfg.trajectory_name
        traj.to_csv(traj_path)
        invariants = {
            "q_min": float(np.min(traj.q)),
            "gamma_max": float(np.max(traj.gamma)),
            "max_q_gamma": float(np.max(np.abs(traj.q * traj.gamma))),
        }
        _write_manifest(out, cfg, invariants,
                        {"trajectory": cfg.trajectory_name})
        print(f"wrote {traj_path} ({len(traj.t)} samples)")
        return 0

    sim = Simulation(cfg)
    snap_path = out / cfg.snapshot_name
    gamma_path = out / cfg.gamma_name
    with open(snap_path, "w") as snap, open(gamma_path, "w") as gnet:
        snap.write("step,t,id,x,y,z,vx,vy,vz,r\n")
        gnet.write("step,t,i,j,gamma,D\n")
        for frame in sim.frames():
            st = frame.state
            for i in range(st.count):
                x, y, z = st.positions[i]
                vx, vy, vz = st.velocities[i]
                snap.write(f"{frame.step},{_fmt(frame.t)},{i},{_fmt(x)},"
                           f"{_fmt(y)},{_fmt(z)},{_fmt(vx)},{_fmt(vy)},"
                           f"{_fmt(vz)},{_fmt(st.radii[i])}\n")
            for i, j, gamma, gap in frame.gamma_records:
                gnet.write(f"{frame.step},{_fmt(frame.t)},{i},{j},"
                           f"{_fmt(gamma)},{_fmt(gap)}\n")
    summary = sim.monitor.summary()
    _write_manifest(out, cfg, summary,
                    {"snapshots": cfg.snapshot_name,
                     "gamma_network": cfg.gamma_name})
    status = "all-pass" if summary["all_checks_pass"] else "CHECK FAILURES"
    print(f"completed {summary['steps']} steps; invariants: {status}")
    for name, ok in summary["checks"].items():
        print(f"  {name}: {'pass' if ok else 'FAIL'}")
    return 0 if summary["all_checks_pass"] else 2


def _cmd_convergence(args) -> int:
    try:
        h_list = [float(tok) for tok in args.h_list.split(",") if tok.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad --h-list: {exc}") from exc
    if not h_list:
        raise _UsageError("--h-list is empty")
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise _UsageError("--h-list must be strictly decreasing")
    force = pushpull_force()
    rows = []
    for h in h_list:
        traj = run_plane_scenario(1.0, 0.0, 1.0, force, T=6.0, h=h)
        q_ref, _ = pushpull_closed_form(traj.t)
        err = float(np.max(np.abs(traj.q - q_ref)))
        t_hit = traj.hitting_time()
        t_un = traj.unsticking_time()
        rows.append((h, err,
                     abs(t_hit - 1.0) if t_hit is not None else math.nan,
                     abs(t_un - 4.0) if t_un is not None else math.nan))
    header = f"{'h':>12} {'linf_q':>12} {'hit_err':>12} {'unstick_err':>12} {'order':>8}"
    print(header)
    lines = ["h,linf_q,hitting_time_error,unsticking_time_error,order"]
    prev = None
    for h, err, hit, un in rows:
        order = math.log2(prev / err) if prev is not None else math.nan
        prev = err
        order_s = f"{order:8.3f}" if not math.isnan(order) else " " * 8
        print(f"{h:12.3e} {err:12.5e} {hit:12.5e} {un:12.5e} {order_s}")
        lines.append(f"{h!r},{err!r},{hit!r},{un!r},"
                     f"{'' if math.isnan(order) else repr(order)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.csv").write_text("\n".join(lines) + "\n")
        print(f"wrote {out / 'convergence.csv'}")
    return 0


def _cmd_validate(args) -> int:
    names = None
    if args.suites:
        names = [s.strip() for s in args.suites.split(",") if s.strip()]
    opts = None
    if args.inject_fault == "dual_projection_off":
        opts = SolverOptions(uzawa_omega=1.8, uzawa_tol=1e-11,
                             uzawa_max_iters=50_000,
                             disable_dual_projection=True)
    try:
        results = run_suites(names, seed=args.seed, opts=opts)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    all_ok = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.n_cases} cases, worst {res.worst:.3e}"
              + (f" ({res.details})" if res.details else ""))
        all_ok &= res.passed
    return 0 if all_ok else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    start = time.perf_counter()
    try:
        if args.command == "run":
            code = _cmd_run(args)
        elif args.command == "convergence":
            code = _cmd_convergence(args)
        else:
            code = _cmd_validate(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if code == 0:
        print(f"done in {time.perf_counter() - start:.2f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
