"""Scenario configuration: YAML schema, validation and builders.

Two scenario kinds share one loader: ``multibody`` (particle collections
with obstacles) and ``plane`` (single sphere above a plane).  Parsing is
strict -- unknown keys are errors, and all invariant violations are
collected and reported together.  The resolved configuration dict (with
defaults applied) is what run manifests echo, so a run can be
reconstructed from its manifest alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import ParticleState
from .neighbors import GridParams
from .obstacles import (HalfSpace, ObstacleSet, RotationLaw, SphereAssembly,
                        SphereObstacle)
from .plane import PiecewiseConstantForce, RoughParams
from .projection import SolverOptions
from .sim import GammaFloor, GlueLaw, sample_positions

__all__ = [
    "ConfigError",
    "PlaneScenarioConfig",
    "ScenarioConfig",
    "build_initial_state",
    "build_obstacles",
    "parse_config",
]


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  "
                         + "\n  ".join(self.problems))


class _Checker:
    """Collects violations and reports them all at once."""

    def __init__(self):
        self.problems = []

    def fail(self, msg: str):
        self.problems.append(msg)

    def expect_keys(self, mapping: dict, allowed: set, where: str):
        unknown = sorted(set(mapping) - allowed)
        if unknown:
            self.fail(f"{where}: unknown keys {unknown}")

    def raise_if_failed(self):
        if self.problems:
            raise ConfigError(self.problems)


def _vec3(value, where, chk, default=None):
    if value is None:
        return default
    try:
        arr = np.asarray(value, dtype=float)
        if arr.shape != (3,) or not np.all(np.isfinite(arr)):
            raise ValueError
        return arr
    except (TypeError, ValueError):
        chk.fail(f"{where}: expected a finite 3-vector, got {value!r}")
        return default


@dataclass
class ParticlesSpec:
    count: int = 0
    radius_range: tuple = (0.01, 0.01)
    mass: float = 1.0
    roughness: float = 0.0
    region_low: np.ndarray | None = None
    region_high: np.ndarray | None = None
    explicit: list | None = None


@dataclass
class ScenarioConfig:
    """Resolved multibody scenario."""

    h: float
    horizon: float
    gravity: np.ndarray
    seed: int
    planar: bool
    particles: ParticlesSpec
    glue_law: GlueLaw
    grid: GridParams
    solver: SolverOptions
    cadence: int
    snapshot_name: str
    gamma_name: str
    takeoff_correction: bool
    obstacle_specs: list
    resolved: dict = field(default_factory=dict, repr=False)

    kind = "multibody"


@dataclass
class PlaneScenarioConfig:
    """Resolved plane scenario."""

    h: float
    horizon: float
    q0: float
    u0: float
    mass: float
    radius: float
    force: PiecewiseConstantForce
    rough: RoughParams
    trajectory_name: str
    seed: int = 0
    resolved: dict = field(default_factory=dict, repr=False)

    kind = "plane"


_TOP_KEYS = {"kind", "seed", "planar", "time", "gravity", "particles",
             "glue", "grid", "solver", "output", "obstacles",
             "takeoff_correction"}
_PLANE_TOP_KEYS = {"kind", "seed", "time", "initial", "mass", "radius",
                   "force", "gamma_min", "radius_scaling", "output"}


def parse_config(source, scale: float = 1.0):
    """Parse and validate a scenario document.

    ``source`` is YAML text or an already-loaded mapping (e.g. the
    ``config`` echo of a run manifest).  ``scale`` multiplies the
    sampled particle count.  Raises :class:`ConfigError` listing every
    unknown key and invariant violation.
    """
    if isinstance(source, str):
        raw = yaml.safe_load(source)
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    kind = raw.get("kind", "multibody")
    if kind == "plane":
        return _parse_plane(raw)
    if kind != "multibody":
        raise ConfigError([f"kind: expected 'multibody' or 'plane', got {kind!r}"])
    return _parse_multibody(raw, scale)


def _positive(chk, value, where, strict=True):
    try:
        v = float(value)
    except (TypeError, ValueError):
        chk.fail(f"{where}: expected a number, got {value!r}")
        return None
    if (strict and v <= 0) or (not strict and v < 0):
        chk.fail(f"{where}: must be {'positive' if strict else 'non-negative'},"
                 f" got {v}")
        return None
    return v


def _parse_time(raw, chk):
    time = raw.get("time", {})
    if not isinstance(time, dict):
        chk.fail("time: expected a mapping with h and horizon")
        return None, None
    chk.expect_keys(time, {"h", "horizon"}, "time")
    h = _positive(chk, time.get("h", 1e-3), "time.h")
    horizon = _positive(chk, time.get("horizon", 1.0), "time.horizon")
    return h, horizon


def _parse_multibody(raw, scale):
    chk = _Checker()
    chk.expect_keys(raw, _TOP_KEYS, "top level")
    h, horizon = _parse_time(raw, chk)
    gravity = _vec3(raw.get("gravity", [0.0, 0.0, 0.0]), "gravity", chk,
                    default=np.zeros(3))
    seed = int(raw.get("seed", 0))
    planar = bool(raw.get("planar", False))
    takeoff = bool(raw.get("takeoff_correction", False))

    particles = _parse_particles(raw.get("particles", {}), chk, scale)
    glue_law = _parse_glue(raw.get("glue", {}), chk)
    grid = _parse_grid(raw.get("grid", {}), particles, chk)
    solver = _parse_solver(raw.get("solver", {}), chk)
    cadence, snap, gnet, _ = _parse_output(raw.get("output", {}), chk)
    obstacle_specs = _parse_obstacles(raw.get("obstacles", []), chk)
    chk.raise_if_failed()

    cfg = ScenarioConfig(
        h=h, horizon=horizon, gravity=gravity, seed=seed, planar=planar,
        particles=particles, glue_law=glue_law, grid=grid, solver=solver,
        cadence=cadence, snapshot_name=snap, gamma_name=gnet,
        takeoff_correction=takeoff, obstacle_specs=obstacle_specs)
    cfg.resolved = _resolve_multibody(cfg)
    return cfg


def _parse_particles(spec, chk, scale):
    if not isinstance(spec, dict):
        chk.fail("particles: expected a mapping")
        return ParticlesSpec()
    chk.expect_keys(spec, {"count", "radius_range", "mass", "roughness",
                           "region", "explicit"}, "particles")
    out = ParticlesSpec()
    if "explicit" in spec:
        out.explicit = []
        items = spec.get("explicit") or []
        for k, item in enumerate(items):
            if not isinstance(item, dict):
                chk.fail(f"particles.explicit[{k}]: expected a mapping")
                continue
            chk.expect_keys(item, {"position", "velocity", "radius", "mass",
                                   "roughness"}, f"particles.explicit[{k}]")
            pos = _vec3(item.get("position"), f"particles.explicit[{k}].position",
                        chk)
            vel = _vec3(item.get("velocity", [0, 0, 0]),
                        f"particles.explicit[{k}].velocity", chk,
                        default=np.zeros(3))
            rad = _positive(chk, item.get("radius", 0.0),
                            f"particles.explicit[{k}].radius")
            mass = _positive(chk, item.get("mass", 1.0),
                             f"particles.explicit[{k}].mass")
            rough = _positive(chk, item.get("roughness", 0.0),
                              f"particles.explicit[{k}].roughness", strict=False)
            out.explicit.append({"position": pos, "velocity": vel,
                                 "radius": rad, "mass": mass,
                                 "roughness": rough})
        out.count = len(out.explicit)
        if scale != 1.0:
            chk.fail("particles: scale applies to sampled specs, not explicit")
        return out
    count = spec.get("count", 0)
    if not isinstance(count, int) or count < 0:
        chk.fail(f"particles.count: expected a non-negative integer, got {count!r}")
        count = 0
    out.count = int(round(count * scale))
    rr = spec.get("radius_range", [0.01, 0.01])
    try:
        lo, hi = float(rr[0]), float(rr[1])
        if not (0 < lo <= hi):
            raise ValueError
        out.radius_range = (lo, hi)
    except (TypeError, ValueError, IndexError):
        chk.fail(f"particles.radius_range: expected 0 < r_min <= r_max, got {rr!r}")
    out.mass = _positive(chk, spec.get("mass", 1.0), "particles.mass") or 1.0
    out.roughness = _positive(chk, spec.get("roughness", 0.0),
                              "particles.roughness", strict=False) or 0.0
    region = spec.get("region")
    if out.count > 0 and not isinstance(region, dict):
        chk.fail("particles.region: required for sampled particles")
    if isinstance(region, dict):
        chk.expect_keys(region, {"low", "high"}, "particles.region")
        out.region_low = _vec3(region.get("low"), "particles.region.low", chk)
        out.region_high = _vec3(region.get("high"), "particles.region.high", chk)
        if out.region_low is not None and out.region_high is not None \
                and np.any(out.region_low > out.region_high):
            chk.fail("particles.region: low must be <= high componentwise")
    return out


def _parse_glue(spec, chk):
    if not isinstance(spec, dict):
        chk.fail("glue: expected a mapping")
        return GlueLaw()
    chk.expect_keys(spec, {"mu", "radius_scaling", "gamma_min"}, "glue")
    mu = _positive(chk, spec.get("mu", 1.0), "glue.mu") or 1.0
    scaling = bool(spec.get("radius_scaling", False))
    gm = spec.get("gamma_min", {"policy": "smooth"})
    if gm is None:
        floor = GammaFloor("smooth")
    elif isinstance(gm, dict):
        chk.expect_keys(gm, {"policy", "value"}, "glue.gamma_min")
        policy = gm.get("policy", "smooth")
        value = gm.get("value", None)
        if policy not in ("smooth", "uniform", "roughness"):
            chk.fail(f"glue.gamma_min.policy: unknown policy {policy!r}")
            policy = "smooth"
        if policy == "uniform":
            if value is None:
                chk.fail("glue.gamma_min.value: required for the uniform policy")
                value = 0.0
            elif float(value) > 0:
                chk.fail(f"glue.gamma_min.value: must be <= 0, got {value}")
                value = 0.0
            floor = GammaFloor("uniform", float(value))
        else:
            floor = GammaFloor(policy)
    else:
        chk.fail(f"glue.gamma_min: expected a mapping, got {gm!r}")
        floor = GammaFloor("smooth")
    return GlueLaw(mu=mu, use_radius_scaling=scaling, floor=floor)


def _parse_grid(spec, particles, chk):
    if not isinstance(spec, dict):
        chk.fail("grid: expected a mapping")
        spec = {}
    chk.expect_keys(spec, {"d_neigh", "cell_size"}, "grid")
    r_max = particles.radius_range[1] if particles.explicit is None else \
        max((p["radius"] or 0.01 for p in particles.explicit), default=0.01)
    d_neigh = spec.get("d_neigh")
    if d_neigh is None:
        # a few radii: twice the largest admissible per-step displacement
        # (two radii) plus the roughness scale
        d_neigh = 4.0 * r_max + particles.roughness
    d_neigh = _positive(chk, d_neigh, "grid.d_neigh")
    cell = spec.get("cell_size")
    if cell is None and d_neigh is not None:
        cell = 2.0 * d_neigh
    cell = _positive(chk, cell, "grid.cell_size")
    if d_neigh is not None and cell is not None and cell <= d_neigh:
        chk.fail(f"grid.cell_size ({cell}) must exceed grid.d_neigh ({d_neigh})")
        cell = 2.0 * d_neigh
    if d_neigh is None or cell is None:
        return GridParams(cell_size=1.0, d_neigh=0.4)
    return GridParams(cell_size=cell, d_neigh=d_neigh)


def _parse_solver(spec, chk):
    if not isinstance(spec, dict):
        chk.fail("solver: expected a mapping")
        spec = {}
    chk.expect_keys(spec, {"uzawa_omega", "uzawa_tol", "uzawa_max_iters",
                           "sweep_mode", "step_rule"}, "solver")
    omega = _positive(chk, spec.get("uzawa_omega", 1.0), "solver.uzawa_omega")
    tol = _positive(chk, spec.get("uzawa_tol", 1e-9), "solver.uzawa_tol")
    max_iters = spec.get("uzawa_max_iters")
    if max_iters is not None and (not isinstance(max_iters, int)
                                  or max_iters < 1):
        chk.fail(f"solver.uzawa_max_iters: expected a positive integer or null,"
                 f" got {max_iters!r}")
        max_iters = None
    sweep = spec.get("sweep_mode", "jacobi")
    if sweep not in ("jacobi", "gauss_seidel"):
        chk.fail(f"solver.sweep_mode: expected jacobi or gauss_seidel, got {sweep!r}")
        sweep = "jacobi"
    rule = spec.get("step_rule", "gershgorin")
    if rule not in ("gershgorin", "row_count"):
        chk.fail(f"solver.step_rule: expected gershgorin or row_count, got {rule!r}")
        rule = "gershgorin"
    return SolverOptions(uzawa_omega=omega or 1.0, uzawa_tol=tol or 1e-9,
                         uzawa_max_iters=max_iters, sweep_mode=sweep,
                         step_rule=rule)


def _parse_output(spec, chk):
    if not isinstance(spec, dict):
        chk.fail("output: expected a mapping")
        spec = {}
    chk.expect_keys(spec, {"cadence", "snapshots", "gamma_network",
                           "trajectory"}, "output")
    cadence = spec.get("cadence", 20)
    if not isinstance(cadence, int) or cadence < 1:
        chk.fail(f"output.cadence: expected an integer >= 1, got {cadence!r}")
        cadence = 20
    return (cadence, spec.get("snapshots", "snapshots.csv"),
            spec.get("gamma_network", "gamma_network.csv"),
            spec.get("trajectory", "trajectory.csv"))


_OBSTACLE_KEYS = {
    "half_space": {"type", "point", "normal", "rotation", "roughness"},
    "sphere": {"type", "center", "radius", "rotation", "roughness"},
    "sphere_ring": {"type", "center", "ring_radius", "n_spheres",
                    "sphere_radius", "rotation", "roughness"},
    "sphere_line": {"type", "from", "to", "n_spheres", "sphere_radius",
                    "rotation", "roughness"},
}
_ROTATION_KEYS = {"center", "axis", "omega"}


def _parse_obstacles(specs, chk):
    if specs is None:
        return []
    if not isinstance(specs, list):
        chk.fail("obstacles: expected a list")
        return []
    out = []
    for k, spec in enumerate(specs):
        where = f"obstacles[{k}]"
        if not isinstance(spec, dict):
            chk.fail(f"{where}: expected a mapping")
            continue
        typ = spec.get("type")
        if typ not in _OBSTACLE_KEYS:
            chk.fail(f"{where}.type: expected one of {sorted(_OBSTACLE_KEYS)},"
                     f" got {typ!r}")
            continue
        chk.expect_keys(spec, _OBSTACLE_KEYS[typ], where)
        rot = spec.get("rotation")
        if rot is not None:
            if not isinstance(rot, dict):
                chk.fail(f"{where}.rotation: expected a mapping")
            else:
                chk.expect_keys(rot, _ROTATION_KEYS, f"{where}.rotation")
                _vec3(rot.get("center", [0, 0, 0]), f"{where}.rotation.center", chk)
                _vec3(rot.get("axis", [0, 0, 1]), f"{where}.rotation.axis", chk)
        if typ == "half_space":
            _vec3(spec.get("point"), f"{where}.point", chk)
            _vec3(spec.get("normal"), f"{where}.normal", chk)
        elif typ == "sphere":
            _vec3(spec.get("center"), f"{where}.center", chk)
            _positive(chk, spec.get("radius"), f"{where}.radius")
        else:
            if typ == "sphere_ring":
                _vec3(spec.get("center"), f"{where}.center", chk)
                _positive(chk, spec.get("ring_radius"), f"{where}.ring_radius")
            else:
                _vec3(spec.get("from"), f"{where}.from", chk)
                _vec3(spec.get("to"), f"{where}.to", chk)
            n_s = spec.get("n_spheres")
            if not isinstance(n_s, int) or n_s < 1:
                chk.fail(f"{where}.n_spheres: expected a positive integer,"
                         f" got {n_s!r}")
            _positive(chk, spec.get("sphere_radius"), f"{where}.sphere_radius")
        _positive(chk, spec.get("roughness", 0.0), f"{where}.roughness",
                  strict=False)
        out.append(spec)
    return out


def _parse_plane(raw):
    chk = _Checker()
    chk.expect_keys(raw, _PLANE_TOP_KEYS, "top level")
    h, horizon = _parse_time(raw, chk)
    init = raw.get("initial", {})
    if not isinstance(init, dict):
        chk.fail("initial: expected a mapping with q and u")
        init = {}
    chk.expect_keys(init, {"q", "u"}, "initial")
    q0 = _positive(chk, init.get("q", 1.0), "initial.q")
    u0 = float(init.get("u", 0.0))
    mass = _positive(chk, raw.get("mass", 1.0), "mass")
    radius = _positive(chk, raw.get("radius", 1.0), "radius")
    force = _parse_force(raw.get("force", {"constant": 0.0}), chk)
    gm = raw.get("gamma_min", None)
    gamma_min = -math.inf if gm is None else float(gm)
    if gamma_min > 0:
        chk.fail(f"gamma_min: must be <= 0, got {gamma_min}")
        gamma_min = 0.0
    scaling = bool(raw.get("radius_scaling", False))
    _, _, _, traj = _parse_output(raw.get("output", {}), chk)
    chk.raise_if_failed()
    cfg = PlaneScenarioConfig(
        h=h, horizon=horizon, q0=q0, u0=u0, mass=mass, radius=radius,
        force=force, rough=RoughParams(gamma_min=gamma_min,
                                       use_radius_scaling=scaling),
        trajectory_name=traj, seed=int(raw.get("seed", 0)))
    cfg.resolved = _resolve_plane(cfg)
    return cfg


def _parse_force(spec, chk):
    if isinstance(spec, dict) and "constant" in spec:
        chk.expect_keys(spec, {"constant"}, "force")
        return PiecewiseConstantForce.constant(float(spec["constant"]))
    if isinstance(spec, dict) and {"times", "values"} <= set(spec):
        chk.expect_keys(spec, {"times", "values"}, "force")
        try:
            return PiecewiseConstantForce(tuple(map(float, spec["times"])),
                                          tuple(map(float, spec["values"])))
        except ValueError as exc:
            chk.fail(f"force: {exc}")
            return PiecewiseConstantForce.constant(0.0)
    chk.fail(f"force: expected {{constant: v}} or {{times: [...], values: [...]}},"
             f" got {spec!r}")
    return PiecewiseConstantForce.constant(0.0)


def build_obstacles(config: ScenarioConfig) -> ObstacleSet:
    """Instantiate the obstacle set from the validated specs."""
    obstacles = []
    for spec in config.obstacle_specs:
        rot = spec.get("rotation")
        law = RotationLaw() if rot is None else RotationLaw(
            center=np.asarray(rot.get("center", [0, 0, 0]), dtype=float),
            axis=np.asarray(rot.get("axis", [0, 0, 1]), dtype=float),
            omega=float(rot.get("omega", 0.0)))
        rough = float(spec.get("roughness", 0.0))
        typ = spec["type"]
        if typ == "half_space":
            obstacles.append(HalfSpace(point=np.asarray(spec["point"], float),
                                       normal=np.asarray(spec["normal"], float),
                                       law=law, roughness=rough))
        elif typ == "sphere":
            obstacles.append(SphereObstacle(
                center=np.asarray(spec["center"], float),
                radius=float(spec["radius"]), law=law, roughness=rough))
        elif typ == "sphere_ring":
            obstacles.append(SphereAssembly.ring(
                center=np.asarray(spec["center"], float),
                ring_radius=float(spec["ring_radius"]),
                n_spheres=int(spec["n_spheres"]),
                sphere_radius=float(spec["sphere_radius"]),
                law=law, roughness=rough))
        else:
            obstacles.append(SphereAssembly.line(
                start=np.asarray(spec["from"], float),
                end=np.asarray(spec["to"], float),
                n_spheres=int(spec["n_spheres"]),
                sphere_radius=float(spec["sphere_radius"]),
                law=law, roughness=rough))
    return ObstacleSet(obstacles)


def build_initial_state(config: ScenarioConfig, rng,
                        obstacles: ObstacleSet | None) -> ParticleState:
    """Initial particle state: explicit list or seeded rejection sampling."""
    spec = config.particles
    if spec.explicit is not None:
        n = len(spec.explicit)
        pos = np.array([p["position"] for p in spec.explicit]).reshape(n, 3)
        vel = np.array([p["velocity"] for p in spec.explicit]).reshape(n, 3)
        radii = np.array([p["radius"] for p in spec.explicit])
        masses = np.array([p["mass"] for p in spec.explicit])
        rough = np.array([p["roughness"] for p in spec.explicit])
        return ParticleState(pos, vel, radii, masses, rough, config.planar)
    n = spec.count
    if n == 0:
        z = np.zeros((0, 3))
        return ParticleState(z, z.copy(), np.zeros(0), np.zeros(0),
                             np.zeros(0), config.planar)
    positions, radii = sample_positions(
        rng, n, spec.radius_range, spec.region_low, spec.region_high,
        obstacles, config.planar)
    return ParticleState(positions, np.zeros((n, 3)), radii,
                         np.full(n, spec.mass), np.full(n, spec.roughness),
                         config.planar)


def _resolve_multibody(cfg: ScenarioConfig) -> dict:
    particles: dict
    if cfg.particles.explicit is not None:
        particles = {"explicit": [
            {"position": list(map(float, p["position"])),
             "velocity": list(map(float, p["velocity"])),
             "radius": p["radius"], "mass": p["mass"],
             "roughness": p["roughness"]} for p in cfg.particles.explicit]}
    else:
        particles = {
            "count": cfg.particles.count,
            "radius_range": list(cfg.particles.radius_range),
            "mass": cfg.particles.mass,
            "roughness": cfg.particles.roughness,
        }
        if cfg.particles.region_low is not None:
            particles["region"] = {
                "low": list(map(float, cfg.particles.region_low)),
                "high": list(map(float, cfg.particles.region_high)),
            }
    gm = cfg.glue_law.floor
    gamma_min = {"policy": gm.policy}
    if gm.policy == "uniform":
        gamma_min["value"] = gm.value
    return {
        "kind": "multibody",
        "seed": cfg.seed,
        "planar": cfg.planar,
        "time": {"h": cfg.h, "horizon": cfg.horizon},
        "gravity": list(map(float, cfg.gravity)),
        "particles": particles,
        "glue": {"mu": cfg.glue_law.mu,
                 "radius_scaling": cfg.glue_law.use_radius_scaling,
                 "gamma_min": gamma_min},
        "grid": {"d_neigh": cfg.grid.d_neigh, "cell_size": cfg.grid.cell_size},
        "solver": {"uzawa_omega": cfg.solver.uzawa_omega,
                   "uzawa_tol": cfg.solver.uzawa_tol,
                   "uzawa_max_iters": cfg.solver.uzawa_max_iters,
                   "sweep_mode": cfg.solver.sweep_mode,
                   "step_rule": cfg.solver.step_rule},
        "output": {"cadence": cfg.cadence, "snapshots": cfg.snapshot_name,
                   "gamma_network": cfg.gamma_name},
        "takeoff_correction": cfg.takeoff_correction,
        "obstacles": cfg.obstacle_specs,
    }


def _resolve_plane(cfg: PlaneScenarioConfig) -> dict:
    return {
        "kind": "plane",
        "seed": cfg.seed,
        "time": {"h": cfg.h, "horizon": cfg.horizon},
        "initial": {"q": cfg.q0, "u": cfg.u0},
        "mass": cfg.mass,
        "radius": cfg.radius,
        "force": {"times": list(cfg.force.times),
                  "values": list(cfg.force.values)},
        "gamma_min": None if math.isinf(cfg.rough.gamma_min)
        else cfg.rough.gamma_min,
        "radius_scaling": cfg.rough.use_radius_scaling,
        "output": {"trajectory": cfg.trajectory_name},
    }
