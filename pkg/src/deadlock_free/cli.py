"""Command-line front end: run, compare, sweep and defaults.

Scenario files are YAML with an explicit ``version``.  Outputs are plain
tables (CSV) and JSON documents; plotting is left to external tools.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cbf_core import ClassK, ControllerParams
from .controller import ControllerMode
from .sim import (AgentSpec, ConfigError, ScenarioConfig, TrajectoryLog,
                  add_static_obstacle, make_ring_scenario, run)
from .unicycle import DEFAULT_OFFSET, map_controls

CONFIG_VERSION = 1
TRAJECTORY_COLUMNS = ("t", "agent", "x", "y", "u_x", "u_y", "omega", "delta",
                      "zeta", "R", "min_h", "fallback")
UNICYCLE_COLUMNS = ("v", "w")
EXIT_OK, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3

_CLASS_K = ("gamma", "alpha", "beta")
_SCENARIO_KEYS = ("name", "mode", "seed", "d", "max_steps", "goal_tolerance", "v_stall",
                  "stall_window", "stop_on_deadlock")
_AGENT_KEYS = ("position", "goal", "radius", "static")
_RING_KEYS = ("N", "radius", "agent_radius", "jitter_deg", "obstacle")


# --------------------------------------------------------------------------- config

def params_to_dict(params: ControllerParams) -> dict:
    out = {}
    for f in dataclasses.fields(params):
        v = getattr(params, f.name)
        out[f.name] = v.gain if isinstance(v, ClassK) else v
    return out


def _params_from_dict(raw, path: str = "params") -> ControllerParams:
    if raw is None:
        return ControllerParams()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name: f for f in dataclasses.fields(ControllerParams)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{path}.{key}"
        if key not in known:
            raise ConfigError(where, "unknown parameter")
        default = getattr(ControllerParams(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(where, "expected true or false")
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(where, "expected a string")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(where, "expected an integer")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(where, "expected a number")
            value = float(value)
        try:
            if key in _CLASS_K:
                value = ClassK(value)
            ControllerParams(**{key: value})
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
        kwargs[key] = value
    return ControllerParams(**kwargs)


def _vector(value, path: str) -> tuple:
    if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(path, "expected a list of numbers")
    return tuple(float(v) for v in value)


def _agents_from_list(raw) -> tuple:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("agents", "expected a non-empty list")
    agents = []
    for k, item in enumerate(raw):
        where = f"agents[{k}]"
        if not isinstance(item, dict):
            raise ConfigError(where, "expected a mapping")
        for key in item:
            if key not in _AGENT_KEYS:
                raise ConfigError(f"{where}.{key}", "unknown field")
        for key in ("position", "goal"):
            if key not in item:
                raise ConfigError(f"{where}.{key}", "required")
        radius = item.get("radius", 1.0)
        if isinstance(radius, bool) or not isinstance(radius, (int, float)):
            raise ConfigError(f"{where}.radius", "expected a number")
        static = item.get("static", False)
        if not isinstance(static, bool):
            raise ConfigError(f"{where}.static", "expected true or false")
        agents.append(AgentSpec(position=_vector(item["position"], f"{where}.position"),
                                goal=_vector(item["goal"], f"{where}.goal"),
                                radius=float(radius), static=static))
    return tuple(agents)


def _ring_agents(raw, params, seed) -> tuple:
    if not isinstance(raw, dict):
        raise ConfigError("ring", "expected a mapping")
    for key in raw:
        if key not in _RING_KEYS:
            raise ConfigError(f"ring.{key}", "unknown field")
    N = raw.get("N")
    if isinstance(N, bool) or not isinstance(N, int) or N < 2:
        raise ConfigError("ring.N", "expected an integer >= 2")
    nums = {}
    for key, default in (("radius", 10.0), ("agent_radius", 1.0), ("jitter_deg", 0.0)):
        v = raw.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"ring.{key}", "expected a number")
        nums[key] = float(v)
    cfg = make_ring_scenario(N, nums["radius"], params, agent_radius=nums["agent_radius"],
                             jitter_deg=nums["jitter_deg"], seed=seed)
    if raw.get("obstacle", False):
        cfg = add_static_obstacle(cfg)
    return cfg.agents


def config_from_dict(raw) -> ScenarioConfig:
    """Resolve a parsed document into a validated ScenarioConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    allowed = set(_SCENARIO_KEYS) | {"version", "params", "agents", "ring"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown field")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError("version", f"expected {CONFIG_VERSION}")
    params = _params_from_dict(raw.get("params"))
    kwargs = {}
    defaults = {f.name: f.default for f in dataclasses.fields(ScenarioConfig)
                if f.default is not dataclasses.MISSING}
    for key in _SCENARIO_KEYS:
        if key not in raw:
            continue
        value = raw[key]
        default = defaults[key]
        if key == "mode":
            try:
                value = ControllerMode.parse(value)
            except ValueError as exc:
                raise ConfigError("mode", str(exc)) from None
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(key, "expected true or false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(key, "expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, "expected a number")
            value = float(value)
        elif not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        kwargs[key] = value
    if ("agents" in raw) == ("ring" in raw):
        raise ConfigError("agents", "give exactly one of 'agents' or 'ring'")
    if "agents" in raw:
        agents = _agents_from_list(raw["agents"])
    else:
        agents = _ring_agents(raw["ring"], params, kwargs.get("seed", 0))
    cfg = ScenarioConfig(agents=agents, params=params, **kwargs)
    cfg.validate()
    return cfg


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Fully materialized document; every default is written out."""
    out = {"version": CONFIG_VERSION}
    for key in _SCENARIO_KEYS:
        v = getattr(cfg, key)
        out[key] = v.value if isinstance(v, ControllerMode) else v
    out["params"] = params_to_dict(cfg.params)
    out["agents"] = [{"position": list(a.position), "goal": list(a.goal),
                      "radius": a.radius, "static": a.static} for a in cfg.agents]
    return out


def config_digest(cfg: ScenarioConfig) -> str:
    text = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"not valid YAML: {exc}") from None
    return config_from_dict(raw)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def default_config() -> ScenarioConfig:
    return make_ring_scenario(4, 10.0, ControllerParams(), name="ring4")


def apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {}
    if getattr(args, "mode", None):
        try:
            changes["mode"] = ControllerMode.parse(args.mode)
        except ValueError as exc:
            raise ConfigError("--mode", str(exc)) from None
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "max_steps", None) is not None:
        changes["max_steps"] = args.max_steps
    if getattr(args, "dt", None) is not None:
        try:
            changes["params"] = dataclasses.replace(cfg.params, dt=args.dt)
        except ValueError as exc:
            raise ConfigError("--dt", str(exc)) from None
    cfg = dataclasses.replace(cfg, **changes)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------- outputs

@dataclass
class RunManifest:
    config_digest: str
    artifact_version: str
    mode: str
    seed: int
    outputs: dict
    wall_clock_s: float
    summary: dict = field(default_factory=dict)


def _num(v) -> str:
    # repr round-trips doubles exactly
    return repr(float(v))


def trajectory_rows(log: TrajectoryLog, unicycle: bool = False,
                    offset: float = DEFAULT_OFFSET):
    T = log.steps
    N = log.positions.shape[1]
    min_h = np.where(np.eye(N, dtype=bool)[None], np.inf, log.h[:T]).min(axis=2)
    extra = {}
    if unicycle:
        for i, a in enumerate(log.config.agents):
            heading = math.atan2(a.goal[1] - a.position[1], a.goal[0] - a.position[0])
            v, w, _ = map_controls(log.u[:T, i], heading, log.config.dt, offset)
            extra[i] = (v, w)
    for k in range(T):
        for i in range(N):
            row = [str(k), str(i), _num(log.positions[k, i, 0]), _num(log.positions[k, i, 1]),
                   _num(log.u[k, i, 0]), _num(log.u[k, i, 1]), _num(log.omega[k, i, 0]),
                   _num(log.delta[k, i]), _num(log.zeta[k, i]), _num(log.risk[k, i]),
                   _num(min_h[k, i]), str(int(log.fallback[k, i]))]
            if unicycle:
                row += [_num(extra[i][0][k]), _num(extra[i][1][k])]
            yield row


def write_trajectory(log: TrajectoryLog, path, unicycle: bool = False) -> None:
    header = TRAJECTORY_COLUMNS + (UNICYCLE_COLUMNS if unicycle else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(trajectory_rows(log, unicycle))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- commands

def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else default_config()
    return apply_overrides(cfg, args)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    stem = f"{cfg.name}_{cfg.mode.value}"
    t0 = time.perf_counter()
    log = run(cfg)
    wall = time.perf_counter() - t0
    paths = {"trajectory": str(out / f"{stem}_trajectory.csv"),
             "summary": str(out / f"{stem}_summary.json"),
             "manifest": str(out / f"{stem}_manifest.json"),
             "config": str(out / f"{stem}_config.yaml")}
    write_trajectory(log, paths["trajectory"], unicycle=args.unicycle)
    summary = log.summary()
    digest = config_digest(cfg)
    summary["config_digest"] = digest
    _write_json(paths["summary"], summary)
    Path(paths["config"]).write_text(dump_config(cfg))
    manifest = RunManifest(digest, __version__, cfg.mode.value, cfg.seed, paths, wall, summary)
    _write_json(paths["manifest"], dataclasses.asdict(manifest))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _padded(series: np.ndarray, length: int) -> np.ndarray:
    # a run that stopped early stays where it ended
    if len(series) >= length:
        return series[:length]
    return np.concatenate([series, np.full(length - len(series), series[-1])])


def compare_logs(logs: dict) -> tuple[list, dict]:
    """Joined per-step table and the verdict block for three runs."""
    length = max(len(lg.avg_goal_distance()) for lg in logs.values())
    cols = {m: _padded(lg.avg_goal_distance(), length) for m, lg in logs.items()}
    ad = logs["adaptive"].avg_zeta()
    zeta = _padded(ad, length - 1) if len(ad) else np.zeros(length - 1)
    rows = []
    for k in range(length):
        z = zeta[k] if k < len(zeta) else zeta[-1]
        rows.append([str(k)] + [_num(cols[m][k]) for m in logs] + [_num(z)])
    verdict = {m: {"deadlock": bool(lg.deadlock), "converged": bool(lg.converged),
                   "steps_to_convergence": lg.steps_to_convergence()}
               for m, lg in logs.items()}
    a = verdict["adaptive"]["steps_to_convergence"]
    o = verdict["always_on"]["steps_to_convergence"]
    verdict["ordering_reproduced"] = bool(
        verdict["baseline"]["deadlock"] and a is not None and o is not None and a < o)
    return rows, verdict


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    logs = {m.value: run(cfg.with_mode(m)) for m in
            (ControllerMode.BASELINE, ControllerMode.ALWAYS_ON, ControllerMode.ADAPTIVE)}
    rows, verdict = compare_logs(logs)
    table = out / f"{cfg.name}_compare.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"dist_{m}" for m in logs] + ["zeta_adaptive"])
        w.writerows(rows)
    verdict["config_digest"] = config_digest(cfg)
    _write_json(out / f"{cfg.name}_verdict.json", verdict)
    print(json.dumps(verdict, indent=2, sort_keys=True))
    return EXIT_OK


def sweep(N_list, trials: int, seed: int, params: ControllerParams | None = None,
          steps: int = 500, jitter_deg: float = 10.0, radius: float = 10.0) -> tuple[list, list]:
    """Per-trial final average goal distances and the per-(N, mode) table."""
    params = params or ControllerParams()
    modes = (ControllerMode.ALWAYS_ON, ControllerMode.ADAPTIVE)
    trial_rows = []
    for N in N_list:
        for mode in modes:
            for k in range(trials):
                cfg = make_ring_scenario(N, radius, params, mode, jitter_deg=jitter_deg,
                                         seed=seed + k, max_steps=steps,
                                         stop_on_deadlock=False)
                log = run(cfg)
                trial_rows.append((N, mode.value, k, float(log.avg_goal_distance()[-1])))
    table = []
    for N in N_list:
        for mode in modes:
            vals = [r[3] for r in trial_rows if r[0] == N and r[1] == mode.value]
            table.append((N, mode.value, float(np.mean(vals)), float(np.min(vals)),
                          float(np.max(vals))))
    return trial_rows, table


def cmd_sweep(args) -> int:
    try:
        N_list = [int(v) for v in args.n_list.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--n-list", "expected comma-separated integers") from None
    if not N_list or any(n < 2 for n in N_list):
        raise ConfigError("--n-list", "expected integers >= 2")
    if args.trials < 1:
        raise ConfigError("--trials", "must be >= 1")
    params = load_config(args.config).params if args.config else ControllerParams()
    if args.dt is not None:
        params = dataclasses.replace(params, dt=args.dt)
    steps = args.max_steps or 500
    out = _out_dir(args)
    trial_rows, table = sweep(N_list, args.trials, args.seed or 0, params, steps)
    with open(out / "sweep_trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "mode", "trial", "final_avg_goal_distance"])
        w.writerows([(n, m, k, _num(v)) for n, m, k, v in trial_rows])
    with open(out / "sweep_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "mode", "mean", "min", "max"])
        w.writerows([(n, m, _num(a), _num(b), _num(c)) for n, m, a, b, c in table])
    for n, m, a, b, c in table:
        print(f"N={n:<3d} {m:<10s} mean={a:.4f} min={b:.4f} max={c:.4f}")
    return EXIT_OK


def cmd_defaults(args) -> int:
    sys.stdout.write(dump_config(default_config()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deadlock-free",
                                     description="Multi-agent CLF-CBF simulations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_mode=True):
        p.add_argument("--config", help="scenario YAML (default: 4-agent ring)")
        if with_mode:
            p.add_argument("--mode", help="baseline, always_on or adaptive")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--dt", type=float)
        p.add_argument("--max-steps", type=int)

    p = sub.add_parser("run", help="simulate one scenario")
    common(p)
    p.add_argument("--unicycle", action="store_true", help="append v, w columns")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run all three modes on one scenario")
    common(p, with_mode=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="jittered rings for several N")
    common(p, with_mode=False)
    p.add_argument("--n-list", default="4,8,12")
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defaults", help="print the default scenario with every parameter")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as an internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
