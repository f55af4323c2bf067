"""Command-line entry point for simulation, prediction and tracking runs.

Every command is a pure function of its configuration: a flat ``key = value``
config file (``#`` comments, dotted keys for nested values) merged with
command-line flags, echoed verbatim into the output directory so reruns are
reproducible byte for byte.

Exit codes: 0 success, 2 configuration error, 3 no eligible trials,
4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .bench import (NoEligibleTrials, ProtocolConfig, min_pairwise_separation,
                    run_prediction_protocol, run_tracking_protocol, sweep)
from .data import (EmptyFile, MalformedRow, NonMonotoneFrames, Scenario,
                   corrupt, make_scenario, parse_trajectories,
                   write_trajectories)
from .filters import HpfConfig
from .motion import BodySpec, NoiseSpec, resolve_model
from .rvo import RvoParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_TRIALS = 3
EXIT_IO = 4


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config error in '{key}': {message}")
        self.key = key


@dataclass
class RunConfig:
    """Effective configuration of one command invocation."""

    model: str = "rvo+"
    filter_kind: str = "hpf"
    seed: int = 0
    kind: Optional[str] = None
    agents: int = 2
    steps: Optional[int] = None
    input: Optional[str] = None
    fmt: str = "csv-fixy"
    out: str = "out"
    hpf_k: int = 2
    hpf_pi: Tuple[float, ...] = (0.91, 0.09)
    hpf_m: int = 400
    sigma_position: float = 0.05
    sigma_velocity: float = 0.1
    sigma_desired: float = 0.05
    rvo_tau: float = 2.0
    rvo_dt: float = 0.4
    rvo_neighbor_radius: float = 10.0
    body_radius: float = 0.2
    body_max_speed: float = 2.5
    obs_sigma: float = 0.1
    obs_noise: float = 0.0
    occlusions: Tuple[Tuple[int, int, int], ...] = ()
    learn_steps: int = 10
    predict_steps: int = 30
    start_stride: int = 16
    track_steps: int = 24
    prediction_horizons: Tuple[int, ...] = (5, 15, 30)
    tracking_horizons: Tuple[int, ...] = (16, 24)
    threshold: float = 0.5
    sweep_objective: str = "mean_error"
    sweep_grid: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    sweep_seeds: Tuple[int, ...] = (0,)

    def hpf_config(self) -> HpfConfig:
        try:
            return HpfConfig(order_k=self.hpf_k, pi=self.hpf_pi, particles_m=self.hpf_m)
        except ValueError as exc:
            raise ConfigError("hpf.pi" if "pi" in str(exc) else "hpf.k", str(exc)) from None

    def protocol_config(self) -> ProtocolConfig:
        try:
            return ProtocolConfig(
                hpf=self.hpf_config(),
                noise=NoiseSpec(self.sigma_position, self.sigma_velocity, self.sigma_desired),
                params=RvoParams(self.rvo_tau, self.rvo_dt, self.rvo_neighbor_radius),
                body=BodySpec(self.body_radius, self.body_max_speed),
                sigma_obs=self.obs_sigma,
                start_stride=self.start_stride,
                learn_steps=self.learn_steps,
                predict_steps=self.predict_steps,
                prediction_horizons=self.prediction_horizons,
                track_steps=self.track_steps,
                tracking_horizons=self.tracking_horizons,
                threshold=self.threshold,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("config", str(exc)) from None

    def echo_lines(self) -> List[str]:
        items = {
            "model": self.model,
            "filter": self.filter_kind,
            "seed": self.seed,
            "kind": self.kind or "",
            "agents": self.agents,
            "steps": "" if self.steps is None else self.steps,
            "input": self.input or "",
            "format": self.fmt,
            "out": self.out,
            "hpf.k": self.hpf_k,
            "hpf.pi": ",".join(repr(p) for p in self.hpf_pi),
            "hpf.m": self.hpf_m,
            "noise.sigma_position": repr(self.sigma_position),
            "noise.sigma_velocity": repr(self.sigma_velocity),
            "noise.sigma_desired": repr(self.sigma_desired),
            "rvo.tau": repr(self.rvo_tau),
            "rvo.dt": repr(self.rvo_dt),
            "rvo.neighbor_radius": repr(self.rvo_neighbor_radius),
            "body.radius": repr(self.body_radius),
            "body.max_speed": repr(self.body_max_speed),
            "obs.sigma": repr(self.obs_sigma),
            "obs.noise": repr(self.obs_noise),
            "occlusions": ";".join(f"{a}:{s}:{l}" for a, s, l in self.occlusions),
            "bench.learn_steps": self.learn_steps,
            "bench.predict_steps": self.predict_steps,
            "bench.start_stride": self.start_stride,
            "bench.track_steps": self.track_steps,
            "bench.prediction_horizons": ",".join(str(h) for h in self.prediction_horizons),
            "bench.tracking_horizons": ",".join(str(h) for h in self.tracking_horizons),
            "bench.threshold": repr(self.threshold),
            "sweep.objective": self.sweep_objective,
            "sweep.seeds": ",".join(str(s) for s in self.sweep_seeds),
        }
        for key in sorted(self.sweep_grid):
            items[f"sweep.grid.{key}"] = ";".join(repr(v) for v in self.sweep_grid[key])
        return [f"{k} = {items[k]}" for k in sorted(items)]


def _parse_float_list(raw: str, key: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(key, f"expected comma-separated numbers, got '{raw}'") from None


def _parse_int_list(raw: str, key: str) -> Tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(key, f"expected comma-separated integers, got '{raw}'") from None


def _parse_occlusions(raw: str, key: str) -> Tuple[Tuple[int, int, int], ...]:
    if not raw.strip():
        return ()
    windows = []
    for chunk in raw.split(";"):
        parts = chunk.split(":")
        if len(parts) != 3:
            raise ConfigError(key, f"expected id:start:length, got '{chunk}'")
        try:
            windows.append(tuple(int(p) for p in parts))
        except ValueError:
            raise ConfigError(key, f"expected integers in '{chunk}'") from None
    return tuple(windows)


def apply_setting(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    """Apply one dotted ``key = value`` setting to the config."""
    key = key.strip()
    raw = raw.strip()

    def as_int(k):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(k, f"expected integer, got '{raw}'") from None

    def as_float(k):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(k, f"expected number, got '{raw}'") from None

    if key == "model":
        try:
            resolve_model(raw)
        except (ValueError, NotImplementedError) as exc:
            raise ConfigError("model", str(exc)) from None
        return replace(cfg, model=raw)
    if key == "filter":
        if raw not in ("pf", "hpf"):
            raise ConfigError("filter", f"expected pf or hpf, got '{raw}'")
        return replace(cfg, filter_kind=raw)
    if key == "seed":
        seed = as_int(key)
        if not (0 <= seed < 2**64):
            raise ConfigError("seed", "must be a 64-bit unsigned value")
        return replace(cfg, seed=seed)
    if key == "kind":
        return replace(cfg, kind=raw or None)
    if key == "agents":
        return replace(cfg, agents=as_int(key))
    if key == "steps":
        return replace(cfg, steps=None if raw == "" else as_int(key))
    if key == "input":
        return replace(cfg, input=raw or None)
    if key == "format":
        if raw not in ("csv-fixy", "obsmat"):
            raise ConfigError("format", f"expected csv-fixy or obsmat, got '{raw}'")
        return replace(cfg, fmt=raw)
    if key == "out":
        return replace(cfg, out=raw)
    if key == "hpf.k":
        return replace(cfg, hpf_k=as_int(key))
    if key == "hpf.pi":
        return replace(cfg, hpf_pi=_parse_float_list(raw, key))
    if key == "hpf.m":
        return replace(cfg, hpf_m=as_int(key))
    if key == "noise.sigma_position":
        return replace(cfg, sigma_position=as_float(key))
    if key == "noise.sigma_velocity":
        return replace(cfg, sigma_velocity=as_float(key))
    if key == "noise.sigma_desired":
        return replace(cfg, sigma_desired=as_float(key))
    if key == "rvo.tau":
        return replace(cfg, rvo_tau=as_float(key))
    if key == "rvo.dt":
        return replace(cfg, rvo_dt=as_float(key))
    if key == "rvo.neighbor_radius":
        return replace(cfg, rvo_neighbor_radius=as_float(key))
    if key == "body.radius":
        return replace(cfg, body_radius=as_float(key))
    if key == "body.max_speed":
        return replace(cfg, body_max_speed=as_float(key))
    if key == "obs.sigma":
        return replace(cfg, obs_sigma=as_float(key))
    if key == "obs.noise":
        return replace(cfg, obs_noise=as_float(key))
    if key == "occlusions":
        return replace(cfg, occlusions=_parse_occlusions(raw, key))
    if key == "bench.learn_steps":
        return replace(cfg, learn_steps=as_int(key))
    if key == "bench.predict_steps":
        return replace(cfg, predict_steps=as_int(key))
    if key == "bench.start_stride":
        return replace(cfg, start_stride=as_int(key))
    if key == "bench.track_steps":
        return replace(cfg, track_steps=as_int(key))
    if key == "bench.prediction_horizons":
        return replace(cfg, prediction_horizons=_parse_int_list(raw, key))
    if key == "bench.tracking_horizons":
        return replace(cfg, tracking_horizons=_parse_int_list(raw, key))
    if key == "bench.threshold":
        return replace(cfg, threshold=as_float(key))
    if key == "sweep.objective":
        if raw not in ("mean_error", "st"):
            raise ConfigError("sweep.objective", f"expected mean_error or st, got '{raw}'")
        return replace(cfg, sweep_objective=raw)
    if key == "sweep.seeds":
        return replace(cfg, sweep_seeds=_parse_int_list(raw, key))
    if key.startswith("sweep.grid."):
        grid = dict(cfg.sweep_grid)
        try:
            values = tuple(float(chunk) for chunk in raw.split(";") if chunk.strip())
        except ValueError:
            raise ConfigError(key, f"expected ';'-separated numbers, got '{raw}'") from None
        grid[key[len("sweep.grid."):]] = values
        return replace(cfg, sweep_grid=grid)
    raise ConfigError(key, "unknown configuration key")


def load_config_file(cfg: RunConfig, path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read '{path}': {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg = apply_setting(cfg, key, value)
    return cfg


def _merge_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    direct = {
        "model": args.model, "filter": args.filter, "seed": args.seed,
        "kind": args.kind, "agents": args.agents, "steps": args.steps,
        "input": args.input, "format": args.format, "out": args.out,
        "hpf.k": getattr(args, "k", None),
        "obs.noise": getattr(args, "obs_noise", None),
        "occlusions": getattr(args, "occlusions", None),
    }
    for key, value in direct.items():
        if value is not None:
            cfg = apply_setting(cfg, key, str(value))
    for setting in args.set or []:
        if "=" not in setting:
            raise ConfigError("--set", f"expected key=value, got '{setting}'")
        key, value = setting.split("=", 1)
        cfg = apply_setting(cfg, key, value)
    return cfg


def _prepare_out(cfg: RunConfig) -> str:
    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create output directory '{cfg.out}': {exc}")
    return cfg.out


def _write_echo(cfg: RunConfig):
    path = os.path.join(cfg.out, "config.echo")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(cfg.echo_lines()) + "\n")


def _load_scenario(cfg: RunConfig) -> Scenario:
    if cfg.input:
        if not os.path.exists(cfg.input):
            raise IOError(f"input file '{cfg.input}' does not exist")
        try:
            return parse_trajectories(cfg.input, fmt=cfg.fmt)
        except (MalformedRow, NonMonotoneFrames, EmptyFile) as exc:
            raise IOError(f"cannot parse '{cfg.input}': {exc}")
    if cfg.kind:
        try:
            return make_scenario(cfg.kind, cfg.agents, cfg.seed, steps=cfg.steps,
                                 dt=cfg.rvo_dt,
                                 body=BodySpec(cfg.body_radius, cfg.body_max_speed))
        except ValueError as exc:
            raise ConfigError("kind", str(exc)) from None
    raise ConfigError("input", "either an input file or a scenario kind is required")


def _trace_for(cfg: RunConfig, scenario: Scenario):
    if cfg.obs_noise > 0.0 or cfg.occlusions:
        try:
            return corrupt(scenario, cfg.obs_noise, cfg.occlusions, seed=cfg.seed)
        except ValueError as exc:
            raise ConfigError("occlusions", str(exc)) from None
    return None


def cmd_simulate(cfg: RunConfig) -> int:
    if not cfg.kind:
        raise ConfigError("kind", "simulate requires a scenario kind")
    scenario = _load_scenario(cfg)
    _prepare_out(cfg)
    write_trajectories(scenario, os.path.join(cfg.out, "trajectories.csv"))
    _write_echo(cfg)
    sep = min_pairwise_separation(scenario)
    print(f"wrote {os.path.join(cfg.out, 'trajectories.csv')} "
          f"({scenario.n_frames} frames, {len(scenario.agent_ids)} agents, "
          f"min separation {sep:.3f} m)")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    scenario = _load_scenario(cfg)
    trace = _trace_for(cfg, scenario)
    _prepare_out(cfg)
    report = run_prediction_protocol(scenario, cfg.model, cfg.filter_kind,
                                     cfg.protocol_config(), seed=cfg.seed, trace=trace)
    report.to_csv(os.path.join(cfg.out, "report.csv"))
    _write_echo(cfg)
    print(report.format_table())
    return EXIT_OK


def cmd_track(cfg: RunConfig) -> int:
    scenario = _load_scenario(cfg)
    trace = _trace_for(cfg, scenario)
    if trace is None:
        trace = corrupt(scenario, 0.0, (), seed=cfg.seed)
    _prepare_out(cfg)
    report = run_tracking_protocol(scenario, trace, cfg.model, cfg.filter_kind,
                                   cfg.protocol_config(), seed=cfg.seed)
    report.to_csv(os.path.join(cfg.out, "report.csv"))
    _write_echo(cfg)
    print(report.format_table())
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.sweep_grid:
        raise ConfigError("sweep.grid", "sweep requires at least one sweep.grid.<key> entry")
    scenarios = []
    traces = []
    for seed in cfg.sweep_seeds:
        scenario = _load_scenario(replace(cfg, seed=seed)) if cfg.kind else _load_scenario(cfg)
        scenarios.append(scenario)
        trace = _trace_for(replace(cfg, seed=seed), scenario)
        traces.append(trace)
    if all(t is None for t in traces):
        traces = None
    elif any(t is None for t in traces):
        raise ConfigError("obs.noise", "sweep needs traces for all scenarios or none")
    if cfg.sweep_objective == "st" and traces is None:
        raise ConfigError("sweep.objective", "objective 'st' requires obs.noise or occlusions")
    _prepare_out(cfg)
    result = sweep(dict(cfg.sweep_grid), scenarios, cfg.sweep_objective,
                   cfg.protocol_config(), model=cfg.model,
                   filter_kind=cfg.filter_kind, seed=cfg.seed, traces=traces)
    table_path = os.path.join(cfg.out, "report.csv")
    result.to_csv(table_path)
    _write_echo(cfg)
    best = " ".join(f"{k}={v}" for k, v in sorted(result.best.items()))
    print(f"best: {best} (objective {result.best_score:.6f})")
    print(table_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdtrack",
        description="Crowd simulation, trajectory prediction and tracking benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (("simulate", cmd_simulate), ("predict", cmd_predict),
                       ("track", cmd_track), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--model", help="lin, lin+, rvo or rvo+")
        p.add_argument("--filter", help="pf or hpf")
        p.add_argument("--seed", type=int)
        p.add_argument("--kind", help="head_on, crossing, circle or corridor")
        p.add_argument("--agents", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--input", help="trajectory file to load")
        p.add_argument("--format", choices=("csv-fixy", "obsmat"))
        p.add_argument("--out", help="output directory")
        p.add_argument("--k", type=int, help="mixture order (hpf.k)")
        p.add_argument("--obs-noise", type=float, dest="obs_noise",
                       help="observation noise added to the trace (m)")
        p.add_argument("--occlusions", help="id:start:len[;id:start:len...]")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any dotted config key")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = RunConfig()
    try:
        if args.config:
            cfg = load_config_file(cfg, args.config)
        cfg = _merge_flags(cfg, args)
        cfg.hpf_config()  # validate before running
        return args.func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoEligibleTrials as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_TRIALS
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
