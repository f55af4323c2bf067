"""Evaluation protocols: trajectory prediction and tracking robustness.

The prediction protocol runs a two-phase trial from every 16th frame: a
learning phase where the filter consumes observations, then an open-loop
phase where the motion model extrapolates without observations and the
error to ground truth is read off at fixed horizons.

The tracking protocol replays a noisy/occluded observation trace, starts a
tracker at every 16th frame from ground-truth positions and classifies each
track at fixed horizons as a success, a loss, or an identity switch against
the 0.5 m rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ObservationTrace, Scenario
from .filters import (FilterHistory, HpfConfig, ParticleSet, hpf_step,
                      init_particles, posterior_mean)
from .motion import (AgentState, BodySpec, CrowdContext, NoiseSpec,
                     predict_mean, resolve_model)
from .rvo import RvoParams

#: Distance rule for track outcomes (meters).
SUCCESS_THRESHOLD = 0.5


class NoEligibleTrials(ValueError):
    """No trajectory spans the required learning window."""


class HorizonUnavailable(ValueError):
    """A sequence does not reach the requested horizon index."""


@dataclass(frozen=True)
class GaussianPositionLikelihood:
    """Isotropic Gaussian likelihood on position; flat when the target is occluded.

    Stands in for an appearance model: an observation is a 2D position, and
    a missing observation contributes the constant ``occlusion_log_likelihood``
    to every particle (weights unchanged).
    """

    sigma_obs: float = 0.1
    occlusion_log_likelihood: float = 0.0

    def __post_init__(self):
        if not (self.sigma_obs > 0.0):
            raise ValueError("sigma_obs must be > 0")

    def log_likelihood(self, obs, states: np.ndarray) -> np.ndarray:
        if obs is None:
            return np.full(states.shape[0], self.occlusion_log_likelihood)
        obs = np.asarray(obs, dtype=np.float64)
        d = states[:, 0:2] - obs
        s2 = self.sigma_obs * self.sigma_obs
        return -0.5 * np.sum(d * d, axis=1) / s2 - np.log(2.0 * np.pi * s2)


@dataclass
class PredictionRow:
    dataset: str
    model: str
    filter_kind: str
    horizon: int
    mean_error_m: float
    n_trials: int


@dataclass
class PredictionReport:
    rows: List[PredictionRow]

    def overall_average(self) -> float:
        cells = [r.mean_error_m for r in self.rows if r.n_trials > 0]
        return float(np.mean(cells)) if cells else float("nan")

    def cell(self, horizon: int) -> Optional[PredictionRow]:
        for r in self.rows:
            if r.horizon == horizon:
                return r
        return None

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("dataset,model,filter,L,mean_error_m,n_trials\n")
            for r in self.rows:
                fh.write(f"{r.dataset},{r.model},{r.filter_kind},{r.horizon},"
                         f"{r.mean_error_m:.6f},{r.n_trials}\n")

    def format_table(self) -> str:
        lines = [f"{'dataset':<20}{'model':<8}{'filter':<8}{'L':>4}{'mean err (m)':>14}{'trials':>8}"]
        for r in self.rows:
            lines.append(f"{r.dataset:<20}{r.model:<8}{r.filter_kind:<8}{r.horizon:>4}"
                         f"{r.mean_error_m:>14.3f}{r.n_trials:>8}")
        return "\n".join(lines)


@dataclass(frozen=True)
class TrackOutcome:
    """Outcome of one tracked agent at one horizon."""

    agent_id: int
    start: int
    horizon: int
    kind: str  # success | lost | id_switch
    distance: float


@dataclass
class TrackReport:
    outcomes: List[TrackOutcome]
    dataset: str = ""
    model: str = ""
    filter_kind: str = ""

    def counts(self, horizon: Optional[int] = None) -> Tuple[int, int, int]:
        """(successes, id switches, losses), optionally for one horizon."""
        selected = [o for o in self.outcomes if horizon is None or o.horizon == horizon]
        st = sum(1 for o in selected if o.kind == "success")
        ids = sum(1 for o in selected if o.kind == "id_switch")
        lost = sum(1 for o in selected if o.kind == "lost")
        return st, ids, lost

    @property
    def horizons(self):
        return sorted({o.horizon for o in self.outcomes})

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("dataset,model,filter,N,st,ids,lost,n_tracks\n")
            for n in self.horizons:
                st, ids, lost = self.counts(n)
                fh.write(f"{self.dataset},{self.model},{self.filter_kind},{n},"
                         f"{st},{ids},{lost},{st + ids + lost}\n")

    def format_table(self) -> str:
        lines = [f"{'dataset':<20}{'model':<8}{'filter':<8}{'N':>4}{'ST':>6}{'IDS':>6}{'lost':>6}"]
        for n in self.horizons:
            st, ids, lost = self.counts(n)
            lines.append(f"{self.dataset:<20}{self.model:<8}{self.filter_kind:<8}{n:>4}"
                         f"{st:>6}{ids:>6}{lost:>6}")
        return "\n".join(lines)


def mean_error(pred: Sequence, truth: Sequence, horizon: int) -> float:
    """Euclidean distance between the two position sequences at index `horizon`."""
    if horizon >= len(pred) or horizon >= len(truth):
        raise HorizonUnavailable(f"horizon {horizon} beyond sequence length")
    d = np.asarray(pred[horizon], dtype=np.float64) - np.asarray(truth[horizon], dtype=np.float64)
    return float(np.linalg.norm(d))


def classify_track(estimate, own_truth, other_truths,
                   threshold: float = SUCCESS_THRESHOLD) -> Tuple[str, float]:
    """Apply the distance rule to one track endpoint.

    success   -- within `threshold` of the own ground truth and no other
                 agent's ground truth is strictly nearer
    id_switch -- within `threshold` of the own ground truth but another
                 agent's ground truth is strictly nearer
    lost      -- farther than `threshold` from the own ground truth
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    d_own = float(np.linalg.norm(estimate - np.asarray(own_truth, dtype=np.float64)))
    if d_own > threshold:
        return "lost", d_own
    for other in other_truths:
        if float(np.linalg.norm(estimate - np.asarray(other, dtype=np.float64))) < d_own:
            return "id_switch", d_own
    return "success", d_own


class JointTracker:
    """One filter per agent, stepped simultaneously off shared published means.

    Every agent's particles interact with the *previous* frame's posterior
    means of the other agents; new means are published only after all agents
    finished the frame.
    """

    def __init__(self, init_fixes: Dict[int, Tuple[np.ndarray, np.ndarray]],
                 model: str, filter_kind: str, cfg: HpfConfig, noise: NoiseSpec,
                 params: RvoParams, rng: np.random.Generator,
                 body: BodySpec = BodySpec(), timestamp: int = 0,
                 init_spread: Optional[Tuple[float, float]] = None):
        base_model, adaptive = resolve_model(model)
        self.model = base_model
        if filter_kind == "pf":
            cfg = HpfConfig(order_k=1, pi=(1.0,), particles_m=cfg.particles_m,
                            top_m_selection=cfg.top_m_selection)
        elif filter_kind != "hpf":
            raise ValueError(f"unknown filter kind '{filter_kind}'")
        self.cfg = cfg
        self.noise = noise if adaptive else replace(noise, sigma_desired=0.0)
        self.params = params
        self.body = body
        self.rng = rng
        self.ids = sorted(init_fixes)
        self.histories: Dict[int, FilterHistory] = {}
        self.means: Dict[int, AgentState] = {}
        self.lambdas: Dict[int, np.ndarray] = {}
        self.flagged_steps = 0
        pos_spread, vel_spread = init_spread if init_spread else (None, None)

        sets = {}
        for agent_id in self.ids:
            position, velocity = init_fixes[agent_id]
            pset = init_particles(position, velocity, cfg.particles_m, self.noise,
                                  rng, timestamp, position_spread=pos_spread,
                                  velocity_spread=vel_spread)
            sets[agent_id] = pset
            self.means[agent_id] = posterior_mean(pset)
            self.lambdas[agent_id] = np.ones(1)
        for agent_id in self.ids:
            history = FilterHistory(cfg.order_k)
            history.push(sets[agent_id], self._context_for(agent_id))
            self.histories[agent_id] = history

    def _context_for(self, agent_id: int) -> CrowdContext:
        others = [(other, self.means[other]) for other in self.ids if other != agent_id]
        return CrowdContext(others=others, params=self.params, self_body=self.body)

    def step(self, observations: Dict[int, Optional[np.ndarray]], obs_model):
        """Advance every agent one frame.

        ``observations`` maps agent id to a position or None (occluded).
        """
        contexts = {agent_id: self._context_for(agent_id) for agent_id in self.ids}
        new_sets: Dict[int, ParticleSet] = {}
        for agent_id in self.ids:
            posterior, lambdas = hpf_step(
                self.histories[agent_id], contexts[agent_id],
                observations.get(agent_id), obs_model, self.cfg, self.model,
                self.noise, self.params.dt, self.rng)
            new_sets[agent_id] = posterior
            if posterior.flagged:
                self.flagged_steps += 1
            self.lambdas[agent_id] = np.asarray(lambdas)
        for agent_id in self.ids:
            self.means[agent_id] = posterior_mean(new_sets[agent_id])
        for agent_id in self.ids:
            self.histories[agent_id].push(new_sets[agent_id], self._context_for(agent_id))

    def mean_position(self, agent_id: int) -> np.ndarray:
        return self.means[agent_id].position

    def rollout_means(self, steps: int):
        """Open-loop extrapolation of the published means, no observations.

        The mixture means at the current time are propagated jointly through
        the noise-free motion model; for the higher-order filter this is the
        frozen-weight mixture mean carried forward.  Yields, per step, a dict
        of agent id to predicted position.  The filter state is not touched.
        """
        current = dict(self.means)
        out = []
        for _ in range(steps):
            new_states = {}
            for agent_id in self.ids:
                others = [(other, current[other]) for other in self.ids if other != agent_id]
                ctx = CrowdContext(others=others, params=self.params, self_body=self.body)
                new_states[agent_id] = predict_mean(self.model, current[agent_id],
                                                    ctx, self.params.dt)
            current = new_states
            out.append({agent_id: state.position for agent_id, state in current.items()})
        return out


@dataclass
class ProtocolConfig:
    """Shared knobs of both protocols."""

    hpf: HpfConfig = field(default_factory=HpfConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    params: RvoParams = field(default_factory=RvoParams)
    body: BodySpec = field(default_factory=BodySpec)
    sigma_obs: float = 0.1
    start_stride: int = 16
    learn_steps: int = 10
    predict_steps: int = 30
    prediction_horizons: Tuple[int, ...] = (5, 15, 30)
    track_steps: int = 24
    tracking_horizons: Tuple[int, ...] = (16, 24)
    threshold: float = SUCCESS_THRESHOLD
    #: (position, velocity) spread of the initial particle cloud; None derives
    #: it from sigma_obs for noisy traces and collapses it for exact ones.
    init_spread: Optional[Tuple[float, float]] = None

    def resolve_init_spread(self, dt: float, exact_observations: bool):
        if self.init_spread is not None:
            return self.init_spread
        if exact_observations:
            return (0.0, 0.0)
        return (self.sigma_obs, 1.5 * self.sigma_obs / dt)


def _observation_at(scenario: Scenario, trace: Optional[ObservationTrace],
                    frame_pos: int, agent_id: int) -> Optional[np.ndarray]:
    if trace is None:
        return scenario.frames[frame_pos].position_of(agent_id)
    obs = trace.get(frame_pos, agent_id)
    return None if obs is None else obs.position


def run_prediction_protocol(scenario: Scenario, model: str = "rvo+",
                            filter_kind: str = "hpf",
                            cfg: Optional[ProtocolConfig] = None, seed: int = 0,
                            trace: Optional[ObservationTrace] = None) -> PredictionReport:
    """Two-phase learn/predict evaluation over a scenario.

    From every ``start_stride``-th frame: agents present through the whole
    learning window are filtered on observations (ground-truth positions, or
    the supplied trace) for ``learn_steps`` frames, then extrapolated open
    loop without observations; the Euclidean error of the published mean at
    each horizon is averaged over all (trial, agent) pairs that reach it.
    """
    cfg = cfg or ProtocolConfig()
    obs_model = GaussianPositionLikelihood(cfg.sigma_obs)
    tracks = scenario.positions_by_agent()
    n = scenario.n_frames
    errors: Dict[int, List[float]] = {h: [] for h in cfg.prediction_horizons}
    rng = np.random.default_rng(seed)
    any_trial = False

    for t0 in range(0, n, cfg.start_stride):
        learn_end = t0 + cfg.learn_steps
        if learn_end + 1 > n:
            continue
        eligible = [agent_id for agent_id, series in sorted(tracks.items())
                    if all(k in series for k in range(t0, learn_end + 1))]
        if not eligible:
            continue
        init = {}
        skip = False
        for agent_id in eligible:
            p0 = _observation_at(scenario, trace, t0, agent_id)
            p1 = _observation_at(scenario, trace, t0 + 1, agent_id)
            if p0 is None or p1 is None:
                skip = True
                break
            init[agent_id] = (p0, (p1 - p0) / scenario.dt)
        if skip:
            continue
        any_trial = True
        spread = cfg.resolve_init_spread(scenario.dt, exact_observations=trace is None)
        tracker = JointTracker(init, model, filter_kind, cfg.hpf, cfg.noise,
                               cfg.params, rng, cfg.body, timestamp=t0,
                               init_spread=spread)
        for t in range(t0 + 1, learn_end + 1):
            obs = {agent_id: _observation_at(scenario, trace, t, agent_id)
                   for agent_id in eligible}
            tracker.step(obs, obs_model)
        available = min(cfg.predict_steps, n - 1 - learn_end)
        predicted = tracker.rollout_means(available)
        for step in range(1, available + 1):
            t = learn_end + step
            if step in errors:
                for agent_id in eligible:
                    truth = tracks[agent_id].get(t)
                    if truth is not None:
                        err = float(np.linalg.norm(predicted[step - 1][agent_id] - truth))
                        errors[step].append(err)

    if not any_trial:
        raise NoEligibleTrials(
            f"no trajectory spans the {cfg.learn_steps}-step learning window")

    rows = [PredictionRow(scenario.name, model, filter_kind, h,
                          float(np.mean(errors[h])) if errors[h] else float("nan"),
                          len(errors[h]))
            for h in cfg.prediction_horizons]
    return PredictionReport(rows)


def run_tracking_protocol(scenario: Scenario, trace: ObservationTrace,
                          model: str = "rvo+", filter_kind: str = "hpf",
                          cfg: Optional[ProtocolConfig] = None, seed: int = 0) -> TrackReport:
    """Replay a trace, classify each track at the configured horizons.

    Trackers start from ground-truth positions at every ``start_stride``-th
    frame and run for at most ``track_steps`` frames on the (noisy,
    occluded) observations; each horizon where the agent's ground truth
    still exists yields one outcome.
    """
    cfg = cfg or ProtocolConfig()
    obs_model = GaussianPositionLikelihood(cfg.sigma_obs)
    tracks = scenario.positions_by_agent()
    n = scenario.n_frames
    rng = np.random.default_rng(seed)
    outcomes: List[TrackOutcome] = []

    for t0 in range(0, n, cfg.start_stride):
        if t0 + 1 >= n:
            continue
        agents = [agent_id for agent_id, series in sorted(tracks.items())
                  if t0 in series and (t0 + 1) in series]
        if len(agents) == 0:
            continue
        init = {}
        for agent_id in agents:
            p0 = tracks[agent_id][t0]
            obs1 = _observation_at(scenario, trace, t0 + 1, agent_id)
            v0 = np.zeros(2) if obs1 is None else (obs1 - p0) / scenario.dt
            init[agent_id] = (p0, v0)
        spread = cfg.resolve_init_spread(scenario.dt, exact_observations=False)
        tracker = JointTracker(init, model, filter_kind, cfg.hpf, cfg.noise,
                               cfg.params, rng, cfg.body, timestamp=t0,
                               init_spread=spread)
        horizon = min(cfg.track_steps, n - 1 - t0)
        for step in range(1, horizon + 1):
            t = t0 + step
            obs = {agent_id: _observation_at(scenario, trace, t, agent_id)
                   for agent_id in agents if t in tracks[agent_id]}
            tracker.step(obs, obs_model)
            if step in cfg.tracking_horizons:
                frame = scenario.frames[t]
                for agent_id in agents:
                    own = tracks[agent_id].get(t)
                    if own is None:
                        continue
                    others = [pos for other_id, pos in frame.entries if other_id != agent_id]
                    kind, dist = classify_track(tracker.mean_position(agent_id), own,
                                                others, cfg.threshold)
                    outcomes.append(TrackOutcome(agent_id, t0, step, kind, dist))

    return TrackReport(outcomes, dataset=scenario.name, model=model, filter_kind=filter_kind)


@dataclass
class SweepResult:
    best: Dict[str, object]
    best_score: float
    rows: List[Tuple[Dict[str, object], float]]

    def to_csv(self, path):
        keys = sorted(self.rows[0][0]) if self.rows else []
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(keys + ["objective"]) + "\n")
            for combo, score in self.rows:
                fh.write(",".join(str(combo[k]) for k in keys) + f",{score:.6f}\n")


def _apply_override(cfg: ProtocolConfig, key: str, value) -> ProtocolConfig:
    if key.startswith("noise."):
        return replace(cfg, noise=replace(cfg.noise, **{key[6:]: value}))
    if key.startswith("rvo."):
        mapping = {"tau": "time_horizon_tau", "dt": "dt", "neighbor_radius": "neighbor_radius"}
        return replace(cfg, params=replace(cfg.params, **{mapping.get(key[4:], key[4:]): value}))
    if key.startswith("hpf."):
        mapping = {"k": "order_k", "m": "particles_m", "pi": "pi"}
        return replace(cfg, hpf=replace(cfg.hpf, **{mapping.get(key[4:], key[4:]): value}))
    if key == "obs.sigma":
        return replace(cfg, sigma_obs=value)
    if hasattr(cfg, key):
        return replace(cfg, **{key: value})
    raise ValueError(f"unknown sweep key '{key}'")


def sweep(grid: Dict[str, Sequence], scenarios: Sequence[Scenario],
          objective: str = "mean_error", base: Optional[ProtocolConfig] = None,
          model: str = "rvo+", filter_kind: str = "hpf", seed: int = 0,
          traces: Optional[Sequence[ObservationTrace]] = None) -> SweepResult:
    """Exhaustive search over dotted config keys.

    ``mean_error`` minimizes the prediction protocol's overall average;
    ``st`` maximizes total successful tracks (requires traces).  Ties keep
    the first combination in enumeration order.
    """
    if objective not in ("mean_error", "st"):
        raise ValueError("objective must be 'mean_error' or 'st'")
    base = base or ProtocolConfig()
    keys = sorted(grid)
    rows: List[Tuple[Dict[str, object], float]] = []
    best = None
    best_score = None
    for values in itertools.product(*(grid[k] for k in keys)):
        combo = dict(zip(keys, values))
        cfg = base
        for k, v in combo.items():
            cfg = _apply_override(cfg, k, v)
        scores = []
        for i, scenario in enumerate(scenarios):
            if objective == "mean_error":
                trace = traces[i] if traces else None
                report = run_prediction_protocol(scenario, model, filter_kind, cfg,
                                                 seed=seed, trace=trace)
                scores.append(report.overall_average())
            else:
                report = run_tracking_protocol(scenario, traces[i], model, filter_kind,
                                               cfg, seed=seed)
                st, _, _ = report.counts()
                scores.append(-float(st))
        score = float(np.mean(scores))
        rows.append((combo, score))
        if best_score is None or score < best_score:
            best_score = score
            best = combo
    return SweepResult(best=best, best_score=best_score, rows=rows)


def min_pairwise_separation(scenario: Scenario) -> float:
    """Smallest center distance between any two agents over all frames."""
    best = np.inf
    for frame in scenario.frames:
        if len(frame.entries) < 2:
            continue
        pts = np.array([pos for _, pos in frame.entries])
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=2))
        d[np.arange(len(pts)), np.arange(len(pts))] = np.inf
        best = min(best, float(d.min()))
    return best
