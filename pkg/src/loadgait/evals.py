"""The evaluation battery: command-set pass rate, push line search, max speed,
phase portraits.

All trials run the policy deterministically (mean action, no exploration
noise) on NOMINAL dynamics — randomization is a training device, evaluation
measures the learned controller. Every protocol derives its randomness from
(master seed, protocol code, trial index), so reports are identical for any
thread count; LOADGAIT_THREADS caps the trial pool.

The planar model has no heading, so command sets carry four speed commands
in place of the original speed + orientation mix; every report carries this
deviation in `protocol_notes`.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biped import JOINT_NAMES, BipedModel
from .config import EvalConfig, RunConfig
from .env import WalkingEnv
from .policy import RecurrentActorCritic

# protocol codes for seed derivation
_PC_PASS = 1
_PC_PUSH = 2
_PC_SPEED = 3
_PC_PORTRAIT = 4

PLANAR_NOTE = ("planar model: command sets use 4 speed commands; orientation "
               "commands have no sagittal-plane counterpart")
NOMINAL_NOTE = "trials run nominal dynamics with deterministic (mean) actions"


def resolve_threads() -> int:
    """Worker cap from LOADGAIT_THREADS (default 1; invalid values rejected)."""
    raw = os.environ.get("LOADGAIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"LOADGAIT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"LOADGAIT_THREADS must be >= 1, got {n}")
    return n


def _run_indexed(fn, n: int):
    """Map fn over range(n), possibly threaded, ALWAYS merged in index order."""
    threads = resolve_threads()
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# --- command sets -----------------------------------------------------------------------


@dataclass(frozen=True)
class CommandSet:
    """Speed commands and the times they apply (every command_period seconds)."""

    times: tuple[float, ...]
    speeds: tuple[float, ...]


def sample_command_set(rng: np.random.Generator, ecfg: EvalConfig) -> CommandSet:
    """First speed uniform in the command range; each following speed moves by
    a delta of magnitude uniform in [delta_min, delta_max] with random sign,
    resampled until the result stays inside [speed_min, speed_max]."""
    speeds = [float(rng.uniform(ecfg.speed_min, ecfg.speed_max))]
    while len(speeds) < ecfg.commands_per_trial:
        prev = speeds[-1]
        while True:
            delta = float(rng.uniform(ecfg.delta_min, ecfg.delta_max))
            if rng.uniform() < 0.5:
                delta = -delta
            nxt = prev + delta
            if ecfg.speed_min <= nxt <= ecfg.speed_max:
                speeds.append(nxt)
                break
    times = tuple(i * ecfg.command_period for i in range(len(speeds)))
    return CommandSet(times=times, speeds=tuple(speeds))


# --- shared trial machinery ----------------------------------------------------------------


@dataclass
class TrialStats:
    """One command-set trial: survival plus accumulated speed error."""

    passed: bool
    err_sum: float
    steps: int


def _mean_step(policy, env, obs, hidden):
    action, hidden = policy.mean_action(obs, hidden)
    return env.step(action), hidden


def _make_env(policy, cfg: RunConfig, kind: str) -> WalkingEnv:
    spec = cfg.loads.spec_for(kind)
    model = BipedModel(cfg.model, cfg.gains, spec)
    # the general walking reward scores termination floors for every policy,
    # keeping the survival metric uniform across reward modes
    return WalkingEnv(model, cfg.reward, mode="general")


def run_command_trial(policy, env: WalkingEnv, commands: CommandSet,
                      period_s: float) -> TrialStats:
    """Run one command sequence, each command held period_s seconds; fail on
    any termination."""
    n_cmd = len(commands.speeds)
    period_steps = max(1, round(period_s / env.dt))
    total_steps = period_steps * n_cmd
    obs = env.reset(commands.speeds[0])
    hidden = policy.zero_hidden()
    err_sum = 0.0
    for t in range(total_steps):
        if t > 0 and t % period_steps == 0:
            env.set_command(commands.speeds[t // period_steps])
            obs = env.current_obs()
        res, hidden = _mean_step(policy, env, obs, hidden)
        obs = res.obs
        err_sum += abs(env.last_speed - env.command)
        if res.done:
            return TrialStats(passed=False, err_sum=err_sum, steps=t + 1)
    return TrialStats(passed=True, err_sum=err_sum, steps=total_steps)


def _settle(policy, env: WalkingEnv, seconds: float):
    """Walk in place at 0 m/s; returns (obs, hidden, survived)."""
    obs = env.reset(0.0)
    hidden = policy.zero_hidden()
    steps = round(seconds / env.dt)
    for _ in range(steps):
        res, hidden = _mean_step(policy, env, obs, hidden)
        obs = res.obs
        if res.done:
            return obs, hidden, False
    return obs, hidden, True


# --- pass rate and speed error ----------------------------------------------------------------


def pass_rate(policy, cfg: RunConfig, kind: str, n_trials: int,
              master_seed: int) -> tuple[float, list[TrialStats]]:
    """Fraction of random command sets survived, plus per-trial stats."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")

    def one(i: int) -> TrialStats:
        rng = np.random.default_rng(
            np.random.SeedSequence([master_seed, _PC_PASS, i]))
        commands = sample_command_set(rng, cfg.eval)
        env = _make_env(policy, cfg, kind)
        return run_command_trial(policy, env, commands, cfg.eval.command_period)

    stats = _run_indexed(one, n_trials)
    frac = sum(1 for s in stats if s.passed) / n_trials
    return frac, stats


def avg_speed_error(fraction: float, stats: list[TrialStats],
                    gate: float = 0.5) -> float | None:
    """Mean |v - v_cmd| over all steps of surviving trials; None below the
    pass-rate gate (an unreliable walker's tracking error is meaningless)."""
    if fraction < gate:
        return None
    surviving = [s for s in stats if s.passed]
    total = sum(s.steps for s in surviving)
    if total == 0:
        return None
    return sum(s.err_sum for s in surviving) / total


# --- push line search ----------------------------------------------------------------------


@dataclass
class PushDirection:
    """Line-search outcome for one push direction."""

    direction_deg: float
    max_force: float | None       # largest survived force; None = failed at start
    below_start: bool             # failed the first tested force
    non_monotone: bool            # a failure occurred below the recorded max
    start_force: float = 50.0     # first force of the line search
    tested: dict[float, bool] = field(default_factory=dict)

    def contribution(self, ecfg: EvalConfig) -> float:
        return self.max_force if self.max_force is not None \
            else ecfg.below_threshold_force


def _survives_push(policy, cfg: RunConfig, kind: str, force: float,
                   direction_rad: float) -> bool:
    env = _make_env(policy, cfg, kind)
    obs, hidden, ok = _settle(policy, env, cfg.eval.settle_seconds)
    if not ok:
        return False
    env.push(force, direction_rad, cfg.eval.push_duration)
    steps = round((cfg.eval.push_duration + cfg.eval.push_recovery) / env.dt)
    for _ in range(steps):
        res, hidden = _mean_step(policy, env, obs, hidden)
        obs = res.obs
        if res.done:
            return False
    return True


def push_direction_search(policy, cfg: RunConfig, kind: str,
                          direction_deg: float,
                          force_cap: float = 500.0) -> PushDirection:
    """Ascending force line search with a 2-failure overshoot probe, so a
    policy surviving a LARGER force than one it failed is reported as
    non-monotone instead of being truncated at the first failure."""
    ecfg = cfg.eval
    rad = math.radians(direction_deg)
    tested: dict[float, bool] = {}
    force = ecfg.push_start
    consecutive_failures = 0
    while force <= force_cap and consecutive_failures < 2:
        ok = _survives_push(policy, cfg, kind, force, rad)
        tested[force] = ok
        consecutive_failures = 0 if ok else consecutive_failures + 1
        force += ecfg.push_step
    survived = [f for f, ok in tested.items() if ok]
    if not survived:
        # record "< start"; the convention's re-test one step below the start
        tested[ecfg.push_start - ecfg.push_step] = _survives_push(
            policy, cfg, kind, ecfg.push_start - ecfg.push_step, rad)
        return PushDirection(direction_deg, None, True, False,
                             ecfg.push_start, tested)
    max_force = max(survived)
    non_monotone = any(not ok for f, ok in tested.items() if f < max_force)
    return PushDirection(direction_deg, max_force, False, non_monotone,
                         ecfg.push_start, tested)


def push_force_search(policy, cfg: RunConfig, kind: str,
                      master_seed: int) -> tuple[list[PushDirection], float, bool]:
    """All directions (every 360/n degrees); returns per-direction results,
    the average contribution, and whether any direction was non-monotone."""
    n = cfg.eval.push_directions
    results = _run_indexed(
        lambda i: push_direction_search(policy, cfg, kind, i * 360.0 / n), n)
    average = sum(r.contribution(cfg.eval) for r in results) / n
    return results, average, any(r.non_monotone for r in results)


# --- max speed -----------------------------------------------------------------------------


def max_speed(policy, cfg: RunConfig, kind: str) -> float:
    """Largest grid speed fully held: ascending 0.1 m/s grid, linear command
    ramp into each point, then a hold; the first termination ends the sweep."""
    ecfg = cfg.eval
    env = _make_env(policy, cfg, kind)
    obs, hidden, ok = _settle(policy, env, ecfg.settle_seconds)
    if not ok:
        return 0.0
    grid = ecfg.max_speed_grid
    best = 0.0
    target = grid
    prev = 0.0
    while target <= 4.0 + 1e-9:
        ramp_steps = round(ecfg.max_speed_ramp / env.dt)
        hold_steps = round(ecfg.max_speed_hold / env.dt)
        for t in range(ramp_steps):
            frac = (t + 1) / ramp_steps
            env.set_command(prev + frac * (target - prev))
            obs = env.current_obs()
            res, hidden = _mean_step(policy, env, obs, hidden)
            obs = res.obs
            if res.done:
                return best
        for _ in range(hold_steps):
            res, hidden = _mean_step(policy, env, obs, hidden)
            obs = res.obs
            if res.done:
                return best
        best = target
        prev = target
        target = round(target + grid, 10)
    return best


# --- phase portraits --------------------------------------------------------------------------


@dataclass
class PhasePortrait:
    """(angle, angular velocity) series for one joint at the policy rate."""

    joint: str
    times: np.ndarray
    angles: np.ndarray
    rates: np.ndarray


def extract_portrait(times, qs, qds, joint: str) -> PhasePortrait:
    """Portrait from recorded generalized coordinates (rows per policy step)."""
    if joint not in JOINT_NAMES:
        raise ValueError(f"unknown joint {joint!r}; valid joints: {JOINT_NAMES}")
    idx = 3 + JOINT_NAMES.index(joint)
    qs = np.asarray(qs)
    qds = np.asarray(qds)
    return PhasePortrait(
        joint=joint,
        times=np.asarray(times, dtype=float),
        angles=qs[:, idx].astype(float),
        rates=qds[:, idx].astype(float),
    )


def run_portrait(policy, cfg: RunConfig, kind: str, joint: str,
                 seconds: float, command: float = 1.0) -> PhasePortrait:
    """Walk at a constant command and record the joint's phase portrait.

    The command trace is constant, so two checkpoints produce directly
    comparable portraits. The recording stops early if the policy falls.
    """
    if joint not in JOINT_NAMES:
        raise ValueError(f"unknown joint {joint!r}; valid joints: {JOINT_NAMES}")
    env = _make_env(policy, cfg, kind)
    obs = env.reset(command)
    hidden = policy.zero_hidden()
    steps = round(seconds / env.dt)
    times, qs, qds = [], [], []
    for _ in range(steps):
        res, hidden = _mean_step(policy, env, obs, hidden)
        obs = res.obs
        times.append(env.state.time)
        qs.append(env.state.q.copy())
        qds.append(env.state.qd.copy())
        if res.done:
            break
    return extract_portrait(times, qs, qds, joint)


def write_portrait_csv(portrait: PhasePortrait, path) -> None:
    path = Path(path)
    lines = ["time,angle_rad,ang_vel_rad_s"]
    for t, a, w in zip(portrait.times, portrait.angles, portrait.rates):
        lines.append(f"{float(t)!r},{float(a)!r},{float(w)!r}")
    path.write_text("\n".join(lines) + "\n")


# --- reports ------------------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Everything one evaluation produced, JSON- and CSV-serializable."""

    load_kind: str
    trials: int
    seed: int
    protocols: tuple[str, ...]
    pass_rate: float | None = None
    avg_speed_error: float | None = None
    push_directions: list[PushDirection] | None = None
    push_average: float | None = None
    push_non_monotone: bool = False
    max_speed: float | None = None
    protocol_notes: tuple[str, ...] = (PLANAR_NOTE, NOMINAL_NOTE)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.push_directions is not None:
            d["push_directions"] = [
                {
                    "direction_deg": p.direction_deg,
                    "max_force": p.max_force if not p.below_start
                    else f"< {p.start_force:.0f} N",
                    "non_monotone": p.non_monotone,
                }
                for p in self.push_directions
            ]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary_csv(self) -> str:
        rows = ["metric,value"]
        rows.append(f"load_kind,{self.load_kind}")
        rows.append(f"trials,{self.trials}")
        if self.pass_rate is not None:
            rows.append(f"pass_rate,{self.pass_rate!r}")
            rows.append(f"avg_speed_error,"
                        f"{'' if self.avg_speed_error is None else repr(self.avg_speed_error)}")
        if self.push_average is not None:
            rows.append(f"push_average_n,{self.push_average!r}")
            rows.append(f"push_non_monotone,{self.push_non_monotone}")
        if self.max_speed is not None:
            rows.append(f"max_speed,{self.max_speed!r}")
        return "\n".join(rows) + "\n"


PROTOCOLS = ("pass-rate", "push", "max-speed")


def evaluate(policy: RecurrentActorCritic, cfg: RunConfig, kind: str,
             protocols=PROTOCOLS, n_trials: int | None = None,
             master_seed: int | None = None) -> EvalReport:
    """Run the requested protocols on one load kind and assemble the report."""
    for p in protocols:
        if p not in PROTOCOLS:
            raise ValueError(f"unknown protocol {p!r}; valid: {PROTOCOLS}")
    n_trials = cfg.eval.trials if n_trials is None else n_trials
    master_seed = cfg.seed if master_seed is None else master_seed
    report = EvalReport(load_kind=kind, trials=n_trials, seed=master_seed,
                        protocols=tuple(protocols))
    if "pass-rate" in protocols:
        frac, stats = pass_rate(policy, cfg, kind, n_trials, master_seed)
        report.pass_rate = frac
        report.avg_speed_error = avg_speed_error(frac, stats)
    if "push" in protocols:
        dirs, avg, flag = push_force_search(policy, cfg, kind, master_seed)
        report.push_directions = dirs
        report.push_average = avg
        report.push_non_monotone = flag
    if "max-speed" in protocols:
        report.max_speed = max_speed(policy, cfg, kind)
    return report
