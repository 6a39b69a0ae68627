"""Reward and termination rules for clock-driven walking.

Every error feeds a kernel exp(-alpha * err^2) in (0, 1], so each component
is bounded and the weighted total is bounded by the sum of active weights.
The foot term uses the gait clock: during a foot's swing window its ground
reaction force is penalized (the foot should be in the air), during stance
its speed is penalized (the foot should be planted); the two weightings sum
to one, so a foot doing the right thing at the right time scores 1.

Two reward modes exist: "specialized" adds a box-centering term when the
model carries a tray box; "general" uses the plain walking reward on every
model. Dropping the box terminates the episode in BOTH modes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import loads
from .biped import SimState
from .config import RewardConfig, TrayBoxSpec
from .gait import ClockState, GaitParams, clock_weight

REWARD_MODES = ("specialized", "general")


class TerminationReason(enum.Enum):
    """Why an episode step ended the episode (or NONE). Exactly one per step."""

    NONE = "none"
    FELL = "fell"
    REWARD_FLOOR = "reward-floor"
    BOX_DROPPED = "box-dropped"
    DIVERGENCE = "divergence"


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-component kernel values (each in (0, 1]) and the weighted total.

    `box` is None whenever the box term is inactive (general mode, or no tray
    box on the model); `max_total` is the sum of the weights actually active,
    i.e. the total a perfect step would score.
    """

    velocity: float
    orientation: float
    accel: float
    torque: float
    action_diff: float
    foot: float
    box: float | None
    total: float
    max_total: float


def _kernel(alpha: float, err_sq: float) -> float:
    return math.exp(-alpha * err_sq)


def compute_reward(
    state: SimState,
    prev_state: SimState,
    action: np.ndarray,
    prev_action: np.ndarray,
    command: float,
    clock: ClockState,
    gait: GaitParams,
    cfg: RewardConfig,
    load_spec=None,
    mode: str = "specialized",
) -> RewardBreakdown:
    """Reward for the policy step that took `prev_state` to `state`.

    Speed and pelvis acceleration are measured by differencing across the
    step window (less noisy than instantaneous samples at the inner rate);
    foot forces, foot speeds, and torques come from the window averages the
    simulator accumulated. The clock is evaluated at the provided phase,
    which by convention is the clock at the END of the step window.
    """
    if mode not in REWARD_MODES:
        raise ValueError(f"mode must be one of {REWARD_MODES}, got {mode!r}")
    dt_w = state.time - prev_state.time
    if dt_w <= 0.0:
        raise ValueError(f"state must postdate prev_state (dt={dt_w})")

    v_actual = (state.q[0] - prev_state.q[0]) / dt_w
    velocity = _kernel(cfg.alpha_velocity, (v_actual - command) ** 2)

    orientation = _kernel(cfg.alpha_orientation, float(state.q[2]) ** 2)

    ax = (state.qd[0] - prev_state.qd[0]) / dt_w
    az = (state.qd[1] - prev_state.qd[1]) / dt_w
    accel = _kernel(cfg.alpha_accel, ax * ax + az * az)

    torque = _kernel(cfg.alpha_torque, float(state.diag.torque_sq))

    delta = np.asarray(action, dtype=float) - np.asarray(prev_action, dtype=float)
    action_diff = _kernel(cfg.alpha_action, float(np.dot(delta, delta)))

    foot = 0.0
    for i, side in enumerate(("left", "right")):
        sw = clock_weight(clock.phase, gait, side)
        force = float(state.diag.foot_normal[i])
        speed = float(state.diag.foot_speed[i])
        foot += sw * _kernel(cfg.alpha_foot_force, force * force)
        foot += (1.0 - sw) * _kernel(cfg.alpha_foot_speed, speed * speed)
    foot *= 0.5

    box: float | None = None
    if mode == "specialized" and isinstance(load_spec, TrayBoxSpec):
        d = loads.box_tray_distance(state.load, load_spec)
        box = _kernel(cfg.alpha_box, d * d)

    w_each = cfg.w_smooth / 3.0
    total = (
        cfg.w_velocity * velocity
        + cfg.w_orientation * orientation
        + w_each * (accel + torque + action_diff)
        + cfg.w_foot * foot
    )
    max_total = cfg.w_velocity + cfg.w_orientation + cfg.w_smooth + cfg.w_foot
    if box is not None:
        total += cfg.w_box * box
        max_total += cfg.w_box
    return RewardBreakdown(
        velocity=velocity,
        orientation=orientation,
        accel=accel,
        torque=torque,
        action_diff=action_diff,
        foot=foot,
        box=box,
        total=total,
        max_total=max_total,
    )


def check_termination(
    state: SimState,
    breakdown: RewardBreakdown,
    load_spec,
    cfg: RewardConfig,
) -> TerminationReason:
    """Episode-ending condition for the step that produced `state`.

    Checked in severity order: numerical divergence, torso below the height
    floor, box fallen off the tray (active regardless of reward mode), and
    the per-step reward floor (a fraction of the maximum achievable total).
    The step that trips a condition still banks its reward; the caller ends
    the episode afterwards.
    """
    if state.diverged:
        return TerminationReason.DIVERGENCE
    if state.q[1] < cfg.height_floor:
        return TerminationReason.FELL
    if isinstance(load_spec, TrayBoxSpec) and state.load is not None:
        if loads.box_dropped(state.load, load_spec):
            return TerminationReason.BOX_DROPPED
    if breakdown.total < cfg.reward_floor_frac * breakdown.max_total:
        return TerminationReason.REWARD_FLOOR
    return TerminationReason.NONE
