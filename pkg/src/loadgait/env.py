"""The 40 Hz decision loop around a biped model.

WalkingEnv owns everything between two policy decisions: stepping the
simulator one policy period, advancing the gait clock, measuring speed by
position differencing across the window, scoring the reward, and checking
terminations. Commands may change mid-episode; the clock keeps its
fractional cycle position when the gait parameters change so the feet never
teleport.

Actions are PD setpoints. The env clips them to the mechanical range and
applies them with a first-order hold (the inner loop ramps from the
previous setpoints across the window) so a setpoint change commands a
torque ramp rather than a torque step.

Observations are the simulator's proprioceptive vector with a fixed
element-wise scale so every input is O(1) for the policy network. The scale
is part of the observation definition (a constant linear map), not a learned
normalizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .biped import N_JOINTS, OBS_SIZE, BipedModel, SimState
from .config import RewardConfig
from .gait import ClockState, GaitParams, gait_params_for_speed
from .rewards import RewardBreakdown, TerminationReason, check_termination, compute_reward

COMMAND_LIMIT = 4.0  # m/s, commands clamp into [0, COMMAND_LIMIT]

# Mechanical range of the PD setpoints (hip, knee, hip, knee). Actions
# outside the box drive the plant at the box edge; the raw action still
# feeds the smoothing penalty so saturation is not free.
SETPOINT_LOW = np.array([-1.0, -1.8, -1.0, -1.8])
SETPOINT_HIGH = np.array([1.0, 0.0, 1.0, 0.0])

# [pitch, pitch rate, vx, vz, joints x4, joint rates x4, sin, cos, command]
OBS_SCALE = np.array(
    [1.0, 0.3, 0.5, 0.5,
     1.0, 1.0, 1.0, 1.0,
     0.1, 0.1, 0.1, 0.1,
     1.0, 1.0, 0.25]
)


@dataclass
class EnvStep:
    """Everything one decision step produced."""

    obs: np.ndarray
    reward: float
    breakdown: RewardBreakdown
    reason: TerminationReason
    done: bool


class WalkingEnv:
    """Episodic walking task: track a speed command while keeping the clock.

    `mode` selects the reward flavor: "specialized" adds the box-centering
    term on tray-box models, "general" scores every model with the plain
    walking reward (box-drop termination stays active either way).
    """

    def __init__(self, model: BipedModel, reward_cfg: RewardConfig,
                 mode: str = "specialized"):
        self.model = model
        self.cfg = reward_cfg
        self.mode = mode
        self.dt = model.params.dt_inner * model.params.n_inner
        self.state: SimState | None = None
        self.clock = ClockState(0.0)
        self.gait: GaitParams = gait_params_for_speed(0.0)
        self.command = 0.0
        self.prev_action = np.zeros(N_JOINTS)
        self._applied_setp = np.zeros(N_JOINTS)
        self.last_speed = 0.0
        self.steps = 0
        self.done = False

    # --- episode control ---------------------------------------------------------

    def reset(self, command: float = 0.0, rng=None) -> np.ndarray:
        """Fresh episode from the nominal pose; returns the first observation.

        An rng turns on small pose/rate jitter (training resets); without
        one the start state is the deterministic nominal (evaluation).
        """
        self.state = self.model.initial_state(rng)
        self.command = float(min(COMMAND_LIMIT, max(0.0, command)))
        self.gait = gait_params_for_speed(self.command)
        self.clock = ClockState(0.0)
        self.prev_action = self.state.q[3:7].copy()
        self._applied_setp = self.state.q[3:7].copy()
        self.last_speed = 0.0
        self.steps = 0
        self.done = False
        return self._observe()

    def set_command(self, speed: float) -> None:
        """Change the speed command mid-episode, re-timing the clock in place."""
        new_cmd = float(min(COMMAND_LIMIT, max(0.0, speed)))
        new_gait = gait_params_for_speed(new_cmd)
        self.clock = self.clock.rescaled(self.gait, new_gait)
        self.gait = new_gait
        self.command = new_cmd

    def push(self, force: float, direction: float, duration: float = 0.2) -> None:
        """Arm a pelvis force (N, rad from +x, seconds) starting now."""
        self.state = self.model.apply_impulse(self.state, force, direction, duration)

    def current_obs(self) -> np.ndarray:
        """Observation for the present state (fresh after a command change)."""
        return self._observe()

    # --- stepping ------------------------------------------------------------------

    def step(self, action: np.ndarray) -> EnvStep:
        """Apply joint setpoints for one policy period and score the result."""
        if self.done or self.state is None:
            raise RuntimeError("step() called on a finished episode; reset() first")
        action = np.asarray(action, dtype=np.float64)
        prev = self.state
        setp = np.clip(action, SETPOINT_LOW, SETPOINT_HIGH)
        state = self.model.step(prev, setp, setpoints_from=self._applied_setp)
        self._applied_setp = setp
        self.clock = self.clock.advanced(self.dt, self.gait)
        breakdown = compute_reward(
            state, prev, action, self.prev_action, self.command,
            self.clock, self.gait, self.cfg,
            load_spec=self.model.load_spec, mode=self.mode,
        )
        reason = check_termination(state, breakdown, self.model.load_spec, self.cfg)
        self.state = state
        self.prev_action = action
        self.last_speed = (state.q[0] - prev.q[0]) / (state.time - prev.time)
        self.steps += 1
        self.done = reason is not TerminationReason.NONE
        return EnvStep(
            obs=self._observe(),
            reward=breakdown.total,
            breakdown=breakdown,
            reason=reason,
            done=self.done,
        )

    # --- observation ---------------------------------------------------------------

    def _observe(self) -> np.ndarray:
        raw = self.model.observe(self.state, self.clock, self.gait, self.command)
        return raw * OBS_SCALE


assert OBS_SCALE.shape == (OBS_SIZE,)
