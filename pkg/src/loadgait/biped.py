"""The planar 5-link biped: state container, parameter packing, stepping.

The robot is a torso and two 2-link legs with point feet in the x/z plane,
7 generalized coordinates q = [x, z, pitch, left hip, left knee, right hip,
right knee] (pelvis position, torso pitch CCW from vertical, relative joint
angles; positive hip swings the leg forward, knees flex with negative
angles). An inner loop integrates the coupled biped + load dynamics at
`dt_inner` with a joint PD servo recomputed every inner step; the policy
interacts once per `n_inner` inner steps.

`step` is functional: it returns a new SimState and never mutates its input.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, loads
from .config import (
    CarryPoleSpec,
    DynRandRanges,
    ModelParams,
    PDGains,
    TrayBoxSpec,
    WaterJugSpec,
)
from .gait import ClockState, GaitParams

N_Q = 7
N_JOINTS = 4
JOINT_NAMES = ("left-hip", "left-knee", "right-hip", "right-knee")
OBS_SIZE = 15

# nominal crouch: knee flexion is fixed; the common hip angle is solved so
# the coincident feet sit directly under the supported center of mass
_POSE_KNEE = -0.3


@dataclass
class StepDiag:
    """Averages over the inner-step window that produced a state."""

    foot_normal: np.ndarray = field(default_factory=lambda: np.zeros(2))  # N, mean
    foot_speed: np.ndarray = field(default_factory=lambda: np.zeros(2))   # m/s, mean
    torque_sq: float = 0.0          # mean of summed squared joint torques
    ext_impulse: np.ndarray = field(default_factory=lambda: np.zeros(2))  # N s
    pair_residual: float = 0.0      # worst Newton-pair mismatch in the window
    window: float = 0.0             # seconds covered


@dataclass
class SimState:
    """Full simulator state at one instant (plus last-window diagnostics)."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    time: float = 0.0
    load: loads.LoadState | None = None
    push: tuple[float, float, float] = (0.0, 0.0, -math.inf)  # fx, fz, active-until
    diverged: bool = False
    diag: StepDiag = field(default_factory=StepDiag)

    def copy(self) -> "SimState":
        return dataclasses.replace(
            self,
            q=self.q.copy(),
            qd=self.qd.copy(),
            qdd=self.qdd.copy(),
            load=self.load.copy() if self.load is not None else None,
        )


def pack_biped_params(params: ModelParams, load_spec=None) -> np.ndarray:
    """Kernel parameter vector; a water-jug's rigid body mass rides here."""
    bp = np.zeros(kernels.BP_SIZE)
    bp[kernels.BP_M_TORSO] = params.torso_mass
    bp[kernels.BP_M_LTH] = bp[kernels.BP_M_RTH] = params.thigh_mass
    bp[kernels.BP_M_LSH] = bp[kernels.BP_M_RSH] = params.shank_mass
    bp[kernels.BP_L_TORSO] = params.torso_length
    bp[kernels.BP_L_LTH] = bp[kernels.BP_L_RTH] = params.thigh_length
    bp[kernels.BP_L_LSH] = bp[kernels.BP_L_RSH] = params.shank_length
    bp[kernels.BP_I_TORSO] = params.torso_inertia
    bp[kernels.BP_I_LTH] = bp[kernels.BP_I_RTH] = params.thigh_inertia
    bp[kernels.BP_I_LSH] = bp[kernels.BP_I_RSH] = params.shank_inertia
    bp[kernels.BP_DAMP : kernels.BP_DAMP + 4] = params.joint_damping
    bp[kernels.BP_MU] = params.ground_friction
    bp[kernels.BP_KC] = params.contact_stiffness
    bp[kernels.BP_CC] = params.contact_damping
    bp[kernels.BP_VSLIP] = params.slip_speed
    bp[kernels.BP_G] = params.gravity
    bp[kernels.BP_BOUND] = params.blowup_bound
    if isinstance(load_spec, WaterJugSpec):
        bp[kernels.BP_RIG_M] = load_spec.body_mass
        bp[kernels.BP_RIG_X] = load_spec.mount_x
        bp[kernels.BP_RIG_Z] = load_spec.mount_z
    return bp


def randomize_dynamics(
    params: ModelParams, ranges: DynRandRanges, rng: np.random.Generator
) -> ModelParams:
    """New parameters with damping, masses, and friction scaled by uniform
    draws (fixed draw order: 4 damping, 3 masses, 1 friction). Everything
    else, inertias included, is untouched."""
    d_lo, d_hi = ranges.damping
    m_lo, m_hi = ranges.mass
    f_lo, f_hi = ranges.friction
    damp = tuple(float(d * rng.uniform(d_lo, d_hi)) for d in params.joint_damping)
    m_scale = [rng.uniform(m_lo, m_hi) for _ in range(3)]
    friction = float(params.ground_friction * rng.uniform(f_lo, f_hi))
    return dataclasses.replace(
        params,
        joint_damping=damp,
        torso_mass=float(params.torso_mass * m_scale[0]),
        thigh_mass=float(params.thigh_mass * m_scale[1]),
        shank_mass=float(params.shank_mass * m_scale[2]),
        ground_friction=friction,
    )


class BipedModel:
    """A biped + optional load with packed kernel parameters.

    Instances are cheap to build (per-episode construction after dynamics
    randomization is the normal pattern) and carry no mutable state, so any
    number may step in parallel.
    """

    def __init__(self, params: ModelParams, gains: PDGains, load_spec=None):
        self.params = params
        self.gains = gains
        self.load_spec = load_spec
        self.load_kind = loads.kind_of_spec(load_spec)
        self.bp = pack_biped_params(params, load_spec)
        self.kind_code, self.lp = loads.pack_load_params(load_spec)
        self.kp = np.asarray(gains.kp, dtype=np.float64)
        self.kd = np.asarray(gains.kd, dtype=np.float64)
        self.tau_lim = float(gains.torque_limit)

    # --- poses and construction ------------------------------------------------

    def nominal_pose(self) -> np.ndarray:
        """Parallel-leg crouch with both point feet at one spot, placed
        directly under the supported center of mass (carried load included).

        The pose is balanced but statically unstable: point feet give no
        support polygon, so staying upright requires active control — a
        fixed-setpoint "statue" slowly pitches over.
        """
        p = self.params
        knee = _POSE_KNEE
        m_th, m_sh = p.thigh_mass, p.shank_mass
        m_r = float(self.bp[kernels.BP_RIG_M])
        rig_mx = m_r * float(self.bp[kernels.BP_RIG_X])
        # statically supported load weight and its moment about the pelvis
        spec = self.load_spec
        extra_m, extra_mx = 0.0, 0.0
        if isinstance(spec, TrayBoxSpec):
            extra_m = spec.box_mass
            extra_mx = spec.box_mass * spec.mount_x
        elif isinstance(spec, CarryPoleSpec):
            extra_m = 2.0 * spec.side_mass
            extra_mx = spec.side_mass * (spec.mount_fore_x + spec.mount_aft_x)
        elif isinstance(spec, WaterJugSpec):
            extra_m = spec.slosh_mass
            extra_mx = spec.slosh_mass * spec.mount_x
        total = p.torso_mass + 2.0 * (m_th + m_sh) + m_r + extra_m

        def imbalance(h: float) -> float:
            sin_th = math.sin(h)
            sin_sh = math.sin(h + knee)
            foot_x = p.thigh_length * sin_th + p.shank_length * sin_sh
            com_x = (
                rig_mx + extra_mx
                + m_th * p.thigh_length * sin_th
                + 2.0 * m_sh * (p.thigh_length * sin_th
                                + 0.5 * p.shank_length * sin_sh)
            ) / total
            return foot_x - com_x

        lo, hi = -0.5, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if imbalance(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        hip = 0.5 * (lo + hi)
        q = np.zeros(N_Q)
        q[3] = q[5] = hip
        q[4] = q[6] = knee
        q[1] = p.thigh_length * math.cos(hip) + p.shank_length * math.cos(hip + knee)
        return q

    def initial_state(self, rng: np.random.Generator | None = None) -> SimState:
        """Nominal crouch, optionally jittered (training-style resets).

        With an rng, pitch/joint angles and rates get small perturbations and
        the pelvis height is re-solved so the lower foot still touches the
        ground exactly. Without one the state is the deterministic nominal.
        """
        q = self.nominal_pose()
        qd = np.zeros(N_Q)
        if rng is not None:
            p = self.params
            q[2] += rng.uniform(-0.05, 0.05)
            q[3:7] += rng.uniform(-0.08, 0.08, size=4)
            q[1] = max(
                p.thigh_length * math.cos(q[2] + q[3])
                + p.shank_length * math.cos(q[2] + q[3] + q[4]),
                p.thigh_length * math.cos(q[2] + q[5])
                + p.shank_length * math.cos(q[2] + q[5] + q[6]),
            )
            qd[0] = rng.uniform(-0.2, 0.2)
            qd[2:7] = rng.uniform(-0.15, 0.15, size=5)
        load = loads.initial_load_state(self.load_spec, self.params, q)
        return SimState(q=q, qd=qd, qdd=np.zeros(N_Q), load=load)

    # --- stepping ---------------------------------------------------------------

    def step(
        self,
        state: SimState,
        setpoints: np.ndarray,
        n_inner: int | None = None,
        pinned: bool = False,
        setpoints_from: np.ndarray | None = None,
    ) -> SimState:
        """Advance one policy period (n_inner inner steps); returns a new state.

        `setpoints_from` turns on a first-order hold: the PD targets ramp
        linearly from it to `setpoints` across the window. Left as None the
        targets are held constant (step change), as every direct caller of
        the model expects.
        """
        setp = np.asarray(setpoints, dtype=np.float64)
        if setp.shape != (N_JOINTS,):
            raise ValueError(f"expected {N_JOINTS} setpoints, got shape {setp.shape}")
        setp0 = setp if setpoints_from is None else np.asarray(
            setpoints_from, dtype=np.float64)
        if setp0.shape != (N_JOINTS,):
            raise ValueError(f"expected {N_JOINTS} ramp-start setpoints, "
                             f"got shape {setp0.shape}")
        n = self.params.n_inner if n_inner is None else n_inner
        q = state.q.copy()
        qd = state.qd.copy()
        qdd = state.qdd.copy()
        if state.load is not None:
            lq, lqd = state.load.lq.copy(), state.load.lqd.copy()
        else:
            lq, lqd = np.zeros(2), np.zeros(2)
        fx, fz, until = state.push
        out = kernels.run_steps(
            q, qd, qdd, lq, lqd, self.kind_code, self.lp, self.bp,
            self.kp, self.kd, self.tau_lim, setp, setp0,
            state.time, fx, fz, until, self.params.dt_inner, n, pinned,
        )
        n_done = max(1, round((out[kernels.OUT_TIME] - state.time) / self.params.dt_inner))
        diag = StepDiag(
            foot_normal=np.array(
                [out[kernels.OUT_LFOOT_N], out[kernels.OUT_RFOOT_N]]
            ) / n_done,
            foot_speed=np.array(
                [out[kernels.OUT_LFOOT_SPD], out[kernels.OUT_RFOOT_SPD]]
            ) / n_done,
            torque_sq=float(out[kernels.OUT_TORQUE_SQ]) / n_done,
            ext_impulse=np.array([out[kernels.OUT_EXT_IX], out[kernels.OUT_EXT_IZ]]),
            pair_residual=float(out[kernels.OUT_PAIR_ERR]),
            window=float(out[kernels.OUT_TIME] - state.time),
        )
        load = None
        if state.load is not None:
            load = loads.LoadState(state.load.kind, lq, lqd)
        return SimState(
            q=q, qd=qd, qdd=qdd,
            time=float(out[kernels.OUT_TIME]),
            load=load,
            push=state.push,
            diverged=bool(out[kernels.OUT_DIVERGED]),
            diag=diag,
        )

    def apply_impulse(
        self, state: SimState, force: float, direction: float, duration: float
    ) -> SimState:
        """State with a constant pelvis force armed for `duration` seconds."""
        if duration <= 0.0:
            raise ValueError(f"duration must be positive, got {duration}")
        new = state.copy()
        new.push = (
            force * math.cos(direction),
            force * math.sin(direction),
            state.time + duration,
        )
        return new

    # --- observation -------------------------------------------------------------

    def observe(
        self, state: SimState, clock: ClockState, gait: GaitParams, command: float
    ) -> np.ndarray:
        """Proprioceptive observation: torso pitch and rates, pelvis velocity,
        joint angles and rates, the clock as sine/cosine, and the commanded
        speed. Never reads the load."""
        theta = 2.0 * math.pi * (clock.phase % gait.cycle_time) / gait.cycle_time
        obs = np.empty(OBS_SIZE)
        obs[0] = state.q[2]
        obs[1] = state.qd[2]
        obs[2] = state.qd[0]
        obs[3] = state.qd[1]
        obs[4:8] = state.q[3:7]
        obs[8:12] = state.qd[3:7]
        obs[12] = math.sin(theta)
        obs[13] = math.cos(theta)
        obs[14] = command
        return obs

    # --- diagnostics ---------------------------------------------------------------

    def foot_states(self, state: SimState) -> np.ndarray:
        """(lx, lz, lvx, lvz, rx, rz, rvx, rvz) of the point feet."""
        return kernels.foot_kinematics(state.q, state.qd, self.bp)

    def foot_forces(self, state: SimState) -> np.ndarray:
        """Instantaneous ground reaction (lN, lFt, rN, rFt)."""
        return kernels.foot_contact_forces(state.q, state.qd, self.bp)

    def mechanical_energy(self, state: SimState) -> float:
        """Biped (+ rigid attached mass) kinetic plus potential energy."""
        return float(kernels.mechanical_energy(state.q, state.qd, self.bp))

    def mass_matrix(self, state: SimState) -> np.ndarray:
        return kernels.mass_matrix(state.q, self.bp)

    def system_momentum(self, state: SimState) -> np.ndarray:
        """World linear momentum of biped + load (slosh counted per its
        gravity-free carrier convention)."""
        px, pz = kernels.biped_momentum(state.q, state.qd, self.bp)
        if state.load is not None:
            lpx, lpz = loads.load_momentum(
                state.load, self.load_spec, state.q, state.qd, self.bp
            )
            px += lpx
            pz += lpz
        return np.array([px, pz])

    def gravitating_mass(self) -> float:
        """Total mass whose weight shows up in momentum bookkeeping."""
        p = self.params
        m = p.torso_mass + 2.0 * (p.thigh_mass + p.shank_mass)
        m += self.bp[kernels.BP_RIG_M]
        m += loads.gravitating_load_mass(self.load_spec)
        return float(m)


def build_biped(
    params: ModelParams | None = None,
    gains: PDGains | None = None,
    load_spec=None,
) -> tuple[BipedModel, SimState]:
    """Convenience constructor: model plus its settled initial state."""
    model = BipedModel(params or ModelParams(), gains or PDGains(), load_spec)
    return model, model.initial_state()
