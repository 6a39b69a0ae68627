"""Dynamic load models coupled to the biped torso by force exchange.

Four load kinds, each a small subsystem with its own coordinates that is
driven by torso motion and pushes back with an equal-and-opposite wrench:

- tray-box:   a box sliding with friction on a torso-fixed tray; it leaves
              support beyond the tray half-width and is "dropped" once it
              falls a threshold below the tray plane.
- cart:       a ground-rolling point-mass cart towed from the pelvis by a
              tension-only rope (stiff unilateral spring-damper).
- carry-pole: two hanging point masses on massless rods mounted fore and
              aft of the torso; free to swing in the sagittal plane.
- water-jug:  a sloshing-liquid analog: the non-sloshing jug body rides as
              rigid attached mass, while a spring-mounted deviation mass
              exchanges only its spring/damper force (zero at rest).

States are stored so that queries like "has the box dropped" need no torso
state: the box lives in tray-frame coordinates (tangential s, normal n),
pendulums as world-referenced rod angles, slosh as equilibrium-relative
displacement, and the cart as its ground position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import CarryPoleSpec, CartSpec, ModelParams, TrayBoxSpec, WaterJugSpec

KIND_CODES = {
    "unloaded": kernels.LK_NONE,
    "tray-box": kernels.LK_TRAYBOX,
    "cart": kernels.LK_CART,
    "carry-pole": kernels.LK_POLE,
    "water-jug": kernels.LK_JUG,
}

_SPEC_KINDS = {
    TrayBoxSpec: "tray-box",
    CartSpec: "cart",
    CarryPoleSpec: "carry-pole",
    WaterJugSpec: "water-jug",
}


def kind_of_spec(spec) -> str:
    """Load kind string for a spec object (None -> 'unloaded')."""
    if spec is None:
        return "unloaded"
    try:
        return _SPEC_KINDS[type(spec)]
    except KeyError:
        raise TypeError(f"not a load spec: {type(spec).__name__}") from None


@dataclass
class LoadState:
    """Internal coordinates and velocities of a load subsystem.

    Layout of (lq, lqd) by kind:
      tray-box:   lq = (s, n) box position in tray frame, lqd = relative
                  velocity in tray axes
      cart:       lq = (cart x, 0), lqd = (cart speed, 0)
      carry-pole: lq = (fore rod angle, aft rod angle) from straight down,
                  lqd = angular rates
      water-jug:  lq = slosh displacement (x, z) from equilibrium, lqd = rates
    """

    kind: str
    lq: np.ndarray = field(default_factory=lambda: np.zeros(2))
    lqd: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def copy(self) -> "LoadState":
        return LoadState(self.kind, self.lq.copy(), self.lqd.copy())


def pack_load_params(spec) -> tuple[int, np.ndarray]:
    """Kernel (kind code, parameter vector) for a load spec."""
    lp = np.zeros(kernels.LP_SIZE)
    if spec is None:
        return kernels.LK_NONE, lp
    kind = kind_of_spec(spec)
    if kind == "tray-box":
        lp[0] = spec.box_mass
        lp[1] = spec.half_width
        lp[2] = spec.friction
        lp[3] = spec.mount_x
        lp[4] = spec.mount_z
        lp[5] = spec.drop_threshold
    elif kind == "cart":
        lp[0] = spec.cart_mass
        lp[1] = spec.rope_rest_length
        lp[2] = spec.friction
        lp[3] = spec.rope_stiffness
        lp[4] = spec.rope_damping
    elif kind == "carry-pole":
        lp[0] = spec.side_mass
        lp[1] = spec.rope_length
        lp[2] = spec.mount_fore_x
        lp[3] = spec.mount_fore_z
        lp[4] = spec.mount_aft_x
        lp[5] = spec.mount_aft_z
    else:  # water-jug
        lp[0] = spec.slosh_mass
        lp[1] = spec.stiffness_x
        lp[2] = spec.stiffness_z
        lp[3] = spec.damping_x
        lp[4] = spec.damping_z
        lp[5] = spec.travel_limit
        lp[6] = spec.stop_stiffness
        lp[7] = spec.mount_x
        lp[8] = spec.mount_z
    return KIND_CODES[kind], lp


def initial_load_state(spec, params: ModelParams, q0: np.ndarray) -> LoadState | None:
    """Load state at episode start, settled against the initial biped pose.

    The box rests at its static penalty penetration on the tray center; the
    cart sits behind the pelvis at exactly rope-taut distance (directly below
    slack if the rope is shorter than the pelvis is high); pendulums hang
    straight down; slosh sits at equilibrium.
    """
    if spec is None:
        return None
    kind = kind_of_spec(spec)
    state = LoadState(kind)
    if kind == "tray-box":
        state.lq[1] = -spec.box_mass * params.gravity / params.contact_stiffness
    elif kind == "cart":
        rest2 = spec.rope_rest_length**2 - q0[1] ** 2
        offset = -np.sqrt(rest2) if rest2 > 0.0 else 0.0
        state.lq[0] = q0[0] + offset
    return state


def load_coupling(
    load: LoadState,
    spec,
    q: np.ndarray,
    qd: np.ndarray,
    qdd: np.ndarray,
    params: ModelParams,
    bp: np.ndarray,
    dt: float | None = None,
):
    """One inner-step advance of a load driven by the given torso kinematics.

    Returns (new LoadState, wrench on torso (fx, fz, torque about pelvis),
    net exchanged force on the load (fx, fz)). The wrench and load force are
    computed by separate expressions and must be equal-and-opposite; the
    inner loop accumulates their residual as a runtime check.
    """
    if load.kind != kind_of_spec(spec):
        raise ValueError(f"load state kind {load.kind!r} != spec kind {kind_of_spec(spec)!r}")
    dt = params.dt_inner if dt is None else dt
    code, lp = pack_load_params(spec)
    lq = load.lq.copy()
    lqd = load.lqd.copy()
    lf = kernels.load_forces(q, qd, qdd, lq, lqd, code, lp, bp)
    if code == kernels.LK_TRAYBOX:
        # integrate the box in world coordinates, then express it back in the
        # (here: unchanged) tray frame
        g = params.gravity
        m_b = lp[0]
        bvx = lf[kernels.LF_A2] + dt * (lf[kernels.LF_FLX] / m_b)
        bvz = lf[kernels.LF_A3] + dt * (lf[kernels.LF_FLZ] / m_b - g)
        bx = lf[kernels.LF_A0] + dt * bvx
        bz = lf[kernels.LF_A1] + dt * bvz
        c, s = np.cos(q[2]), np.sin(q[2])
        mx, mz = lp[3], lp[4]
        ox = q[0] + c * mx - s * mz
        oz = q[1] + s * mx + c * mz
        vox = qd[0] + qd[2] * (-s * mx - c * mz)
        voz = qd[1] + qd[2] * (c * mx - s * mz)
        relx, relz = bx - ox, bz - oz
        lq[0] = c * relx + s * relz
        lq[1] = -s * relx + c * relz
        vrx = bvx - vox + qd[2] * relz
        vrz = bvz - voz - qd[2] * relx
        lqd[0] = c * vrx + s * vrz
        lqd[1] = -s * vrx + c * vrz
    else:
        kernels.advance_load(lq, lqd, code, lp, lf, dt)
    wrench = (lf[kernels.LF_WFX], lf[kernels.LF_WFZ], lf[kernels.LF_WTAU])
    on_load = (lf[kernels.LF_FLX], lf[kernels.LF_FLZ])
    return LoadState(load.kind, lq, lqd), wrench, on_load


def box_dropped(load: LoadState, spec: TrayBoxSpec) -> bool:
    """True iff the box is strictly more than the drop threshold below the
    tray plane."""
    if load.kind != "tray-box":
        raise ValueError(f"box_dropped queried on {load.kind!r} load")
    return load.lq[1] < -spec.drop_threshold


def box_tray_distance(load: LoadState, spec: TrayBoxSpec) -> float:
    """Distance from the box to the middle of the tray (tray-frame norm)."""
    if load.kind != "tray-box":
        raise ValueError(f"box_tray_distance queried on {load.kind!r} load")
    return float(np.hypot(load.lq[0], load.lq[1]))


def load_momentum(load: LoadState, spec, q, qd, bp) -> tuple[float, float]:
    """World linear momentum carried by the load's masses.

    The slosh deviation mass is counted as a gravity-free momentum carrier
    m (v_mount + deviation rate) per its equilibrium-relative convention;
    the rigid jug body is already inside the biped's momentum.
    """
    if spec is None:
        return 0.0, 0.0
    kind = kind_of_spec(spec)
    c, s = np.cos(q[2]), np.sin(q[2])
    if kind == "tray-box":
        mx, mz = spec.mount_x, spec.mount_z
        vox = qd[0] + qd[2] * (-s * mx - c * mz)
        voz = qd[1] + qd[2] * (c * mx - s * mz)
        rwx = c * load.lq[0] - s * load.lq[1]
        rwz = s * load.lq[0] + c * load.lq[1]
        bvx = vox - qd[2] * rwz + c * load.lqd[0] - s * load.lqd[1]
        bvz = voz + qd[2] * rwx + s * load.lqd[0] + c * load.lqd[1]
        return spec.box_mass * bvx, spec.box_mass * bvz
    if kind == "cart":
        return spec.cart_mass * load.lqd[0], 0.0
    if kind == "carry-pole":
        px, pz = 0.0, 0.0
        for i, (ox, oz) in enumerate(
            ((spec.mount_fore_x, spec.mount_fore_z), (spec.mount_aft_x, spec.mount_aft_z))
        ):
            rx = c * ox - s * oz
            rz = s * ox + c * oz
            vpx = qd[0] - qd[2] * rz
            vpz = qd[1] + qd[2] * rx
            th, w = load.lq[i], load.lqd[i]
            px += spec.side_mass * (vpx + spec.rope_length * w * np.cos(th))
            pz += spec.side_mass * (vpz + spec.rope_length * w * np.sin(th))
        return px, pz
    # water-jug
    mx, mz = spec.mount_x, spec.mount_z
    rx = c * mx - s * mz
    rz = s * mx + c * mz
    vmx = qd[0] - qd[2] * rz
    vmz = qd[1] + qd[2] * rx
    return (
        spec.slosh_mass * (vmx + load.lqd[0]),
        spec.slosh_mass * (vmz + load.lqd[1]),
    )


def gravitating_load_mass(spec) -> float:
    """Load mass that gravity acts on in the momentum bookkeeping.

    The slosh deviation mass is excluded (equilibrium-relative analog; its
    statics live in the rigid body mass, which the biped carries)."""
    if spec is None:
        return 0.0
    kind = kind_of_spec(spec)
    if kind == "tray-box":
        return spec.box_mass
    if kind == "cart":
        return spec.cart_mass
    if kind == "carry-pole":
        return 2.0 * spec.side_mass
    # water-jug: the rigid body mass is packed into the biped parameters and
    # already counted there; the slosh deviation mass is gravity-free
    return 0.0
