"""Oracles for the four force-coupled load subsystems."""

import dataclasses
import math

import numpy as np
import pytest

from loadgait import loads
from loadgait.biped import build_biped, pack_biped_params
from loadgait.config import (
    CarryPoleSpec,
    CartSpec,
    ModelParams,
    TrayBoxSpec,
    WaterJugSpec,
)

G = 9.81
LOADED_SPECS = (TrayBoxSpec(), CartSpec(), CarryPoleSpec(), WaterJugSpec())


def hold(state):
    return state.q[3:7].copy()


def zero_crossing_period(model, state, setpoints, index, seconds=20):
    """Mean period between upward zero crossings of load coordinate `index`,
    interpolated inside the policy-step window."""
    crossings = []
    prev = state.load.lq[index]
    for _ in range(seconds * 40):
        state = model.step(state, setpoints, pinned=True)
        cur = state.load.lq[index]
        if prev < 0.0 <= cur:
            frac = -prev / (cur - prev)
            crossings.append(state.time - 0.025 * (1.0 - frac))
        prev = cur
    return float(np.mean(np.diff(crossings)))


# --- spec plumbing -------------------------------------------------------------------


def test_kind_of_spec_mapping():
    assert loads.kind_of_spec(None) == "unloaded"
    assert loads.kind_of_spec(TrayBoxSpec()) == "tray-box"
    assert loads.kind_of_spec(CartSpec()) == "cart"
    assert loads.kind_of_spec(CarryPoleSpec()) == "carry-pole"
    assert loads.kind_of_spec(WaterJugSpec()) == "water-jug"
    with pytest.raises(TypeError):
        loads.kind_of_spec(42)


def test_gravitating_load_mass_convention():
    # slosh mass is a gravity-free momentum carrier; the rigid jug body
    # gravitates through the biped parameter pack instead
    assert loads.gravitating_load_mass(None) == 0.0
    assert loads.gravitating_load_mass(TrayBoxSpec()) == 5.0
    assert loads.gravitating_load_mass(CartSpec()) == 10.0
    assert loads.gravitating_load_mass(CarryPoleSpec()) == 4.0
    assert loads.gravitating_load_mass(WaterJugSpec()) == 0.0


def test_load_coupling_rejects_mismatched_kind():
    model, s = build_biped(load_spec=CartSpec())
    with pytest.raises(ValueError):
        loads.load_coupling(
            s.load, TrayBoxSpec(), s.q, s.qd, s.qdd, model.params, model.bp
        )


def test_wrong_kind_queries_rejected():
    state = loads.LoadState("cart")
    with pytest.raises(ValueError):
        loads.box_dropped(state, TrayBoxSpec())
    with pytest.raises(ValueError):
        loads.box_tray_distance(state, TrayBoxSpec())


# --- initial states ------------------------------------------------------------------


def test_initial_box_rests_at_static_penetration():
    model, s = build_biped(load_spec=TrayBoxSpec())
    assert s.load.lq[0] == 0.0
    k_c = model.params.contact_stiffness
    assert s.load.lq[1] == pytest.approx(-5.0 * G / k_c, rel=1e-12)
    # settled: zero tangential force, normal exactly carries the box weight
    _, wrench, on_load = loads.load_coupling(
        s.load, TrayBoxSpec(), s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert on_load[0] == pytest.approx(0.0, abs=1e-12)
    assert on_load[1] == pytest.approx(5.0 * G, rel=1e-12)
    assert wrench[1] == pytest.approx(-5.0 * G, rel=1e-12)


def test_initial_cart_rope_exactly_taut_zero_tension():
    spec = CartSpec()
    model, s = build_biped(load_spec=spec)
    dist = math.hypot(s.load.lq[0] - s.q[0], s.q[1])
    assert dist == pytest.approx(spec.rope_rest_length, rel=1e-12)
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert wrench == (0.0, 0.0, 0.0)
    assert on_load == (0.0, 0.0)


def test_initial_pole_and_jug_at_rest():
    for spec in (CarryPoleSpec(), WaterJugSpec()):
        _, s = build_biped(load_spec=spec)
        np.testing.assert_array_equal(s.load.lq, 0.0)
        np.testing.assert_array_equal(s.load.lqd, 0.0)


# --- Newton pairs ---------------------------------------------------------------------


@pytest.mark.parametrize("spec", LOADED_SPECS, ids=lambda s: type(s).__name__)
def test_exchanged_forces_equal_and_opposite(spec):
    model, s0 = build_biped(load_spec=spec)
    rng = np.random.default_rng(5)
    for _ in range(200):
        q = s0.q.copy()
        q[0] = rng.uniform(-1, 1)
        q[1] = rng.uniform(0.5, 1.0)
        q[2] = rng.uniform(-0.4, 0.4)
        q[3:7] += rng.uniform(-0.5, 0.5, size=4)
        qd = rng.uniform(-2, 2, size=7)
        qdd = rng.uniform(-20, 20, size=7)
        load = loads.LoadState(s0.load.kind)
        load.lq[:] = rng.uniform(-0.12, 0.12, size=2)
        load.lqd[:] = rng.uniform(-1, 1, size=2)
        if load.kind == "cart":
            load.lq[0] = q[0] - rng.uniform(0.3, 1.3)
        elif load.kind == "carry-pole":
            load.lq[:] = rng.uniform(-1.0, 1.0, size=2)
        _, wrench, on_load = loads.load_coupling(
            load, spec, q, qd, qdd, model.params, model.bp
        )
        assert abs(wrench[0] + on_load[0]) < 1e-9
        assert abs(wrench[1] + on_load[1]) < 1e-9


def test_inner_loop_pair_residual_stays_zero():
    for spec in LOADED_SPECS:
        model, s = build_biped(load_spec=spec)
        worst = 0.0
        for _ in range(40):
            s = model.step(s, hold(s))
            worst = max(worst, s.diag.pair_residual)
        assert worst < 1e-9


# --- carry-pole ------------------------------------------------------------------------


def test_pole_at_rest_stays_at_rest():
    model, s = build_biped(load_spec=CarryPoleSpec())
    sp = hold(s)
    for _ in range(200):  # 5 s, torso pinned
        s = model.step(s, sp, pinned=True)
    assert np.all(np.abs(s.load.lq) < 1e-12)
    assert np.all(np.abs(s.load.lqd) < 1e-12)


def test_static_pole_wrench_is_total_hanging_weight():
    spec = CarryPoleSpec()
    model, s = build_biped(load_spec=spec)
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert wrench[0] == pytest.approx(0.0, abs=1e-12)
    assert wrench[1] == pytest.approx(-2.0 * spec.side_mass * G, rel=1e-12)
    # symmetric fore/aft mounts: weights cancel in torque
    assert wrench[2] == pytest.approx(0.0, abs=1e-12)
    assert on_load[1] == pytest.approx(2.0 * spec.side_mass * G, rel=1e-12)


def test_pendulum_small_oscillation_period_matches_analytic():
    spec = CarryPoleSpec()
    model, s = build_biped(load_spec=spec)
    s.load.lq[0] = 0.05
    T = zero_crossing_period(model, s, hold(s), index=0)
    T_ref = 2.0 * math.pi * math.sqrt(spec.rope_length / G)
    assert abs(T - T_ref) / T_ref < 0.01


def test_pendulum_energy_no_secular_drift():
    spec = CarryPoleSpec()
    model, s = build_biped(load_spec=spec)
    s.load.lq[:] = [0.05, -0.03]
    sp = hold(s)
    m, L = spec.side_mass, spec.rope_length

    def energy(load):
        return sum(
            0.5 * m * (L * load.lqd[i]) ** 2 + m * G * L * (1 - math.cos(load.lq[i]))
            for i in range(2)
        )

    e0 = energy(s.load)
    es = []
    for _ in range(400):  # 10 s
        s = model.step(s, sp, pinned=True)
        es.append(energy(s.load))
    es = np.array(es)
    half = len(es) // 2
    assert abs(es[half:].mean() - es[:half].mean()) / e0 < 1e-3
    assert (es.max() - es.min()) / e0 < 1e-2


def test_pole_swings_when_walking_starts():
    # a torso that suddenly accelerates leaves the bobs behind
    model, s = build_biped(load_spec=CarryPoleSpec())
    s.qd[0] = 1.0  # impulsive forward start
    for _ in range(8):
        s = model.step(s, hold(s))
    assert np.any(np.abs(s.load.lq) > 0.01)
    assert not s.diverged


# --- water-jug ---------------------------------------------------------------------------


def test_jug_at_rest_exchanges_zero_force():
    spec = WaterJugSpec()
    model, s = build_biped(load_spec=spec)
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert wrench == (0.0, 0.0, 0.0)
    assert on_load == (0.0, 0.0)


def test_slosh_frequency_matches_analytic():
    spec = dataclasses.replace(WaterJugSpec(), damping_x=0.0, damping_z=0.0)
    model, s = build_biped(load_spec=spec)
    s.load.lq[0] = 0.02
    T = zero_crossing_period(model, s, hold(s), index=0)
    T_ref = 2.0 * math.pi / math.sqrt(spec.stiffness_x / spec.slosh_mass)
    assert abs(T - T_ref) / T_ref < 0.01


def test_slosh_energy_no_secular_drift():
    spec = dataclasses.replace(WaterJugSpec(), damping_x=0.0, damping_z=0.0)
    model, s = build_biped(load_spec=spec)
    s.load.lq[0] = 0.02
    sp = hold(s)
    e0 = 0.5 * spec.stiffness_x * 0.02**2
    es = []
    for _ in range(400):
        s = model.step(s, sp, pinned=True)
        es.append(
            0.5 * spec.slosh_mass * float(s.load.lqd[0] ** 2 + s.load.lqd[1] ** 2)
            + 0.5 * spec.stiffness_x * float(s.load.lq[0] ** 2)
            + 0.5 * spec.stiffness_z * float(s.load.lq[1] ** 2)
        )
    es = np.array(es)
    half = len(es) // 2
    assert abs(es[half:].mean() - es[:half].mean()) / e0 < 1e-3
    assert (es.max() - es.min()) / e0 < 1e-2


def test_slosh_damping_decays_oscillation():
    spec = WaterJugSpec()
    model, s = build_biped(load_spec=spec)
    s.load.lq[0] = 0.05
    sp = hold(s)
    for _ in range(400):  # 10 s at zeta ~ 0.05: ~7 decay time constants
        s = model.step(s, sp, pinned=True)
    assert abs(s.load.lq[0]) < 0.01
    assert abs(s.load.lqd[0]) < 0.05


def test_slosh_travel_stops_engage():
    spec = WaterJugSpec()
    model, s = build_biped(load_spec=spec)
    s.load.lq[0] = spec.travel_limit + 0.05
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    expected = -spec.stiffness_x * (spec.travel_limit + 0.05) - spec.stop_stiffness * 0.05
    assert on_load[0] == pytest.approx(expected, rel=1e-12)
    # inside the travel band: spring only
    s.load.lq[0] = 0.05
    _, _, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert on_load[0] == pytest.approx(-spec.stiffness_x * 0.05, rel=1e-12)


def test_slosh_excursion_bounded_by_stops_under_push():
    # A shove violent enough to knock the robot over swings the jug hard; the
    # travel stops must cap the excursion far below what the soft spring alone
    # would allow, while still letting it pass the nominal travel band.
    def worst_excursion(spec):
        model, s = build_biped(load_spec=spec)
        s = model.apply_impulse(s, 300.0, direction=0.0, duration=0.3)
        worst = 0.0
        for _ in range(40):
            s = model.step(s, hold(s))
            worst = max(worst, float(np.max(np.abs(s.load.lq))))
        return worst

    spec = WaterJugSpec()
    with_stops = worst_excursion(spec)
    without = worst_excursion(dataclasses.replace(spec, stop_stiffness=0.0))
    assert with_stops > spec.travel_limit       # stops actually engaged
    assert without > 3.0 * spec.travel_limit    # the shove would run far past them
    assert with_stops < 0.4 * without           # stops bound the overshoot
    assert with_stops < 3.0 * spec.travel_limit


# --- cart -------------------------------------------------------------------------------


def test_rope_tension_only_with_exact_spring_value():
    spec = CartSpec()
    model, s = build_biped(load_spec=spec)
    z = s.q[1]
    # slack: cart closer than rest length -> zero everywhere
    s.load.lq[0] = s.q[0] - 0.5 * math.sqrt(max(spec.rope_rest_length**2 - z * z, 0.01))
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert wrench == (0.0, 0.0, 0.0) and on_load == (0.0, 0.0)
    # taut at rest: T = k (dist - rest), directed along the rope
    dist = 1.02
    dx = -math.sqrt(dist * dist - z * z)
    s.load.lq[0] = s.q[0] + dx
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    T = spec.rope_stiffness * (dist - spec.rope_rest_length)
    ux, uz = dx / dist, -z / dist
    assert wrench[0] == pytest.approx(T * ux, rel=1e-9)
    assert wrench[1] == pytest.approx(T * uz, rel=1e-9)
    assert wrench[2] == 0.0  # rope attached at the pelvis point
    assert on_load[0] == pytest.approx(-T * ux, rel=1e-9)
    assert on_load[1] == pytest.approx(-T * uz, rel=1e-9)


def test_cart_stays_on_ground_and_friction_brakes_it():
    spec = CartSpec()
    model, s = build_biped(load_spec=spec)
    s.load.lqd[0] = 1.0  # rolling cart, slack rope
    s.load.lq[0] = s.q[0] - 0.3
    sp = hold(s)
    v_prev = 1.0
    for _ in range(40):
        s = model.step(s, sp, pinned=True)
        assert s.load.lqd[0] <= v_prev + 1e-12
        v_prev = s.load.lqd[0]
    assert s.load.lqd[0] < 1.0  # friction dissipates


def test_towing_accelerates_the_cart():
    model, s = build_biped(load_spec=CartSpec())
    x0 = s.load.lq[0]
    s.qd[0] = 1.5  # torso walks forward, rope goes taut
    for _ in range(40):
        s = model.step(s, hold(s))
    assert s.load.lq[0] > x0 + 0.05
    assert s.load.lqd[0] > 0.1


# --- tray-box ------------------------------------------------------------------------------


def test_box_dropped_strictly_below_threshold():
    spec = TrayBoxSpec()
    state = loads.LoadState("tray-box")
    state.lq[1] = -spec.drop_threshold
    assert not loads.box_dropped(state, spec)  # exactly at threshold: not dropped
    state.lq[1] = -spec.drop_threshold - 1e-9
    assert loads.box_dropped(state, spec)
    state.lq[1] = -0.5
    assert loads.box_dropped(state, spec)
    state.lq[1] = 0.0
    assert not loads.box_dropped(state, spec)


def test_box_tray_distance_is_tray_frame_norm():
    spec = TrayBoxSpec()
    state = loads.LoadState("tray-box")
    state.lq[:] = [0.03, -0.04]
    assert loads.box_tray_distance(state, spec) == pytest.approx(0.05, rel=1e-12)


def test_box_tray_distance_invariant_to_torso_pose():
    # tray-frame storage: where the torso is cannot matter
    spec = TrayBoxSpec()
    model, s = build_biped(load_spec=spec)
    s.load.lq[:] = [0.06, -0.001]
    d0 = loads.box_tray_distance(s.load, spec)
    s.q[0] += 3.7
    s.q[1] += 0.4
    assert loads.box_tray_distance(s.load, spec) == d0


def test_box_support_vanishes_beyond_tray_edge():
    spec = TrayBoxSpec()
    model, s = build_biped(load_spec=spec)
    pen = -5.0 * G / 6e4
    # at the edge: still supported
    s.load.lq[:] = [spec.half_width, pen]
    _, _, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert on_load[1] > 0.0
    # just past the edge: free fall
    s.load.lq[:] = [spec.half_width + 1e-6, pen]
    _, wrench, on_load = loads.load_coupling(
        s.load, spec, s.q, s.qd, s.qdd, model.params, model.bp
    )
    assert on_load == (0.0, 0.0)
    assert wrench == (0.0, 0.0, 0.0)


def test_box_slides_off_tilted_tray_and_drops():
    spec = TrayBoxSpec()
    model, s = build_biped(load_spec=spec)
    s.q[2] = 0.5  # tilt the torso (and tray) well past the friction angle
    sp = hold(s)
    dropped_at = None
    for _ in range(160):  # 4 s, torso pinned at the tilt
        s = model.step(s, sp, pinned=True)
        if loads.box_dropped(s.load, spec):
            dropped_at = s.time
            break
    assert dropped_at is not None, "box should slide off a 0.5 rad tray"


def test_box_rides_quietly_on_level_tray():
    spec = TrayBoxSpec()
    model, s = build_biped(load_spec=spec)
    sp = hold(s)
    for _ in range(200):  # 5 s pinned: nothing should move
        s = model.step(s, sp, pinned=True)
    assert abs(s.load.lq[0]) < 1e-9
    assert abs(s.load.lq[1] + 5.0 * G / model.params.contact_stiffness) < 1e-9
    assert not loads.box_dropped(s.load, spec)


# --- momentum bookkeeping ------------------------------------------------------------------


def test_pole_momentum_formula_from_geometry():
    spec = CarryPoleSpec()
    params = ModelParams()
    bp = pack_biped_params(params, spec)
    q = np.zeros(7)
    q[1] = 0.8
    q[2] = 0.2
    qd = np.array([0.9, -0.3, 0.7, 0, 0, 0, 0.0])
    load = loads.LoadState("carry-pole")
    load.lq[:] = [0.3, -0.5]
    load.lqd[:] = [1.2, -0.8]
    px, pz = loads.load_momentum(load, spec, q, qd, bp)
    ex, ez = 0.0, 0.0
    c, s_ = math.cos(q[2]), math.sin(q[2])
    for i, (ox, oz) in enumerate(((0.35, 0.40), (-0.35, 0.40))):
        rx, rz = c * ox - s_ * oz, s_ * ox + c * oz
        vx = qd[0] - qd[2] * rz + spec.rope_length * load.lqd[i] * math.cos(load.lq[i])
        vz = qd[1] + qd[2] * rx + spec.rope_length * load.lqd[i] * math.sin(load.lq[i])
        ex += spec.side_mass * vx
        ez += spec.side_mass * vz
    assert px == pytest.approx(ex, rel=1e-12)
    assert pz == pytest.approx(ez, rel=1e-12)


def test_jug_momentum_counts_mount_plus_deviation_rate():
    spec = WaterJugSpec()
    params = ModelParams()
    bp = pack_biped_params(params, spec)
    q = np.zeros(7)
    q[1] = 0.8
    qd = np.zeros(7)
    qd[0] = 1.0
    load = loads.LoadState("water-jug")
    load.lqd[:] = [0.3, -0.2]
    px, pz = loads.load_momentum(load, spec, q, qd, bp)
    assert px == pytest.approx(spec.slosh_mass * 1.3, rel=1e-12)
    assert pz == pytest.approx(spec.slosh_mass * -0.2, rel=1e-12)
