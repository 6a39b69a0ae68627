"""Physics oracles and contracts for the biped simulator core."""

import dataclasses
import math

import numpy as np
import pytest

from loadgait.biped import (
    JOINT_NAMES,
    N_JOINTS,
    N_Q,
    OBS_SIZE,
    BipedModel,
    build_biped,
    randomize_dynamics,
)
from loadgait.config import (
    CarryPoleSpec,
    CartSpec,
    DynRandRanges,
    ModelParams,
    PDGains,
    TrayBoxSpec,
    WaterJugSpec,
)
from loadgait.gait import ClockState, gait_params_for_speed

ALL_SPECS = (None, TrayBoxSpec(), CartSpec(), CarryPoleSpec(), WaterJugSpec())

FREE_PARAMS = dataclasses.replace(
    ModelParams(), gravity=0.0, joint_damping=(0.0,) * 4
)
ZERO_GAINS = PDGains(kp=(0.0,) * 4, kd=(0.0,) * 4)


def hold_setpoints(state):
    return state.q[3:7].copy()


# --- nominal pose -----------------------------------------------------------------


def com_x_static(model: BipedModel, q: np.ndarray) -> float:
    """Independent re-derivation: x of the supported center of mass, carried
    load weight included, at pitch 0."""
    p = model.params
    h = q[3]
    k = q[4]
    sin_th, sin_sh = math.sin(h), math.sin(h + k)
    num = (
        p.torso_mass * 0.0
        + 2.0 * p.thigh_mass * 0.5 * p.thigh_length * sin_th
        + 2.0 * p.shank_mass
        * (p.thigh_length * sin_th + 0.5 * p.shank_length * sin_sh)
    )
    den = p.torso_mass + 2.0 * (p.thigh_mass + p.shank_mass)
    spec = model.load_spec
    if isinstance(spec, TrayBoxSpec):
        num += spec.box_mass * spec.mount_x
        den += spec.box_mass
    elif isinstance(spec, CarryPoleSpec):
        num += spec.side_mass * (spec.mount_fore_x + spec.mount_aft_x)
        den += 2.0 * spec.side_mass
    elif isinstance(spec, WaterJugSpec):
        num += (spec.slosh_mass + spec.body_mass) * spec.mount_x
        den += spec.slosh_mass + spec.body_mass
    return num / den


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: type(s).__name__)
def test_nominal_pose_feet_coincident_on_ground_under_com(spec):
    model, state = build_biped(load_spec=spec)
    fk = model.foot_states(state)
    assert fk[0] == fk[4]  # identical leg angles -> identical foot points
    assert abs(fk[1]) < 1e-12 and abs(fk[5]) < 1e-12  # feet on the ground
    assert abs(fk[0] - com_x_static(model, state.q)) < 1e-9
    assert state.q[2] == 0.0


def test_jittered_initial_state_keeps_lower_foot_on_ground():
    model, _ = build_biped()
    nominal = model.initial_state()
    for seed in range(20):
        st = model.initial_state(np.random.default_rng(seed))
        fk = model.foot_states(st)
        # the lower foot touches exactly; nothing goes under the floor
        assert min(fk[1], fk[5]) == pytest.approx(0.0, abs=1e-12)
        assert fk[1] > -1e-12 and fk[5] > -1e-12
        assert not np.array_equal(st.q, nominal.q)
        assert np.all(np.abs(st.q[3:7] - nominal.q[3:7]) <= 0.08 + 1e-12)
        assert abs(st.q[2]) <= 0.05 + 1e-12
    # same rng seed -> identical state; no rng -> exact nominal
    a = model.initial_state(np.random.default_rng(5))
    b = model.initial_state(np.random.default_rng(5))
    assert np.array_equal(a.q, b.q) and np.array_equal(a.qd, b.qd)
    again = model.initial_state()
    assert np.array_equal(again.q, nominal.q)
    assert np.all(again.qd == 0.0)


def test_crouch_hold_stands_briefly_then_pitches_over():
    model, s = build_biped()
    sp = hold_setpoints(s)
    # balanced: survives the first second upright
    for _ in range(40):
        s = model.step(s, sp)
    assert s.q[1] > 0.6 and abs(s.q[2]) < 0.5
    # statically unstable: a fixed-setpoint statue falls within a few seconds
    fell = False
    for _ in range(200):
        s = model.step(s, sp)
        if s.q[1] < 0.4 or abs(s.q[2]) > 1.0:
            fell = True
            break
    assert fell, "point-foot statue should pitch over without active control"


def test_zero_setpoints_fall_quickly():
    model, s = build_biped()
    fell_at = None
    for _ in range(160):  # 4 s
        s = model.step(s, np.zeros(4))
        if s.q[1] < 0.4 or abs(s.q[2]) > 1.0:
            fell_at = s.time
            break
    assert fell_at is not None, "straight-leg command must topple the robot"
    assert fell_at > 0.2  # a real fall, not an integration blowup


# --- PD servo ----------------------------------------------------------------------


def test_pd_torque_arithmetic_single_step():
    model, s = build_biped()
    delta = np.array([0.1, -0.2, 0.05, 0.15])
    s2 = model.step(s, s.q[3:7] + delta, n_inner=1, pinned=True)
    kp = np.array([180.0, 160.0, 180.0, 160.0])
    expected = float(np.sum((kp * delta) ** 2))
    assert s2.diag.torque_sq == pytest.approx(expected, rel=1e-12)


def test_pd_zero_error_zero_torque():
    model, s = build_biped()
    s2 = model.step(s, s.q[3:7].copy(), n_inner=1, pinned=True)
    assert s2.diag.torque_sq == 0.0


def test_pd_torque_clamped_at_limit():
    model, s = build_biped()
    s2 = model.step(s, s.q[3:7] + 10.0, n_inner=1, pinned=True)
    assert s2.diag.torque_sq == pytest.approx(4 * 150.0**2, rel=1e-12)


def test_step_rejects_bad_setpoint_shape():
    model, s = build_biped()
    with pytest.raises(ValueError):
        model.step(s, np.zeros(3))


# --- energy ------------------------------------------------------------------------


def drift_and_span(energies, e_ref):
    es = np.asarray(energies)
    half = len(es) // 2
    drift = abs(es[half:].mean() - es[:half].mean()) / abs(e_ref)
    span = (es.max() - es.min()) / abs(e_ref)
    return drift, span


def test_free_flight_energy_conserved_without_gravity():
    model, s = build_biped(FREE_PARAMS, ZERO_GAINS)
    s.q[1] = 3.0
    s.qd[:] = [0.3, 0.2, 0.4, -0.5, 0.8, 0.6, -0.7]
    e0 = model.mechanical_energy(s)
    es = []
    for _ in range(400):  # 10 s
        s = model.step(s, np.zeros(4))
        es.append(model.mechanical_energy(s))
    drift, span = drift_and_span(es, e0)
    assert drift < 1e-3
    assert span < 1e-2


def test_pinned_leg_swing_energy_conserved():
    params = dataclasses.replace(ModelParams(), joint_damping=(0.0,) * 4)
    model, s = build_biped(params, ZERO_GAINS)
    s.q[1] = 3.0  # in the air: no ground contact
    s.q[3:7] = [0.9, -0.4, -0.6, -0.2]
    e0 = model.mechanical_energy(s)
    es = []
    for _ in range(400):
        s = model.step(s, np.zeros(4), pinned=True)
        es.append(model.mechanical_energy(s))
    drift, span = drift_and_span(es, e0)
    assert drift < 1e-3
    assert span < 1e-2


def test_joint_damping_dissipates_energy():
    params = dataclasses.replace(ModelParams(), joint_damping=(2.0,) * 4)
    model, s = build_biped(params, ZERO_GAINS)
    s.q[1] = 3.0
    s.q[3:7] = [0.9, -0.4, -0.6, -0.2]
    e0 = model.mechanical_energy(s)
    for _ in range(200):
        s = model.step(s, np.zeros(4), pinned=True)
    assert model.mechanical_energy(s) < e0 - 1.0


# --- impulses and momentum -----------------------------------------------------------


def test_applied_impulse_changes_momentum_by_force_times_duration():
    model, s = build_biped(FREE_PARAMS, ZERO_GAINS)
    s.q[1] = 3.0
    p0 = model.system_momentum(s)
    s = model.apply_impulse(s, force=50.0, direction=0.0, duration=0.2)
    applied = np.zeros(2)
    for _ in range(8):  # exactly 0.2 s
        s = model.step(s, np.zeros(4))
        applied += s.diag.ext_impulse
    # the integrated external impulse is exact ...
    np.testing.assert_allclose(applied, [10.0, 0.0], rtol=1e-9, atol=1e-12)
    # ... and momentum follows it to integrator accuracy (the push also spins
    # the limbs through inertia coupling, so exactness is not available)
    dp = model.system_momentum(s) - p0
    assert dp[0] == pytest.approx(10.0, rel=2e-3)
    assert abs(dp[1]) < 0.02


def test_opposite_push_directions_mirror():
    model, s0 = build_biped()

    def mirrored(q):
        return np.array([-q[0], q[1], -q[2], -q[5], -q[6], -q[3], -q[4]])

    sA = model.apply_impulse(s0, 30.0, direction=0.0, duration=0.2)
    sB = s0.copy()
    sB.q = mirrored(s0.q)
    sB.qd = mirrored(s0.qd)
    sB = model.apply_impulse(sB, 30.0, direction=math.pi, duration=0.2)
    spA = hold_setpoints(sA)
    spB = np.array([-spA[2], -spA[3], -spA[0], -spA[1]])  # legs swapped and reflected
    for _ in range(20):  # 0.5 s
        sA = model.step(sA, spA)
        sB = model.step(sB, spB)
        np.testing.assert_allclose(sB.q, mirrored(sA.q), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(sB.qd, mirrored(sA.qd), rtol=1e-6, atol=1e-7)


def test_apply_impulse_requires_positive_duration():
    model, s = build_biped()
    with pytest.raises(ValueError):
        model.apply_impulse(s, 50.0, 0.0, 0.0)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: type(s).__name__)
def test_momentum_change_equals_external_plus_gravity_impulse(spec):
    model, s = build_biped(load_spec=spec)
    sp = hold_setpoints(s)
    p0 = model.system_momentum(s)
    ext = np.zeros(2)
    horizon = 0.5
    for _ in range(int(horizon / 0.025)):
        s = model.step(s, sp)
        ext += s.diag.ext_impulse
    dp = model.system_momentum(s) - p0
    expected = ext + np.array([0.0, -model.gravitating_mass() * 9.81 * horizon])
    scale = model.gravitating_mass() * 9.81 * horizon
    np.testing.assert_allclose(dp, expected, atol=1e-3 * scale)


def test_momentum_accounting_during_push():
    model, s = build_biped(load_spec=WaterJugSpec())
    sp = hold_setpoints(s)
    s = model.apply_impulse(s, 40.0, direction=0.5, duration=0.2)
    p0 = model.system_momentum(s)
    ext = np.zeros(2)
    for _ in range(12):  # 0.3 s: covers the push window
        s = model.step(s, sp)
        ext += s.diag.ext_impulse
    dp = model.system_momentum(s) - p0
    expected = ext + np.array([0.0, -model.gravitating_mass() * 9.81 * 0.3])
    scale = model.gravitating_mass() * 9.81 * 0.3
    np.testing.assert_allclose(dp, expected, atol=1e-3 * scale)


# --- determinism and purity -----------------------------------------------------------


def test_step_is_functional_and_deterministic():
    model, s0 = build_biped(load_spec=TrayBoxSpec())
    q_snap, qd_snap = s0.q.copy(), s0.qd.copy()
    lq_snap = s0.load.lq.copy()
    sp = hold_setpoints(s0)

    def run(state):
        for _ in range(20):
            state = model.step(state, sp)
        return state

    a = run(s0)
    b = run(s0)
    # inputs untouched
    np.testing.assert_array_equal(s0.q, q_snap)
    np.testing.assert_array_equal(s0.qd, qd_snap)
    np.testing.assert_array_equal(s0.load.lq, lq_snap)
    # bitwise identical replay
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.qd, b.qd)
    np.testing.assert_array_equal(a.load.lq, b.load.lq)
    np.testing.assert_array_equal(a.load.lqd, b.load.lqd)
    assert a.time == b.time


def test_divergence_flagged_not_raised():
    model, s = build_biped()
    s.qd[0] = 2e6  # beyond the blow-up bound
    s2 = model.step(s, hold_setpoints(s))
    assert s2.diverged


def test_n_inner_override_controls_window():
    model, s = build_biped()
    s2 = model.step(s, hold_setpoints(s), n_inner=3)
    assert s2.time == pytest.approx(3 * 5e-4)
    assert s2.diag.window == pytest.approx(3 * 5e-4)


# --- dynamics randomization ------------------------------------------------------------


def test_randomize_identity_ranges_change_nothing():
    params = ModelParams()
    ranges = DynRandRanges(damping=(1.0, 1.0), mass=(1.0, 1.0), friction=(1.0, 1.0))
    out = randomize_dynamics(params, ranges, np.random.default_rng(0))
    assert out == params


def test_randomize_scales_only_targets_within_ranges():
    params = ModelParams()
    ranges = DynRandRanges()
    for seed in range(30):
        out = randomize_dynamics(params, ranges, np.random.default_rng(seed))
        for old, new in zip(params.joint_damping, out.joint_damping):
            assert 0.5 * old <= new <= 1.5 * old
        assert 0.85 * params.torso_mass <= out.torso_mass <= 1.15 * params.torso_mass
        assert 0.85 * params.thigh_mass <= out.thigh_mass <= 1.15 * params.thigh_mass
        assert 0.85 * params.shank_mass <= out.shank_mass <= 1.15 * params.shank_mass
        assert 0.6 * params.ground_friction <= out.ground_friction <= 1.2 * params.ground_friction
        # everything else untouched: inertias, lengths, contact, timing
        assert out.torso_inertia == params.torso_inertia
        assert out.thigh_inertia == params.thigh_inertia
        assert out.shank_inertia == params.shank_inertia
        assert out.torso_length == params.torso_length
        assert out.contact_stiffness == params.contact_stiffness
        assert out.contact_damping == params.contact_damping
        assert out.dt_inner == params.dt_inner


def test_randomize_deterministic_per_seed():
    params = ModelParams()
    ranges = DynRandRanges()
    a = randomize_dynamics(params, ranges, np.random.default_rng(7))
    b = randomize_dynamics(params, ranges, np.random.default_rng(7))
    assert a == b


# --- mass matrix -------------------------------------------------------------------


def test_mass_matrix_symmetric_positive_definite_with_exact_translation_rows():
    for spec in (None, WaterJugSpec()):
        model, s = build_biped(load_spec=spec)
        rng = np.random.default_rng(3)
        total = (
            model.params.torso_mass
            + 2.0 * (model.params.thigh_mass + model.params.shank_mass)
        )
        if isinstance(spec, WaterJugSpec):
            total += spec.body_mass
        for _ in range(10):
            s.q[2:7] = rng.uniform(-0.8, 0.8, size=5)
            M = model.mass_matrix(s)
            np.testing.assert_allclose(M, M.T, atol=1e-12)
            assert M[0, 0] == pytest.approx(total, abs=1e-12)
            assert M[1, 1] == pytest.approx(total, abs=1e-12)
            assert M[0, 1] == 0.0
            assert np.linalg.eigvalsh(M).min() > 0.0


# --- observation -------------------------------------------------------------------


def test_observation_layout_and_clock_encoding():
    model, s = build_biped()
    gait = gait_params_for_speed(1.0)
    obs = model.observe(s, ClockState(0.0), gait, command=1.3)
    assert obs.shape == (OBS_SIZE,)
    assert obs[0] == s.q[2] and obs[1] == s.qd[2]
    assert obs[2] == s.qd[0] and obs[3] == s.qd[1]
    np.testing.assert_array_equal(obs[4:8], s.q[3:7])
    np.testing.assert_array_equal(obs[8:12], s.qd[3:7])
    assert obs[12] == pytest.approx(0.0, abs=1e-15)  # sin at phase 0
    assert obs[13] == pytest.approx(1.0)             # cos at phase 0
    assert obs[14] == 1.3
    quarter = ClockState(gait.cycle_time / 4)
    obs_q = model.observe(s, quarter, gait, command=1.3)
    assert obs_q[12] == pytest.approx(1.0)
    assert obs_q[13] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("spec", ALL_SPECS[1:], ids=lambda s: type(s).__name__)
def test_observation_blind_to_load_coordinates(spec):
    model, s = build_biped(load_spec=spec)
    gait = gait_params_for_speed(1.0)
    clock = ClockState(0.123)
    base = model.observe(s, clock, gait, command=2.0)
    rng = np.random.default_rng(11)
    for _ in range(20):
        s.load.lq[:] = rng.uniform(-0.5, 0.5, size=2)
        s.load.lqd[:] = rng.uniform(-2.0, 2.0, size=2)
        np.testing.assert_array_equal(model.observe(s, clock, gait, 2.0), base)


# --- misc --------------------------------------------------------------------------


def test_foot_forces_match_penalty_formula():
    model, s = build_biped()
    s.q[1] -= 0.002  # push both feet 2 mm under
    s.qd[1] = -0.1
    s.qd[0] = 0.2  # sliding: friction engaged
    fk = model.foot_states(s)
    forces = model.foot_forces(s)
    for side in range(2):
        z, vz, vx = fk[4 * side + 1], fk[4 * side + 3], fk[4 * side + 2]
        kc = model.params.contact_stiffness
        cc = model.params.contact_damping
        expected_n = max(0.0, -kc * z - cc * vz)
        expected_t = -0.9 * expected_n * math.tanh(vx / 0.05)
        assert forces[2 * side] == pytest.approx(expected_n, rel=1e-12)
        assert forces[2 * side + 1] == pytest.approx(expected_t, rel=1e-12, abs=1e-12)


def test_feet_in_air_no_force():
    model, s = build_biped()
    s.q[1] = 3.0
    assert np.all(model.foot_forces(s) == 0.0)


def test_joint_names_exported():
    assert len(JOINT_NAMES) == N_JOINTS == 4
    assert N_Q == 7
