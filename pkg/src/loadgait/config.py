"""Configuration dataclasses and JSON round-trip with strict schema checking.

Every tunable lives here: biped physical parameters, PD gains, dynamics
randomization ranges, load-model parameters, reward weights and kernel scales,
training hyperparameters, and evaluation protocol sizes. `load_config` rejects
unknown keys (with the offending path) so config typos fail loudly, and every
run writes back its fully-resolved config for reproducibility.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

LOAD_KINDS = ("unloaded", "tray-box", "cart", "carry-pole", "water-jug")


class ConfigError(ValueError):
    """Raised for malformed config files: unknown keys, bad types, bad values."""


@dataclass
class ModelParams:
    """Physical parameters of the planar 5-link biped and its world.

    The biped is a torso (pelvis at its base) plus two 2-link legs with point
    feet, moving in the x (forward) / z (up) plane. Ground is the line z = 0.
    """

    torso_mass: float = 12.0          # kg
    torso_length: float = 0.5         # m, pelvis to torso top
    torso_inertia: float = 0.25       # kg m^2 about torso COM
    thigh_mass: float = 3.0
    thigh_length: float = 0.4
    thigh_inertia: float = 0.04
    shank_mass: float = 2.0
    shank_length: float = 0.4
    shank_inertia: float = 2.0 * 0.4 * 0.4 / 12.0
    joint_damping: tuple[float, float, float, float] = (0.3, 0.3, 0.3, 0.3)
    ground_friction: float = 0.9
    contact_stiffness: float = 3.0e4  # N/m penalty spring
    contact_damping: float = 1500.0   # N s/m penalty damper (overdamped: no bounce)
    slip_speed: float = 0.05          # m/s tanh regularization of friction
    gravity: float = 9.81
    blowup_bound: float = 1.0e6       # any |q| or |qd| beyond this diverges
    dt_inner: float = 5.0e-4          # 2 kHz inner integration step
    n_inner: int = 50                 # inner steps per policy step (40 Hz)


@dataclass
class PDGains:
    """Joint-space PD servo gains, order (left hip, left knee, right hip, right knee)."""

    kp: tuple[float, float, float, float] = (180.0, 160.0, 180.0, 160.0)
    kd: tuple[float, float, float, float] = (10.0, 8.0, 10.0, 8.0)
    torque_limit: float = 150.0  # N m, symmetric clamp


@dataclass
class DynRandRanges:
    """Multiplicative uniform randomization ranges applied per episode."""

    damping: tuple[float, float] = (0.5, 1.5)
    mass: tuple[float, float] = (0.85, 1.15)
    friction: tuple[float, float] = (0.6, 1.2)


@dataclass
class TrayBoxSpec:
    """Box free to slide on a torso-fixed tray; drops off beyond the edge."""

    box_mass: float = 5.0
    half_width: float = 0.15          # m, tray half-extent
    friction: float = 0.2             # box-tray friction
    mount_x: float = 0.15             # tray origin offset from pelvis (torso frame)
    mount_z: float = 0.45
    drop_threshold: float = 0.3       # m strictly below tray plane = dropped


@dataclass
class CartSpec:
    """Ground-rolling cart towed by a tension-only rope from the pelvis."""

    cart_mass: float = 10.0
    rope_rest_length: float = 1.0
    friction: float = 0.4             # cart-ground friction
    rope_stiffness: float = 2000.0    # N/m when taut
    rope_damping: float = 50.0        # N s/m when taut


@dataclass
class CarryPoleSpec:
    """Two hanging point masses on massless rods, mounted fore and aft."""

    side_mass: float = 2.0            # kg per side
    rope_length: float = 0.5
    mount_fore_x: float = 0.35        # torso-frame mount offsets from pelvis
    mount_fore_z: float = 0.40
    mount_aft_x: float = -0.35
    mount_aft_z: float = 0.40


@dataclass
class WaterJugSpec:
    """Sloshing-liquid analog: spring-mounted deviation mass on a rigid jug body.

    The rigid body mass rides as attached point mass at the mount; the slosh
    mass is an equilibrium-relative oscillator exchanging only its spring and
    damper force, so a jug at rest transmits zero wrench.
    """

    slosh_mass: float = 1.5
    body_mass: float = 3.5            # non-sloshing remainder, rigidly carried
    stiffness_x: float = 80.0
    stiffness_z: float = 80.0
    damping_x: float = 1.1            # ~0.05 damping ratio at the defaults
    damping_z: float = 1.1
    travel_limit: float = 0.1         # m, slosh excursion before stop springs
    stop_stiffness: float = 5000.0
    mount_x: float = 0.15
    mount_z: float = 0.30


@dataclass
class LoadsConfig:
    """Parameters for every load kind; the active kind is chosen at run time."""

    tray_box: TrayBoxSpec = field(default_factory=TrayBoxSpec)
    cart: CartSpec = field(default_factory=CartSpec)
    carry_pole: CarryPoleSpec = field(default_factory=CarryPoleSpec)
    water_jug: WaterJugSpec = field(default_factory=WaterJugSpec)

    def spec_for(self, kind: str):
        """Return the parameter block for a load kind (None for 'unloaded')."""
        if kind == "unloaded":
            return None
        table = {
            "tray-box": self.tray_box,
            "cart": self.cart,
            "carry-pole": self.carry_pole,
            "water-jug": self.water_jug,
        }
        if kind not in table:
            raise ConfigError(
                f"unknown load kind {kind!r}; expected one of {LOAD_KINDS}"
            )
        return table[kind]


@dataclass
class RewardConfig:
    """Weights, kernel scales, and termination thresholds for the gait reward.

    Every error feeds an exp(-alpha * err^2) kernel mapping to (0, 1], so the
    total is bounded by the sum of active weights. The smoothing weight is
    split evenly across its three penalties (pelvis acceleration, torque,
    action difference).
    """

    w_velocity: float = 0.30
    w_orientation: float = 0.10
    w_smooth: float = 0.20
    w_foot: float = 0.35
    w_box: float = 0.05               # active only in specialized tray-box mode

    alpha_velocity: float = 5.0       # (m/s)^-2
    alpha_orientation: float = 5.0    # rad^-2
    alpha_accel: float = 0.010        # (m/s^2)^-2 pelvis acceleration
    alpha_torque: float = 2.0e-5      # (N m)^-2 summed squared joint torques
    alpha_action: float = 2.0         # rad^-2 summed squared setpoint changes
    alpha_foot_force: float = 1.0e-4  # N^-2 ground reaction during swing
    alpha_foot_speed: float = 2.0     # (m/s)^-2 foot speed during stance
    alpha_box: float = 50.0           # m^-2 box-to-tray-center distance

    height_floor: float = 0.4         # m, torso below this terminates
    reward_floor_frac: float = 0.2    # fraction of max total reward


@dataclass
class TrainConfig:
    """PPO training hyperparameters (desk-scale defaults)."""

    steps_per_iteration: int = 4096
    iterations: int = 300
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 3
    n_minibatches: int = 4
    learning_rate: float = 3.0e-4
    lr_final: float | None = None     # linear anneal target; None = constant
    grad_clip: float = 0.5
    value_coef: float = 0.5
    models: tuple[str, ...] = ("unloaded",)
    reward_mode: str = "specialized"  # or "general"
    init: str = "scratch"             # or a checkpoint path
    hidden_size: int = 64
    max_episode_steps: int = 300
    command_resample_steps: int = 100
    checkpoint_every: int = 50
    action_std_init: float = 0.2      # initial exploration std, rad


@dataclass
class EvalConfig:
    """Evaluation protocol sizes and limits."""

    trials: int = 200
    command_period: float = 2.5       # s between commands
    commands_per_trial: int = 4
    delta_min: float = 0.5            # m/s, min command-to-command change
    delta_max: float = 2.0
    speed_min: float = 0.0
    speed_max: float = 4.0
    push_start: float = 50.0          # N, first force tested
    push_step: float = 10.0
    push_directions: int = 36         # every 10 degrees
    push_duration: float = 0.2        # s impulse
    push_recovery: float = 3.0        # s survival window after impulse
    settle_seconds: float = 2.0       # walk-in-place before push / sweep
    below_threshold_force: float = 40.0  # contribution of a "< first force" result
    max_speed_grid: float = 0.1       # m/s sweep resolution
    max_speed_ramp: float = 3.0       # s command ramp per grid point
    max_speed_hold: float = 5.0       # s hold per grid point


@dataclass
class RunConfig:
    """Top-level config: everything a run needs plus the master seed."""

    model: ModelParams = field(default_factory=ModelParams)
    gains: PDGains = field(default_factory=PDGains)
    rand: DynRandRanges = field(default_factory=DynRandRanges)
    loads: LoadsConfig = field(default_factory=LoadsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0


def _coerce(value, ftype, path: str):
    """Coerce a JSON value to the annotated field type, or raise ConfigError."""
    origin = typing.get_origin(ftype)
    if origin in (types.UnionType, typing.Union):
        members = typing.get_args(ftype)
        if value is None:
            if type(None) in members:
                return None
            raise ConfigError(f"{path}: null is not allowed here")
        real = [m for m in members if m is not type(None)]
        if len(real) != 1:
            raise ConfigError(f"{path}: unsupported config field type {ftype!r}")
        return _coerce(value, real[0], path)
    if dataclasses.is_dataclass(ftype):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected object, got {type(value).__name__}")
        return _build(ftype, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected array, got {type(value).__name__}")
        args = typing.get_args(ftype)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(
            _coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args))
        )
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {type(value).__name__}")
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {type(value).__name__}")
        return int(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {type(value).__name__}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {ftype!r}")


def _build(cls, data: dict, path: str = ""):
    """Instantiate dataclass `cls` from a dict, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(
                f"unknown config key {where!r}; valid keys: {sorted(known)}"
            )
        kwargs[key] = _coerce(value, known[key], where)
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a plain dict, validating every key and type."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    return _build(RunConfig, data)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-dict form of a config (JSON-serializable, lists for tuples)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON config file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    """Write the fully-resolved config as pretty JSON."""
    Path(path).write_text(json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")


def validate(cfg: RunConfig) -> None:
    """Check cross-field invariants that typing alone cannot express."""
    t = cfg.train
    if not 0.0 < t.clip_eps < 1.0:
        raise ConfigError(f"train.clip_eps must be in (0, 1), got {t.clip_eps}")
    if not 0.0 < t.gamma <= 1.0:
        raise ConfigError(f"train.gamma must be in (0, 1], got {t.gamma}")
    if not 0.0 < t.gae_lambda <= 1.0:
        raise ConfigError(f"train.gae_lambda must be in (0, 1], got {t.gae_lambda}")
    for name in ("steps_per_iteration", "iterations", "epochs", "n_minibatches",
                 "hidden_size", "max_episode_steps"):
        if getattr(t, name) < 0 or (name != "iterations" and getattr(t, name) == 0):
            raise ConfigError(f"train.{name} must be positive, got {getattr(t, name)}")
    for kind in t.models:
        if kind not in LOAD_KINDS:
            raise ConfigError(
                f"train.models contains {kind!r}; expected one of {LOAD_KINDS}"
            )
    if t.reward_mode not in ("specialized", "general"):
        raise ConfigError(
            f"train.reward_mode must be 'specialized' or 'general', got {t.reward_mode!r}"
        )
    if t.lr_final is not None and not 0.0 < t.lr_final <= t.learning_rate:
        raise ConfigError(
            f"train.lr_final must be in (0, learning_rate], got {t.lr_final}"
        )
    for lo, hi, name in (
        (*cfg.rand.damping, "rand.damping"),
        (*cfg.rand.mass, "rand.mass"),
        (*cfg.rand.friction, "rand.friction"),
    ):
        if not (0.0 < lo <= hi):
            raise ConfigError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
    if cfg.model.dt_inner <= 0.0 or cfg.model.n_inner <= 0:
        raise ConfigError("model.dt_inner and model.n_inner must be positive")
    if cfg.eval.trials < 1:
        raise ConfigError(f"eval.trials must be >= 1, got {cfg.eval.trials}")
