"""Periodic gait specification: the foot-weighting clock and the speed schedule.

A gait cycle of length `cycle_time` seconds is split per foot into a swing
window and a stance window. A piecewise-linear weight says how strongly each
instant counts as swing (1) or stance (0), with short linear ramps at the
window boundaries so the reward never jumps. The two feet run the same clock
half a cycle apart (symmetric walking). Faster commanded speeds use longer
swing fractions and faster stepping, linearly interpolated between anchor
speeds.
"""

from __future__ import annotations

from dataclasses import dataclass

# Fraction of the swing window spent in EACH linear transition (one ramp up,
# one ramp down), i.e. 20% of swing in transition total, split symmetrically.
_RAMP_FRACTION = 0.10


@dataclass(frozen=True)
class GaitParams:
    """Gait cycle shape: swing fraction, cycle length, inter-foot offset.

    `phase_offset` is fixed at 0.5 (anti-phase feet, symmetric walking) and
    kept as a field only so the value is visible where it is used.
    """

    swing_ratio: float
    cycle_time: float
    phase_offset: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.swing_ratio < 1.0:
            raise ValueError(f"swing_ratio must be in (0, 1), got {self.swing_ratio}")
        if self.cycle_time <= 0.0:
            raise ValueError(f"cycle_time must be positive, got {self.cycle_time}")
        if self.phase_offset != 0.5:
            raise ValueError("phase_offset is fixed at 0.5 for symmetric walking")


@dataclass(frozen=True)
class ClockState:
    """Position within the gait cycle, in seconds, wrapped modulo cycle_time."""

    phase: float = 0.0

    def advanced(self, dt: float, gait: GaitParams) -> "ClockState":
        """Clock after `dt` seconds, wrapped into [0, cycle_time)."""
        return ClockState((self.phase + dt) % gait.cycle_time)

    def rescaled(self, old: GaitParams, new: GaitParams) -> "ClockState":
        """Same fractional cycle position expressed against a new cycle time.

        Used when a command change alters the gait mid-episode: the cycle
        position is preserved as a fraction so the feet never teleport.
        """
        frac = (self.phase % old.cycle_time) / old.cycle_time
        return ClockState(frac * new.cycle_time)


def clock_weight(phase: float, gait: GaitParams, foot: str) -> float:
    """Swing weight in [0, 1] for one foot at a cycle position.

    The left foot's swing occupies [0, swing_ratio * cycle_time): a linear
    ramp 0 -> 1 over the first 10% of the swing duration, a plateau at 1, and
    a ramp 1 -> 0 over the last 10%; the weight is 0 throughout stance. The
    right foot is the left foot's function advanced half a cycle. The stance
    weight is 1 minus the swing weight.
    """
    if foot not in ("left", "right"):
        raise ValueError(f"foot must be 'left' or 'right', got {foot!r}")
    ct = gait.cycle_time
    p = phase % ct
    if foot == "right":
        p = (p + 0.5 * ct) % ct
    swing = gait.swing_ratio * ct
    ramp = _RAMP_FRACTION * swing
    if p < ramp:
        return p / ramp
    if p < swing - ramp:
        return 1.0
    if p < swing:
        return (swing - p) / ramp
    return 0.0


def stance_weight(phase: float, gait: GaitParams, foot: str) -> float:
    """Stance weight = 1 - swing weight."""
    return 1.0 - clock_weight(phase, gait, foot)


# (speed m/s, swing ratio, stepping frequency Hz). The schedule is this
# table with linear interpolation between rows; anchor speeds return the
# row values exactly (no interpolation arithmetic, so no rounding).
_SPEED_TABLE = (
    (1.0, 0.40, 1.0),
    (2.0, 0.60, 1.25),
    (3.0, 0.80, 1.5),
)


def gait_params_for_speed(speed: float) -> GaitParams:
    """Gait shape for a commanded speed, clamped to [0, 4] m/s.

    At and below 1 m/s: swing ratio 0.40, stepping frequency 1.0 Hz; rising
    linearly through (2 m/s: 0.60, 1.25 Hz) to (3 m/s: 0.80, 1.5 Hz); held
    above 3 m/s. cycle_time = 1 / frequency. Continuous and monotone
    nondecreasing in both outputs.
    """
    s = min(4.0, max(0.0, speed))
    if s <= _SPEED_TABLE[0][0]:
        swing, freq = _SPEED_TABLE[0][1], _SPEED_TABLE[0][2]
    elif s >= _SPEED_TABLE[-1][0]:
        swing, freq = _SPEED_TABLE[-1][1], _SPEED_TABLE[-1][2]
    else:
        swing = freq = None
        for (s0, w0, f0), (s1, w1, f1) in zip(_SPEED_TABLE, _SPEED_TABLE[1:]):
            if s == s0:
                swing, freq = w0, f0
                break
            if s0 < s < s1:
                t = (s - s0) / (s1 - s0)
                swing = w0 + (w1 - w0) * t
                freq = f0 + (f1 - f0) * t
                break
    return GaitParams(swing_ratio=swing, cycle_time=1.0 / freq)
