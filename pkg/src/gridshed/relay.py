"""Inverse-time overcurrent relays.

Each line carries one relay with a standard inverse-time characteristic

    T(r) = alpha / (r**gamma - 1) + beta        for rate r > 1

and an induction-disk style travel accumulator for time-varying current:
the relay trips once the integral of dt / T(r(t)) reaches 1.0.  Below
pickup (r <= 1) the travel decays linearly and the relay resets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

DEFAULT_RESET_TIME = 10.0


@dataclass(frozen=True)
class RelayCurve:
    """Constants of one inverse-time characteristic."""

    alpha: float
    beta: float
    gamma: float
    name: str = "custom"

    def __post_init__(self):
        if self.alpha <= 0 or self.gamma <= 0 or self.beta < 0:
            raise ValueError(f"invalid relay curve constants: {self}")

    def with_time_dial(self, dial: float) -> "RelayCurve":
        """Scale the characteristic by a time-dial multiplier."""
        if dial <= 0:
            raise ValueError(f"time dial must be positive, got {dial}")
        return replace(self, alpha=self.alpha * dial, beta=self.beta * dial)


# IEEE C37.112 constant sets at time dial 1.
CURVES = {
    "moderately_inverse": RelayCurve(0.0515, 0.1140, 0.02, "moderately_inverse"),
    "very_inverse": RelayCurve(19.61, 0.491, 2.0, "very_inverse"),
    "extremely_inverse": RelayCurve(28.2, 0.1217, 2.0, "extremely_inverse"),
}

DEFAULT_CURVE = CURVES["very_inverse"]


@dataclass(frozen=True)
class RelayState:
    """Accumulated disk travel of one relay.  Travel 1.0 means trip."""

    epsilon: float = 0.0
    tripped: bool = False
    trip_time: float | None = None


def overcurrent_rate(i: float, pickup: float) -> float:
    """Current over pickup; > 1 times toward trip, <= 1 resets."""
    if pickup <= 0:
        raise ValueError(f"relay pickup must be positive, got {pickup}")
    return i / pickup


def trip_time(r: float, curve: RelayCurve) -> float:
    """Constant-current trip time in seconds; inf at or below pickup."""
    if r <= 1.0:
        return math.inf
    return curve.alpha / (r**curve.gamma - 1.0) + curve.beta


def step_relay(
    state: RelayState,
    r: float,
    dt: float,
    curve: RelayCurve,
    reset_time: float = DEFAULT_RESET_TIME,
    now: float = 0.0,
) -> RelayState:
    """Advance the travel accumulator by dt at constant rate r.

    `now` is the simulation time at the start of the interval; the trip
    instant is interpolated inside the interval, so under constant
    current the recorded trip time equals the closed-form exactly.
    A trip latches: no later input un-trips the relay.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state.tripped:
        return state
    if r > 1.0:
        t_trip = trip_time(r, curve)
        travel = state.epsilon + dt / t_trip
        if travel >= 1.0:
            crossing = now + (1.0 - state.epsilon) * t_trip
            return RelayState(epsilon=travel, tripped=True, trip_time=crossing)
        return RelayState(epsilon=travel)
    decayed = max(0.0, state.epsilon - dt / reset_time)
    return RelayState(epsilon=decayed)


def remaining_time(state: RelayState, r: float, curve: RelayCurve) -> float:
    """Seconds of travel left before trip at constant rate r; inf if r <= 1."""
    if state.tripped:
        return 0.0
    if r <= 1.0:
        return math.inf
    return (1.0 - state.epsilon) * trip_time(r, curve)


def resolve_curve(selector) -> RelayCurve:
    """Turn a case-file curve entry (name or mapping) into a RelayCurve.

    Accepts a catalog name, or a mapping with either {"name", "time_dial"}
    or raw {"alpha", "beta", "gamma"} constants.
    """
    if isinstance(selector, RelayCurve):
        return selector
    if selector is None:
        return DEFAULT_CURVE
    if isinstance(selector, str):
        try:
            return CURVES[selector]
        except KeyError:
            raise ValueError(
                f"unknown relay curve {selector!r}; known: {sorted(CURVES)}"
            ) from None
    if isinstance(selector, dict):
        if "alpha" in selector:
            return RelayCurve(
                float(selector["alpha"]),
                float(selector.get("beta", 0.0)),
                float(selector["gamma"]),
                str(selector.get("name", "custom")),
            )
        base = resolve_curve(selector.get("name"))
        if "time_dial" in selector:
            return base.with_time_dial(float(selector["time_dial"]))
        return base
    raise ValueError(f"cannot interpret relay curve entry {selector!r}")


def serialize_curve(curve: RelayCurve):
    """Inverse of resolve_curve for case-file round trips."""
    if CURVES.get(curve.name) == curve:
        return curve.name
    return {
        "alpha": curve.alpha,
        "beta": curve.beta,
        "gamma": curve.gamma,
        "name": curve.name,
    }
