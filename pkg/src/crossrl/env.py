"""Crossing environment: a car driving toward a crosswalk and a pedestrian
crossing its lane.

The car moves along the x-axis from 0 toward ``car_dest``; the crosswalk sits
at ``crosswalk_x``. The pedestrian moves along the y-axis from 0 toward
``ped_dest``. Simultaneous occupancy of the conflict rectangle
(|x - crosswalk_x| <= conflict_x_halfwidth and y in [conflict_y_lo,
conflict_y_hi]) is a collision. Dynamics are point-mass longitudinal motion
with three discrete commands per agent (decelerate, cruise, accelerate); the
transition kernel itself is deterministic, all randomness lives in the
policies.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError

OBS_DIM = 12


class Action(enum.IntEnum):
    """Discrete longitudinal command; the numeric value is the signed code
    that enters the observation vector."""

    DECEL = -1
    CRUISE = 0
    ACCEL = 1

    @property
    def index(self) -> int:
        """Position of this action in a policy's output distribution."""
        return int(self) + 1


#: Actions ordered by distribution index (0 -> DECEL, 1 -> CRUISE, 2 -> ACCEL).
ACTIONS = (Action.DECEL, Action.CRUISE, Action.ACCEL)
N_ACTIONS = len(ACTIONS)


class PedType(enum.IntEnum):
    """Scripted pedestrian behavior types.

    T1_RANDOM walks erratically (cruise 0.2 / accelerate 0.43 / back off
    0.37 each step). T2_FAST5 ramps up to 5 km/h and holds. T3_SLOW3 ramps
    up to 3 km/h and holds.
    """

    T1_RANDOM = 1
    T2_FAST5 = 2
    T3_SLOW3 = 3

    @property
    def label(self) -> str:
        return f"T{int(self)}"


PED_TYPES = (PedType.T1_RANDOM, PedType.T2_FAST5, PedType.T3_SLOW3)
_LABEL_TO_TYPE = {t.label: t for t in PED_TYPES}


def ped_type_from_label(label: str) -> PedType:
    try:
        return _LABEL_TO_TYPE[label]
    except KeyError:
        raise ConfigError(f"unknown pedestrian type label {label!r}") from None


class EventKind(enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    CAR_ARRIVED = "car_arrived"
    PED_ARRIVED = "ped_arrived"
    TIMEOUT = "timeout"


_TERMINAL_KINDS = frozenset(
    {EventKind.COLLISION, EventKind.CAR_ARRIVED, EventKind.TIMEOUT}
)


@dataclass(frozen=True)
class StepEvent:
    kind: EventKind

    @property
    def terminal(self) -> bool:
        return self.kind in _TERMINAL_KINDS


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, kinematics and reward constants of the crossing scenario.

    Scripted fast/slow pedestrians saturate at ``ped_fast_speed`` /
    ``ped_slow_speed`` (5 and 3 km/h); the pedestrian may back up to
    ``ped_y_min`` meters behind its start line.
    """

    dt: float = 0.05
    horizon: int = 300
    car_dest: float = 40.0
    crosswalk_x: float = 30.0
    ped_dest: float = 6.0
    conflict_x_halfwidth: float = 2.0
    conflict_y_lo: float = 2.0
    conflict_y_hi: float = 4.0
    car_vmax: float = 4.0
    car_v0: float = 1.39
    car_accel: float = 1.5
    ped_vmax: float = 1.39
    ped_vmin: float = -1.39
    ped_accel: float = 1.0
    ped_fast_speed: float = 1.39
    ped_slow_speed: float = 0.833
    ped_y_min: float = -0.6
    car_progress_coef: float = 0.1
    ped_progress_coef: float = 0.5
    time_penalty: float = 0.01
    collision_penalty: float = 10.0
    arrival_bonus: float = 5.0

    def validate(self) -> "ScenarioConfig":
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not 0 < self.crosswalk_x < self.car_dest:
            raise ConfigError(
                f"need 0 < crosswalk_x < car_dest, got {self.crosswalk_x} vs {self.car_dest}"
            )
        if not self.conflict_y_lo < self.conflict_y_hi < self.ped_dest:
            raise ConfigError(
                "need conflict_y_lo < conflict_y_hi < ped_dest, got "
                f"{self.conflict_y_lo}, {self.conflict_y_hi}, {self.ped_dest}"
            )
        if self.conflict_x_halfwidth <= 0:
            raise ConfigError("conflict_x_halfwidth must be positive")
        if self.car_v0 > self.car_vmax:
            raise ConfigError(f"car_v0 {self.car_v0} exceeds car_vmax {self.car_vmax}")
        if not self.ped_vmin < 0 < self.ped_vmax:
            raise ConfigError(
                f"need ped_vmin < 0 < ped_vmax, got {self.ped_vmin}, {self.ped_vmax}"
            )
        if self.car_accel <= 0 or self.ped_accel <= 0:
            raise ConfigError("accelerations must be positive")
        if not 0 < self.ped_slow_speed <= self.ped_vmax:
            raise ConfigError("ped_slow_speed must lie in (0, ped_vmax]")
        if not 0 < self.ped_fast_speed <= self.ped_vmax:
            raise ConfigError("ped_fast_speed must lie in (0, ped_vmax]")
        if not -self.ped_dest < self.ped_y_min <= 0:
            raise ConfigError("ped_y_min must lie in (-ped_dest, 0]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class State:
    """Full environment state: the 12 observation components (current and
    previous distances, speeds and action codes for both agents) plus
    bookkeeping that is not observable (step index, terminal flag, scripted
    pedestrian type if any)."""

    d_c: float
    d_p: float
    v_c: float
    v_p: float
    a_c: int
    a_p: int
    prev_d_c: float
    prev_d_p: float
    prev_v_c: float
    prev_v_p: float
    prev_a_c: int
    prev_a_p: int
    t: int = 0
    done: bool = False
    ped_type: PedType | None = None


def rng_stream(seed) -> np.random.Generator:
    """Deterministic RNG stream for one episode; `seed` may be an int, a
    sequence of ints, or a SeedSequence."""
    return np.random.default_rng(seed)


def reset(
    cfg: ScenarioConfig, ped_type: PedType | None = None, seed=0
) -> tuple[State, np.random.Generator]:
    """Initial state plus the episode RNG stream.

    The car starts at x = 0 with its warm-up speed, the pedestrian at
    y = 0 standing still; previous-step slots mirror the current ones.
    """
    cfg.validate()
    state = State(
        d_c=cfg.car_dest,
        d_p=cfg.ped_dest,
        v_c=cfg.car_v0,
        v_p=0.0,
        a_c=0,
        a_p=0,
        prev_d_c=cfg.car_dest,
        prev_d_p=cfg.ped_dest,
        prev_v_c=cfg.car_v0,
        prev_v_p=0.0,
        prev_a_c=0,
        prev_a_p=0,
        t=0,
        done=False,
        ped_type=ped_type,
    )
    return state, rng_stream(seed)


def car_x(s: State, cfg: ScenarioConfig) -> float:
    return cfg.car_dest - s.d_c


def ped_y(s: State, cfg: ScenarioConfig) -> float:
    return cfg.ped_dest - s.d_p


def in_conflict_zone(x: float, y: float, cfg: ScenarioConfig) -> bool:
    """Collision predicate; a pure function of the two positions."""
    return (
        abs(x - cfg.crosswalk_x) <= cfg.conflict_x_halfwidth
        and cfg.conflict_y_lo <= y <= cfg.conflict_y_hi
    )


def _ped_speed_cap(cfg: ScenarioConfig, ped_type: PedType | None) -> float:
    # Scripted types saturate at their preferred walking speed; a learned
    # pedestrian only sees the global bound.
    if ped_type is PedType.T2_FAST5:
        return min(cfg.ped_vmax, cfg.ped_fast_speed)
    if ped_type is PedType.T3_SLOW3:
        return min(cfg.ped_vmax, cfg.ped_slow_speed)
    return cfg.ped_vmax


def step(
    s: State, a_car: Action, a_ped: Action, cfg: ScenarioConfig
) -> tuple[State, float, float, StepEvent]:
    """Advance one time step; returns (state', r_car, r_ped, event).

    Speeds update first, positions advance by the new speed times dt.
    """
    if s.done:
        raise UsageError("cannot step a terminal state")
    if s.t >= cfg.horizon:
        raise UsageError(f"step index {s.t} is at or past the horizon {cfg.horizon}")

    a_car = Action(a_car)
    a_ped = Action(a_ped)

    v_c = min(max(s.v_c + int(a_car) * cfg.car_accel * cfg.dt, 0.0), cfg.car_vmax)
    v_p = min(
        max(s.v_p + int(a_ped) * cfg.ped_accel * cfg.dt, cfg.ped_vmin),
        _ped_speed_cap(cfg, s.ped_type),
    )

    x_old = car_x(s, cfg)
    y_old = ped_y(s, cfg)
    x_raw = x_old + v_c * cfg.dt
    y_raw = y_old + v_p * cfg.dt
    x_new = min(x_raw, cfg.car_dest)
    y_new = min(max(y_raw, cfg.ped_y_min), cfg.ped_dest)

    collided = in_conflict_zone(x_new, y_new, cfg)
    car_arrived = x_raw >= cfg.car_dest
    ped_arrived = y_old < cfg.ped_dest and y_raw >= cfg.ped_dest
    t_new = s.t + 1

    if collided:
        kind = EventKind.COLLISION
    elif car_arrived:
        kind = EventKind.CAR_ARRIVED
    elif t_new >= cfg.horizon:
        kind = EventKind.TIMEOUT
    elif ped_arrived:
        kind = EventKind.PED_ARRIVED
    else:
        kind = EventKind.NONE
    event = StepEvent(kind)

    r_car = (
        cfg.car_progress_coef * (x_new - x_old)
        - cfg.time_penalty
        - cfg.collision_penalty * collided
        + cfg.arrival_bonus * car_arrived
    )
    r_ped = (
        cfg.ped_progress_coef * (y_new - y_old)
        - cfg.time_penalty
        - cfg.collision_penalty * collided
        + cfg.arrival_bonus * ped_arrived
    )

    state = State(
        d_c=cfg.car_dest - x_new,
        d_p=cfg.ped_dest - y_new,
        v_c=v_c,
        v_p=v_p,
        a_c=int(a_car),
        a_p=int(a_ped),
        prev_d_c=s.d_c,
        prev_d_p=s.d_p,
        prev_v_c=s.v_c,
        prev_v_p=s.v_p,
        prev_a_c=s.a_c,
        prev_a_p=s.a_p,
        t=t_new,
        done=event.terminal,
        ped_type=s.ped_type,
    )
    return state, r_car, r_ped, event


def level0_ped_action(
    ped_type: PedType,
    s: State,
    rng: np.random.Generator,
    cfg: ScenarioConfig | None = None,
) -> Action:
    """Scripted pedestrian policy for one step.

    T1 draws cruise/accelerate/back-off with probabilities 0.2/0.43/0.37;
    T2 and T3 accelerate until their target speed is reached, then cruise.
    Pass `cfg` to pick up non-default target speeds.
    """
    ped_type = PedType(ped_type)
    if ped_type is PedType.T1_RANDOM:
        u = rng.random()
        if u < 0.2:
            return Action.CRUISE
        if u < 0.2 + 0.43:
            return Action.ACCEL
        return Action.DECEL
    if ped_type is PedType.T2_FAST5:
        target = cfg.ped_fast_speed if cfg is not None else 1.39
    else:
        target = cfg.ped_slow_speed if cfg is not None else 0.833
    return Action.ACCEL if s.v_p < target else Action.CRUISE


def level0_car_action(s: State, cfg: ScenarioConfig) -> Action:
    """Scripted car policy: head for the destination flat out."""
    return Action.ACCEL if s.v_c < cfg.car_vmax else Action.CRUISE


def encode_obs(s: State, cfg: ScenarioConfig) -> np.ndarray:
    """Normalized 12-component observation vector fed to the networks."""
    return np.array(
        [
            s.d_c / cfg.car_dest,
            s.d_p / cfg.ped_dest,
            s.v_c / cfg.car_vmax,
            s.v_p / cfg.ped_vmax,
            float(s.a_c),
            float(s.a_p),
            s.prev_d_c / cfg.car_dest,
            s.prev_d_p / cfg.ped_dest,
            s.prev_v_c / cfg.car_vmax,
            s.prev_v_p / cfg.ped_vmax,
            float(s.prev_a_c),
            float(s.prev_a_p),
        ],
        dtype=np.float64,
    )
