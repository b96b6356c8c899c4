"""Evaluation harness: seeded episode sets, metric aggregation and the CSV
sinks consumed by the plotting tools.

Evaluation is pure computation; per-episode seeds are `seed+1 .. seed+N` and
scripted opponent types cycle deterministically, so identical specs always
produce identical summaries (and byte-identical CSV files once written).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import cola as colamod
from .cola import ColaConfig, GradientBuffer, TypeConjecturer
from .env import PED_TYPES, EventKind, PedType, ScenarioConfig
from .errors import ConfigError, UsageError
from .net import Checkpoint
from .train import (
    CAR,
    PEDESTRIAN,
    NetworkPolicy,
    ScriptedCarPolicy,
    ScriptedPedPolicy,
    rollout,
)

# ---------------------------------------------------------------------------
# Policy specifications


@dataclass(frozen=True)
class ScriptedCarSpec:
    role: str = CAR


@dataclass(frozen=True)
class ScriptedPedSpec:
    """Scripted pedestrian side; evaluation cycles through `types`."""

    types: tuple[PedType, ...] = PED_TYPES
    role: str = PEDESTRIAN

    def __post_init__(self):
        if not self.types:
            raise ConfigError("scripted pedestrian spec needs at least one type")


@dataclass(frozen=True)
class CheckpointSpec:
    checkpoint: Checkpoint
    role: str


@dataclass(frozen=True)
class ColaSpec:
    """Adaptive car policy: frozen base plus gradient buffer."""

    base: Checkpoint
    buffer: GradientBuffer
    config: ColaConfig
    conjecturer: TypeConjecturer | None = None
    role: str = CAR


PolicySpec = ScriptedCarSpec | ScriptedPedSpec | CheckpointSpec | ColaSpec


def _role_of(spec: PolicySpec) -> str:
    return spec.role


# ---------------------------------------------------------------------------
# Episode records and summaries


@dataclass(frozen=True)
class EpisodeRecord:
    seed: int
    ped_type: PedType | None
    reward_car: float
    reward_ped: float
    steps: int
    event: EventKind
    car_speeds: np.ndarray
    ped_speeds: np.ndarray
    ped_arrival_step: int | None


@dataclass
class MetricsSummary:
    episodes: int
    reward_mean: float
    reward_var: float
    collision_rate: float
    arrival_rate: float
    timeout_rate: float
    mean_tt_dest: float
    speed_mean: dict[str, np.ndarray] = field(default_factory=dict)
    speed_var: dict[str, np.ndarray] = field(default_factory=dict)


def _policy_for(spec: PolicySpec, ped_type: PedType | None):
    if isinstance(spec, ScriptedCarSpec):
        return ScriptedCarPolicy()
    if isinstance(spec, ScriptedPedSpec):
        return ScriptedPedPolicy(ped_type)
    if isinstance(spec, CheckpointSpec):
        return NetworkPolicy(spec.checkpoint.params, spec.checkpoint.shape)
    raise ConfigError(f"no direct policy for spec {spec!r}")


def _episode_ped_type(
    ped_spec: PolicySpec, index: int
) -> PedType | None:
    if isinstance(ped_spec, ScriptedPedSpec):
        return ped_spec.types[index % len(ped_spec.types)]
    return None


def run_eval_episodes(
    car_spec: PolicySpec,
    ped_spec: PolicySpec,
    episodes: int,
    seed: int,
    scenario: ScenarioConfig,
) -> list[EpisodeRecord]:
    """Roll the two sides against each other for `episodes` seeded episodes."""
    if _role_of(car_spec) != CAR or _role_of(ped_spec) != PEDESTRIAN:
        raise ConfigError("evaluation needs one car-side and one pedestrian-side spec")
    if episodes < 1:
        raise ConfigError("evaluation needs at least one episode")
    if isinstance(ped_spec, ColaSpec):
        raise ConfigError("the adaptive policy drives the car side only")
    records = []
    for i in range(episodes):
        ep_seed = seed + 1 + i
        ped_type = _episode_ped_type(ped_spec, i)
        if isinstance(car_spec, ColaSpec):
            if not isinstance(ped_spec, ScriptedPedSpec):
                raise ConfigError(
                    "adaptive evaluation needs scripted pedestrian opponents"
                )
            result = colamod.run_cola_episode(
                car_spec.base,
                car_spec.buffer,
                car_spec.config,
                scenario,
                ped_type,
                ep_seed,
                conjecturer=car_spec.conjecturer,
            )
            traj = result.trajectory
        else:
            traj = rollout(
                scenario,
                _policy_for(car_spec, ped_type),
                _policy_for(ped_spec, ped_type),
                ped_type,
                ep_seed,
            )
        ped_arrival = next(
            (st.state.t for st in traj.steps if st.state.d_p <= 1e-12), None
        )
        records.append(
            EpisodeRecord(
                seed=ep_seed,
                ped_type=ped_type,
                reward_car=float(traj.rewards(CAR).sum()),
                reward_ped=float(traj.rewards(PEDESTRIAN).sum()),
                steps=len(traj),
                event=traj.event.kind,
                car_speeds=np.array([st.state.v_c for st in traj.steps]),
                ped_speeds=np.array([st.state.v_p for st in traj.steps]),
                ped_arrival_step=ped_arrival,
            )
        )
    return records


def _padded_speed_stats(
    series: list[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step mean/variance across episodes; finished episodes contribute
    zero speed past their end, so arrival shows as the mean falling off.

    Bitwise-identical columns get an exact zero variance (np.var would
    leave summation dust there).
    """
    length = max(len(s) for s in series)
    mat = np.zeros((len(series), length))
    for i, s in enumerate(series):
        mat[i, : len(s)] = s
    var = mat.var(axis=0)
    var[np.all(mat == mat[0], axis=0)] = 0.0
    return mat.mean(axis=0), var


def summarize(records: list[EpisodeRecord], focus: str = CAR) -> MetricsSummary:
    if not records:
        raise UsageError("cannot summarize an empty evaluation")
    if focus not in (CAR, PEDESTRIAN):
        raise UsageError(f"unknown focus role {focus!r}")
    n = len(records)
    rewards = np.array(
        [r.reward_car if focus == CAR else r.reward_ped for r in records]
    )
    collisions = sum(r.event is EventKind.COLLISION for r in records)
    arrivals = sum(r.event is EventKind.CAR_ARRIVED for r in records)
    timeouts = sum(r.event is EventKind.TIMEOUT for r in records)
    if focus == CAR:
        tt = [r.steps for r in records if r.event is EventKind.CAR_ARRIVED]
    else:
        tt = [r.ped_arrival_step for r in records if r.ped_arrival_step is not None]
    car_mean, car_var = _padded_speed_stats([r.car_speeds for r in records])
    ped_mean, ped_var = _padded_speed_stats([r.ped_speeds for r in records])
    return MetricsSummary(
        episodes=n,
        reward_mean=float(rewards.mean()),
        reward_var=float(rewards.var()),
        collision_rate=collisions / n,
        arrival_rate=arrivals / n,
        timeout_rate=timeouts / n,
        mean_tt_dest=float(np.mean(tt)) if tt else math.nan,
        speed_mean={"car": car_mean, "ped": ped_mean},
        speed_var={"car": car_var, "ped": ped_var},
    )


def evaluate(
    car_spec: PolicySpec,
    ped_spec: PolicySpec,
    episodes: int,
    seed: int,
    scenario: ScenarioConfig,
    focus: str = CAR,
) -> MetricsSummary:
    """Seeded evaluation of one pairing, aggregated into a MetricsSummary."""
    return summarize(
        run_eval_episodes(car_spec, ped_spec, episodes, seed, scenario), focus=focus
    )


# ---------------------------------------------------------------------------
# Paired comparison


@dataclass(frozen=True)
class PairedStats:
    mean_diff: float
    ci_lo: float
    ci_hi: float

    @property
    def excludes_zero(self) -> bool:
        return self.ci_lo > 0 or self.ci_hi < 0


def paired_stats(a: np.ndarray, b: np.ndarray, z: float = 1.959963985) -> PairedStats:
    """Normal-approximation confidence interval for mean(a - b)."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
    return PairedStats(mean_diff=mean, ci_lo=mean - z * se, ci_hi=mean + z * se)


@dataclass
class CompareResult:
    summary_a: MetricsSummary
    summary_b: MetricsSummary
    reward_diff: PairedStats
    collision_diff: PairedStats
    records_a: list[EpisodeRecord]
    records_b: list[EpisodeRecord]


def compare(
    car_spec_a: PolicySpec,
    car_spec_b: PolicySpec,
    ped_spec: PolicySpec,
    episodes: int,
    seed: int,
    scenario: ScenarioConfig,
    focus: str = CAR,
) -> CompareResult:
    """Evaluate two car-side policies on identical per-episode seeds and
    opponent sequences; reports paired reward and collision differences."""
    rec_a = run_eval_episodes(car_spec_a, ped_spec, episodes, seed, scenario)
    rec_b = run_eval_episodes(car_spec_b, ped_spec, episodes, seed, scenario)
    assert [r.ped_type for r in rec_a] == [r.ped_type for r in rec_b]
    assert [r.seed for r in rec_a] == [r.seed for r in rec_b]
    rewards_a = np.array(
        [r.reward_car if focus == CAR else r.reward_ped for r in rec_a]
    )
    rewards_b = np.array(
        [r.reward_car if focus == CAR else r.reward_ped for r in rec_b]
    )
    coll_a = np.array([r.event is EventKind.COLLISION for r in rec_a], dtype=float)
    coll_b = np.array([r.event is EventKind.COLLISION for r in rec_b], dtype=float)
    return CompareResult(
        summary_a=summarize(rec_a, focus=focus),
        summary_b=summarize(rec_b, focus=focus),
        reward_diff=paired_stats(rewards_a, rewards_b),
        collision_diff=paired_stats(coll_a, coll_b),
        records_a=rec_a,
        records_b=rec_b,
    )


# ---------------------------------------------------------------------------
# CSV sinks


def _fmt(x: float) -> str:
    return f"{x:.9g}"


METRICS_COLUMNS = (
    "run_id",
    "episodes",
    "reward_mean",
    "reward_var",
    "collision_rate",
    "mean_tt_dest",
)

SPEED_COLUMNS = ("step", "agent", "speed_mean", "speed_var")


def write_metrics_csv(rows: list[tuple[str, MetricsSummary]], path) -> None:
    """Summary rows in input order, floats at 9 significant digits."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_COLUMNS)
            for run_id, m in rows:
                writer.writerow(
                    [
                        run_id,
                        m.episodes,
                        _fmt(m.reward_mean),
                        _fmt(m.reward_var),
                        _fmt(m.collision_rate),
                        _fmt(m.mean_tt_dest),
                    ]
                )
    except OSError as exc:
        raise ConfigError(f"cannot write metrics CSV at {path}: {exc}") from exc


def write_speed_csv(
    speed_mean: dict[str, np.ndarray], speed_var: dict[str, np.ndarray], path
) -> None:
    """Per-step speed statistics, agents in sorted order then step order."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SPEED_COLUMNS)
            for agent in sorted(speed_mean):
                means = speed_mean[agent]
                variances = speed_var[agent]
                for t in range(len(means)):
                    writer.writerow([t, agent, _fmt(means[t]), _fmt(variances[t])])
    except OSError as exc:
        raise ConfigError(f"cannot write speed CSV at {path}: {exc}") from exc


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_speed_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
