"""Episode collection and advantage actor-critic training.

The base training loop alternates trajectory collection against a frozen
opponent with batched policy/value updates, stepping the learning rate down
through its stages once the moving-average episode reward stabilizes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import env as envmod
from . import net as netmod
from .env import (
    ACTIONS,
    Action,
    EventKind,
    PedType,
    ScenarioConfig,
    StepEvent,
)
from .errors import ConfigError, UsageError
from .net import ACTOR_SHAPE, CRITIC_SHAPE, AdamState, Checkpoint, NetShape

CAR = "car"
PEDESTRIAN = "pedestrian"
ROLES = (CAR, PEDESTRIAN)


# ---------------------------------------------------------------------------
# Policies


class ScriptedPedPolicy:
    """Level-0 pedestrian behavior of a fixed type."""

    def __init__(self, ped_type: PedType):
        self.ped_type = PedType(ped_type)

    def act(self, state, obs, cfg, rng):
        return envmod.level0_ped_action(self.ped_type, state, rng, cfg), None


class ScriptedCarPolicy:
    """Level-0 car: accelerate to the speed cap and hold it."""

    def act(self, state, obs, cfg, rng):
        return envmod.level0_car_action(state, cfg), None


class NetworkPolicy:
    """Stochastic policy backed by an actor network; samples every call."""

    def __init__(self, params: np.ndarray, shape: NetShape = ACTOR_SHAPE):
        if params.size != netmod.param_count(shape):
            raise UsageError("parameter vector does not match the network shape")
        self.params = params
        self.shape = shape
        self._sample = netmod.actor_sampler(params, shape)

    def act(self, state, obs, cfg, rng):
        idx, logp = self._sample(obs, rng)
        return ACTIONS[idx], logp


# ---------------------------------------------------------------------------
# Opponent descriptors


@dataclass(frozen=True)
class ScriptedPeds:
    """Scripted pedestrian opponents; one type is drawn per episode."""

    types: tuple[PedType, ...] = (PedType.T1_RANDOM, PedType.T2_FAST5, PedType.T3_SLOW3)
    probs: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.types:
            raise ConfigError("opponent type set must be nonempty")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if p.size != len(self.types) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigError("opponent type probabilities must form a simplex")


@dataclass(frozen=True)
class ScriptedCar:
    pass


@dataclass(frozen=True)
class CheckpointOpponent:
    """A frozen trained policy occupying the other player slot."""

    checkpoint: Checkpoint
    role: str
    label: str = "net"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"opponent role must be one of {ROLES}")


OpponentSpec = ScriptedPeds | ScriptedCar | CheckpointOpponent


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class TrajStep:
    state: envmod.State
    obs: np.ndarray
    a_car: Action
    a_ped: Action
    logprob: float | None
    r_car: float
    r_ped: float


@dataclass
class Trajectory:
    """One episode: per-step records, the closing event, and labels.

    `total_return` is the undiscounted sum of the learner-side rewards
    (car-side when there is no learner).
    """

    steps: list[TrajStep]
    event: StepEvent
    ped_type: PedType | None
    seed: int
    learner_role: str | None
    total_return: float = field(init=False)

    def __post_init__(self):
        self.total_return = float(sum(self.rewards(self.learner_role or CAR)))

    def __len__(self) -> int:
        return len(self.steps)

    def rewards(self, role: str) -> np.ndarray:
        if role == CAR:
            return np.array([st.r_car for st in self.steps], dtype=np.float64)
        if role == PEDESTRIAN:
            return np.array([st.r_ped for st in self.steps], dtype=np.float64)
        raise UsageError(f"unknown role {role!r}")

    def observations(self) -> np.ndarray:
        return np.stack([st.obs for st in self.steps])

    def action_indices(self, role: str) -> np.ndarray:
        if role == CAR:
            return np.array([st.a_car.index for st in self.steps], dtype=np.intp)
        return np.array([st.a_ped.index for st in self.steps], dtype=np.intp)

    @property
    def collided(self) -> bool:
        return self.event.kind is EventKind.COLLISION


def rollout_with_rngs(
    cfg: ScenarioConfig,
    car_policy,
    ped_policy,
    ped_type: PedType | None,
    rng_car: np.random.Generator,
    rng_ped: np.random.Generator,
    learner_role: str | None = None,
    seed: int = -1,
) -> Trajectory:
    """Run one episode with explicit per-side RNG streams.

    Each side consumes only its own stream, so a deterministic change on one
    side never perturbs the other side's random draws.
    """
    state, _ = envmod.reset(cfg, ped_type=ped_type, seed=0)
    steps: list[TrajStep] = []
    event = StepEvent(EventKind.TIMEOUT)
    while not state.done:
        obs = envmod.encode_obs(state, cfg)
        a_car, logp_car = car_policy.act(state, obs, cfg, rng_car)
        a_ped, logp_ped = ped_policy.act(state, obs, cfg, rng_ped)
        state, r_car, r_ped, event = envmod.step(state, a_car, a_ped, cfg)
        logp = logp_car if learner_role == CAR else logp_ped
        steps.append(
            TrajStep(
                state=state,
                obs=obs,
                a_car=a_car,
                a_ped=a_ped,
                logprob=logp,
                r_car=r_car,
                r_ped=r_ped,
            )
        )
    return Trajectory(
        steps=steps,
        event=event,
        ped_type=ped_type,
        seed=seed,
        learner_role=learner_role,
    )


def rollout(
    cfg: ScenarioConfig,
    car_policy,
    ped_policy,
    ped_type: PedType | None,
    seed,
    learner_role: str | None = None,
) -> Trajectory:
    """Seeded episode; the seed fans out into independent car/ped streams."""
    ss = np.random.SeedSequence(seed)
    child_car, child_ped = ss.spawn(2)
    return rollout_with_rngs(
        cfg,
        car_policy,
        ped_policy,
        ped_type,
        np.random.default_rng(child_car),
        np.random.default_rng(child_ped),
        learner_role=learner_role,
        seed=seed if isinstance(seed, int) else -1,
    )


def _opponent_policy(opponent: OpponentSpec, ped_type: PedType | None):
    if isinstance(opponent, ScriptedPeds):
        return ScriptedPedPolicy(ped_type)
    if isinstance(opponent, ScriptedCar):
        return ScriptedCarPolicy()
    if isinstance(opponent, CheckpointOpponent):
        return NetworkPolicy(opponent.checkpoint.params, opponent.checkpoint.shape)
    raise ConfigError(f"unknown opponent spec {opponent!r}")


def collect_episode(
    cfg: ScenarioConfig,
    learner_role: str,
    learner_params: np.ndarray,
    opponent: OpponentSpec,
    ped_type: PedType | None,
    seed,
) -> Trajectory:
    """One training episode of the learner network against its opponent."""
    if learner_role not in ROLES:
        raise ConfigError(f"learner role must be one of {ROLES}")
    learner = NetworkPolicy(learner_params)
    opp = _opponent_policy(opponent, ped_type)
    if learner_role == CAR:
        car_policy, ped_policy = learner, opp
    else:
        car_policy, ped_policy = opp, learner
    return rollout(cfg, car_policy, ped_policy, ped_type, seed, learner_role)


# ---------------------------------------------------------------------------
# Returns, advantages, updates


def returns_and_advantages(
    traj: Trajectory, critic_params: np.ndarray, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns-to-go and advantages against the critic baseline."""
    rewards = traj.rewards(traj.learner_role or CAR)
    returns = np.zeros_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        returns[i] = acc
    values = netmod.forward_batch(critic_params, CRITIC_SHAPE, traj.observations())
    return returns, returns - values


@dataclass(frozen=True)
class UpdateLosses:
    policy_objective: float
    critic_mse: float
    mean_entropy: float


def actor_critic_update(
    batch: list[Trajectory],
    actor: np.ndarray,
    critic: np.ndarray,
    actor_adam: AdamState,
    critic_adam: AdamState,
    lr: float,
    entropy_coef: float,
    gamma: float,
) -> tuple[np.ndarray, np.ndarray, AdamState, AdamState, UpdateLosses]:
    """One batched update: the actor ascends advantage-weighted log
    probabilities plus the entropy bonus, the critic descends its squared
    error against the empirical returns."""
    if not batch:
        raise UsageError("update needs a nonempty batch")
    role = batch[0].learner_role or CAR
    obs_list, act_list, adv_list, ret_list = [], [], [], []
    for traj in batch:
        returns, advs = returns_and_advantages(traj, critic, gamma)
        obs_list.append(traj.observations())
        act_list.append(traj.action_indices(role))
        adv_list.append(advs)
        ret_list.append(returns)
    xs = np.concatenate(obs_list)
    acts = np.concatenate(act_list)
    advs = np.concatenate(adv_list)
    rets = np.concatenate(ret_list)
    n = len(xs)

    actor_grad = netmod.policy_grad_batch(actor, ACTOR_SHAPE, xs, acts, advs / n)
    if entropy_coef != 0.0:
        actor_grad = actor_grad + (entropy_coef / n) * netmod.entropy_grad_batch(
            actor, ACTOR_SHAPE, xs
        )
    new_actor, new_actor_adam = netmod.adam_step(actor, actor_grad, actor_adam, lr)

    values = netmod.forward_batch(critic, CRITIC_SHAPE, xs)
    err = values - rets
    critic_grad = netmod.value_grad_batch(critic, CRITIC_SHAPE, xs, 2.0 * err / n)
    new_critic, new_critic_adam = netmod.adam_step(
        critic, -critic_grad, critic_adam, lr
    )

    probs = netmod.forward_batch(actor, ACTOR_SHAPE, xs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(probs > 0, probs * np.log(probs), 0.0).sum(axis=1)
    taken_logp = np.log(probs[np.arange(n), acts])
    losses = UpdateLosses(
        policy_objective=float(np.mean(advs * taken_logp)),
        critic_mse=float(np.mean(err * err)),
        mean_entropy=float(np.mean(ent)),
    )
    return new_actor, new_critic, new_actor_adam, new_critic_adam, losses


# ---------------------------------------------------------------------------
# Base training loop


@dataclass(frozen=True)
class TrainConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    learner_role: str = CAR
    level: int = 1
    opponent: OpponentSpec = field(default_factory=ScriptedPeds)
    lr_stages: tuple[float, ...] = (1e-4, 1e-5, 1e-6)
    episodes_per_stage: int = 20_000
    batch_size: int = 8
    gamma: float = 0.99
    entropy_coef: float = 0.01
    seed: int = 0
    convergence_window: int = 200
    convergence_threshold: float = 0.01

    def validate(self) -> "TrainConfig":
        self.scenario.validate()
        if self.learner_role not in ROLES:
            raise ConfigError(f"learner role must be one of {ROLES}")
        if any(lr <= 0 for lr in self.lr_stages):
            raise ConfigError("learning rates must be positive")
        if any(b >= a for a, b in zip(self.lr_stages, self.lr_stages[1:])):
            raise ConfigError("learning-rate stages must be decreasing")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.episodes_per_stage < 1:
            raise ConfigError("episodes_per_stage must be >= 1")
        if self.convergence_window < 1:
            raise ConfigError("convergence window must be >= 1")
        if isinstance(self.opponent, ScriptedCar) and self.learner_role == CAR:
            raise ConfigError("car learner cannot train against a scripted car")
        if (
            isinstance(self.opponent, CheckpointOpponent)
            and self.opponent.role == self.learner_role
        ):
            raise ConfigError("learner and opponent occupy the same player slot")
        return self


STATS_COLUMNS = ("episode", "ped_type", "reward", "steps", "collision", "lr_stage")


@dataclass
class TrainStats:
    """Per-episode training telemetry plus per-update losses."""

    rows: list[tuple] = field(default_factory=list)
    losses: list[UpdateLosses] = field(default_factory=list)

    def add_episode(self, episode, ped_label, reward, steps, collision, lr_stage):
        self.rows.append(
            (episode, ped_label, float(reward), int(steps), int(collision), lr_stage)
        )

    def rewards(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=np.float64)


def append_stats_csv(stats: TrainStats, path) -> None:
    """Append per-episode rows, writing the header on first touch."""
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(STATS_COLUMNS)
        for episode, ped, reward, steps, collision, stage in stats.rows:
            writer.writerow(
                [episode, ped, f"{reward:.9g}", steps, collision, f"{stage:.9g}"]
            )


def _episode_label(opponent: OpponentSpec, ped_type: PedType | None) -> str:
    if isinstance(opponent, ScriptedPeds):
        return ped_type.label
    if isinstance(opponent, ScriptedCar):
        return "car0"
    return opponent.label


def rl_base(
    tc: TrainConfig,
    init_actor: np.ndarray | None = None,
    init_critic: np.ndarray | None = None,
) -> tuple[Checkpoint, TrainStats]:
    """Train the learner against its frozen opponent through the staged
    learning-rate schedule.

    A stage ends when the moving-average reward over the convergence window
    moves by less than the threshold fraction between consecutive windows,
    or at the stage's episode cap. Fully deterministic in the config seed.
    """
    tc.validate()
    ss = np.random.SeedSequence([tc.seed, 0xC0])
    actor_seed, critic_seed, type_seed = ss.spawn(3)
    actor = init_actor.copy() if init_actor is not None else netmod.init_params(ACTOR_SHAPE, actor_seed)
    critic = (
        init_critic.copy() if init_critic is not None else netmod.init_params(CRITIC_SHAPE, critic_seed)
    )
    actor_adam = netmod.fresh_adam(actor.size)
    critic_adam = netmod.fresh_adam(critic.size)
    type_rng = np.random.default_rng(type_seed)

    stats = TrainStats()
    batch: list[Trajectory] = []
    episode = 0
    w = tc.convergence_window

    for stage_idx, lr in enumerate(tc.lr_stages):
        stage_rewards: list[float] = []
        while len(stage_rewards) < tc.episodes_per_stage:
            if isinstance(tc.opponent, ScriptedPeds):
                probs = tc.opponent.probs
                k = (
                    type_rng.integers(len(tc.opponent.types))
                    if probs is None
                    else type_rng.choice(len(tc.opponent.types), p=np.asarray(probs))
                )
                ped_type = tc.opponent.types[int(k)]
            else:
                ped_type = None
            traj = collect_episode(
                tc.scenario,
                tc.learner_role,
                actor,
                tc.opponent,
                ped_type,
                seed=[tc.seed, episode],
            )
            stats.add_episode(
                episode,
                _episode_label(tc.opponent, ped_type),
                traj.total_return,
                len(traj),
                traj.collided,
                lr,
            )
            stage_rewards.append(traj.total_return)
            episode += 1
            batch.append(traj)
            if len(batch) >= tc.batch_size:
                actor, critic, actor_adam, critic_adam, losses = actor_critic_update(
                    batch, actor, critic, actor_adam, critic_adam,
                    lr, tc.entropy_coef, tc.gamma,
                )
                stats.losses.append(losses)
                batch = []
            n = len(stage_rewards)
            if n >= 2 * w and n % w == 0:
                ma_now = float(np.mean(stage_rewards[-w:]))
                ma_prev = float(np.mean(stage_rewards[-2 * w : -w]))
                if abs(ma_now - ma_prev) < tc.convergence_threshold * abs(ma_prev):
                    break
        batch = []

    if isinstance(tc.opponent, ScriptedPeds):
        trained_vs = [t.label for t in tc.opponent.types]
    elif isinstance(tc.opponent, ScriptedCar):
        trained_vs = ["car0"]
    else:
        trained_vs = [
            f"{tc.opponent.label}:{tc.opponent.checkpoint.params_hash()[:16]}"
        ]
    ckpt = Checkpoint(
        params=actor,
        shape=ACTOR_SHAPE,
        metadata={
            "agent": tc.learner_role,
            "level": tc.level,
            "trained_vs": trained_vs,
            "episodes": episode,
            "lr_schedule": list(tc.lr_stages),
            "seed": tc.seed,
        },
        critic_params=critic,
        critic_shape=CRITIC_SHAPE,
    )
    return ckpt, stats


def finetune_run(
    base: Checkpoint, tc: TrainConfig, episodes: int, lr: float
) -> tuple[Checkpoint, TrainStats]:
    """Continue training from a checkpoint for exactly `episodes` episodes at
    one fixed learning rate."""
    if episodes < 1:
        raise ConfigError("fine-tuning needs at least one episode")
    if base.critic_params is None:
        raise ConfigError("checkpoint lacks critic parameters; cannot resume")
    run_tc = replace(
        tc,
        lr_stages=(lr,),
        episodes_per_stage=episodes,
        convergence_threshold=0.0,
    )
    return rl_base(run_tc, init_actor=base.params, init_critic=base.critic_params)
