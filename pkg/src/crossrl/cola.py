"""Online lookahead adaptation with a type-labeled gradient buffer.

While rolling out the frozen base policy against each scripted pedestrian
type, short-segment policy-gradient estimates are stored per type. At run
time the car keeps a belief over the opponent's type and, every L steps,
nudges its episode-local parameters along the belief-weighted mean of
sampled stored gradients. The belief comes either from an oracle (the true
type) or from a feature-based conjecturer fitted on scripted rollouts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from . import net as netmod
from .env import ACTIONS, PED_TYPES, PedType, ScenarioConfig
from .errors import AdaptationError, ConfigError, UsageError
from .net import ACTOR_SHAPE, CRITIC_SHAPE, ActionDist, Checkpoint
from .train import (
    CAR,
    NetworkPolicy,
    ScriptedCarPolicy,
    ScriptedPedPolicy,
    Trajectory,
    TrajStep,
    rollout,
)

ORACLE = "oracle"
INFERRED = "inferred"


# ---------------------------------------------------------------------------
# Beliefs


def validate_belief(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (len(PED_TYPES),):
        raise UsageError(f"belief must have {len(PED_TYPES)} entries")
    if np.any(b < 0) or abs(float(b.sum()) - 1.0) > 1e-9:
        raise UsageError("belief must lie on the probability simplex")
    return b


def one_hot_belief(ped_type: PedType) -> np.ndarray:
    b = np.zeros(len(PED_TYPES))
    b[PED_TYPES.index(PedType(ped_type))] = 1.0
    return b


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ColaConfig:
    lookahead_period: int = 10
    sample_size: int = 32
    step_size: float = 1e-3
    capacity_per_type: int = 500
    belief_mode: str = ORACLE
    episodes_per_type: int = 1000
    segment_len: int = 10
    gamma: float = 0.99
    window: int = 50

    def validate(self) -> "ColaConfig":
        if self.lookahead_period < 1:
            raise ConfigError("lookahead period must be >= 1")
        if self.sample_size < 1:
            raise ConfigError("gradient sample batch size must be >= 1")
        if self.step_size < 0:
            raise ConfigError("adaptation step size must be nonnegative")
        if self.capacity_per_type < 1:
            raise ConfigError("buffer capacity must be >= 1")
        if self.belief_mode not in (ORACLE, INFERRED):
            raise ConfigError(f"belief mode must be {ORACLE!r} or {INFERRED!r}")
        if self.episodes_per_type < 1:
            raise ConfigError("episodes per type must be >= 1")
        if self.segment_len < 1:
            raise ConfigError("segment length must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.window < 1:
            raise ConfigError("observation window must be >= 1")
        return self


# ---------------------------------------------------------------------------
# Gradient buffer


@dataclass(frozen=True)
class BufferEntry:
    episode: int
    segment: int
    grad: np.ndarray


class GradientBuffer:
    """Per-type FIFO store of segment policy-gradient estimates, tied to the
    base checkpoint that produced them."""

    def __init__(self, base_hash: str, segment_len: int, capacity_per_type: int):
        if capacity_per_type < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.base_hash = base_hash
        self.segment_len = int(segment_len)
        self.capacity_per_type = int(capacity_per_type)
        self._entries: dict[PedType, list[BufferEntry]] = {t: [] for t in PED_TYPES}

    def add(self, ped_type: PedType, entry: BufferEntry) -> None:
        if entry.grad.size != netmod.param_count(ACTOR_SHAPE):
            raise UsageError("stored gradient does not match the actor size")
        bucket = self._entries[PedType(ped_type)]
        bucket.append(entry)
        if len(bucket) > self.capacity_per_type:
            del bucket[: len(bucket) - self.capacity_per_type]

    def count(self, ped_type: PedType) -> int:
        return len(self._entries[PedType(ped_type)])

    def counts(self) -> dict[str, int]:
        return {t.label: len(self._entries[t]) for t in PED_TYPES}

    def entries(self, ped_type: PedType) -> list[BufferEntry]:
        return list(self._entries[PedType(ped_type)])

    def sample(self, ped_type: PedType, rng: np.random.Generator) -> np.ndarray:
        bucket = self._entries[PedType(ped_type)]
        if not bucket:
            raise AdaptationError(f"no stored gradients for {PedType(ped_type).label}")
        return bucket[int(rng.integers(len(bucket)))].grad

    def save(self, path) -> None:
        header = {
            "base_hash": self.base_hash,
            "segment_len": self.segment_len,
            "capacity_per_type": self.capacity_per_type,
            "counts": self.counts(),
        }
        arrays: dict[str, np.ndarray] = {
            "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
        }
        for t in PED_TYPES:
            bucket = self._entries[t]
            if bucket:
                arrays[f"grads_{t.label}"] = np.stack([e.grad for e in bucket])
                arrays[f"meta_{t.label}"] = np.array(
                    [(e.episode, e.segment) for e in bucket], dtype=np.int64
                )
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load(cls, path, expected_base_hash: str | None = None) -> "GradientBuffer":
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            buf = cls(
                base_hash=header["base_hash"],
                segment_len=header["segment_len"],
                capacity_per_type=header["capacity_per_type"],
            )
            if (
                expected_base_hash is not None
                and header["base_hash"] != expected_base_hash
            ):
                raise ConfigError(
                    "gradient buffer was built for a different base checkpoint "
                    f"({header['base_hash'][:16]} != {expected_base_hash[:16]})"
                )
            for t in PED_TYPES:
                key = f"grads_{t.label}"
                if key in data:
                    grads = data[key]
                    meta = data[f"meta_{t.label}"]
                    for (ep, seg), g in zip(meta, grads):
                        buf.add(t, BufferEntry(int(ep), int(seg), g.copy()))
        return buf


def _segment_scales(
    rewards: np.ndarray,
    start: int,
    stop: int,
    gamma: float,
    values: np.ndarray | None,
    episode_len: int,
) -> np.ndarray:
    """Per-step weights of one segment: the discounted return-to-go truncated
    at the segment end, bootstrapped with the value of the next state and
    baselined by the value of the current one when a critic is available."""
    tail = 0.0
    if values is not None and stop < episode_len:
        tail = float(values[stop])
    scales = np.zeros(stop - start)
    acc = tail
    for i in range(stop - start - 1, -1, -1):
        acc = rewards[start + i] + gamma * acc
        scales[i] = acc
    if values is not None:
        scales = scales - values[start:stop]
    return scales


def segment_gradients(
    traj: Trajectory,
    base_params: np.ndarray,
    segment_len: int,
    gamma: float,
    critic_params: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Per-segment policy gradients of one rollout.

    Within each contiguous segment, log-prob gradients are weighted by the
    discounted return-to-go truncated at the segment end. With a critic the
    weights are the bootstrapped advantages instead (the n-step actor-critic
    gradient the base trainer itself uses); without one they reduce to the
    raw truncated returns.
    """
    grads = []
    xs = traj.observations()
    acts = traj.action_indices(CAR)
    rewards = traj.rewards(CAR)
    values = (
        netmod.forward_batch(critic_params, CRITIC_SHAPE, xs)
        if critic_params is not None
        else None
    )
    for start in range(0, len(traj), segment_len):
        stop = min(start + segment_len, len(traj))
        scales = _segment_scales(rewards, start, stop, gamma, values, len(traj))
        grads.append(
            netmod.policy_grad_batch(
                base_params, ACTOR_SHAPE, xs[start:stop], acts[start:stop], scales
            )
        )
    return grads


_CRITIC_FIT_ITERS = 300
_CRITIC_FIT_LR = 1e-3


def _fit_type_critic(
    base: Checkpoint, episodes: list[tuple], gamma: float
) -> np.ndarray:
    """Refit the base critic on rollouts against one fixed type, so stored
    advantages are measured against that type's own value function."""
    xs = np.concatenate([ep[0] for ep in episodes])
    returns = []
    for _, _, rewards in episodes:
        g = np.zeros_like(rewards)
        acc = 0.0
        for i in range(len(rewards) - 1, -1, -1):
            acc = rewards[i] + gamma * acc
            g[i] = acc
        returns.append(g)
    g_all = np.concatenate(returns)
    params = base.critic_params.copy()
    st = netmod.fresh_adam(params.size)
    for _ in range(_CRITIC_FIT_ITERS):
        v = netmod.forward_batch(params, CRITIC_SHAPE, xs)
        grad = netmod.value_grad_batch(
            params, CRITIC_SHAPE, xs, 2.0 * (v - g_all) / len(xs)
        )
        params, st = netmod.adam_step(params, -grad, st, _CRITIC_FIT_LR)
    return params


def fill_gradient_buffer(
    base: Checkpoint,
    scenario: ScenarioConfig,
    cc: ColaConfig,
    types: tuple[PedType, ...] = PED_TYPES,
    seed: int = 0,
) -> GradientBuffer:
    """Roll out the frozen base car against each scripted type and store the
    segment gradients, labeled by type.

    When the base checkpoint carries a critic, a per-type refit of it
    supplies the advantage baselines; otherwise the raw truncated returns
    are stored.
    """
    cc.validate()
    if not types:
        raise ConfigError("type set for buffer filling must be nonempty")
    buf = GradientBuffer(
        base_hash=base.params_hash(),
        segment_len=cc.segment_len,
        capacity_per_type=cc.capacity_per_type,
    )
    car_policy = NetworkPolicy(base.params, base.shape)
    for t in types:
        t = PedType(t)
        episodes = []
        for ep in range(cc.episodes_per_type):
            traj = rollout(
                scenario,
                car_policy,
                ScriptedPedPolicy(t),
                t,
                seed=[seed, int(t), ep],
                learner_role=CAR,
            )
            episodes.append(
                (traj.observations(), traj.action_indices(CAR), traj.rewards(CAR))
            )
        critic_j = (
            _fit_type_critic(base, episodes, cc.gamma)
            if base.critic_params is not None
            else None
        )
        for ep_idx, (xs, acts, rewards) in enumerate(episodes):
            values = (
                netmod.forward_batch(critic_j, CRITIC_SHAPE, xs)
                if critic_j is not None
                else None
            )
            n = len(xs)
            for seg_idx, start in enumerate(range(0, n, cc.segment_len)):
                stop = min(start + cc.segment_len, n)
                scales = _segment_scales(rewards, start, stop, cc.gamma, values, n)
                grad = netmod.policy_grad_batch(
                    base.params, ACTOR_SHAPE, xs[start:stop], acts[start:stop], scales
                )
                buf.add(t, BufferEntry(episode=ep_idx, segment=seg_idx, grad=grad))
    return buf


# ---------------------------------------------------------------------------
# Type conjecture


@dataclass
class ObsWindow:
    """Rolling window of the most recent (state, car action, ped action)
    tuples, newest last."""

    capacity: int
    entries: list = field(default_factory=list)

    def push(self, state, a_car, a_ped) -> None:
        self.entries.append((state, a_car, a_ped))
        if len(self.entries) > self.capacity:
            del self.entries[: len(self.entries) - self.capacity]

    def __len__(self) -> int:
        return len(self.entries)


def window_features(window: ObsWindow) -> np.ndarray:
    """(mean ped speed, ped speed variance, ped action frequencies)."""
    if len(window) == 0:
        raise UsageError("cannot featurize an empty window")
    speeds = np.array([s.v_p for s, _, _ in window.entries], dtype=np.float64)
    codes = np.array([int(ap) for _, _, ap in window.entries], dtype=np.int64)
    freqs = np.array([(codes == c).mean() for c in (-1, 0, 1)])
    return np.concatenate(([speeds.mean(), speeds.var()], freqs))


@dataclass
class TypeConjecturer:
    """Nearest-centroid conjecturer over window features.

    Squared distances are softened by an input-adaptive bandwidth: windows
    far from every centroid (short or uninformative histories) spread the
    belief out, windows matching one type sharpen it.
    """

    centroids: np.ndarray
    feature_scale: np.ndarray
    base_bandwidth: float
    window: int
    softening: float = 4.0

    def infer(self, window: ObsWindow) -> np.ndarray:
        feats = window_features(window) / self.feature_scale
        d2 = ((self.centroids - feats) ** 2).sum(axis=1)
        tau = self.base_bandwidth + self.softening * float(d2.min())
        b = np.exp(-(d2 - d2.min()) / tau)
        return b / b.sum()


def fit_type_conjecturer(
    scenario: ScenarioConfig,
    episodes_per_type: int = 10,
    window: int = 50,
    seed: int = 0,
) -> TypeConjecturer:
    """Fit per-type feature centroids from scripted rollouts against the
    level-0 car."""
    feature_rows: dict[PedType, list[np.ndarray]] = {t: [] for t in PED_TYPES}
    for t in PED_TYPES:
        for ep in range(episodes_per_type):
            traj = rollout(
                scenario,
                ScriptedCarPolicy(),
                ScriptedPedPolicy(t),
                t,
                seed=[seed, 0xFE, int(t), ep],
            )
            win = ObsWindow(capacity=window)
            for st in traj.steps:
                win.push(st.state, st.a_car, st.a_ped)
                if len(win) == window or st.state.done:
                    feature_rows[t].append(window_features(win))
    all_feats = np.concatenate([np.stack(rows) for rows in feature_rows.values()])
    scale = all_feats.std(axis=0) + 1e-8
    centroids = np.stack(
        [np.stack(feature_rows[t]).mean(axis=0) / scale for t in PED_TYPES]
    )
    within = []
    for k, t in enumerate(PED_TYPES):
        scaled = np.stack(feature_rows[t]) / scale
        within.extend(((scaled - centroids[k]) ** 2).sum(axis=1))
    return TypeConjecturer(
        centroids=centroids,
        feature_scale=scale,
        base_bandwidth=max(float(np.mean(within)), 1e-3),
        window=window,
    )


def infer_type(window: ObsWindow, conjecturer: TypeConjecturer) -> np.ndarray:
    """Belief over pedestrian types from the recent observation window."""
    if len(window) == 0:
        raise UsageError("type inference needs a nonempty window")
    return validate_belief(conjecturer.infer(window))


def update_belief(
    mode: str,
    window: ObsWindow | None = None,
    true_type: PedType | None = None,
    conjecturer: TypeConjecturer | None = None,
) -> np.ndarray:
    """Oracle mode returns the one-hot truth; inferred mode delegates to the
    conjecturer."""
    if mode == ORACLE:
        if true_type is None:
            raise UsageError("oracle belief needs the true pedestrian type")
        return one_hot_belief(true_type)
    if mode == INFERRED:
        if window is None or conjecturer is None:
            raise UsageError("inferred belief needs a window and a conjecturer")
        return infer_type(window, conjecturer)
    raise UsageError(f"unknown belief mode {mode!r}")


# ---------------------------------------------------------------------------
# Adaptation


def cola_adapt_step(
    theta: np.ndarray,
    belief: np.ndarray,
    buf: GradientBuffer,
    sample_size: int,
    step_size: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One lookahead update: draw `sample_size` stored gradients (type by
    belief, then uniformly within the type) and move along their mean."""
    belief = validate_belief(belief)
    for t, b in zip(PED_TYPES, belief):
        if b > 0 and buf.count(t) == 0:
            raise AdaptationError(
                f"belief places mass on {t.label} but its gradient bucket is empty"
            )
    total = np.zeros_like(theta)
    type_idx = rng.choice(len(PED_TYPES), size=sample_size, p=belief)
    for k in type_idx:
        total += buf.sample(PED_TYPES[int(k)], rng)
    return theta + step_size * (total / sample_size)


@dataclass(frozen=True)
class AdaptationEvent:
    """Telemetry for one lookahead update."""

    t: int
    belief: np.ndarray
    theta: np.ndarray
    kl_mean: float
    exceeds_delta: bool


KL_REPORT_DELTA = 0.01


def kl_diag(d1: ActionDist, d2: ActionDist) -> float:
    """KL divergence between two action distributions; infinite when d2
    lacks support somewhere d1 has mass."""
    p = np.asarray(d1.probs, dtype=np.float64)
    q = np.asarray(d2.probs, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] == 0):
        return float("inf")
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


@dataclass
class ColaEpisode:
    trajectory: Trajectory
    events: list[AdaptationEvent]
    fallbacks: int


def run_cola_episode(
    base: Checkpoint,
    buf: GradientBuffer,
    cc: ColaConfig,
    scenario: ScenarioConfig,
    ped_type: PedType,
    seed,
    conjecturer: TypeConjecturer | None = None,
) -> ColaEpisode:
    """One adaptive episode: act with episode-local parameters, refresh the
    belief and take a buffer step every `lookahead_period` steps.

    Adaptation never touches the base checkpoint; an adaptation step whose
    gradient bucket is empty falls back to the unchanged parameters.
    """
    cc.validate()
    if buf.base_hash != base.params_hash():
        raise ConfigError("gradient buffer does not belong to this base checkpoint")
    if cc.belief_mode == INFERRED and conjecturer is None:
        raise ConfigError("inferred belief mode needs a fitted conjecturer")

    ss = np.random.SeedSequence(seed)
    child_car, child_ped, child_adapt = ss.spawn(3)
    rng_car = np.random.default_rng(child_car)
    rng_ped = np.random.default_rng(child_ped)
    rng_adapt = np.random.default_rng(child_adapt)

    theta = base.params.copy()
    sampler = netmod.actor_sampler(theta, ACTOR_SHAPE)
    ped_policy = ScriptedPedPolicy(ped_type)
    window = ObsWindow(capacity=cc.window)
    state, _ = envmod.reset(scenario, ped_type=ped_type, seed=0)
    steps = []
    events: list[AdaptationEvent] = []
    fallbacks = 0
    event = None

    while not state.done:
        obs = envmod.encode_obs(state, scenario)
        idx, logp = sampler(obs, rng_car)
        a_car = ACTIONS[idx]
        a_ped, _ = ped_policy.act(state, obs, scenario, rng_ped)
        window.push(state, a_car, a_ped)
        state, r_car, r_ped, event = envmod.step(state, a_car, a_ped, scenario)
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
        t = state.t
        if t % cc.lookahead_period == 0:
            belief = update_belief(
                cc.belief_mode,
                window=window,
                true_type=ped_type,
                conjecturer=conjecturer,
            )
            try:
                new_theta = cola_adapt_step(
                    theta, belief, buf, cc.sample_size, cc.step_size, rng_adapt
                )
            except AdaptationError:
                fallbacks += 1
                new_theta = theta
            recent = [e[0] for e in window.entries[-cc.lookahead_period :]]
            kl_mean = _mean_kl(theta, new_theta, recent, scenario)
            events.append(
                AdaptationEvent(
                    t=t,
                    belief=belief,
                    theta=new_theta.copy(),
                    kl_mean=kl_mean,
                    exceeds_delta=kl_mean > KL_REPORT_DELTA,
                )
            )
            if new_theta is not theta:
                theta = new_theta
                sampler = netmod.actor_sampler(theta, ACTOR_SHAPE)

    traj = Trajectory(
        steps=steps,
        event=event,
        ped_type=ped_type,
        seed=seed if isinstance(seed, int) else -1,
        learner_role=CAR,
    )
    return ColaEpisode(trajectory=traj, events=events, fallbacks=fallbacks)


def _mean_kl(theta_old, theta_new, recent_states, scenario) -> float:
    obs = np.stack([envmod.encode_obs(s, scenario) for s in recent_states])
    p_old = netmod.forward_batch(theta_old, ACTOR_SHAPE, obs)
    p_new = netmod.forward_batch(theta_new, ACTOR_SHAPE, obs)
    # saturated softmax outputs can underflow to exact zeros; report inf
    # there rather than warn, matching kl_diag
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p_old > 0, p_old * (np.log(p_old) - np.log(p_new)), 0.0)
    return float(terms.sum(axis=1).mean())
