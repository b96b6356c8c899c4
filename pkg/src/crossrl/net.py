"""Feed-forward policy and value networks over flat float64 parameter
vectors, with exact hand-written backpropagation and an Adam optimizer.

Parameters of a network with sizes (n0, n1, ..., nL) are stored as one flat
vector laid out layer by layer, weight matrix (row-major, shape n_out x n_in)
followed by bias. All gradients returned here are exact derivatives of the
stated scalar objective with respect to that flat vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, UsageError

OBS_DIM = 12

SOFTMAX_HEAD = "softmax"
IDENTITY_HEAD = "identity"


@dataclass(frozen=True)
class NetShape:
    sizes: tuple[int, ...]
    head: str = SOFTMAX_HEAD

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if len(self.sizes) < 2:
            raise ConfigError("a network needs at least input and output sizes")
        if self.sizes[0] != OBS_DIM:
            raise ConfigError(f"input size must be {OBS_DIM}, got {self.sizes[0]}")
        if any(n < 1 for n in self.sizes):
            raise ConfigError("layer sizes must be positive")
        if self.head not in (SOFTMAX_HEAD, IDENTITY_HEAD):
            raise ConfigError(f"unknown head {self.head!r}")

    @property
    def n_out(self) -> int:
        return self.sizes[-1]


ACTOR_SHAPE = NetShape((12, 64, 32, 3), head=SOFTMAX_HEAD)
CRITIC_SHAPE = NetShape((12, 64, 32, 1), head=IDENTITY_HEAD)


def param_count(shape: NetShape) -> int:
    return sum(
        n_in * n_out + n_out for n_in, n_out in zip(shape.sizes, shape.sizes[1:])
    )


def _layer_views(params: np.ndarray, shape: NetShape):
    """Weight/bias views into the flat vector, one (W, b) pair per layer."""
    views = []
    ofs = 0
    for n_in, n_out in zip(shape.sizes, shape.sizes[1:]):
        w = params[ofs : ofs + n_in * n_out].reshape(n_out, n_in)
        ofs += n_in * n_out
        b = params[ofs : ofs + n_out]
        ofs += n_out
        views.append((w, b))
    if ofs != params.size:
        raise UsageError(
            f"parameter vector has length {params.size}, shape needs {ofs}"
        )
    return views


def init_params(shape: NetShape, seed=0) -> np.ndarray:
    """He-style uniform weights, zero biases; deterministic in `seed`."""
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(shape), dtype=np.float64)
    for (w, _b), n_in in zip(_layer_views(params, shape), shape.sizes):
        bound = np.sqrt(6.0 / n_in)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


@dataclass(frozen=True)
class ActionDist:
    """Categorical distribution over the discrete actions.

    Softmax outputs are strictly positive; hand-built distributions may sit
    on the simplex boundary (zero entries carry -inf log probabilities).
    """

    probs: np.ndarray
    logps: np.ndarray

    def __post_init__(self):
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise NumericError(f"probabilities sum to {self.probs.sum()}, not 1")
        if np.any(self.probs < 0):
            raise NumericError("probabilities must be nonnegative")

    def entropy(self) -> float:
        pos = self.probs > 0
        return float(-(self.probs[pos] * self.logps[pos]).sum())


def dist_from_probs(probs) -> ActionDist:
    """Build an ActionDist from raw probabilities (zeros allowed)."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logps = np.log(probs)
    return ActionDist(probs=probs, logps=logps)


def _softmax_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=1, keepdims=True)
    return ez / total, z - np.log(total)


def _forward_cached(params: np.ndarray, shape: NetShape, x: np.ndarray):
    """Batched forward pass keeping post-activation values for backprop.

    Returns (activations, logits) where activations[i] is the input to
    layer i and logits is the raw output (pre-head).
    """
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != shape.sizes[0]:
        raise UsageError(f"input has {x.shape[1]} features, expected {shape.sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")
    acts = [x.astype(np.float64, copy=False)]
    h = acts[0]
    layers = _layer_views(params, shape)
    for w, b in layers[:-1]:
        h = np.maximum(h @ w.T + b, 0.0)
        acts.append(h)
    w, b = layers[-1]
    logits = h @ w.T + b
    return acts, logits


def _backprop(
    params: np.ndarray, shape: NetShape, acts: list, d_logits: np.ndarray
) -> np.ndarray:
    """Exact gradient of sum_i <d_logits[i], logits[i]> w.r.t. the flat
    parameter vector; `acts` must come from `_forward_cached`."""
    grad = np.zeros_like(params)
    layers = _layer_views(params, shape)
    gviews = _layer_views(grad, shape)
    delta = d_logits
    for li in range(len(layers) - 1, -1, -1):
        w, _b = layers[li]
        gw, gb = gviews[li]
        gw += delta.T @ acts[li]
        gb += delta.sum(axis=0)
        if li > 0:
            delta = (delta @ w) * (acts[li] > 0.0)
    return grad


def forward(params: np.ndarray, shape: NetShape, x: np.ndarray):
    """Evaluate the network on one observation.

    Softmax head returns an ActionDist, identity head the scalar value.
    """
    _, logits = _forward_cached(params, shape, np.asarray(x, dtype=np.float64))
    if shape.head == SOFTMAX_HEAD:
        probs, logps = _softmax_rows(logits)
        return ActionDist(probs=probs[0], logps=logps[0])
    return float(logits[0, 0])


def forward_batch(params: np.ndarray, shape: NetShape, xs: np.ndarray) -> np.ndarray:
    """Batched forward: (N, n_out) probabilities or (N,) values."""
    _, logits = _forward_cached(params, shape, np.asarray(xs, dtype=np.float64))
    if shape.head == SOFTMAX_HEAD:
        probs, _ = _softmax_rows(logits)
        return probs
    return logits[:, 0]


def sample_action(dist: ActionDist, rng: np.random.Generator) -> tuple[int, float]:
    """Draw an action index from the distribution; returns (index, log prob)."""
    u = rng.random()
    cum = np.cumsum(dist.probs)
    a = int(np.searchsorted(cum, u, side="right"))
    a = min(a, dist.probs.size - 1)
    return a, float(dist.logps[a])


def actor_sampler(params: np.ndarray, shape: NetShape):
    """Rollout-speed sampler over a fixed parameter vector.

    Returns a callable (obs, rng) -> (action index, log prob) that shares the
    arithmetic of `forward` + `sample_action` without per-call validation.
    """
    if shape.head != SOFTMAX_HEAD:
        raise UsageError("sampling needs a softmax head")
    views = _layer_views(params, shape)

    def sample(x: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
        h = x
        for w, b in views[:-1]:
            h = np.maximum(w @ h + b, 0.0)
        w, b = views[-1]
        z = w @ h + b
        z = z - z.max()
        ez = np.exp(z)
        p = ez / ez.sum()
        u = rng.random()
        acc = 0.0
        a = p.size - 1
        for i in range(p.size):
            acc += p[i]
            if u < acc:
                a = i
                break
        return a, float(np.log(p[a]))

    return sample


def policy_grad_batch(
    params: np.ndarray,
    shape: NetShape,
    xs: np.ndarray,
    actions: np.ndarray,
    scales: np.ndarray,
) -> np.ndarray:
    """Gradient of sum_i scales[i] * ln pi(actions[i] | xs[i]; params)."""
    if shape.head != SOFTMAX_HEAD:
        raise UsageError("policy gradients need a softmax head")
    xs = np.asarray(xs, dtype=np.float64)
    acts, logits = _forward_cached(params, shape, xs)
    probs, _ = _softmax_rows(logits)
    d_logits = -probs * np.asarray(scales, dtype=np.float64)[:, None]
    d_logits[np.arange(len(d_logits)), np.asarray(actions, dtype=int)] += np.asarray(
        scales, dtype=np.float64
    )
    return _backprop(params, shape, acts, d_logits)


def backward_logprob(
    params: np.ndarray, shape: NetShape, x: np.ndarray, action: int, scale: float
) -> np.ndarray:
    """Gradient of scale * ln pi(action | x; params)."""
    return policy_grad_batch(
        params, shape, np.asarray(x)[None, :], np.array([action]), np.array([scale])
    )


def entropy_grad_batch(
    params: np.ndarray, shape: NetShape, xs: np.ndarray
) -> np.ndarray:
    """Gradient of sum_i H(pi(.|xs[i]; params))."""
    if shape.head != SOFTMAX_HEAD:
        raise UsageError("entropy gradients need a softmax head")
    acts, logits = _forward_cached(params, shape, np.asarray(xs, dtype=np.float64))
    probs, logps = _softmax_rows(logits)
    ent = -(probs * logps).sum(axis=1, keepdims=True)
    d_logits = probs * (-ent - logps)
    return _backprop(params, shape, acts, d_logits)


def entropy_grad(params: np.ndarray, shape: NetShape, x: np.ndarray) -> np.ndarray:
    return entropy_grad_batch(params, shape, np.asarray(x)[None, :])


def value_grad_batch(
    params: np.ndarray, shape: NetShape, xs: np.ndarray, douts: np.ndarray
) -> np.ndarray:
    """Gradient of sum_i douts[i] * V(xs[i]; params) for an identity head."""
    if shape.head != IDENTITY_HEAD:
        raise UsageError("value gradients need an identity head")
    acts, _ = _forward_cached(params, shape, np.asarray(xs, dtype=np.float64))
    d_logits = np.asarray(douts, dtype=np.float64)[:, None]
    return _backprop(params, shape, acts, d_logits)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def fresh_adam(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), step=0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    params: np.ndarray, grad: np.ndarray, st: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One Adam step in the ascent convention (parameters move along +grad)."""
    if params.shape != grad.shape or params.shape != st.m.shape:
        raise UsageError(
            f"length mismatch: params {params.size}, grad {grad.size}, moments {st.m.size}"
        )
    t = st.step + 1
    m = ADAM_BETA1 * st.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * st.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    new_params = params + lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, AdamState(m=m, v=v, step=t)


@dataclass
class Checkpoint:
    """A trained network plus its provenance metadata.

    `metadata` carries at least agent, level, trained_vs, episodes,
    lr_schedule and seed. The companion critic (when present) rides along so
    training can resume.
    """

    params: np.ndarray
    shape: NetShape
    metadata: dict = field(default_factory=dict)
    critic_params: np.ndarray | None = None
    critic_shape: NetShape | None = None

    def params_hash(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.shape.sizes).encode())
        h.update(self.shape.head.encode())
        h.update(np.ascontiguousarray(self.params, dtype=np.float64).tobytes())
        return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "shape": {"sizes": list(ckpt.shape.sizes), "head": ckpt.shape.head},
        "params": ckpt.params.tolist(),
        "metadata": ckpt.metadata,
    }
    if ckpt.critic_params is not None:
        doc["critic"] = {
            "shape": {
                "sizes": list(ckpt.critic_shape.sizes),
                "head": ckpt.critic_shape.head,
            },
            "params": ckpt.critic_params.tolist(),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc
    shape = NetShape(tuple(doc["shape"]["sizes"]), head=doc["shape"]["head"])
    params = np.asarray(doc["params"], dtype=np.float64)
    if params.size != param_count(shape):
        raise ConfigError(f"checkpoint {path} has inconsistent parameter count")
    critic_params = None
    critic_shape = None
    if doc.get("critic") is not None:
        critic_shape = NetShape(
            tuple(doc["critic"]["shape"]["sizes"]), head=doc["critic"]["shape"]["head"]
        )
        critic_params = np.asarray(doc["critic"]["params"], dtype=np.float64)
    return Checkpoint(
        params=params,
        shape=shape,
        metadata=doc.get("metadata", {}),
        critic_params=critic_params,
        critic_shape=critic_shape,
    )
