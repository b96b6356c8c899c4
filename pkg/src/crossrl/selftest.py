"""Fast built-in invariant checks, runnable as `crossrl selftest`.

These mirror the heavier pytest suites at a smoke-test scale: gradient
correctness against finite differences, distribution normalization, KL
properties, optimizer no-ops, environment determinism and speed bounds.
"""

from __future__ import annotations

import numpy as np

from . import env as envmod
from . import net as netmod
from .env import Action, PedType, ScenarioConfig
from .levelk import beauty_contest_check
from .cola import kl_diag
from .net import NetShape


def _finite_diff_logprob(params, shape, x, a, h=1e-5):
    grad = np.zeros_like(params)
    for i in range(params.size):
        up = params.copy()
        up[i] += h
        down = params.copy()
        down[i] -= h
        f_up = netmod.forward(up, shape, x).logps[a]
        f_down = netmod.forward(down, shape, x).logps[a]
        grad[i] = (f_up - f_down) / (2 * h)
    return grad


def run_selftest(seed: int = 0, verbose: bool = True) -> bool:
    checks: list[tuple[str, bool]] = []

    def check(name: str, ok: bool):
        checks.append((name, bool(ok)))

    rng = np.random.default_rng(seed)
    shape = NetShape((12, 6, 3))
    for rep in range(3):
        params = netmod.init_params(shape, seed=[seed, rep]) + 0.1 * rng.standard_normal(
            netmod.param_count(shape)
        )
        x = rng.standard_normal(12)
        a = int(rng.integers(3))
        analytic = netmod.backward_logprob(params, shape, x, a, 1.0)
        numeric = _finite_diff_logprob(params, shape, x, a)
        mask = np.abs(analytic) > 1e-6
        rel = np.max(
            np.abs(analytic[mask] - numeric[mask]) / np.abs(analytic[mask])
        ) if mask.any() else 0.0
        check(f"gradient-check-{rep}", rel < 1e-4)

    dist = netmod.forward(
        netmod.init_params(shape, seed=seed), shape, rng.standard_normal(12)
    )
    check("softmax-normalized", abs(dist.probs.sum() - 1.0) < 1e-9)
    check("softmax-positive", bool(np.all(dist.probs > 0)))

    d = netmod.dist_from_probs([0.2, 0.3, 0.5])
    check("kl-self-zero", kl_diag(d, d) == 0.0)
    ok = True
    for _ in range(200):
        p = rng.dirichlet(np.ones(3))
        q = rng.dirichlet(np.ones(3))
        if kl_diag(netmod.dist_from_probs(p), netmod.dist_from_probs(q)) < 0:
            ok = False
    check("kl-nonnegative", ok)

    params = netmod.init_params(shape, seed=seed)
    st = netmod.fresh_adam(params.size)
    new_params, _ = netmod.adam_step(params, np.zeros_like(params), st, 0.1)
    check("adam-zero-grad-noop", bool(np.array_equal(new_params, params)))

    cfg = ScenarioConfig()
    s1, rng1 = envmod.reset(cfg, PedType.T1_RANDOM, seed=7)
    s2, rng2 = envmod.reset(cfg, PedType.T1_RANDOM, seed=7)
    same = True
    for _ in range(50):
        a1 = envmod.level0_ped_action(PedType.T1_RANDOM, s1, rng1, cfg)
        a2 = envmod.level0_ped_action(PedType.T1_RANDOM, s2, rng2, cfg)
        s1, _, _, _ = envmod.step(s1, Action.ACCEL, a1, cfg)
        s2, _, _, _ = envmod.step(s2, Action.ACCEL, a2, cfg)
        if s1 != s2:
            same = False
            break
        if not (0 <= s1.v_c <= cfg.car_vmax and cfg.ped_vmin <= s1.v_p <= cfg.ped_vmax):
            same = False
            break
    check("env-deterministic-bounded", same)

    check("beauty-contest", beauty_contest_check(1) == 25.0 and beauty_contest_check(2) == 12.5)

    all_ok = all(ok for _, ok in checks)
    if verbose:
        for name, ok in checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}")
        print(f"selftest: {'all checks passed' if all_ok else 'FAILURES present'}")
    return all_ok
