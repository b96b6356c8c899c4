"""Cognitive-hierarchy orchestration: level-k agents are trained as best
responses to frozen level-(k-1) agents.

Level 0 is scripted (the three pedestrian behaviors, the accelerate-and-hold
car). Level 1 best-responds to scripts; level 2 best-responds to a trained
level-1 opponent. The hierarchy stops at level 2.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .net import Checkpoint
from .train import (
    ROLES,
    CheckpointOpponent,
    OpponentSpec,
    ScriptedCar,
    ScriptedPeds,
    TrainConfig,
    TrainStats,
    finetune_run,
    rl_base,
)

MAX_LEVEL = 2


@dataclass(frozen=True)
class HierarchySpec:
    """What to train: which side, at which level, against which frozen
    level-(k-1) opponents, mixed by the meta distribution `probs`."""

    role: str
    level: int
    opponent: OpponentSpec
    probs: tuple[float, ...] | None = None

    def validate(self) -> "HierarchySpec":
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}")
        if not 1 <= self.level <= MAX_LEVEL:
            raise ConfigError(f"level must lie in [1, {MAX_LEVEL}]")
        opponent_level = _opponent_level(self.opponent)
        if opponent_level != self.level - 1:
            raise ConfigError(
                f"a level-{self.level} agent needs level-{self.level - 1} "
                f"opponents, got level-{opponent_level}"
            )
        if isinstance(self.opponent, CheckpointOpponent):
            if self.opponent.role == self.role:
                raise ConfigError("opponent occupies the learner's player slot")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigError("meta distribution must lie on the simplex")
        return self


def _opponent_level(opponent: OpponentSpec) -> int:
    if isinstance(opponent, (ScriptedPeds, ScriptedCar)):
        return 0
    if isinstance(opponent, CheckpointOpponent):
        level = opponent.checkpoint.metadata.get("level")
        if level is None:
            raise ConfigError("opponent checkpoint has no level metadata")
        return int(level)
    raise ConfigError(f"unknown opponent spec {opponent!r}")


def train_level_k(
    spec: HierarchySpec, tc: TrainConfig
) -> tuple[Checkpoint, TrainStats]:
    """Best-response training of one hierarchy level (delegates to the base
    training loop); the checkpoint metadata records the level and the frozen
    opponents it responded to."""
    spec.validate()
    opponent = spec.opponent
    if isinstance(opponent, ScriptedPeds) and spec.probs is not None:
        opponent = dataclasses.replace(opponent, probs=spec.probs)
    run_tc = dataclasses.replace(
        tc, learner_role=spec.role, level=spec.level, opponent=opponent
    )
    ckpt, stats = rl_base(run_tc)
    ckpt.metadata["level"] = spec.level
    return ckpt, stats


def finetune(
    base: Checkpoint,
    spec: HierarchySpec,
    episodes: int,
    lr: float,
    tc: TrainConfig | None = None,
) -> tuple[Checkpoint, TrainStats]:
    """Fine-tune a trained checkpoint against the next hierarchy level for a
    fixed number of episodes at one learning rate; the result is one level
    above the base."""
    if episodes < 1:
        raise ConfigError("zero-episode fine-tune rejected")
    spec.validate()
    base_level = int(base.metadata.get("level", 0))
    if spec.level != base_level + 1:
        raise ConfigError(
            f"fine-tune target level {spec.level} must be base level + 1 "
            f"(base is level {base_level})"
        )
    run_tc = dataclasses.replace(
        tc if tc is not None else TrainConfig(),
        learner_role=spec.role,
        level=spec.level,
        opponent=spec.opponent,
    )
    ckpt, stats = finetune_run(base, run_tc, episodes, lr)
    ckpt.metadata["level"] = spec.level
    ckpt.metadata["finetuned_from"] = base.params_hash()[:16]
    return ckpt, stats


def beauty_contest_check(k: int) -> float:
    """Guess-half-the-average ladder: the level-k pick given a random
    level-0 population mean of 50. Executable documentation of the
    best-response recursion."""
    if k < 0:
        raise ConfigError("level must be nonnegative")
    if k == 0:
        return 50.0
    return 50.0 / (2.0**k)


# ---------------------------------------------------------------------------
# Hierarchy manifest


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_hierarchy_manifest(entries: list[dict], path) -> None:
    """Record the hierarchy's checkpoints as (role, level, type, path, hash)
    rows; `entries` need role/level/path, the hash is computed here."""
    rows = []
    for e in entries:
        rows.append(
            {
                "role": e["role"],
                "level": int(e["level"]),
                "type": e.get("type"),
                "path": str(e["path"]),
                "sha256": file_sha256(e["path"]),
            }
        )
    with open(path, "w") as fh:
        json.dump({"checkpoints": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_hierarchy_manifest(path) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)["checkpoints"]
