"""Figure builders over the harness CSV schemas.

Speed CSVs carry columns (step, agent, speed_mean, speed_var); summary CSVs
carry (run_id, episodes, reward_mean, reward_var, collision_rate,
mean_tt_dest). Plotting is read-only: every plotted number is taken verbatim
from the input files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SPEED_COLUMNS = ("step", "agent", "speed_mean", "speed_var")
METRICS_COLUMNS = (
    "run_id",
    "episodes",
    "reward_mean",
    "reward_var",
    "collision_rate",
    "mean_tt_dest",
)

SPEED_CURVES = "speed_curves"
REWARD_COLLISION = "reward_collision"

DPI = 120


class PlotkitError(Exception):
    pass


class SchemaError(PlotkitError):
    """An input CSV does not match the declared schema."""


@dataclass
class FigureSpec:
    inputs: list[str]
    kind: str
    output: str
    labels: list[str] = field(default_factory=list)
    agent: str = "ped"

    def __post_init__(self):
        if self.kind not in (SPEED_CURVES, REWARD_COLLISION):
            raise PlotkitError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise PlotkitError("figure needs at least one input CSV")
        for path in self.inputs:
            if not Path(path).exists():
                raise PlotkitError(f"input CSV not found: {path}")
        if self.labels and len(self.labels) != len(self.inputs):
            raise PlotkitError("labels must match inputs one-to-one")

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels else Path(self.inputs[i]).stem


def _read_rows(path, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _parse_float(path, row: dict, column: str) -> float:
    try:
        return float(row[column])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: bad value in column {column!r}") from exc


def load_speed_series(path, agent: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(steps, means, stds) of one agent's speed curve from a speed CSV."""
    rows = [r for r in _read_rows(path, SPEED_COLUMNS) if r["agent"] == agent]
    if not rows:
        raise SchemaError(f"{path}: no rows for agent {agent!r}")
    steps = np.array([int(_parse_float(path, r, "step")) for r in rows])
    means = np.array([_parse_float(path, r, "speed_mean") for r in rows])
    variances = np.array([_parse_float(path, r, "speed_var") for r in rows])
    if np.any(variances < 0):
        raise SchemaError(f"{path}: negative value in column 'speed_var'")
    order = np.argsort(steps)
    return steps[order], means[order], np.sqrt(variances[order])


def make_speed_plot(spec: FigureSpec) -> dict[str, dict[str, np.ndarray]]:
    """Per-step mean-speed curves with a +/-1 std band per input series.

    Returns the plotted arrays keyed by series label (handy for checking
    that figures carry the CSV values verbatim).
    """
    if spec.kind != SPEED_CURVES:
        raise PlotkitError("spec kind must be speed_curves")
    series = {}
    for i, path in enumerate(spec.inputs):
        steps, means, stds = load_speed_series(path, spec.agent)
        series[spec.label(i)] = {"steps": steps, "means": means, "stds": stds}

    fig, ax = plt.subplots(figsize=(7, 4), dpi=DPI)
    for label, data in series.items():
        ax.plot(data["steps"], data["means"], label=label, linewidth=1.5)
        ax.fill_between(
            data["steps"],
            data["means"] - data["stds"],
            data["means"] + data["stds"],
            alpha=0.25,
        )
    ax.set_xlabel("step")
    ax.set_ylabel(f"{spec.agent} speed [m/s]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output)
    plt.close(fig)
    return series


def load_summary_rows(path) -> list[dict]:
    rows = _read_rows(path, METRICS_COLUMNS)
    parsed = []
    for r in rows:
        parsed.append(
            {
                "run_id": r["run_id"],
                "reward_mean": _parse_float(path, r, "reward_mean"),
                "reward_var": _parse_float(path, r, "reward_var"),
                "collision_rate": _parse_float(path, r, "collision_rate"),
            }
        )
    return parsed


def make_reward_collision_plot(spec: FigureSpec) -> list[dict]:
    """Reward mean bars with variance whiskers beside collision-rate bars.

    Needs at least two summary rows (a comparison); returns the plotted rows.
    """
    if spec.kind != REWARD_COLLISION:
        raise PlotkitError("spec kind must be reward_collision")
    rows = []
    for path in spec.inputs:
        rows.extend(load_summary_rows(path))
    if len(rows) < 2:
        raise PlotkitError("reward/collision comparison needs at least 2 rows")

    names = [r["run_id"] for r in rows]
    rewards = [r["reward_mean"] for r in rows]
    whiskers = [np.sqrt(r["reward_var"]) for r in rows]
    collisions = [r["collision_rate"] for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 4), dpi=DPI)
    xs = np.arange(len(rows))
    ax1.bar(xs, rewards, yerr=whiskers, capsize=4, color="tab:blue")
    ax1.set_xticks(xs, names, rotation=20)
    ax1.set_ylabel("episode reward (mean, +/- std)")
    ax2.bar(xs, collisions, color="tab:red")
    ax2.set_xticks(xs, names, rotation=20)
    ax2.set_ylabel("collision rate")
    ax2.set_ylim(0, max(max(collisions), 0.01) * 1.3)
    fig.tight_layout()
    fig.savefig(spec.output)
    plt.close(fig)
    return rows
