"""Standalone entry point: make_figures <metrics_dir> <out_dir>.

Scans the metrics directory for the harness's CSV outputs (file names
containing "speed" feed the speed-curve figure, names containing "metrics"
feed the reward/collision comparison) and renders one PNG per figure kind.
"""

from __future__ import annotations

import sys
from pathlib import Path

from .figures import (
    REWARD_COLLISION,
    SPEED_CURVES,
    FigureSpec,
    PlotkitError,
    make_reward_collision_plot,
    make_speed_plot,
)


def make_figures(metrics_dir: str, out_dir: str, agent: str = "ped") -> list[str]:
    src = Path(metrics_dir)
    if not src.is_dir():
        raise PlotkitError(f"metrics directory not found: {metrics_dir}")
    dst = Path(out_dir)
    dst.mkdir(parents=True, exist_ok=True)

    speed_inputs = sorted(str(p) for p in src.glob("*speed*.csv"))
    summary_inputs = sorted(str(p) for p in src.glob("*metrics*.csv"))
    written = []
    if speed_inputs:
        out = dst / "speed_curves.png"
        make_speed_plot(
            FigureSpec(inputs=speed_inputs, kind=SPEED_CURVES, output=str(out), agent=agent)
        )
        written.append(str(out))
    if summary_inputs:
        out = dst / "reward_collision.png"
        make_reward_collision_plot(
            FigureSpec(inputs=summary_inputs, kind=REWARD_COLLISION, output=str(out))
        )
        written.append(str(out))
    if not written:
        raise PlotkitError(f"no harness CSVs found in {metrics_dir}")
    return written


def main() -> None:
    if len(sys.argv) not in (3, 4):
        print("usage: make_figures <metrics_dir> <out_dir> [agent]", file=sys.stderr)
        sys.exit(1)
    try:
        for path in make_figures(*sys.argv[1:]):
            print(path)
    except PlotkitError as exc:
        print(f"make_figures: error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
