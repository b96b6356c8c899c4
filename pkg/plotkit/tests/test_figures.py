import csv

import numpy as np
import pytest
from PIL import Image

from plotkit.cli import make_figures
from plotkit.figures import (
    REWARD_COLLISION,
    SPEED_CURVES,
    FigureSpec,
    PlotkitError,
    SchemaError,
    make_reward_collision_plot,
    make_speed_plot,
)


def write_speed_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", "speed_mean", "speed_var"])
        w.writerows(rows)
    return str(path)


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["run_id", "episodes", "reward_mean", "reward_var",
             "collision_rate", "mean_tt_dest"]
        )
        w.writerows(rows)
    return str(path)


def speed_fixture(tmp_path, name, var):
    rows = [[t, "ped", 0.01 * t, var] for t in range(40)]
    rows += [[t, "car", 0.02 * t, 0.0] for t in range(40)]
    return write_speed_csv(tmp_path / name, rows)


def test_speed_plot_values_and_bands(tmp_path):
    noisy = speed_fixture(tmp_path, "t1_speed.csv", var=0.04)
    flat = speed_fixture(tmp_path, "t2_speed.csv", var=0.0)
    out = tmp_path / "fig.png"
    spec = FigureSpec(
        inputs=[noisy, flat], kind=SPEED_CURVES, output=str(out),
        labels=["T1", "T2"],
    )
    series = make_speed_plot(spec)
    assert out.exists()
    assert series["T1"]["means"].tolist() == [0.01 * t for t in range(40)]
    assert np.all(series["T1"]["stds"] == 0.2)
    assert np.all(series["T2"]["stds"] == 0.0)


def test_speed_plot_deterministic(tmp_path):
    path = speed_fixture(tmp_path, "a_speed.csv", var=0.01)
    out1, out2 = tmp_path / "f1.png", tmp_path / "f2.png"
    s1 = make_speed_plot(FigureSpec(inputs=[path], kind=SPEED_CURVES, output=str(out1)))
    s2 = make_speed_plot(FigureSpec(inputs=[path], kind=SPEED_CURVES, output=str(out2)))
    assert Image.open(out1).size == Image.open(out2).size
    for key in ("steps", "means", "stds"):
        assert np.array_equal(s1["a_speed"][key], s2["a_speed"][key])


def test_speed_plot_schema_error_names_column(tmp_path):
    bad = tmp_path / "bad_speed.csv"
    with open(bad, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", "velocity"])
        w.writerow([0, "ped", 1.0])
    out = tmp_path / "fig.png"
    with pytest.raises(SchemaError, match="speed_mean"):
        make_speed_plot(FigureSpec(inputs=[str(bad)], kind=SPEED_CURVES, output=str(out)))
    assert not out.exists()


def test_speed_plot_empty_csv_writes_nothing(tmp_path):
    empty = write_speed_csv(tmp_path / "empty_speed.csv", [])
    out = tmp_path / "fig.png"
    with pytest.raises(SchemaError, match="no data rows"):
        make_speed_plot(FigureSpec(inputs=[empty], kind=SPEED_CURVES, output=str(out)))
    assert not out.exists()


def test_missing_input_rejected(tmp_path):
    with pytest.raises(PlotkitError, match="not found"):
        FigureSpec(
            inputs=[str(tmp_path / "nope.csv")], kind=SPEED_CURVES,
            output=str(tmp_path / "f.png"),
        )


def test_reward_collision_plot(tmp_path):
    path = write_metrics_csv(
        tmp_path / "metrics.csv",
        [
            ["adaptive", 500, 4.62, 21.5, 0.048, 232.1],
            ["frozen", 500, 3.77, 24.0, 0.086, 245.0],
        ],
    )
    out = tmp_path / "cmp.png"
    rows = make_reward_collision_plot(
        FigureSpec(inputs=[path], kind=REWARD_COLLISION, output=str(out))
    )
    assert out.exists()
    assert [r["run_id"] for r in rows] == ["adaptive", "frozen"]
    assert rows[0]["reward_mean"] == 4.62
    assert rows[1]["collision_rate"] == 0.086


def test_reward_collision_needs_two_rows(tmp_path):
    path = write_metrics_csv(tmp_path / "metrics.csv", [["only", 10, 1, 1, 0, 5]])
    out = tmp_path / "cmp.png"
    with pytest.raises(PlotkitError, match="at least 2"):
        make_reward_collision_plot(
            FigureSpec(inputs=[path], kind=REWARD_COLLISION, output=str(out))
        )
    assert not out.exists()


def test_make_figures_directory_flow(tmp_path):
    src = tmp_path / "metrics"
    src.mkdir()
    speed_fixture(src, "t1_speed.csv", var=0.02)
    speed_fixture(src, "t2_speed.csv", var=0.0)
    write_metrics_csv(
        src / "mode1_metrics.csv",
        [["a", 10, 1.0, 0.5, 0.1, 100.0], ["b", 10, 0.5, 0.5, 0.2, 120.0]],
    )
    out_dir = tmp_path / "figs"
    written = make_figures(str(src), str(out_dir))
    assert sorted(p.split("/")[-1] for p in written) == [
        "reward_collision.png", "speed_curves.png",
    ]


# ---------------------------------------------------------------------------
# Secondary acceptance: render the harness's real mode-1/mode-2 CSV outputs


def test_acceptance_renders_harness_outputs(tmp_path):
    """Both figure kinds render from CSVs produced by the simulation
    harness; in the speed figure only the type-1 series carries a band."""
    crossrl = pytest.importorskip("crossrl")
    from crossrl import evalkit
    from crossrl import net as netmod
    from crossrl.env import PedType, ScenarioConfig

    cfg = ScenarioConfig()
    metrics_dir = tmp_path / "metrics"
    metrics_dir.mkdir()

    for t in (PedType.T1_RANDOM, PedType.T2_FAST5, PedType.T3_SLOW3):
        summary = evalkit.evaluate(
            evalkit.ScriptedCarSpec(),
            evalkit.ScriptedPedSpec(types=(t,)),
            episodes=25, seed=100, scenario=cfg,
        )
        evalkit.write_speed_csv(
            summary.speed_mean, summary.speed_var,
            metrics_dir / f"{t.label}_speed.csv",
        )

    car_a = netmod.Checkpoint(
        params=netmod.init_params(netmod.ACTOR_SHAPE, 1),
        shape=netmod.ACTOR_SHAPE, metadata={"agent": "car", "level": 1},
    )
    car_b = netmod.Checkpoint(
        params=np.zeros(netmod.param_count(netmod.ACTOR_SHAPE)),
        shape=netmod.ACTOR_SHAPE, metadata={"agent": "car", "level": 1},
    )
    result = evalkit.compare(
        evalkit.CheckpointSpec(checkpoint=car_a, role="car"),
        evalkit.CheckpointSpec(checkpoint=car_b, role="car"),
        evalkit.ScriptedPedSpec(),
        episodes=12, seed=40, scenario=cfg,
    )
    evalkit.write_metrics_csv(
        [("mode1_a", result.summary_a), ("mode1_b", result.summary_b)],
        metrics_dir / "mode1_metrics.csv",
    )
    evalkit.write_metrics_csv(
        [("mode2_a", result.summary_a), ("mode2_b", result.summary_b)],
        metrics_dir / "mode2_metrics.csv",
    )

    out_dir = tmp_path / "figs"
    written = make_figures(str(metrics_dir), str(out_dir))
    assert len(written) == 2

    series = make_speed_plot(
        FigureSpec(
            inputs=sorted(str(p) for p in metrics_dir.glob("*_speed.csv")),
            kind=SPEED_CURVES,
            output=str(tmp_path / "speeds.png"),
            labels=["T1", "T2", "T3"],
        )
    )
    assert series["T1"]["stds"].max() > 0.0
    for label in ("T2", "T3"):
        assert float(series[label]["stds"].max()) == 0.0
    print("SECONDARY ACCEPTANCE PASS plotkit renders harness CSVs")
