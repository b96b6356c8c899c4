import dataclasses
import json

from crossrl import net as netmod
from crossrl.cli import cli_main
from crossrl.net import ACTOR_SHAPE, CRITIC_SHAPE, Checkpoint

from test_train import BANDIT_CFG


def write_config(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return str(path)


def bandit_scenario_dict():
    return dataclasses.asdict(BANDIT_CFG)


def make_checkpoint(path, seed=0, agent="car", level=1):
    ckpt = Checkpoint(
        params=netmod.init_params(ACTOR_SHAPE, seed),
        shape=ACTOR_SHAPE,
        metadata={
            "agent": agent, "level": level, "trained_vs": ["T1", "T2", "T3"],
            "episodes": 0, "lr_schedule": [1e-4], "seed": seed,
        },
        critic_params=netmod.init_params(CRITIC_SHAPE, seed + 1),
        critic_shape=CRITIC_SHAPE,
    )
    netmod.save_checkpoint(ckpt, path)
    return ckpt


def test_eval_byte_identical_outputs(tmp_path):
    ckpt_path = tmp_path / "car.json"
    make_checkpoint(ckpt_path)
    cfg_path = write_config(
        tmp_path / "c.json",
        {
            "eval": {
                "episodes": 12,
                "policy": {"kind": "checkpoint", "path": "car.json"},
                "opponent": {"kind": "scripted_ped"},
            }
        },
    )
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    assert cli_main(["eval", "--config", cfg_path, "--seed", "1", "--out", str(out1)]) == 0
    assert cli_main(["eval", "--config", cfg_path, "--seed", "1", "--out", str(out2)]) == 0
    assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()
    assert (out1 / "speed.csv").read_bytes() == (out2 / "speed.csv").read_bytes()
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["subcommand"] == "eval"
    assert manifest["seed"] == 1
    assert manifest["outputs"] == ["metrics.csv", "speed.csv"]


def test_train_levelk_rejects_wrong_opponent_level(tmp_path):
    cfg_path = write_config(
        tmp_path / "c.json",
        {
            "scenario": bandit_scenario_dict(),
            "hierarchy": {
                "role": "car", "level": 2,
                "opponent": {"kind": "scripted_ped"},
            },
            "train": {"episodes_per_stage": 4, "lr_stages": [1e-4]},
        },
    )
    code = cli_main(["train-levelk", "--config", cfg_path, "--out", str(tmp_path / "o")])
    assert code == 1


def test_train_base_smoke(tmp_path):
    cfg_path = write_config(
        tmp_path / "c.json",
        {
            "scenario": bandit_scenario_dict(),
            "train": {
                "learner_role": "car",
                "opponent": {"kind": "scripted_ped", "types": ["T3"]},
                "lr_stages": [1e-3],
                "episodes_per_stage": 12,
                "batch_size": 4,
                "convergence_threshold": 0.0,
            },
        },
    )
    out = tmp_path / "run"
    assert cli_main(["train-base", "--config", cfg_path, "--seed", "3", "--out", str(out)]) == 0
    ckpt = netmod.load_checkpoint(out / "checkpoint.json")
    assert ckpt.metadata["episodes"] == 12
    assert ckpt.metadata["seed"] == 3
    stats = (out / "train_stats.csv").read_text().splitlines()
    assert stats[0] == "episode,ped_type,reward,steps,collision,lr_stage"
    assert len(stats) == 13


def test_compare_paired_csv(tmp_path):
    make_checkpoint(tmp_path / "a.json", seed=1)
    make_checkpoint(tmp_path / "b.json", seed=2)
    cfg_path = write_config(
        tmp_path / "c.json",
        {
            "compare": {
                "episodes": 9,
                "policy_a": {"kind": "checkpoint", "path": "a.json"},
                "policy_b": {"kind": "checkpoint", "path": "b.json"},
                "opponent": {"kind": "scripted_ped"},
                "label_a": "first",
                "label_b": "second",
            }
        },
    )
    out = tmp_path / "cmp"
    assert cli_main(["compare", "--config", cfg_path, "--seed", "4", "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("first,9,")
    assert lines[2].startswith("second,9,")
    paired = json.loads((out / "paired.json").read_text())
    assert set(paired) == {"reward_diff", "collision_diff"}


def test_fill_buffer_and_run_cola(tmp_path):
    make_checkpoint(tmp_path / "base.json", seed=5)
    cfg_doc = {
        "cola": {
            "base": "base.json",
            "episodes_per_type": 1,
            "capacity_per_type": 50,
            "types": ["T2", "T3"],
            "buffer": "buf/buffer.npz",
        },
        "eval": {
            "episodes": 4,
            "opponent": {"kind": "scripted_ped", "types": ["T2", "T3"]},
        },
    }
    cfg_path = write_config(tmp_path / "c.json", cfg_doc)
    assert cli_main(["fill-buffer", "--config", cfg_path, "--out", str(tmp_path / "buf")]) == 0
    assert (tmp_path / "buf" / "buffer.npz").exists()
    out = tmp_path / "cola_run"
    assert cli_main(["run-cola", "--config", cfg_path, "--seed", "2", "--out", str(out)]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2
    assert rows[1].startswith("run-cola,4,")


def test_unknown_flag_exits_one(tmp_path, capsys):
    assert cli_main(["eval", "--bogus"]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand_exits_one():
    assert cli_main(["frobnicate"]) == 1


def test_missing_artifact_exits_one(tmp_path):
    cfg_path = write_config(
        tmp_path / "c.json",
        {"eval": {"episodes": 2, "policy": {"kind": "checkpoint", "path": "nope.json"}}},
    )
    assert cli_main(["eval", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 1


def test_selftest_passes(tmp_path, capsys):
    assert cli_main(["selftest", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "FAIL " not in out


def test_train_levelk_pedestrian_and_finetune_flow(tmp_path):
    # level-1 pedestrian against the scripted car, then a level-2 car
    # fine-tuned against that pedestrian, all through the CLI
    cfg_path = write_config(
        tmp_path / "ped.json",
        {
            "scenario": bandit_scenario_dict(),
            "hierarchy": {
                "role": "pedestrian", "level": 1,
                "opponent": {"kind": "scripted_car"},
            },
            "train": {
                "learner_role": "pedestrian",
                "opponent": {"kind": "scripted_car"},
                "lr_stages": [1e-4],
                "episodes_per_stage": 8,
                "batch_size": 4,
                "convergence_threshold": 0.0,
            },
        },
    )
    ped_out = tmp_path / "ped_run"
    assert cli_main(["train-levelk", "--config", cfg_path, "--out", str(ped_out)]) == 0
    ped = netmod.load_checkpoint(ped_out / "checkpoint.json")
    assert ped.metadata["level"] == 1
    assert (ped_out / "hierarchy.json").exists()

    base_path = tmp_path / "car1.json"
    make_checkpoint(base_path, seed=4, agent="car", level=1)
    ft_cfg = write_config(
        tmp_path / "ft.json",
        {
            "scenario": bandit_scenario_dict(),
            "finetune": {
                "base": "car1.json",
                "opponent": {
                    "kind": "checkpoint",
                    "path": str(ped_out / "checkpoint.json"),
                    "role": "pedestrian",
                },
                "episodes": 6,
                "lr": 1e-4,
            },
            "train": {"batch_size": 3},
        },
    )
    ft_out = tmp_path / "car2_run"
    assert cli_main(["finetune", "--config", ft_cfg, "--seed", "3", "--out", str(ft_out)]) == 0
    car2 = netmod.load_checkpoint(ft_out / "checkpoint.json")
    assert car2.metadata["level"] == 2
    assert car2.metadata["episodes"] == 6


def test_compare_with_adaptive_policy(tmp_path):
    make_checkpoint(tmp_path / "base.json", seed=6)
    fill_cfg = write_config(
        tmp_path / "fill.json",
        {
            "cola": {
                "base": "base.json",
                "episodes_per_type": 1,
                "capacity_per_type": 30,
                "buffer": "buffer.npz",
            }
        },
    )
    assert cli_main(["fill-buffer", "--config", fill_cfg, "--out", str(tmp_path)]) == 0
    cmp_cfg = write_config(
        tmp_path / "cmp.json",
        {
            "compare": {
                "episodes": 6,
                "policy_a": {
                    "kind": "cola", "base": "base.json", "buffer": "buffer.npz",
                    "config": {"step_size": 0.01, "sample_size": 4},
                },
                "policy_b": {"kind": "checkpoint", "path": "base.json"},
                "opponent": {"kind": "scripted_ped"},
            }
        },
    )
    out = tmp_path / "out"
    assert cli_main(["compare", "--config", cmp_cfg, "--seed", "9", "--out", str(out)]) == 0
    assert (out / "paired.json").exists()


def test_run_cola_inferred_belief(tmp_path):
    make_checkpoint(tmp_path / "base.json", seed=7)
    cfg_path = write_config(
        tmp_path / "c.json",
        {
            "cola": {
                "base": "base.json",
                "buffer": "buffer.npz",
                "episodes_per_type": 1,
                "capacity_per_type": 30,
                "belief_mode": "inferred",
                "step_size": 0.01,
            },
            "eval": {"episodes": 3, "opponent": {"kind": "scripted_ped"}},
        },
    )
    assert cli_main(["fill-buffer", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    out = tmp_path / "run"
    assert cli_main(["run-cola", "--config", cfg_path, "--seed", "4", "--out", str(out)]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2
