"""Command-line surface: training, buffer filling, adaptive runs, evaluation
and paired comparison, all driven by one JSON config file.

Every run writes a RunManifest (config snapshot, seeds, artifact hashes,
outputs) next to its outputs. Exit codes: 0 success, 1 configuration or
usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import __version__
from . import cola as colamod
from . import evalkit, levelk
from . import net as netmod
from . import train as trainmod
from .env import PED_TYPES, PedType, ScenarioConfig, ped_type_from_label
from .errors import ConfigError, CrossrlError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _scenario_from(config: dict) -> ScenarioConfig:
    return ScenarioConfig.from_dict(config.get("scenario", {}))


def _types_from(labels) -> tuple[PedType, ...]:
    return tuple(ped_type_from_label(lbl) for lbl in labels)


def _opponent_from(spec: dict, base_dir: Path) -> trainmod.OpponentSpec:
    kind = spec.get("kind")
    if kind == "scripted_ped":
        types = _types_from(spec.get("types", [t.label for t in PED_TYPES]))
        probs = tuple(spec["probs"]) if "probs" in spec else None
        return trainmod.ScriptedPeds(types=types, probs=probs)
    if kind == "scripted_car":
        return trainmod.ScriptedCar()
    if kind == "checkpoint":
        ckpt = netmod.load_checkpoint(_resolve(spec["path"], base_dir))
        return trainmod.CheckpointOpponent(
            checkpoint=ckpt,
            role=spec.get("role", ckpt.metadata.get("agent", "pedestrian")),
            label=spec.get("label", f"L{ckpt.metadata.get('level', '?')}"),
        )
    raise ConfigError(f"unknown opponent kind {kind!r}")


def _policy_spec_from(spec: dict, base_dir: Path, scenario: ScenarioConfig):
    kind = spec.get("kind")
    if kind == "scripted_car":
        return evalkit.ScriptedCarSpec()
    if kind == "scripted_ped":
        return evalkit.ScriptedPedSpec(
            types=_types_from(spec.get("types", [t.label for t in PED_TYPES]))
        )
    if kind == "checkpoint":
        ckpt = netmod.load_checkpoint(_resolve(spec["path"], base_dir))
        return evalkit.CheckpointSpec(
            checkpoint=ckpt, role=spec.get("role", ckpt.metadata.get("agent", "car"))
        )
    if kind == "cola":
        base = netmod.load_checkpoint(_resolve(spec["base"], base_dir))
        buffer = colamod.GradientBuffer.load(
            _resolve(spec["buffer"], base_dir), expected_base_hash=base.params_hash()
        )
        cc = _cola_config_from(spec.get("config", {}))
        conjecturer = None
        if cc.belief_mode == colamod.INFERRED:
            conjecturer = colamod.fit_type_conjecturer(
                scenario, window=cc.window, seed=spec.get("conjecturer_seed", 0)
            )
        return evalkit.ColaSpec(
            base=base, buffer=buffer, config=cc, conjecturer=conjecturer
        )
    raise ConfigError(f"unknown policy kind {kind!r}")


_COLA_KEYS = {f.name for f in dataclasses.fields(colamod.ColaConfig)}


def _cola_config_from(section: dict) -> colamod.ColaConfig:
    keys = {k: v for k, v in section.items() if k in _COLA_KEYS}
    return colamod.ColaConfig(**keys).validate()


_TRAIN_KEYS = (
    "learner_role",
    "level",
    "lr_stages",
    "episodes_per_stage",
    "batch_size",
    "gamma",
    "entropy_coef",
    "convergence_window",
    "convergence_threshold",
)


def _train_config_from(
    config: dict, scenario: ScenarioConfig, seed: int, base_dir: Path
) -> trainmod.TrainConfig:
    section = config.get("train", {})
    kwargs = {k: section[k] for k in _TRAIN_KEYS if k in section}
    if "lr_stages" in kwargs:
        kwargs["lr_stages"] = tuple(kwargs["lr_stages"])
    opponent = _opponent_from(
        section.get("opponent", {"kind": "scripted_ped"}), base_dir
    )
    return trainmod.TrainConfig(
        scenario=scenario, opponent=opponent, seed=seed, **kwargs
    ).validate()


def _resolve(path, base_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


def _write_manifest(
    out_dir: Path, subcommand: str, seed: int, config: dict, outputs: list[str],
    checkpoint_hashes: dict | None = None,
) -> None:
    manifest = {
        "tool": "crossrl",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "checkpoint_hashes": checkpoint_hashes or {},
        "outputs": sorted(outputs),
        "created_unix": int(time.time()),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_train_base(config, seed, out_dir, base_dir):
    scenario = _scenario_from(config)
    tc = _train_config_from(config, scenario, seed, base_dir)
    ckpt, stats = trainmod.rl_base(tc)
    ckpt_path = out_dir / "checkpoint.json"
    netmod.save_checkpoint(ckpt, ckpt_path)
    stats_path = out_dir / "train_stats.csv"
    trainmod.append_stats_csv(stats, stats_path)
    _write_manifest(
        out_dir, "train-base", seed, config,
        ["checkpoint.json", "train_stats.csv"],
        {"checkpoint": ckpt.params_hash()},
    )
    return 0


def _cmd_train_levelk(config, seed, out_dir, base_dir):
    scenario = _scenario_from(config)
    section = config.get("hierarchy", {})
    tc = _train_config_from(config, scenario, seed, base_dir)
    spec = levelk.HierarchySpec(
        role=section.get("role", "car"),
        level=int(section.get("level", 1)),
        opponent=_opponent_from(
            section.get("opponent", {"kind": "scripted_ped"}), base_dir
        ),
        probs=tuple(section["probs"]) if "probs" in section else None,
    )
    ckpt, stats = levelk.train_level_k(spec, tc)
    ckpt_path = out_dir / "checkpoint.json"
    netmod.save_checkpoint(ckpt, ckpt_path)
    trainmod.append_stats_csv(stats, out_dir / "train_stats.csv")
    levelk.write_hierarchy_manifest(
        [{"role": spec.role, "level": spec.level, "path": ckpt_path}],
        out_dir / "hierarchy.json",
    )
    _write_manifest(
        out_dir, "train-levelk", seed, config,
        ["checkpoint.json", "train_stats.csv", "hierarchy.json"],
        {"checkpoint": ckpt.params_hash()},
    )
    return 0


def _cmd_finetune(config, seed, out_dir, base_dir):
    scenario = _scenario_from(config)
    section = config.get("finetune", {})
    base = netmod.load_checkpoint(_resolve(section["base"], base_dir))
    opponent = _opponent_from(section["opponent"], base_dir)
    spec = levelk.HierarchySpec(
        role=section.get("role", base.metadata.get("agent", "car")),
        level=int(base.metadata.get("level", 0)) + 1,
        opponent=opponent,
    )
    tc = _train_config_from(config, scenario, seed, base_dir)
    ckpt, stats = levelk.finetune(
        base, spec, int(section.get("episodes", 1000)),
        float(section.get("lr", 1e-4)), tc,
    )
    netmod.save_checkpoint(ckpt, out_dir / "checkpoint.json")
    trainmod.append_stats_csv(stats, out_dir / "train_stats.csv")
    _write_manifest(
        out_dir, "finetune", seed, config,
        ["checkpoint.json", "train_stats.csv"],
        {"base": base.params_hash(), "checkpoint": ckpt.params_hash()},
    )
    return 0


def _cmd_fill_buffer(config, seed, out_dir, base_dir):
    scenario = _scenario_from(config)
    section = config.get("cola", {})
    base = netmod.load_checkpoint(_resolve(section["base"], base_dir))
    cc = _cola_config_from(section)
    types = _types_from(section.get("types", [t.label for t in PED_TYPES]))
    buf = colamod.fill_gradient_buffer(base, scenario, cc, types, seed=seed)
    buf_path = out_dir / "buffer.npz"
    buf.save(buf_path)
    _write_manifest(
        out_dir, "fill-buffer", seed, config, ["buffer.npz"],
        {"base": base.params_hash()},
    )
    return 0


def _eval_like(config, seed, out_dir, base_dir, subcommand):
    scenario = _scenario_from(config)
    section = config.get("eval", {})
    episodes = int(section.get("episodes", 500))
    focus = section.get("focus", "car")
    opponent = _policy_spec_from(
        section.get("opponent", {"kind": "scripted_ped"}), base_dir, scenario
    )
    if subcommand == "run-cola":
        cola_section = config.get("cola", {})
        policy = _policy_spec_from(
            {
                "kind": "cola",
                "base": cola_section["base"],
                "buffer": cola_section["buffer"],
                "config": cola_section,
                "conjecturer_seed": cola_section.get("conjecturer_seed", 0),
            },
            base_dir,
            scenario,
        )
    else:
        policy = _policy_spec_from(section["policy"], base_dir, scenario)
    summary = evalkit.evaluate(policy, opponent, episodes, seed, scenario, focus=focus)
    evalkit.write_metrics_csv([(subcommand, summary)], out_dir / "metrics.csv")
    evalkit.write_speed_csv(
        summary.speed_mean, summary.speed_var, out_dir / "speed.csv"
    )
    _write_manifest(
        out_dir, subcommand, seed, config, ["metrics.csv", "speed.csv"]
    )
    return 0


def _cmd_eval(config, seed, out_dir, base_dir):
    return _eval_like(config, seed, out_dir, base_dir, "eval")


def _cmd_run_cola(config, seed, out_dir, base_dir):
    return _eval_like(config, seed, out_dir, base_dir, "run-cola")


def _cmd_compare(config, seed, out_dir, base_dir):
    scenario = _scenario_from(config)
    section = config.get("compare", {})
    episodes = int(section.get("episodes", 500))
    policy_a = _policy_spec_from(section["policy_a"], base_dir, scenario)
    policy_b = _policy_spec_from(section["policy_b"], base_dir, scenario)
    opponent = _policy_spec_from(
        section.get("opponent", {"kind": "scripted_ped"}), base_dir, scenario
    )
    result = evalkit.compare(policy_a, policy_b, opponent, episodes, seed, scenario)
    evalkit.write_metrics_csv(
        [
            (section.get("label_a", "policy_a"), result.summary_a),
            (section.get("label_b", "policy_b"), result.summary_b),
        ],
        out_dir / "metrics.csv",
    )
    evalkit.write_speed_csv(
        result.summary_a.speed_mean, result.summary_a.speed_var,
        out_dir / "speed_a.csv",
    )
    evalkit.write_speed_csv(
        result.summary_b.speed_mean, result.summary_b.speed_var,
        out_dir / "speed_b.csv",
    )
    paired = {
        "reward_diff": dataclasses.asdict(result.reward_diff),
        "collision_diff": dataclasses.asdict(result.collision_diff),
    }
    with open(out_dir / "paired.json", "w") as fh:
        json.dump(paired, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        out_dir, "compare", seed, config,
        ["metrics.csv", "speed_a.csv", "speed_b.csv", "paired.json"],
    )
    return 0


def _cmd_selftest(config, seed, out_dir, base_dir):
    from .selftest import run_selftest

    ok = run_selftest(seed=seed)
    _write_manifest(out_dir, "selftest", seed, config, [])
    return 0 if ok else 2


_COMMANDS = {
    "train-base": _cmd_train_base,
    "train-levelk": _cmd_train_levelk,
    "finetune": _cmd_finetune,
    "fill-buffer": _cmd_fill_buffer,
    "run-cola": _cmd_run_cola,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "selftest": _cmd_selftest,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _Parser(prog="crossrl", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config) if args.config else {}
        base_dir = Path(args.config).resolve().parent if args.config else Path.cwd()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.subcommand](config, args.seed, out_dir, base_dir)
    except (ConfigError, UsageError, KeyError) as exc:
        detail = f"missing config key {exc}" if isinstance(exc, KeyError) else exc
        print(f"crossrl: error: {detail}", file=sys.stderr)
        return 1
    except CrossrlError as exc:
        print(f"crossrl: runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
