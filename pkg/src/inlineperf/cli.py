"""Command line pipeline: program generation, data collection,
preprocessing, model training, cross-validation, policy training,
deployment evaluation, and region autotuning.

Every stage reads serialized artifacts from the output directory, writes
its own plus a manifest under manifests/, and stamps artifacts with the
producing invocation digest. Exit codes: 0 success, 2 missing or bad
input, 3 artifact schema mismatch, 4 insufficient data, 5 train/test
overlap.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import (
    CollectConfig,
    DatasetError,
    autotune_collect,
    contradiction_fraction,
    dedup,
    samples_from_csv,
    samples_to_csv,
)
from .evaluate import (
    EvaluateError,
    evaluate,
    region_report,
    region_report_to_obj,
    region_table,
    report_table,
    report_to_json,
    report_to_obj,
)
from .generate import GenConfig, generate_program
from .ir import Module, ProgramError, SchemaError, dumps, module_from_obj, module_to_obj
from .manifest import RunManifest, stamp_csv, stamp_obj, write_artifact
from .policy import (
    PolicyError,
    TrainerConfig,
    policy_from_obj,
    policy_to_obj,
    train_policy,
)
from .preprocess import PreprocessError, PreprocessState, fit_preprocess
from .speedup_model import (
    ModelError,
    TrainSpec,
    cross_validate,
    loss_history_csv,
    model_from_obj,
    model_to_obj,
    train,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SCHEMA = 3
EXIT_DATA = 4
EXIT_OVERLAP = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


DEFAULT_CONFIG: dict = {
    "gen": {
        "seeds": [0, 1, 2, 3],
        "n_functions": 4,
        "blocks_per_function": [2, 5],
        "loop_probability": 0.3,
        "callsite_density": 0.4,
        "recursion_probability": 0.0,
        "max_loop_depth": 3,
        "max_nesting": 4,
        "instrs_per_block": [1, 4],
        "max_params": 3,
        "local_probability": 0.5,
        "diamond_probability": 0.25,
    },
    "collect": {
        "iterations": 30,
        "seed": 0,
        "strategy": "random",
        "exclusion_threshold": 3.0,
        "min_overhead_fraction": 0.01,
        "symmetric_guard": False,
    },
    "train": {
        "learning_rate": 0.005,
        "batch_size": 8,
        "epochs": 40,
        "seed": 0,
        "val_fraction": 0.0,
    },
    "policy": {
        "iterations": 150,
        "n_rollouts": 8,
        "learning_rate": 0.05,
        "sigma": 0.02,
        "normalize_rewards": True,
        "seed": 0,
    },
    "evaluate": {
        "seeds": [100, 101],
        "noise_epsilon": 0.01,
        "runs": 5,
        "seed": 0,
    },
    "autotune": {
        "budget": 120,
        "seed": 0,
    },
}


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is None:
        return config
    try:
        user = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, f"config is not valid JSON: {exc}")
    if not isinstance(user, dict):
        raise CliError(EXIT_INPUT, "config must be a JSON object")
    for section, values in user.items():
        if section not in config:
            raise CliError(EXIT_INPUT, f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise CliError(EXIT_INPUT, f"config section {section!r} must be an object")
        for key, value in values.items():
            if key not in config[section]:
                raise CliError(EXIT_INPUT, f"unknown key {key!r} in section {section!r}")
            config[section][key] = value
    return config


def apply_seed_override(config: dict, seed: int | None) -> dict:
    if seed is None:
        return config
    for section in ("collect", "train", "policy", "evaluate", "autotune"):
        config[section]["seed"] = seed
    return config


def _validated(cfg):
    # Config-level validation failures are bad input, not artifact errors.
    try:
        cfg.validate()
    except ProgramError as exc:
        raise CliError(EXIT_INPUT, f"bad configuration: {exc}")
    return cfg


def _gen_config(config: dict, seed: int) -> GenConfig:
    knobs = {k: v for k, v in config["gen"].items() if k != "seeds"}
    for key in ("blocks_per_function", "instrs_per_block"):
        knobs[key] = tuple(knobs[key])
    return _validated(GenConfig(seed=seed, **knobs))


def _read_json(path: Path, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"missing {what}: {path}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} is not valid JSON: {exc}")


def _load_programs(out: Path) -> list[tuple[str, Module]]:
    program_dir = out / "programs"
    files = sorted(program_dir.glob("*.json"))
    if not files:
        raise CliError(EXIT_INPUT, f"no program files under {program_dir}")
    return [(f.stem, module_from_obj(_read_json(f, "program"))) for f in files]


def _eval_corpus(config: dict) -> list[tuple[str, Module]]:
    seeds = config["evaluate"]["seeds"]
    if not seeds:
        raise CliError(EXIT_INPUT, "evaluate.seeds is empty")
    return [(f"p{s}", generate_program(_gen_config(config, s))) for s in seeds]


def _train_ids(config: dict) -> set[str]:
    return {f"p{s}" for s in config["gen"]["seeds"]}


def _finish(man: RunManifest, out: Path, stage: str) -> None:
    write_artifact(out / "manifests" / f"{stage}.manifest.json", man.to_json(), man)


# ---------------------------------------------------------------------------
# Stages.


def cmd_gen(config: dict, out: Path, args) -> int:
    seeds = config["gen"]["seeds"]
    if not seeds:
        raise CliError(EXIT_INPUT, "gen.seeds is empty; nothing to generate")
    man = RunManifest("gen", config["gen"], seed=None)
    inv = man.invocation_digest()
    for seed in seeds:
        m = generate_program(_gen_config(config, seed))
        text = dumps(stamp_obj(module_to_obj(m), inv))
        write_artifact(out / "programs" / f"p{seed}.json", text, man)
    _finish(man, out, "gen")
    print(f"generated {len(seeds)} programs under {out / 'programs'}")
    return EXIT_OK


def cmd_collect(config: dict, out: Path, args) -> int:
    programs = _load_programs(out)
    cc = _validated(CollectConfig(**config["collect"]))
    man = RunManifest("collect", config["collect"], seed=cc.seed)
    samples = []
    per_program = {}
    for pid, m in programs:
        got = autotune_collect(m, cc, program_id=pid)
        per_program[pid] = len(got)
        samples.extend(got)
    samples = dedup(samples)
    fraction = contradiction_fraction(samples)
    inv = man.invocation_digest()
    write_artifact(out / "dataset.csv", stamp_csv(samples_to_csv(samples), inv), man)
    report = {
        "samples": len(samples),
        "per_program": per_program,
        "contradiction_fraction": fraction,
        "manifest": inv,
    }
    write_artifact(out / "collect_report.json", dumps(report), man)
    _finish(man, out, "collect")
    print(f"collected {len(samples)} samples; contradiction fraction {fraction:.4f}")
    return EXIT_OK


def _load_samples(out: Path):
    path = out / "dataset.csv"
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"missing dataset: {path}")
    return samples_from_csv(text)


def cmd_preprocess(config: dict, out: Path, args) -> int:
    samples = _load_samples(out)
    state = fit_preprocess(samples)
    man = RunManifest("preprocess", {}, seed=None)
    man.inputs["dataset.csv"] = _digest_of(out / "dataset.csv")
    inv = man.invocation_digest()
    write_artifact(out / "preproc.json", dumps(stamp_obj(state.to_obj(), inv)), man)
    _finish(man, out, "preprocess")
    print(f"fitted preprocessing on {len(samples)} samples")
    return EXIT_OK


def _digest_of(path: Path) -> str:
    from .manifest import digest_file

    try:
        return digest_file(path)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"missing input: {path}")


def cmd_train_predictor(config: dict, out: Path, args) -> int:
    samples = _load_samples(out)
    ps = PreprocessState.from_obj(_read_json(out / "preproc.json", "preprocess state"))
    spec = _validated(TrainSpec(**config["train"]))
    result = train(samples, ps, spec)
    man = RunManifest("train-predictor", config["train"], seed=spec.seed)
    man.inputs["dataset.csv"] = _digest_of(out / "dataset.csv")
    man.inputs["preproc.json"] = _digest_of(out / "preproc.json")
    inv = man.invocation_digest()
    write_artifact(out / "model.json", dumps(stamp_obj(model_to_obj(result.model), inv)), man)
    write_artifact(out / "loss_history.csv", stamp_csv(loss_history_csv(result.history), inv), man)
    if not args.no_figures:
        from .figures import loss_curve

        loss_curve(result.history, out / "figures" / "loss_curve.png")
    _finish(man, out, "train-predictor")
    final = result.history[-1][2] if result.history else float("nan")
    print(f"trained on {len(samples)} samples; final batch loss {final:.6f}")
    return EXIT_OK


def cmd_crossval(config: dict, out: Path, args) -> int:
    samples = _load_samples(out)
    spec = _validated(TrainSpec(**config["train"]))
    result = cross_validate(samples, spec)
    man = RunManifest("crossval", config["train"], seed=spec.seed)
    man.inputs["dataset.csv"] = _digest_of(out / "dataset.csv")
    inv = man.invocation_digest()
    lines = ["program,mse,baseline_mse,n_train,n_test,train_hash,test_hash"]
    for f in result.folds:
        lines.append(
            f"{f.program_id},{f.mse!r},{f.baseline_mse!r},{f.n_train},{f.n_test},"
            f"{f.train_hash},{f.test_hash}"
        )
    write_artifact(out / "crossval.csv", stamp_csv("\n".join(lines) + "\n", inv), man)
    obj = {
        "folds": [
            {
                "program_id": f.program_id,
                "mse": f.mse,
                "baseline_mse": f.baseline_mse,
                "n_train": f.n_train,
                "n_test": f.n_test,
                "train_hash": f.train_hash,
                "test_hash": f.test_hash,
            }
            for f in result.folds
        ],
        "geomean_mse": result.geomean_mse,
        "manifest": inv,
    }
    write_artifact(out / "crossval_report.json", dumps(obj), man)
    if not args.no_figures:
        from .figures import crossval_bars

        crossval_bars(result.folds, out / "figures" / "crossval.png")
    _finish(man, out, "crossval")
    if args.format == "json":
        print(dumps(obj), end="")
    else:
        print(f"{'program':<12} {'mse':>12} {'baseline':>12}")
        for f in result.folds:
            print(f"{f.program_id:<12} {f.mse:>12.6f} {f.baseline_mse:>12.6f}")
        print(f"{'geomean':<12} {result.geomean_mse:>12.6f}")
    return EXIT_OK


def cmd_train_policy(config: dict, out: Path, args) -> int:
    programs = _load_programs(out)
    model = model_from_obj(_read_json(out / "model.json", "speedup model"))
    tc = _validated(TrainerConfig(corpus=tuple(m for _, m in programs), **config["policy"]))
    result = train_policy(tc, model)
    man = RunManifest("train-policy", config["policy"], seed=tc.seed)
    man.inputs["model.json"] = _digest_of(out / "model.json")
    inv = man.invocation_digest()
    write_artifact(out / "policy.json", dumps(stamp_obj(policy_to_obj(result.params), inv)), man)
    history = "iteration,mean_reward\n" + "".join(
        f"{i},{r!r}\n" for i, r in enumerate(result.reward_history)
    )
    write_artifact(out / "reward_history.csv", stamp_csv(history, inv), man)
    if not args.no_figures:
        from .figures import reward_curve

        reward_curve(result.reward_history, out / "figures" / "reward_curve.png")
    _finish(man, out, "train-policy")
    print(
        f"trained policy for {tc.iterations} iterations; "
        f"skipped {result.skipped_iterations} degenerate"
    )
    return EXIT_OK


def cmd_evaluate(config: dict, out: Path, args) -> int:
    params = policy_from_obj(_read_json(out / "policy.json", "policy"))
    corpus = _eval_corpus(config)
    report = evaluate(
        corpus,
        params,
        train_ids=_train_ids(config),
        noise_epsilon=config["evaluate"]["noise_epsilon"],
        seed=config["evaluate"]["seed"],
        runs=config["evaluate"]["runs"],
    )
    man = RunManifest("evaluate", config["evaluate"], seed=config["evaluate"]["seed"])
    man.inputs["policy.json"] = _digest_of(out / "policy.json")
    inv = man.invocation_digest()
    obj = stamp_obj(report_to_obj(report), inv)
    write_artifact(out / "eval_report.json", dumps(obj), man)
    if not args.no_figures:
        from .figures import eval_bars

        eval_bars(report, out / "figures" / "eval_speedup.png")
    _finish(man, out, "evaluate")
    if args.format == "json":
        print(report_to_json(report), end="")
    else:
        print(report_table(report), end="")
    return EXIT_OK


def cmd_autotune(config: dict, out: Path, args) -> int:
    params = policy_from_obj(_read_json(out / "policy.json", "policy"))
    corpus = _eval_corpus(config)
    rows = region_report(
        corpus,
        params,
        budget=config["autotune"]["budget"],
        seed=config["autotune"]["seed"],
    )
    man = RunManifest("autotune", config["autotune"], seed=config["autotune"]["seed"])
    man.inputs["policy.json"] = _digest_of(out / "policy.json")
    inv = man.invocation_digest()
    obj = region_report_to_obj(rows)
    obj["manifest"] = inv
    write_artifact(out / "region_report.json", dumps(obj), man)
    _finish(man, out, "autotune")
    if args.format == "json":
        print(dumps(obj), end="")
    else:
        print(region_table(rows), end="")
    return EXIT_OK


PIPELINE = (
    ("gen", cmd_gen),
    ("collect", cmd_collect),
    ("preprocess", cmd_preprocess),
    ("train-predictor", cmd_train_predictor),
    ("crossval", cmd_crossval),
    ("train-policy", cmd_train_policy),
    ("evaluate", cmd_evaluate),
    ("autotune", cmd_autotune),
)


def cmd_pipeline(config: dict, out: Path, args) -> int:
    for name, fn in PIPELINE:
        print(f"[{name}]", file=sys.stderr)
        code = fn(config, out, args)
        if code != EXIT_OK:
            return code
    return EXIT_OK


COMMANDS = dict(PIPELINE) | {"pipeline": cmd_pipeline}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inlineperf",
        description="synthetic inlining pipeline: generate, collect, train, evaluate",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override stage seeds")
        p.add_argument("--format", choices=("table", "json"), default="table")
        p.add_argument("--jobs", type=int, default=1, help="worker bound (serial only)")
        p.add_argument("--no-figures", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = apply_seed_override(load_config(args.config), args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](config, out, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (PreprocessError, ModelError) as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EvaluateError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_OVERLAP
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (PolicyError, ProgramError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TypeError, ValueError) as exc:
        print(f"bad configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
