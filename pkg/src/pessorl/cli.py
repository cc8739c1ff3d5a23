"""Command line entry point: ``python -m pessorl <verb> --config cfg.json``.

Verbs run one pipeline stage each (``gen-data``, ``fit-ensemble``, ``train``,
``bounds``, ``eval``) or all of them (``run``). Stages read their inputs from
and write their outputs to the configured output directory.

Exit codes: 0 success, 1 configuration error, 2 training diverged.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .envs import MazeSpecError, OfflineDataset
from .experiment import (
    ConfigError,
    ExperimentConfig,
    bound_report,
    build_environment,
    eval_starts,
    evaluate_policy,
    fit_from_config,
    generate_dataset,
    merge_docs,
    run_experiment,
    summarize,
    tomllib,
    uncertainty_map_csv,
)
from .regularizers import Kind
from .training import DivergenceError, TrainResult, train
from .uncertainty import DynamicsEnsemble

VERBS = ("gen-data", "fit-ensemble", "train", "bounds", "eval", "run")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pessorl", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON or TOML experiment config; its values win over flags")
    p.add_argument("--preset", choices=("hard", "superhard"), help="maze preset")
    p.add_argument("--variant", choices=[k.value for k in Kind], help="trainer.variant.kind")
    p.add_argument("--alpha", type=float, help="trainer.variant.alpha")
    p.add_argument("--n-steps", type=int, help="trainer.n_steps")
    p.add_argument("--seed", type=int, help="seed for dataset, ensemble, trainer and eval")
    p.add_argument("--output-dir", help="output_dir")
    return p


def _config_from_args(args) -> ExperimentConfig:
    doc: dict = {}
    if args.preset:
        doc["maze"] = {"preset": args.preset}
    trainer: dict = {}
    variant: dict = {}
    if args.variant:
        variant["kind"] = args.variant
    if args.alpha is not None:
        variant["alpha"] = args.alpha
    if variant:
        trainer["variant"] = variant
    if args.n_steps is not None:
        trainer["n_steps"] = args.n_steps
    if args.seed is not None:
        trainer["seed"] = args.seed
        for section in ("dataset", "ensemble", "eval"):
            doc[section] = {"seed": args.seed}
    if trainer:
        doc["trainer"] = trainer
    if args.output_dir:
        doc["output_dir"] = args.output_dir
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text()
        try:
            if path.suffix == ".toml":
                file_doc = tomllib.loads(text)
            else:
                file_doc = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        doc = merge_docs(doc, file_doc)
    return ExperimentConfig.from_dict(doc)


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} is missing; run `{stage}` first")
    return path


def _load_result(out: Path) -> TrainResult:
    doc = json.loads(_need(out / "result.json", "train").read_text())
    return TrainResult(
        q_final=np.array(doc["q_final"]),
        policy_final=np.array(doc["policy_final"]),
        trace=doc["trace"],
        epsilon_final=doc["epsilon_final"],
    )


def execute(verb: str, config: ExperimentConfig) -> dict | str:
    out = config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    if verb == "run":
        return run_experiment(config)
    env = build_environment(config.maze)
    if verb == "gen-data":
        dataset = generate_dataset(config, env)
        dataset.save(out / "dataset.jsonl")
        return {"dataset": str(out / "dataset.jsonl"), "n_transitions": len(dataset)}
    dataset = OfflineDataset.load(_need(out / "dataset.jsonl", "gen-data"))
    if verb == "fit-ensemble":
        ens = fit_from_config(config, env, dataset)
        ens.save(out / "ensemble.json")
        return {"ensemble": str(out / "ensemble.json"), "n_models": ens.n}
    ensemble = DynamicsEnsemble.load(_need(out / "ensemble.json", "fit-ensemble"))
    if verb == "train":
        result = train(config.trainer, dataset, env.mdp, ensemble)
        (out / "trace.csv").write_text(result.trace_csv())
        (out / "result.json").write_text(json.dumps(result.to_dict()))
        (out / "uncertainty_map.csv").write_text(
            uncertainty_map_csv(env, dataset, ensemble, result.policy_final)
        )
        return result.trace[-1]
    result = _load_result(out)
    if verb == "bounds":
        report = bound_report(config, env, dataset, ensemble, result)
        (out / "bounds.json").write_text(report.to_json() + "\n")
        return report.to_json()
    if verb == "eval":
        ev = evaluate_policy(
            env.mdp, result.policy_final, eval_starts(config, env),
            config.eval.n_rollouts, config.eval.max_steps, config.eval.seed,
        )
        summary = summarize(config, env, dataset, result)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return ev
    raise ConfigError(f"unknown verb {verb!r}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        report = execute(args.verb, config)
    except (ConfigError, MazeSpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2
    print(report if isinstance(report, str) else json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
