"""Config-driven pipeline: data, ensemble, training, bounds, evaluation, artifacts."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .envs import (
    MazeSpec,
    OfflineDataset,
    build_maze_mdp,
    collect_dataset,
    dataset_stats,
    maze_preset,
    optimal_behavior,
)
from .mdp import PolicyTable, TabularMdp, random_mdp, state_values
from .regularizers import Kind, floored_d_beta
from .theory import BoundReport, calibrate_c, delta_gap, feasibility_report
from .training import TrainerConfig, TrainResult, train
from .uncertainty import DynamicsEnsemble, dphi_distribution, fit_ensemble, policy_uncertainty

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

OUTPUT_DIR_ENV = "PESSORL_OUTPUT_DIR"

# Unvisited Q entries start uniform in [0, goal reward]: arbitrary values of
# the right scale, which is what off-data entries look like to a learner.
# beta_unc brings the largest ensemble disagreement (~0.13 on the hard maze)
# to the goal-reward scale.
MAZE_TRAINER = {"q_init_noise": 10.0, "variant": {"beta_unc": 75.0}}


def merge_docs(base: dict, top: dict) -> dict:
    """Recursive dict update; ``top`` wins."""
    out = dict(base)
    for k, v in top.items():
        out[k] = merge_docs(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RandomMdpSpec:
    n_states: int = 8
    n_actions: int = 3
    sparsity: float = 0.0
    seed: int = 0
    gamma: float = 0.9


@dataclass(frozen=True)
class DatasetConfig:
    behavior_epsilon: float = 0.1
    n_episodes: int = 60
    max_steps: int = 200
    seed: int = 0


@dataclass(frozen=True)
class EnsembleConfig:
    n_models: int = 5
    ridge: float = 1e-3
    seed: int = 0
    feature_map: str = "rbf"
    rbf_width: float | None = None


@dataclass(frozen=True)
class EvalConfig:
    n_rollouts: int = 500
    random_starts: bool = True
    max_steps: int = 100
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    maze: MazeSpec | RandomMdpSpec = field(default_factory=lambda: maze_preset("hard"))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig.from_dict(MAZE_TRAINER))
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"

    def with_output_dir(self, path: str | Path) -> "ExperimentConfig":
        return ExperimentConfig(self.maze, self.dataset, self.ensemble, self.trainer, self.eval, str(path))

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def to_dict(self) -> dict:
        if isinstance(self.maze, MazeSpec):
            maze = self.maze.to_dict()
        else:
            maze = {"random": dict(vars(self.maze))}
        return {
            "maze": maze,
            "dataset": dict(vars(self.dataset)),
            "ensemble": dict(vars(self.ensemble)),
            "trainer": self.trainer.to_dict(),
            "eval": dict(vars(self.eval)),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")
        try:
            return cls(
                maze=_maze_from_doc(doc.get("maze", {"preset": "hard"})),
                dataset=_section(DatasetConfig, doc.get("dataset", {}), "dataset"),
                ensemble=_section(EnsembleConfig, doc.get("ensemble", {}), "ensemble"),
                trainer=TrainerConfig.from_dict(merge_docs(MAZE_TRAINER, doc.get("trainer", {}))),
                eval=_section(EvalConfig, doc.get("eval", {}), "eval"),
                output_dir=str(doc.get("output_dir", "runs/default")),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        try:
            doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def _section(cls, doc: dict, name: str):
    unknown = set(doc) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {name} fields: {sorted(unknown)}")
    return cls(**doc)


def _maze_from_doc(doc: dict) -> MazeSpec | RandomMdpSpec:
    if "random" in doc:
        return _section(RandomMdpSpec, doc["random"], "maze.random")
    if "preset" in doc:
        overrides = {k: v for k, v in doc.items() if k != "preset"}
        return maze_preset(doc["preset"], **overrides)
    return MazeSpec.from_dict(doc)


# ---------------------------------------------------------------- environment


@dataclass
class Environment:
    mdp: TabularMdp
    embedding: np.ndarray
    data_starts: list[int]
    cells: list[tuple[int, int]] | None
    mdp_id: str


def build_environment(spec: MazeSpec | RandomMdpSpec) -> Environment:
    if isinstance(spec, MazeSpec):
        return Environment(
            build_maze_mdp(spec), spec.embedding(), spec.start_states(), spec.free_cells(), spec.name
        )
    mdp = random_mdp(spec.n_states, spec.n_actions, spec.gamma, spec.sparsity, spec.seed)
    # one-hot coordinates: no geometry to exploit, every state is its own feature
    return Environment(
        mdp, np.eye(spec.n_states), list(range(spec.n_states)), None, f"random-{spec.seed}"
    )


def generate_dataset(config: ExperimentConfig, env: Environment) -> OfflineDataset:
    d = config.dataset
    behavior = optimal_behavior(env.mdp, d.behavior_epsilon)
    return collect_dataset(
        env.mdp, behavior, d.n_episodes, d.max_steps, d.seed, starts=env.data_starts, mdp_id=env.mdp_id
    )


def fit_from_config(config: ExperimentConfig, env: Environment, dataset: OfflineDataset) -> DynamicsEnsemble:
    e = config.ensemble
    return fit_ensemble(
        dataset, env.embedding, env.mdp.n_actions, e.n_models, e.ridge, e.seed, e.feature_map, e.rbf_width
    )


# ---------------------------------------------------------------- evaluation


def evaluate_policy(
    mdp: TabularMdp,
    policy: PolicyTable,
    starts,
    n_rollouts: int,
    max_steps: int,
    seed: int,
) -> dict:
    """Seeded rollouts from uniformly drawn starts.

    Returns the mean discounted return and the fraction of rollouts that
    reach a terminal (goal) state within ``max_steps``.
    """
    starts = np.asarray(list(starts), dtype=int)
    if starts.size == 0:
        raise ValueError("need at least one start state")
    rng = np.random.default_rng(seed)
    act_cdf = np.cumsum(policy, axis=1)
    next_cdf = np.cumsum(mdp.transition, axis=2)
    s = starts[rng.integers(0, starts.size, size=n_rollouts)]
    ret = np.zeros(n_rollouts)
    done = mdp.terminal[s].copy()
    success = done.copy()
    disc = 1.0
    for _ in range(max_steps):
        live = np.flatnonzero(~done)
        if live.size == 0:
            break
        a = _draw(act_cdf[s[live]], rng.random(live.size))
        s_next = _draw(next_cdf[s[live], a], rng.random(live.size))
        ret[live] += disc * mdp.reward[s[live], a]
        s[live] = s_next
        hit = mdp.terminal[s_next]
        success[live[hit]] = True
        done[live[hit]] = True
        disc *= mdp.gamma
    return {"mean_return": float(ret.mean()), "success_rate": float(success.mean())}


def _draw(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def eval_starts(config: ExperimentConfig, env: Environment) -> list[int]:
    if config.eval.random_starts:
        return [s for s in range(env.mdp.n_states) if not env.mdp.terminal[s]]
    return list(env.data_starts)


# ---------------------------------------------------------------- reports


def bound_report(
    config: ExperimentConfig, env: Environment, dataset: OfflineDataset, ensemble: DynamicsEnsemble,
    result: TrainResult,
) -> BoundReport:
    """Bounds evaluated at the trained greedy policy and value function."""
    mdp = env.mdp
    stats = dataset_stats(dataset, mdp.n_states, mdp.n_actions, config.trainer.p_min)
    policy = result.policy_final
    v = state_values(result.q_final, policy)
    zeta = _zeta(config, ensemble, policy)
    dphi = dphi_distribution(zeta, v)
    d_beta = floored_d_beta(stats, config.trainer.d_min)
    c = calibrate_c(stats, mdp)
    return feasibility_report(
        v, mdp, policy, stats.pi_beta_hat, dphi, d_beta, stats, c, mdp.r_max,
        alpha=config.trainer.variant.alpha,
    )


def _zeta(config: ExperimentConfig, ensemble: DynamicsEnsemble, policy) -> np.ndarray:
    if Kind(config.trainer.variant.kind) is Kind.UNIFORM:
        return np.full(policy.shape[0], 1.0 / policy.shape[0])
    u = policy_uncertainty(ensemble, policy)
    return u / u.sum() if u.sum() > 0 else np.full(u.shape, 1.0 / u.size)


def uncertainty_map_csv(env: Environment, dataset: OfflineDataset, ensemble: DynamicsEnsemble, policy) -> str:
    stats = dataset_stats(dataset, env.mdp.n_states, env.mdp.n_actions)
    u = policy_uncertainty(ensemble, policy)
    zeta = u / u.sum() if u.sum() > 0 else np.full(u.shape, 1.0 / u.size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state", "x", "y", "u", "zeta", "d_beta", "in_support"])
    for s in range(env.mdp.n_states):
        x, y = env.cells[s] if env.cells is not None else (-1, -1)
        w.writerow([s, x, y, repr(float(u[s])), repr(float(zeta[s])), repr(float(stats.d_beta_hat[s])),
                    int(stats.state_support[s])])
    return buf.getvalue()


def summarize(config: ExperimentConfig, env: Environment, dataset: OfflineDataset, result: TrainResult) -> dict:
    ev = evaluate_policy(
        env.mdp, result.policy_final, eval_starts(config, env),
        config.eval.n_rollouts, config.eval.max_steps, config.eval.seed,
    )
    stats = dataset_stats(dataset, env.mdp.n_states, env.mdp.n_actions)
    v = state_values(result.q_final, result.policy_final)
    ood = ~stats.state_support
    last = result.trace[-1]
    return {
        "variant": Kind(config.trainer.variant.kind).value,
        "mdp_id": env.mdp_id,
        "n_transitions": len(dataset),
        "n_states": env.mdp.n_states,
        "n_visited_states": int(stats.state_support.sum()),
        "final_return": ev["mean_return"],
        "success_rate": ev["success_rate"],
        "expected_return": last["mean_return"],
        "delta_k": delta_gap(v, dataset.s),
        "ood_delta_k": float(np.max(v[ood]) - np.mean(v[dataset.s])) if ood.any() else None,
        "lb_violations": last["lb_violations"],
        "epsilon_final": result.epsilon_final,
        "steps": last["step"],
    }


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the full pipeline and write every artifact into the output directory."""
    out = config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    env = build_environment(config.maze)
    dataset = generate_dataset(config, env)
    dataset.save(out / "dataset.jsonl")
    ensemble = fit_from_config(config, env, dataset)
    ensemble.save(out / "ensemble.json")
    result = train(config.trainer, dataset, env.mdp, ensemble)
    (out / "trace.csv").write_text(result.trace_csv())
    (out / "result.json").write_text(json.dumps(result.to_dict()))
    (out / "bounds.json").write_text(bound_report(config, env, dataset, ensemble, result).to_json() + "\n")
    (out / "uncertainty_map.csv").write_text(
        uncertainty_map_csv(env, dataset, ensemble, result.policy_final)
    )
    summary = summarize(config, env, dataset, result)
    (out / "summary.json").write_text(_dump(summary))
    (out / "config.json").write_text(_dump(config.to_dict()))
    return summary
