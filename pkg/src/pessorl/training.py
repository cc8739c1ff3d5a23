"""Outer training loop: evaluate, improve greedily, adapt epsilon, record a trace."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .envs import BehaviorStats, OfflineDataset, dataset_stats
from .mdp import (
    QTable,
    TabularMdp,
    exact_bellman_backup,
    exact_policy_value,
    greedy_policy,
    state_values,
)
from .regularizers import (
    Kind,
    VariantConfig,
    closed_form_update,
    empirical_targets,
    lagrangian_epsilon_step,
    pessimistic_q,
    pessorl_objective,
    value_gap,
)
from .theory import delta_gap
from .uncertainty import DynamicsEnsemble, dphi_distribution, zeta_distribution

TRACE_COLUMNS = ("step", "delta_k", "epsilon", "mean_return", "lb_violations", "objective")
LB_TOL = 1e-8


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    variant: VariantConfig = field(default_factory=VariantConfig)
    lr_q: float = 0.9
    n_steps: int = 5000
    ensemble_refresh: int = 100
    seed: int = 0
    use_closed_form: bool = False
    eval_every: int = 500
    backup: str = "empirical"  # "exact" | "empirical"
    lr_relative: bool = True  # gradient step is lr_q / (largest per-pair data weight)
    d_min: float = 1e-6
    p_min: float = 1e-3
    q_init: float = 0.0
    q_init_noise: float = 0.0
    divergence_margin: float = 1.0

    def __post_init__(self):
        if isinstance(self.variant, dict):
            object.__setattr__(self, "variant", VariantConfig(**self.variant))
        problems = []
        if self.n_steps < 1:
            problems.append("n_steps must be at least 1")
        if not self.use_closed_form and self.lr_q <= 0:
            problems.append("lr_q must be positive in gradient mode")
        if self.eval_every < 1 or self.ensemble_refresh < 1:
            problems.append("eval_every and ensemble_refresh must be at least 1")
        if self.backup not in ("exact", "empirical"):
            problems.append(f"backup must be 'exact' or 'empirical', got {self.backup!r}")
        if self.backup == "exact" and not self.use_closed_form:
            problems.append("the exact backup is only available in closed-form mode")
        if problems:
            raise ValueError("invalid trainer config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["variant"] = self.variant.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown trainer fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "TrainerConfig":
        path = Path(path)
        if path.suffix == ".toml":
            return cls.from_dict(tomllib.loads(path.read_text()))
        return cls.from_dict(json.loads(path.read_text()))


@dataclass
class TrainResult:
    q_final: QTable
    policy_final: np.ndarray
    trace: list[dict]
    epsilon_final: float = 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.trace:
            writer.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "q_final": self.q_final.tolist(),
            "policy_final": self.policy_final.tolist(),
            "epsilon_final": self.epsilon_final,
            "trace": self.trace,
        }

    def final(self, key: str):
        return self.trace[-1][key]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _acting_policy(q: QTable, variant: VariantConfig, stats: BehaviorStats, disagreement):
    kind = Kind(variant.kind)
    if kind is Kind.UNC:
        return greedy_policy(pessimistic_q(q, variant, disagreement=disagreement))
    if kind is Kind.OPIQ:
        return greedy_policy(pessimistic_q(q, variant, counts=stats.count_sa))
    return greedy_policy(q)


def train(
    config: TrainerConfig,
    dataset: OfflineDataset,
    mdp: TabularMdp,
    ensemble: DynamicsEnsemble | None = None,
) -> TrainResult:
    """Alternate regularised policy evaluation with greedy improvement.

    The exact ``mdp`` is used for the exact backup (when configured) and for
    the evaluation columns of the trace; learning from data only touches
    ``dataset``.
    """
    variant = config.variant
    kind = Kind(variant.kind)
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if kind in (Kind.PESSORL, Kind.UNC) and ensemble is None:
        raise ValueError(f"{kind.value} needs a fitted dynamics ensemble")
    S, A = mdp.n_states, mdp.n_actions
    stats = dataset_stats(dataset, S, A, config.p_min)
    states = np.arange(S)
    uniform_zeta = np.full(S, 1.0 / S)
    disagreement = ensemble.pair_disagreement() if kind is Kind.UNC else None
    start_states = np.flatnonzero(~mdp.terminal)

    rng = np.random.default_rng(config.seed)
    q = np.full((S, A), float(config.q_init))
    if config.q_init_noise > 0:
        q = q + config.q_init_noise * rng.random((S, A))
    r_bound = float(max(mdp.r_max, np.max(np.abs(dataset.r)))) / (1.0 - mdp.gamma)
    limit = 10.0 * (r_bound + abs(config.q_init) + config.q_init_noise + config.divergence_margin)

    lr = config.lr_q
    if config.lr_relative:
        lr = lr / float(np.max(stats.count_sa) / len(dataset))

    epsilon = variant.epsilon_mode.epsilon if kind.uses_state_penalty else 0.0
    zeta = uniform_zeta
    trace: list[dict] = []
    policy = _acting_policy(q, variant, stats, disagreement)
    for step in range(1, config.n_steps + 1):
        policy = _acting_policy(q, variant, stats, disagreement)
        if kind is Kind.PESSORL and (step - 1) % config.ensemble_refresh == 0:
            zeta = zeta_distribution(ensemble, states, policy)
        v = state_values(q, policy)
        gap = value_gap(v, zeta, stats.d_beta_hat) if kind.uses_state_penalty else 0.0
        eps_now = epsilon if kind.uses_state_penalty else 0.0
        alpha = variant.alpha if kind.uses_cql else 0.0

        if config.use_closed_form:
            dphi = dphi_distribution(zeta, v)
            if config.backup == "exact":
                target = exact_bellman_backup(q, mdp, policy)
            else:
                target = empirical_targets(q, stats, policy, mdp.gamma)
            q_new = closed_form_update(
                q, target, stats, policy, dphi, eps_now, alpha, d_min=config.d_min
            )
        else:
            v_next = v[dataset.s_next]
            targets = dataset.r + mdp.gamma * v_next
            _, grad = pessorl_objective(
                q, stats, policy, zeta, dataset, targets, variant, eps_now
            )
            q_new = q - lr * grad

        if not np.all(np.isfinite(q_new)) or np.max(np.abs(q_new)) > limit:
            raise DivergenceError(
                f"step {step}: |Q| reached {np.max(np.abs(q_new)):.3g}, above the guard {limit:.3g}"
            )
        q = q_new
        if kind.uses_state_penalty and variant.epsilon_mode.adaptive:
            epsilon = lagrangian_epsilon_step(
                epsilon, gap, variant.epsilon_mode.tau, variant.epsilon_mode.lr
            )

        if step % config.eval_every == 0 or step == config.n_steps:
            trace.append(
                _evaluate(q, mdp, dataset, stats, zeta, variant, epsilon, disagreement, start_states, step)
            )
    policy = _acting_policy(q, variant, stats, disagreement)
    return TrainResult(q_final=q, policy_final=policy, trace=trace, epsilon_final=float(epsilon))


def evaluate_regularized(
    mdp_or_gamma,
    policy,
    stats: BehaviorStats,
    dphi: np.ndarray,
    epsilon: float,
    alpha: float,
    d_min: float = 0.0,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> QTable:
    """Fixed point of the closed-form update for a fixed policy and penalty distribution.

    Pass the exact MDP for the exact backup, or a discount factor for the
    count-based empirical backup (which needs every pair to be in the data,
    otherwise unvisited entries drift by the penalty forever).
    """
    exact = isinstance(mdp_or_gamma, TabularMdp)
    if not exact and not np.all(stats.support_mask):
        raise ValueError("the empirical fixed point needs data on every state-action pair")
    q = np.zeros((stats.n_states, stats.n_actions))
    for _ in range(max_iter):
        if exact:
            target = exact_bellman_backup(q, mdp_or_gamma, policy)
        else:
            target = empirical_targets(q, stats, policy, float(mdp_or_gamma))
        q_new = closed_form_update(q, target, stats, policy, dphi, epsilon, alpha, d_min=d_min)
        change = np.max(np.abs(q_new - q))
        q = q_new
        if change <= tol * max(1.0, np.max(np.abs(q))):
            return q
    raise RuntimeError(f"regularised evaluation did not settle in {max_iter} sweeps")


def _evaluate(q, mdp, dataset, stats, zeta, variant, epsilon, disagreement, start_states, step) -> dict:
    policy = _acting_policy(q, variant, stats, disagreement)
    v_hat = state_values(q, policy)
    v_true = exact_policy_value(mdp, policy, cross_check=False)
    v = state_values(q, policy)
    kind = Kind(variant.kind)
    eps = epsilon if kind.uses_state_penalty else 0.0
    targets = dataset.r + mdp.gamma * v[dataset.s_next]
    objective, _ = pessorl_objective(
        q, stats, policy, zeta, dataset, targets, variant, eps
    )
    return {
        "step": int(step),
        "delta_k": delta_gap(v_hat, dataset.s),
        "epsilon": float(epsilon),
        "mean_return": float(np.mean(v_true[start_states])),
        "lb_violations": int(np.sum(v_hat > v_true + LB_TOL)),
        "objective": float(objective),
    }
