"""Policy-evaluation objectives and update rules for every training variant.

Conventions: ``q`` is a Q-table ``[S, A]``, ``policy`` the current (usually
greedy) policy, ``stats`` the empirical behaviour statistics. Expectations
over states and actions are exact sums over the tables.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .envs import BehaviorStats, OfflineDataset
from .mdp import DimensionError, PolicyTable, QTable, TabularMdp, VTable, exact_bellman_backup, state_values


class Kind(str, enum.Enum):
    STANDARD = "Standard"
    CQL = "CQL"
    PESSORL = "PessORL"
    UNIFORM = "PessORLUniform"
    UNC = "PessORLUnc"
    OPIQ = "PessORLOpiq"

    @property
    def uses_cql(self) -> bool:
        return self is not Kind.STANDARD

    @property
    def uses_state_penalty(self) -> bool:
        return self in (Kind.PESSORL, Kind.UNIFORM)

    @property
    def uses_correction(self) -> bool:
        return self in (Kind.UNC, Kind.OPIQ)


class ObjectiveError(FloatingPointError):
    """A term of the objective evaluated to a non-finite number."""


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class EpsilonMode:
    """Fixed trade-off factor, or one adapted by dual ascent against budget ``tau``."""

    type: str = "lagrangian"  # "fixed" | "lagrangian"
    epsilon: float = 0.0  # the fixed value, or the starting value in lagrangian mode
    tau: float = 0.0
    lr: float = 0.1

    def __post_init__(self):
        if self.type not in ("fixed", "lagrangian"):
            raise ValueError(f"epsilon_mode.type must be 'fixed' or 'lagrangian', got {self.type!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")
        if self.type == "lagrangian" and self.lr <= 0:
            raise ValueError("lagrangian lr must be positive")

    @property
    def adaptive(self) -> bool:
        return self.type == "lagrangian"


@dataclass(frozen=True)
class VariantConfig:
    kind: Kind = Kind.PESSORL
    alpha: float = 0.5
    epsilon_mode: EpsilonMode = EpsilonMode()
    beta_unc: float = 1.0
    c_action: float = 1.0
    m_exp: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if isinstance(self.epsilon_mode, dict):
            object.__setattr__(self, "epsilon_mode", EpsilonMode(**self.epsilon_mode))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "alpha": self.alpha,
            "epsilon_mode": dict(vars(self.epsilon_mode)),
            "beta_unc": self.beta_unc,
            "c_action": self.c_action,
            "m_exp": self.m_exp,
        }


def _shapes(q: QTable, stats: BehaviorStats, policy: PolicyTable) -> None:
    shape = (stats.n_states, stats.n_actions)
    if np.shape(q) != shape or np.shape(policy) != shape:
        raise DimensionError(
            f"q {np.shape(q)} and policy {np.shape(policy)} must match stats {shape}"
        )


def cql_cost(q: QTable, stats: BehaviorStats, policy: PolicyTable, alpha: float) -> float:
    """alpha * (E_{d_beta, pi}[Q] - E_{d_beta, pi_beta}[Q])."""
    _shapes(q, stats, policy)
    diff = np.sum((np.asarray(policy) - stats.pi_beta_hat) * q, axis=1)
    return float(alpha * stats.d_beta_hat @ diff)


def cql_cost_grad(stats: BehaviorStats, policy: PolicyTable, alpha: float) -> np.ndarray:
    return alpha * stats.d_beta_hat[:, None] * (np.asarray(policy) - stats.pi_beta_hat)


def value_gap(v: VTable, zeta: np.ndarray, d_beta: np.ndarray) -> float:
    """log sum_s zeta(s) exp(V(s)) - E_{d_beta}[V], the quantity the epsilon term penalises."""
    support = zeta > 0
    shift = np.max(v[support])
    lse = shift + np.log(np.sum(zeta[support] * np.exp(v[support] - shift)))
    return float(lse - d_beta @ v)


def _softmax_weights(v: VTable, zeta: np.ndarray) -> np.ndarray:
    support = zeta > 0
    shift = np.max(v[support])
    w = np.where(support, zeta * np.exp(np.where(support, v - shift, 0.0)), 0.0)
    return w / w.sum()


def bellman_error(q: QTable, dataset: OfflineDataset, targets) -> tuple[float, np.ndarray]:
    """Half mean squared error of ``q[s_i, a_i]`` against fixed per-transition targets."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(dataset),):
        raise DimensionError(f"need one target per transition, got {targets.shape}")
    resid = q[dataset.s, dataset.a] - targets
    grad = np.zeros_like(q, dtype=float)
    np.add.at(grad, (dataset.s, dataset.a), resid / len(dataset))
    return float(0.5 * np.mean(resid**2)), grad


def _finite(name: str, value):
    if not np.all(np.isfinite(value)):
        raise ObjectiveError(f"non-finite value in the {name} term")
    return value


def pessorl_objective(
    q: QTable,
    stats: BehaviorStats,
    policy: PolicyTable,
    zeta: np.ndarray | None,
    dataset: OfflineDataset,
    targets,
    variant: VariantConfig,
    epsilon: float,
) -> tuple[float, np.ndarray]:
    """Objective value and its exact gradient with respect to ``q``.

    ``J = eps * (log sum_s zeta e^V - E_{d_beta}[V]) + E(q, targets) + C(q)``

    with ``V(s) = sum_a pi(a|s) q(s, a)``. CQL drops the eps term, Standard
    also drops C, and the uniform variant swaps ``zeta`` for the uniform
    distribution. The uncertainty-penalised ablations only change action
    selection, so they evaluate with the CQL objective.
    """
    q = np.asarray(q, dtype=float)
    _shapes(q, stats, policy)
    kind = Kind(variant.kind)
    value, grad = bellman_error(q, dataset, targets)
    _finite("bellman error", value)
    if kind.uses_cql:
        value += _finite("cql cost", cql_cost(q, stats, policy, variant.alpha))
        grad = grad + cql_cost_grad(stats, policy, variant.alpha)
    if kind.uses_state_penalty:
        if kind is Kind.UNIFORM:
            zeta = np.full(stats.n_states, 1.0 / stats.n_states)
        if zeta is None:
            raise ValueError("PessORL needs zeta")
        zeta = np.asarray(zeta, dtype=float)
        v = state_values(q, policy)
        gap = _finite("softmax value", value_gap(v, zeta, stats.d_beta_hat))
        dphi = _softmax_weights(v, zeta)
        value += epsilon * gap
        grad = grad + epsilon * (dphi - stats.d_beta_hat)[:, None] * policy
    return float(value), _finite("gradient", grad)


def floored_d_beta(stats: BehaviorStats, d_min: float) -> np.ndarray:
    d = stats.d_beta_hat
    if np.any(d <= 0) and d_min <= 0:
        raise SupportError(
            "some states have no data, so d_beta is zero there; set d_min > 0 to use the closed form"
        )
    return np.maximum(d, d_min)


def augmented_objective(
    q: QTable,
    target_q: QTable,
    stats: BehaviorStats,
    policy: PolicyTable,
    dphi: np.ndarray,
    epsilon: float,
    alpha: float,
    d_min: float = 0.0,
) -> tuple[float, np.ndarray]:
    """The per-iteration quadratic whose minimiser is :func:`closed_form_update`.

    ``J = eps * (E_{dphi,pi}[q] - E_{d,pi}[q]) + alpha * (E_{d,pi}[q] - E_{d,pi_beta}[q])
    + 1/2 E_{d,pi_beta}[(q - target_q)^2]``, with ``d`` the (floored) state marginal.
    """
    q = np.asarray(q, dtype=float)
    _shapes(q, stats, policy)
    d = floored_d_beta(stats, d_min)
    pb = stats.pi_beta_hat
    lin = (
        epsilon * (dphi - d)[:, None] * policy
        + alpha * d[:, None] * (policy - pb)
    )
    w = d[:, None] * pb
    resid = q - target_q
    value = float(np.sum(lin * q) + 0.5 * np.sum(w * resid**2))
    return value, lin + w * resid


def empirical_targets(q: QTable, stats: BehaviorStats, policy: PolicyTable, gamma: float) -> QTable:
    """Count-based empirical backup; pairs without data keep their current value."""
    v = state_values(q, policy)
    backed = stats.reward_hat + gamma * (stats.transition_hat() @ v)
    return np.where(stats.support_mask, backed, q)


def closed_form_update(
    q: QTable,
    mdp_or_targets,
    stats: BehaviorStats,
    policy: PolicyTable,
    dphi: np.ndarray,
    epsilon: float,
    alpha: float,
    d_min: float = 0.0,
) -> QTable:
    """Minimiser of the augmented quadratic, entry by entry.

    ``Q'(s,a) = BQ(s,a) - eps (dphi(s) - d(s)) pi(a|s) / (d(s) pi_beta(a|s))
    - alpha (pi(a|s) / pi_beta(a|s) - 1)``

    ``mdp_or_targets`` is either the exact MDP (``BQ`` is then the exact
    backup) or a ready-made table of backup targets.
    """
    q = np.asarray(q, dtype=float)
    _shapes(q, stats, policy)
    if isinstance(mdp_or_targets, TabularMdp):
        target = exact_bellman_backup(q, mdp_or_targets, policy)
    else:
        target = np.asarray(mdp_or_targets, dtype=float)
        if target.shape != q.shape:
            raise DimensionError(f"targets must be {q.shape}, got {target.shape}")
    d = floored_d_beta(stats, d_min)
    ratio = policy / stats.pi_beta_hat
    return (
        target
        - epsilon * ((np.asarray(dphi) - d) / d)[:, None] * ratio
        - alpha * (ratio - 1.0)
    )


def pessimistic_q(
    q: QTable,
    variant: VariantConfig,
    disagreement: np.ndarray | None = None,
    counts: np.ndarray | None = None,
) -> QTable:
    """Q-table used for action selection by the uncertainty-penalised ablations.

    PessORLUnc subtracts ``beta * disagreement(s, a)``; PessORLOpiq subtracts
    the count bonus ``C / (N(s, a) + 1)^M`` so rarely seen actions look worse.
    """
    q = np.asarray(q, dtype=float)
    kind = Kind(variant.kind)
    if kind is Kind.UNC:
        if disagreement is None:
            raise ValueError("PessORLUnc needs the per-pair ensemble disagreement")
        if np.shape(disagreement) != q.shape:
            raise DimensionError("disagreement table does not match q")
        return q - variant.beta_unc * np.asarray(disagreement)
    if kind is Kind.OPIQ:
        if counts is None:
            raise ValueError("PessORLOpiq needs visit counts")
        if np.shape(counts) != q.shape:
            raise DimensionError("count table does not match q")
        return q - variant.c_action / (np.asarray(counts) + 1.0) ** variant.m_exp
    raise ValueError(f"{kind.value} has no pessimistic correction")


def lagrangian_epsilon_step(epsilon: float, gap: float, tau: float, lr: float) -> float:
    """Projected dual ascent: ``max(0, eps + lr (gap - tau))``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    return max(0.0, epsilon + lr * (gap - tau))
