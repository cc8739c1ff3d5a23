"""Finite discounted MDPs, Bellman operators and dynamic-programming oracles.

Value tables are plain numpy arrays:

* Q-table: ``float[n_states, n_actions]``
* V-table: ``float[n_states]``
* policy: row-stochastic ``float[n_states, n_actions]``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

QTable = np.ndarray
VTable = np.ndarray
PolicyTable = np.ndarray

PROB_ATOL = 1e-12


class DimensionError(ValueError):
    """Array shapes do not agree with the MDP they are used with."""


class ConvergenceError(RuntimeError):
    pass


class Transition(NamedTuple):
    s: int
    a: int
    s_next: int
    r: float


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Exact finite MDP ``(S, A, P, r, gamma)``.

    Terminal states are absorbing: every action self-loops with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"transition must be [S, A, S], got {P.shape}")
        if r.shape != P.shape[:2]:
            raise DimensionError(f"reward must be {P.shape[:2]}, got {r.shape}")
        term = (
            np.zeros(P.shape[0], dtype=bool)
            if self.terminal is None
            else np.asarray(self.terminal, dtype=bool)
        )
        if term.shape != (P.shape[0],):
            raise DimensionError(f"terminal mask must have length {P.shape[0]}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if not np.allclose(P.sum(axis=2), 1.0, rtol=0.0, atol=PROB_ATOL):
            raise ValueError("transition rows must sum to 1")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        for s in np.flatnonzero(term):
            if not (np.all(P[s, :, s] == 1.0) and np.all(r[s] == 0.0)):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        P.setflags(write=False)
        r.setflags(write=False)
        term.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.reward)))

    def policy_matrices(self, policy: PolicyTable) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(P_pi, r_pi)``: the state-to-state kernel and reward under ``policy``."""
        check_policy(policy, self.n_states, self.n_actions)
        P_pi = np.einsum("sa,sat->st", policy, self.transition)
        r_pi = np.sum(policy * self.reward, axis=1)
        return P_pi, r_pi

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
            "terminal": [bool(t) for t in self.terminal],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        mdp = cls(
            transition=np.array(doc["transition"], dtype=float),
            reward=np.array(doc["reward"], dtype=float),
            gamma=doc["gamma"],
            terminal=np.array(doc.get("terminal", [False] * doc["n_states"]), dtype=bool),
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise DimensionError("declared n_states/n_actions disagree with the arrays")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


def check_policy(policy: PolicyTable, n_states: int, n_actions: int) -> None:
    policy = np.asarray(policy)
    if policy.shape != (n_states, n_actions):
        raise DimensionError(f"policy must be {(n_states, n_actions)}, got {policy.shape}")
    if np.any(policy < 0.0) or not np.allclose(policy.sum(axis=1), 1.0, rtol=0.0, atol=PROB_ATOL):
        raise ValueError("policy rows must be probability distributions")


def _check_q(q: QTable, n_states: int, n_actions: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (n_states, n_actions):
        raise DimensionError(f"Q-table must be {(n_states, n_actions)}, got {q.shape}")
    return q


def state_values(q: QTable, policy: PolicyTable) -> VTable:
    """V(s) = sum_a pi(a|s) Q(s, a)."""
    return np.sum(np.asarray(policy) * np.asarray(q), axis=1)


def exact_bellman_backup(q: QTable, mdp: TabularMdp, policy: PolicyTable) -> QTable:
    """One application of B^pi: r(s,a) + gamma * E_{s'~P, a'~pi}[q(s', a')]."""
    q = _check_q(q, mdp.n_states, mdp.n_actions)
    check_policy(policy, mdp.n_states, mdp.n_actions)
    v = state_values(q, policy)
    return mdp.reward + mdp.gamma * (mdp.transition @ v)


def empirical_bellman_backup(
    q: QTable,
    batch: Sequence[Transition] | Iterable[Transition],
    policy: PolicyTable,
    gamma: float,
) -> list[float]:
    """Per-transition targets ``r_i + gamma * sum_a' pi(a'|s'_i) q[s'_i, a']``.

    The expectation over the next action is exact because actions are finite.
    """
    q = np.asarray(q, dtype=float)
    policy = np.asarray(policy, dtype=float)
    if q.shape != policy.shape:
        raise DimensionError(f"Q-table {q.shape} and policy {policy.shape} differ")
    batch = list(batch)
    if not batch:
        return []
    n_states, n_actions = q.shape
    v = state_values(q, policy)
    targets = []
    for t in batch:
        if not (0 <= t.s < n_states and 0 <= t.s_next < n_states and 0 <= t.a < n_actions):
            raise DimensionError(f"transition {t} has indices outside the table")
        targets.append(float(t.r + gamma * v[t.s_next]))
    return targets


def iteration_cap(gamma: float, tol: float, margin: int = 100) -> int:
    """Iterations after which a gamma-contraction started within 1 of its
    fixed point is guaranteed to be within ``tol`` of it."""
    if gamma == 0.0:
        return 1 + margin
    return int(math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma))) + margin


def policy_value_linear(mdp: TabularMdp, policy: PolicyTable) -> VTable:
    """Direct solve of ``(I - gamma P^pi) V = r^pi``."""
    P_pi, r_pi = mdp.policy_matrices(policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


def exact_policy_value(
    mdp: TabularMdp, policy: PolicyTable, tol: float = 1e-10, cross_check: bool = True
) -> VTable:
    """Fixed point of the policy-evaluation backup, iterated to sup-norm residual ``tol``.

    With ``cross_check`` the result is compared with the linear solve and a
    ``ConvergenceError`` is raised if the two routes disagree by more than 1e-8.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P_pi, r_pi = mdp.policy_matrices(policy)
    scale = max(1.0, float(np.max(np.abs(r_pi))) / (1.0 - mdp.gamma))
    cap = iteration_cap(mdp.gamma, tol / scale)
    v = np.zeros(mdp.n_states)
    for _ in range(cap):
        v_new = r_pi + mdp.gamma * (P_pi @ v)
        residual = np.max(np.abs(v_new - v))
        v = v_new
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"policy evaluation did not reach tol={tol} in {cap} sweeps")
    if cross_check:
        v_lin = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)
        if np.max(np.abs(v - v_lin)) > 1e-8:
            raise ConvergenceError("iterative and linear-solve values disagree")
    return v


def greedy_policy(q: QTable) -> PolicyTable:
    """Deterministic argmax policy; ties go to the lowest action index."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q-table must be finite")
    policy = np.zeros_like(q)
    policy[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return policy


def value_iteration(mdp: TabularMdp, tol: float = 1e-10) -> QTable:
    """Optimal Q-function by value iteration (the reference oracle)."""
    scale = max(1.0, mdp.r_max / (1.0 - mdp.gamma))
    cap = iteration_cap(mdp.gamma, tol / scale)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(cap):
        q_new = mdp.reward + mdp.gamma * (mdp.transition @ q.max(axis=1))
        residual = np.max(np.abs(q_new - q))
        q = q_new
        if residual <= tol:
            return q
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {cap} sweeps")


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float = 0.9,
    sparsity: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> TabularMdp:
    """Random MDP with Dirichlet transition rows and uniform rewards in [0, 1].

    ``sparsity`` is the fraction of next-state entries zeroed in each row (at
    least one entry always survives).
    """
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0.0:
        mask = rng.random(P.shape) >= sparsity
        keep = rng.integers(0, n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = True
        P = P * mask
        P /= P.sum(axis=2, keepdims=True)
    r = rng.random((n_states, n_actions))
    return TabularMdp(P, r, gamma)


def random_policy(
    n_states: int, n_actions: int, rng: np.random.Generator | int | None = None
) -> PolicyTable:
    rng = np.random.default_rng(rng)
    return rng.dirichlet(np.ones(n_actions), size=n_states)
