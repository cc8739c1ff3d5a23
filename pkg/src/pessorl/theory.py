"""Numeric versions of the lower-bound conditions and the value-gap diagnostic.

Notation: ``pi`` is the evaluated policy, ``pi_beta`` the (floored) behaviour
policy, ``d_beta`` the dataset state marginal and ``d_phi`` the penalty
distribution. Every unbounded result is an :class:`Unbounded` value, a float
equal to +inf that also carries the reason.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .envs import BehaviorStats
from .mdp import PolicyTable, TabularMdp, VTable


class Unbounded(float):
    """+inf with an explanation attached."""

    reason: str

    def __new__(cls, reason: str):
        obj = super().__new__(cls, math.inf)
        obj.reason = reason
        return obj

    def __repr__(self) -> str:
        return f"Unbounded({self.reason!r})"


class SupportError(ValueError):
    pass


def d_cql_all(policy: PolicyTable, pi_beta: PolicyTable) -> np.ndarray:
    """D(s) = sum_a pi (pi / pi_beta - 1) for every state."""
    policy = np.asarray(policy, dtype=float)
    pi_beta = np.asarray(pi_beta, dtype=float)
    if np.any(pi_beta <= 0):
        raise ValueError("pi_beta must be floored above zero")
    return np.sum(policy * (policy / pi_beta - 1.0), axis=1)


def d_cql(policy: PolicyTable, pi_beta: PolicyTable, s: int) -> float:
    return float(d_cql_all(policy[s : s + 1], pi_beta[s : s + 1])[0])


def _shift_weight(policy, pi_beta, d_phi, d_beta) -> np.ndarray:
    """|d_phi - d_beta| / d_beta * sum_a pi^2 / pi_beta, per state."""
    d_beta = np.asarray(d_beta, dtype=float)
    d_phi = np.asarray(d_phi, dtype=float)
    if np.any(d_beta <= 0):
        raise ValueError("d_beta must be floored above zero")
    return np.abs(d_phi - d_beta) / d_beta * np.sum(policy**2 / pi_beta, axis=1)


def theorem1_ratio_bound(
    policy: PolicyTable,
    pi_beta: PolicyTable,
    d_phi: np.ndarray,
    d_beta: np.ndarray,
    states=None,
) -> float:
    """Largest eps/alpha for which the regularised fixed point lower-bounds V^pi.

    ``min_s D(s) / (|d_phi(s) - d_beta(s)| / d_beta(s) * sum_a pi^2 / pi_beta)``
    over ``states`` (all by default). States without distribution shift
    impose no constraint.
    """
    policy = np.asarray(policy, dtype=float)
    pi_beta = np.asarray(pi_beta, dtype=float)
    num = d_cql_all(policy, pi_beta)
    den = _shift_weight(policy, pi_beta, d_phi, d_beta)
    if states is not None:
        idx = np.asarray(states, dtype=int)
        num, den = num[idx], den[idx]
    active = den > 0
    if not active.any():
        return Unbounded("d_phi equals d_beta on every state: no shift to guard against")
    return float(np.min(np.maximum(num[active], 0.0) / den[active]))


def lemma1_error_bound(counts, C: float, r_max: float, gamma: float) -> np.ndarray:
    """C * R_max / ((1 - gamma) * sqrt(N)) for each count; every count must be positive."""
    if C <= 0:
        raise ValueError("C must be positive")
    n = np.asarray(counts, dtype=float)
    if np.any(n <= 0):
        raise SupportError("the sampling-error bound only applies to pairs present in the data")
    return C * r_max / ((1.0 - gamma) * np.sqrt(n))


def in_support_error_bound(stats: BehaviorStats, C: float, r_max: float, gamma: float) -> np.ndarray:
    """Per-pair sampling-error bound with NaN on pairs absent from the data."""
    out = np.full(stats.count_sa.shape, np.nan)
    mask = stats.support_mask
    out[mask] = lemma1_error_bound(stats.count_sa[mask], C, r_max, gamma)
    return out


def corollary1_alpha_bound(
    stats: BehaviorStats,
    C: float,
    r_max: float,
    gamma: float,
    policy: PolicyTable,
    pi_beta: PolicyTable | None = None,
) -> float:
    """Smallest alpha that absorbs the worst in-support sampling error.

    ``max_{(s,a) in D} C R_max / ((1 - gamma) sqrt(N(s,a))) / min_{s in D} D(s)``
    """
    pi_beta = stats.pi_beta_hat if pi_beta is None else pi_beta
    worst = float(np.max(lemma1_error_bound(stats.count_sa[stats.support_mask], C, r_max, gamma)))
    d = d_cql_all(policy, pi_beta)[stats.state_support]
    if np.min(d) <= 0:
        reason = "the policy matches the behaviour policy on a visited state, so alpha cannot help"
        warnings.warn(reason)
        return Unbounded(reason)
    return worst / float(np.min(d))


def calibrate_c(
    stats: BehaviorStats,
    mdp: TabularMdp,
    v_bound: float | None = None,
    n_random: int = 100,
    seed: int = 0,
) -> float:
    """Smallest C for which the sampling-error bound holds on every visited pair.

    Measures ``|B_hat V - B V| (1 - gamma) sqrt(N) / R_max`` for ``n_random``
    value functions drawn uniformly from ``[-v_bound, v_bound]^S`` and for the
    worst case over that box, which is attained at a vertex and has the closed
    form ``|r_hat - r| + gamma * v_bound * ||P_hat - P||_1``.
    """
    if mdp.r_max <= 0:
        raise ValueError("R_max must be positive")
    v_bound = mdp.r_max / (1.0 - mdp.gamma) if v_bound is None else v_bound
    mask = stats.support_mask
    p_hat = stats.transition_hat()
    dr = stats.reward_hat - mdp.reward
    dp = p_hat - mdp.transition
    scale = (1.0 - mdp.gamma) * np.sqrt(stats.count_sa) / mdp.r_max
    worst = np.abs(dr) + mdp.gamma * v_bound * np.abs(dp).sum(axis=2)
    c = float(np.max((worst * scale)[mask]))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        v = rng.uniform(-v_bound, v_bound, size=mdp.n_states)
        err = np.abs(dr + mdp.gamma * dp @ v)
        c = max(c, float(np.max((err * scale)[mask])))
    return max(c, np.finfo(float).tiny)


def policy_backup_values(v: VTable, mdp: TabularMdp, policy: PolicyTable) -> np.ndarray:
    """(B^pi V)(s) = sum_a pi(a|s) (r(s,a) + gamma sum_s' P(s'|s,a) V(s'))."""
    return np.sum(policy * (mdp.reward + mdp.gamma * mdp.transition @ v), axis=1)


def _xyz(v_k, mdp, policy, pi_beta, d_phi, d_beta):
    d_phi = np.asarray(d_phi, dtype=float)
    d_beta = np.asarray(d_beta, dtype=float)
    bv = policy_backup_values(np.asarray(v_k, dtype=float), mdp, policy)
    shift = d_phi - d_beta
    x = float(shift @ bv)
    y = float(shift @ d_cql_all(policy, pi_beta))
    z = float(np.sum(shift**2 / d_beta * np.sum(policy**2 / pi_beta, axis=1)))
    return x, y, z


def theorem2_threshold(
    v_k: VTable,
    mdp: TabularMdp,
    policy: PolicyTable,
    pi_beta: PolicyTable,
    d_phi: np.ndarray,
    d_beta: np.ndarray,
    alpha: float,
) -> float:
    """Smallest eps after which one update gives E_{d_phi}[V] <= E_{d_beta}[V].

    ``(X - alpha Y) / Z``; a negative value means any eps >= 0 works.
    """
    if np.any(np.asarray(d_beta) <= 0):
        raise ValueError("d_beta must be floored above zero")
    x, y, z = _xyz(v_k, mdp, policy, pi_beta, d_phi, d_beta)
    if z <= 0:
        return Unbounded("d_phi equals d_beta: the ordering condition does not apply")
    return (x - alpha * y) / z


@dataclass
class Feasibility:
    X: float
    Y: float
    Z: float
    W: float
    U: float
    alpha_floor: float
    alpha_ceiling: float
    epsilon_interval: tuple[float, float] | None
    status: str  # "ok" | "infeasible" | "degenerate"
    reason: str = ""

    def midpoint(self) -> float | None:
        if self.epsilon_interval is None:
            return None
        lo, hi = self.epsilon_interval
        return lo + 1.0 if math.isinf(hi) else 0.5 * (lo + hi)


@dataclass
class BoundReport:
    ratio_bound: float
    alpha_min: float
    epsilon_min_thm2: float
    alpha: float
    feasibility: Feasibility

    def to_dict(self) -> dict:
        f = self.feasibility
        return {
            "ratio_bound": _num(self.ratio_bound),
            "alpha_min": _num(self.alpha_min),
            "epsilon_min_thm2": _num(self.epsilon_min_thm2),
            "alpha": _num(self.alpha),
            "feasibility": {
                "X": _num(f.X),
                "Y": _num(f.Y),
                "Z": _num(f.Z),
                "W": _num(f.W),
                "U": _num(f.U),
                "alpha_floor": _num(f.alpha_floor),
                "alpha_ceiling": _num(f.alpha_ceiling),
                "epsilon_interval": None
                if f.epsilon_interval is None
                else [_num(f.epsilon_interval[0]), _num(f.epsilon_interval[1])],
                "status": f.status,
                "reason": f.reason,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _num(x: float):
    """JSON has no infinities; spell them out."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _feasible_alphas(x, y, z, w, u) -> tuple[float, float, str]:
    """Range of alpha with alpha >= U and (X - alpha Y) / Z <= alpha W."""
    lo, hi = max(u, 0.0), math.inf
    if math.isinf(u):
        return Unbounded("U is unbounded"), hi, "alpha cannot absorb the sampling error"
    if not math.isinf(w):
        g = w * z + y
        if g > 0:
            lo = max(lo, x / g)
        elif g < 0:
            hi = x / g
        elif x > 0:
            return Unbounded("W Z + Y = 0 while X > 0"), hi, "no alpha orders the expectations"
    if lo > hi:
        return Unbounded("the two alpha conditions are incompatible"), hi, (
            f"alpha must be at least {lo:.6g} and at most {hi:.6g}"
        )
    return lo, hi, ""


def feasibility_report(
    v_k: VTable,
    mdp: TabularMdp,
    policy: PolicyTable,
    pi_beta: PolicyTable,
    d_phi: np.ndarray,
    d_beta: np.ndarray,
    counts: BehaviorStats,
    C: float,
    r_max: float,
    alpha: float | None = None,
) -> BoundReport:
    """X, Y, Z, W, U, the admissible alpha range, and the eps interval at ``alpha``.

    ``alpha`` defaults to the smallest admissible value. The interval is
    ``[max(0, (X - alpha Y) / Z), alpha W]`` and is ``None`` when empty.
    """
    policy = np.asarray(policy, dtype=float)
    pi_beta = np.asarray(pi_beta, dtype=float)
    x, y, z = _xyz(v_k, mdp, policy, pi_beta, d_phi, d_beta)
    support = np.flatnonzero(counts.state_support)
    w = theorem1_ratio_bound(policy, pi_beta, d_phi, d_beta, states=support)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        u = corollary1_alpha_bound(counts, C, r_max, mdp.gamma, policy, pi_beta)
    ratio = theorem1_ratio_bound(policy, pi_beta, d_phi, d_beta)
    if z <= 0:
        feas = Feasibility(
            x, y, z, w, u, Unbounded("no shift"), math.inf, None, "degenerate",
            "d_phi equals d_beta, so the ordering condition is void",
        )
        a = 0.0 if alpha is None else alpha
        return BoundReport(ratio, u, Unbounded("no shift"), a, feas)

    floor, ceiling, why = _feasible_alphas(x, y, z, w, u)
    if alpha is None:
        alpha = floor
    eps_thm2 = (x - alpha * y) / z if not math.isinf(alpha) else -math.inf
    status = "ok"
    interval = None
    if math.isinf(floor):
        status = "infeasible"
    else:
        lo = max(0.0, eps_thm2)
        hi = math.inf if math.isinf(w) else alpha * w
        # rounding at the boundary alpha can leave lo a hair above hi
        if lo <= hi * (1.0 + 1e-12) + 1e-15:
            interval = (min(lo, hi), hi)
        else:
            status = "infeasible"
            why = why or f"alpha={alpha:.6g} is outside [{floor:.6g}, {ceiling:.6g}]"
    feas = Feasibility(x, y, z, w, u, floor, ceiling, interval, status, why)
    return BoundReport(ratio, u, eps_thm2, alpha, feas)


def delta_gap(v: VTable, dataset_states) -> float:
    """max_s V(s) - mean of V over the dataset's state occurrences."""
    v = np.asarray(v, dtype=float)
    states = np.asarray(dataset_states, dtype=int)
    if states.size == 0:
        raise ValueError("need at least one dataset state")
    return float(np.max(v) - np.mean(v[states]))
