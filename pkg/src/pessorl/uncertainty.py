"""Bootstrapped Gaussian dynamics ensemble and the OOD-state scores built on it.

Each member models ``s' ~ N(s + f_i(s, a), diag(sigma_i^2))`` in a geometric
state embedding, with ``f_i`` a ridge regression on a fixed feature map of
``(s, a)``. Members differ only through their bootstrap resample of the
dataset, so their disagreement grows where the data is thin.

Two feature maps are available:

* ``"linear"``: ``[coords(s), onehot(a), 1]``
* ``"rbf"``: per-action Gaussian bumps centred on every state, plus
  ``[onehot(a), 1]``. Local features make the disagreement track the
  visitation pattern instead of the distance to the data centroid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import OfflineDataset
from .mdp import DimensionError, PolicyTable, VTable

SIGMA_FLOOR = 1e-6


def default_rbf_width(coords: np.ndarray) -> float:
    """1.5 grid spacings, the spacing being the smallest distance between states."""
    d = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))
    spacing = d[d > 0].min() if np.any(d > 0) else 1.0
    return 1.5 * float(spacing)


def features(
    coords: np.ndarray, n_actions: int, kind: str = "linear", rbf_width: float | None = None
) -> np.ndarray:
    """Feature tensor ``phi[s, a, :]``."""
    n_states, d = coords.shape
    if kind == "linear":
        phi = np.zeros((n_states, n_actions, d + n_actions + 1))
        phi[:, :, :d] = coords[:, None, :]
        phi[:, np.arange(n_actions), d + np.arange(n_actions)] = 1.0
        phi[:, :, -1] = 1.0
        return phi
    if kind != "rbf":
        raise ValueError(f"unknown feature map {kind!r}")
    width = default_rbf_width(coords) if rbf_width is None else rbf_width
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    bumps = np.exp(-d2 / (2.0 * width**2))
    k = n_states
    phi = np.zeros((n_states, n_actions, k * n_actions + n_actions + 1))
    for a in range(n_actions):
        phi[:, a, a * k : (a + 1) * k] = bumps
        phi[:, a, k * n_actions + a] = 1.0
    phi[:, :, -1] = 1.0
    return phi


@dataclass(eq=False)
class DynamicsMember:
    weights: np.ndarray  # [n_features, d]
    sigma: np.ndarray  # [d]


@dataclass(eq=False)
class DynamicsEnsemble:
    members: list[DynamicsMember]
    coords: np.ndarray  # state embedding, [n_states, d]
    n_actions: int
    ridge: float
    seed: int
    feature_map: str = "rbf"
    rbf_width: float | None = None

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def n_states(self) -> int:
        return self.coords.shape[0]

    def predict(self) -> np.ndarray:
        """Mean next-state deltas of every member: ``[n, n_states, n_actions, d]``."""
        phi = features(self.coords, self.n_actions, self.feature_map, self.rbf_width)
        return np.stack([phi @ m.weights for m in self.members])

    def pair_disagreement(self) -> np.ndarray:
        """``(1/n) sum_i ||f_i(s,a) - mean_j f_j(s,a)||^2`` for every pair."""
        f = self.predict()
        return np.mean(np.sum((f - f.mean(axis=0)) ** 2, axis=-1), axis=0)

    def to_dict(self) -> dict:
        return {
            "n_models": self.n,
            "ridge": self.ridge,
            "seed": self.seed,
            "n_actions": self.n_actions,
            "feature_map": self.feature_map,
            "rbf_width": self.rbf_width,
            "coords": self.coords.tolist(),
            "members": [
                {"weights": m.weights.tolist(), "sigma": m.sigma.tolist()} for m in self.members
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DynamicsEnsemble":
        return cls(
            members=[
                DynamicsMember(np.array(m["weights"], dtype=float), np.array(m["sigma"], dtype=float))
                for m in doc["members"]
            ],
            coords=np.array(doc["coords"], dtype=float),
            n_actions=int(doc["n_actions"]),
            ridge=float(doc["ridge"]),
            seed=int(doc["seed"]),
            feature_map=doc.get("feature_map", "linear"),
            rbf_width=doc.get("rbf_width"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "DynamicsEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _ridge_fit(x: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    return np.linalg.solve(gram, x.T @ y)


def fit_ensemble(
    dataset: OfflineDataset,
    embedding: np.ndarray,
    n_actions: int,
    n_models: int = 5,
    ridge: float = 1e-3,
    seed: int = 0,
    feature_map: str = "rbf",
    rbf_width: float | None = None,
) -> DynamicsEnsemble:
    """Fit ``n_models`` members, each on its own bootstrap resample of ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("cannot fit dynamics to an empty dataset")
    if n_models < 1:
        raise ValueError("n_models must be at least 1")
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    coords = np.asarray(embedding, dtype=float)
    if coords.ndim != 2 or max(dataset.s.max(), dataset.s_next.max()) >= coords.shape[0]:
        raise DimensionError("embedding does not cover every state in the dataset")
    if feature_map == "rbf" and rbf_width is None:
        rbf_width = default_rbf_width(coords)
    phi = features(coords, n_actions, feature_map, rbf_width)[dataset.s, dataset.a]
    delta = coords[dataset.s_next] - coords[dataset.s]
    members = []
    for child in np.random.SeedSequence(seed).spawn(n_models):
        rng = np.random.default_rng(child)
        idx = rng.integers(0, len(dataset), size=len(dataset))
        w = _ridge_fit(phi[idx], delta[idx], ridge)
        resid = delta[idx] - phi[idx] @ w
        sigma = np.maximum(resid.std(axis=0), SIGMA_FLOOR)
        members.append(DynamicsMember(w, sigma))
    return DynamicsEnsemble(
        members, coords, n_actions, float(ridge), int(seed), feature_map, rbf_width
    )


def state_uncertainty(ensemble: DynamicsEnsemble, s: int, policy: PolicyTable) -> float:
    """u_pi(s): policy-weighted ensemble disagreement at state ``s``."""
    return float(policy_uncertainty(ensemble, policy)[s])


def policy_uncertainty(ensemble: DynamicsEnsemble, policy: PolicyTable) -> np.ndarray:
    """u_pi for every state at once."""
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (ensemble.n_states, ensemble.n_actions):
        raise DimensionError(
            f"policy must be {(ensemble.n_states, ensemble.n_actions)}, got {policy.shape}"
        )
    return np.sum(policy * ensemble.pair_disagreement(), axis=1)


def normalize_scores(u: np.ndarray) -> np.ndarray:
    """zeta(s) = u(s) / sum_j u(j); uniform when every score is zero."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ValueError("need at least one state")
    if np.any(u < 0):
        raise ValueError("uncertainty scores must be non-negative")
    total = u.sum()
    if total <= 0.0:
        return np.full(u.shape, 1.0 / u.size)
    return u / total


def zeta_distribution(
    ensemble: DynamicsEnsemble, states, policy: PolicyTable
) -> np.ndarray:
    """Distribution over ``states`` proportional to their uncertainty."""
    u = policy_uncertainty(ensemble, policy)
    return normalize_scores(u[np.asarray(states, dtype=int)])


def dphi_distribution(zeta: np.ndarray, v: VTable) -> np.ndarray:
    """d_phi(s) proportional to zeta(s) * exp(V(s)), computed with a max shift."""
    zeta = np.asarray(zeta, dtype=float)
    v = np.asarray(v, dtype=float)
    if zeta.shape != v.shape:
        raise DimensionError(f"zeta {zeta.shape} and V {v.shape} differ in length")
    support = zeta > 0
    if not support.any():
        raise ValueError("zeta has no mass")
    shift = np.max(v[support])
    w = np.where(support, zeta * np.exp(np.where(support, v - shift, 0.0)), 0.0)
    return w / w.sum()
