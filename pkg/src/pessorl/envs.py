"""Gridworld mazes, behaviour-policy datasets and empirical behaviour statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp import (
    DimensionError,
    PolicyTable,
    TabularMdp,
    Transition,
    greedy_policy,
    value_iteration,
)

Cell = tuple[int, int]  # (x, y); y grows downward

# up, down, left, right
ACTIONS: tuple[Cell, ...] = ((0, -1), (0, 1), (-1, 0), (1, 0))
ACTION_NAMES = ("up", "down", "left", "right")
_PERPENDICULAR = {0: (2, 3), 1: (2, 3), 2: (0, 1), 3: (0, 1)}


class MazeSpecError(ValueError):
    pass


@dataclass(frozen=True)
class MazeSpec:
    width: int
    height: int
    walls: frozenset[Cell]
    start_cells: tuple[Cell, ...]
    goal_cell: Cell
    step_reward: float = 0.0
    goal_reward: float = 1.0
    slip_prob: float = 0.0
    gamma: float = 0.95
    name: str = "maze"

    def violations(self) -> list[str]:
        problems = []
        if self.width < 1 or self.height < 1:
            problems.append(f"width/height must be positive, got {self.width}x{self.height}")
        inside = lambda c: 0 <= c[0] < self.width and 0 <= c[1] < self.height  # noqa: E731
        if not inside(self.goal_cell):
            problems.append(f"goal {self.goal_cell} lies outside the grid")
        if self.goal_cell in self.walls:
            problems.append(f"goal {self.goal_cell} is a wall")
        if not self.start_cells:
            problems.append("at least one start cell is required")
        for c in self.start_cells:
            if c in self.walls:
                problems.append(f"start {c} is a wall")
            if not inside(c):
                problems.append(f"start {c} lies outside the grid")
        if not 0.0 <= self.slip_prob < 1.0:
            problems.append(f"slip_prob must lie in [0, 1), got {self.slip_prob}")
        if not 0.0 <= self.gamma < 1.0:
            problems.append(f"gamma must lie in [0, 1), got {self.gamma}")
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise MazeSpecError("invalid maze spec: " + "; ".join(problems))

    def free_cells(self) -> list[Cell]:
        """Non-wall cells in row-major order; list position is the state index."""
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.walls
        ]

    def state_index(self) -> dict[Cell, int]:
        return {c: i for i, c in enumerate(self.free_cells())}

    def start_states(self) -> list[int]:
        index = self.state_index()
        return [index[c] for c in self.start_cells]

    def goal_state(self) -> int:
        return self.state_index()[self.goal_cell]

    def embedding(self) -> np.ndarray:
        """Grid coordinates of each state, normalised to [0, 1]."""
        cells = np.array(self.free_cells(), dtype=float)
        scale = np.array([max(self.width - 1, 1), max(self.height - 1, 1)], dtype=float)
        return cells / scale

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "walls": sorted([list(c) for c in self.walls]),
            "start_cells": [list(c) for c in self.start_cells],
            "goal_cell": list(self.goal_cell),
            "step_reward": self.step_reward,
            "goal_reward": self.goal_reward,
            "slip_prob": self.slip_prob,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MazeSpec":
        if "layout" in doc:
            extra = {k: v for k, v in doc.items() if k != "layout"}
            return maze_from_ascii(doc["layout"], **extra)
        return cls(
            width=int(doc["width"]),
            height=int(doc["height"]),
            walls=frozenset(tuple(c) for c in doc.get("walls", [])),
            start_cells=tuple(tuple(c) for c in doc["start_cells"]),
            goal_cell=tuple(doc["goal_cell"]),
            step_reward=float(doc.get("step_reward", 0.0)),
            goal_reward=float(doc.get("goal_reward", 1.0)),
            slip_prob=float(doc.get("slip_prob", 0.0)),
            gamma=float(doc.get("gamma", 0.95)),
            name=str(doc.get("name", "maze")),
        )


def maze_from_ascii(layout: Sequence[str], **kwargs) -> MazeSpec:
    """Build a spec from rows of ``#`` (wall), ``S`` (start), ``G`` (goal), ``.`` (free)."""
    rows = [r for r in layout]
    if len({len(r) for r in rows}) != 1:
        raise MazeSpecError("layout rows must have equal length")
    walls, starts, goal = set(), [], None
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                walls.add((x, y))
            elif ch == "S":
                starts.append((x, y))
            elif ch == "G":
                if goal is not None:
                    raise MazeSpecError("layout has more than one goal")
                goal = (x, y)
            elif ch != ".":
                raise MazeSpecError(f"unknown layout character {ch!r}")
    if goal is None:
        raise MazeSpecError("layout has no goal")
    spec = MazeSpec(
        width=len(rows[0]),
        height=len(rows),
        walls=frozenset(walls),
        start_cells=tuple(starts),
        goal_cell=goal,
        **kwargs,
    )
    spec.validate()
    return spec


# Desk-scale stand-ins for the two Pointmass maps: one start, one goal, and
# walls that force a single long corridor for the near-optimal behaviour.
HARD_LAYOUT = (
    "S.........",
    "..........",
    "..........",
    "#######...",
    "..........",
    "..........",
    "..........",
    "...#######",
    "..........",
    ".........G",
)

SUPERHARD_LAYOUT = (
    "S..............",
    "...............",
    "...............",
    "##########.....",
    "...............",
    "...............",
    "...............",
    ".....##########",
    "...............",
    "...............",
    "...............",
    "##########.....",
    "...............",
    "...............",
    "..............G",
)

PRESETS = {"hard": HARD_LAYOUT, "superhard": SUPERHARD_LAYOUT}


def maze_preset(name: str, **overrides) -> MazeSpec:
    if name not in PRESETS:
        raise MazeSpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = {"slip_prob": 0.05, "gamma": 0.95, "step_reward": 0.0, "goal_reward": 10.0}
    kwargs.update(overrides)
    kwargs.setdefault("name", name)
    return maze_from_ascii(PRESETS[name], **kwargs)


def build_maze_mdp(spec: MazeSpec) -> TabularMdp:
    """Four-action gridworld.

    The intended move happens with probability ``1 - slip_prob``; otherwise one
    of the two perpendicular moves, chosen uniformly. Moves into walls or off
    the grid leave the agent in place. Entering the goal pays ``goal_reward``;
    every other move pays ``step_reward``. The goal is absorbing.
    """
    spec.validate()
    cells = spec.free_cells()
    index = spec.state_index()
    goal = index[spec.goal_cell]
    n = len(cells)
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))

    def move(cell: Cell, a: int) -> int:
        nxt = (cell[0] + ACTIONS[a][0], cell[1] + ACTIONS[a][1])
        return index.get(nxt, index[cell])

    for s, cell in enumerate(cells):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        for a in range(4):
            outcomes = [(move(cell, a), 1.0 - spec.slip_prob)]
            if spec.slip_prob > 0.0:
                outcomes += [(move(cell, b), spec.slip_prob / 2.0) for b in _PERPENDICULAR[a]]
            for s_next, p in outcomes:
                P[s, a, s_next] += p
                R[s, a] += p * (spec.goal_reward if s_next == goal else spec.step_reward)
    terminal = np.zeros(n, dtype=bool)
    terminal[goal] = True
    return TabularMdp(P, R, spec.gamma, terminal)


def epsilon_greedy(policy: PolicyTable, epsilon: float) -> PolicyTable:
    """Mix a policy with the uniform policy: ``(1 - eps) * pi + eps / |A|``."""
    policy = np.asarray(policy, dtype=float)
    return (1.0 - epsilon) * policy + epsilon / policy.shape[1]


@dataclass(eq=False)
class OfflineDataset:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    mdp_id: str = "mdp"
    seed: int = 0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=float)
        if not (len(self.s) == len(self.a) == len(self.s_next) == len(self.r)):
            raise DimensionError("transition columns have different lengths")

    def __len__(self) -> int:
        return len(self.s)

    @property
    def transitions(self) -> list[Transition]:
        return [
            Transition(int(s), int(a), int(sn), float(r))
            for s, a, sn, r in zip(self.s, self.a, self.s_next, self.r)
        ]

    @classmethod
    def from_transitions(cls, transitions, mdp_id: str = "mdp", seed: int = 0) -> "OfflineDataset":
        rows = list(transitions)
        if not rows:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), mdp_id, seed)
        s, a, sn, r = zip(*rows)
        return cls(np.array(s), np.array(a), np.array(sn), np.array(r), mdp_id, seed)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"mdp_id": self.mdp_id, "seed": self.seed})]
        lines += [
            json.dumps({"s": t.s, "a": t.a, "sn": t.s_next, "r": t.r}) for t in self.transitions
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "OfflineDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
        return cls.from_transitions(
            [Transition(d["s"], d["a"], d["sn"], d["r"]) for d in rows],
            mdp_id=header.get("mdp_id", "mdp"),
            seed=int(header.get("seed", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path) -> "OfflineDataset":
        return cls.from_jsonl(Path(path).read_text())


def _sample(cdf: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def collect_dataset(
    mdp: TabularMdp,
    behavior: PolicyTable,
    n_episodes: int,
    max_steps: int,
    seed: int,
    starts: Sequence[int] | None = None,
    mdp_id: str = "mdp",
) -> OfflineDataset:
    """Roll out ``behavior`` for ``n_episodes`` episodes from uniformly drawn starts.

    Episodes stop at a terminal state or after ``max_steps`` transitions.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    behavior = np.asarray(behavior, dtype=float)
    if behavior.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionError(
            f"behavior must be {(mdp.n_states, mdp.n_actions)}, got {behavior.shape}"
        )
    if starts is None:
        starts = [s for s in range(mdp.n_states) if not mdp.terminal[s]]
    starts = list(starts)
    rng = np.random.default_rng(seed)
    act_cdf = np.cumsum(behavior, axis=1)
    next_cdf = np.cumsum(mdp.transition, axis=2)
    rows = []
    for _ in range(n_episodes):
        s = starts[int(rng.integers(len(starts)))]
        for _ in range(max_steps):
            if mdp.terminal[s]:
                break
            a = _sample(act_cdf[s], rng.random())
            s_next = _sample(next_cdf[s, a], rng.random())
            rows.append(Transition(s, a, s_next, float(mdp.reward[s, a])))
            s = s_next
    return OfflineDataset.from_transitions(rows, mdp_id=mdp_id, seed=seed)


def floor_distribution(p: np.ndarray, floor: float) -> np.ndarray:
    """Closest rescaling of ``p`` with every entry at least ``floor``.

    Entries below the floor are raised to it and the remaining mass is shared
    among the others in proportion to their original weight.
    """
    p = np.asarray(p, dtype=float)
    k = p.shape[-1]
    if floor * k > 1.0 + 1e-12:
        raise ValueError(f"floor {floor} is infeasible for {k} outcomes")
    fixed = np.zeros(k, dtype=bool)
    out = p.copy()
    for _ in range(k):
        free_mass = 1.0 - floor * fixed.sum()
        weights = np.where(fixed, 0.0, p)
        total = weights.sum()
        out = np.where(fixed, floor, weights * free_mass / total if total > 0 else free_mass / (k - fixed.sum()))
        low = (~fixed) & (out < floor)
        if not low.any():
            break
        fixed |= low
    return out


@dataclass(eq=False)
class BehaviorStats:
    count_sa: np.ndarray
    count_sas: np.ndarray
    reward_hat: np.ndarray
    pi_beta_hat: np.ndarray
    d_beta_hat: np.ndarray
    support_mask: np.ndarray
    p_min: float = 1e-3

    @property
    def count_s(self) -> np.ndarray:
        return self.count_sa.sum(axis=1)

    @property
    def state_support(self) -> np.ndarray:
        return self.count_s > 0

    @property
    def n_states(self) -> int:
        return self.count_sa.shape[0]

    @property
    def n_actions(self) -> int:
        return self.count_sa.shape[1]

    def transition_hat(self) -> np.ndarray:
        """Empirical P(s'|s,a); rows of unvisited pairs are all zero."""
        n = self.count_sa[..., None]
        return np.divide(self.count_sas, n, out=np.zeros_like(self.count_sas, dtype=float), where=n > 0)


def dataset_stats(
    dataset: OfflineDataset, n_states: int, n_actions: int, p_min: float = 1e-3
) -> BehaviorStats:
    """Counts, the floored empirical behaviour policy and the state marginal."""
    if len(dataset) == 0:
        raise ValueError("cannot compute statistics of an empty dataset")
    if (
        dataset.s.max() >= n_states
        or dataset.s_next.max() >= n_states
        or dataset.a.max() >= n_actions
        or min(dataset.s.min(), dataset.s_next.min(), dataset.a.min()) < 0
    ):
        raise DimensionError("dataset indices exceed the declared state/action counts")
    count_sa = np.zeros((n_states, n_actions))
    np.add.at(count_sa, (dataset.s, dataset.a), 1.0)
    count_sas = np.zeros((n_states, n_actions, n_states))
    np.add.at(count_sas, (dataset.s, dataset.a, dataset.s_next), 1.0)
    reward_sum = np.zeros((n_states, n_actions))
    np.add.at(reward_sum, (dataset.s, dataset.a), dataset.r)
    reward_hat = np.divide(reward_sum, count_sa, out=np.zeros_like(reward_sum), where=count_sa > 0)

    count_s = count_sa.sum(axis=1)
    pi_beta = np.full((n_states, n_actions), 1.0 / n_actions)
    for s in np.flatnonzero(count_s > 0):
        pi_beta[s] = floor_distribution(count_sa[s] / count_s[s], p_min)
    return BehaviorStats(
        count_sa=count_sa,
        count_sas=count_sas,
        reward_hat=reward_hat,
        pi_beta_hat=pi_beta,
        d_beta_hat=count_s / count_s.sum(),
        support_mask=count_sa > 0,
        p_min=p_min,
    )


def optimal_behavior(mdp: TabularMdp, epsilon: float) -> PolicyTable:
    """Epsilon-greedy wrap of the value-iteration optimal policy."""
    return epsilon_greedy(greedy_policy(value_iteration(mdp)), epsilon)
