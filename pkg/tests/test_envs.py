import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pessorl.envs import (
    BehaviorStats,
    MazeSpec,
    MazeSpecError,
    OfflineDataset,
    build_maze_mdp,
    collect_dataset,
    dataset_stats,
    epsilon_greedy,
    floor_distribution,
    maze_from_ascii,
    maze_preset,
    optimal_behavior,
)
from pessorl.mdp import Transition, exact_policy_value, greedy_policy, random_mdp, random_policy, value_iteration


def corridor(**kw) -> MazeSpec:
    return maze_from_ascii(["SG"], gamma=0.9, **kw)


# ---------------------------------------------------------------- mazes


def test_corridor_value():
    mdp = build_maze_mdp(corridor())
    q = value_iteration(mdp)
    # reward is paid on entering the goal, so one step from it is worth r = 1
    assert q[0].max() == pytest.approx(1.0)
    assert q[0, 3] == pytest.approx(1.0)
    assert mdp.terminal.tolist() == [False, True]


def test_wall_bounce():
    mdp = build_maze_mdp(maze_from_ascii(["S#", ".G"]))
    # state 0 is (0, 0); moving right hits the wall, moving up leaves the grid
    assert mdp.transition[0, 3, 0] == 1.0
    assert mdp.transition[0, 0, 0] == 1.0


def test_open_room_corner_slip():
    spec = maze_from_ascii(["S....", ".....", ".....", ".....", "....G"], slip_prob=0.1)
    mdp = build_maze_mdp(spec)
    assert np.allclose(mdp.transition.sum(axis=2), 1.0)
    idx = spec.state_index()
    corner, right, below = idx[(0, 0)], idx[(1, 0)], idx[(0, 1)]
    # intended "right": 0.9 right, slips go up (bounce) or down
    row = mdp.transition[corner, 3]
    assert row[right] == pytest.approx(0.9)
    assert row[corner] == pytest.approx(0.05)
    assert row[below] == pytest.approx(0.05)
    # intended "up" bounces with 0.9; slips go left (bounce) or right
    row = mdp.transition[corner, 0]
    assert row[corner] == pytest.approx(0.95)
    assert row[right] == pytest.approx(0.05)


def test_spec_validation_lists_all_problems():
    bad = MazeSpec(2, 1, frozenset({(1, 0)}), ((1, 0),), (1, 0), slip_prob=1.5)
    with pytest.raises(MazeSpecError) as err:
        build_maze_mdp(bad)
    msg = str(err.value)
    assert "goal" in msg and "start" in msg and "slip_prob" in msg


def test_ascii_errors():
    with pytest.raises(MazeSpecError):
        maze_from_ascii(["S.", "..."])
    with pytest.raises(MazeSpecError):
        maze_from_ascii(["S."])
    with pytest.raises(MazeSpecError):
        maze_from_ascii(["SX"])


def test_spec_dict_roundtrip():
    spec = maze_preset("hard")
    assert MazeSpec.from_dict(spec.to_dict()) == spec
    via_layout = MazeSpec.from_dict({"layout": ["SG"], "gamma": 0.5})
    assert via_layout.gamma == 0.5 and via_layout.goal_cell == (1, 0)


def test_presets():
    hard, superhard = maze_preset("hard"), maze_preset("superhard")
    assert (hard.width, hard.height) == (10, 10)
    assert (superhard.width, superhard.height) == (15, 15)
    assert len(superhard.walls) > len(hard.walls)
    with pytest.raises(MazeSpecError):
        maze_preset("easy")


def test_embedding_normalised():
    emb = maze_preset("hard").embedding()
    assert emb.min() == 0.0 and emb.max() == 1.0


# ---------------------------------------------------------------- datasets


def test_forced_corridor_transition():
    mdp = build_maze_mdp(corridor())
    behavior = greedy_policy(value_iteration(mdp))
    ds = collect_dataset(mdp, behavior, n_episodes=1, max_steps=10, seed=0)
    assert ds.transitions == [Transition(0, 3, 1, 1.0)]


def test_same_seed_same_bytes():
    mdp = build_maze_mdp(maze_preset("hard"))
    behavior = optimal_behavior(mdp, 0.1)
    a = collect_dataset(mdp, behavior, 5, 50, seed=11).to_jsonl()
    b = collect_dataset(mdp, behavior, 5, 50, seed=11).to_jsonl()
    assert a == b


def test_jsonl_format_roundtrip(tmp_path):
    ds = OfflineDataset.from_transitions([Transition(0, 1, 2, 0.5)], mdp_id="m", seed=4)
    lines = ds.to_jsonl().splitlines()
    assert lines[0] == '{"mdp_id": "m", "seed": 4}'
    assert lines[1] == '{"s": 0, "a": 1, "sn": 2, "r": 0.5}'
    ds.save(tmp_path / "d.jsonl")
    back = OfflineDataset.load(tmp_path / "d.jsonl")
    assert back.transitions == ds.transitions and back.mdp_id == "m" and back.seed == 4


def test_hard_maze_data_concentrates_on_optimal_path():
    spec = maze_preset("hard")
    mdp = build_maze_mdp(spec)
    behavior = optimal_behavior(mdp, 0.1)
    ds = collect_dataset(mdp, behavior, n_episodes=60, max_steps=200, seed=0, starts=spec.start_states())
    assert len(ds) >= 1000
    # oracle path: follow the optimal action with no slips from the start cell
    greedy = greedy_policy(value_iteration(mdp))
    path = [spec.start_states()[0]]
    while not mdp.terminal[path[-1]]:
        a = int(np.argmax(greedy[path[-1]]))
        path.append(int(np.argmax(mdp.transition[path[-1], a])))
    on_path = np.isin(ds.s, path).mean()
    assert on_path >= 0.7


# ---------------------------------------------------------------- statistics


def test_point_mass_marginal():
    stats = dataset_stats(OfflineDataset.from_transitions([Transition(0, 1, 1, 0.0)]), 3, 2)
    assert stats.d_beta_hat.tolist() == [1.0, 0.0, 0.0]
    assert stats.support_mask.tolist() == [[False, True], [False, False], [False, False]]
    # unvisited states get a uniform row, the visited one is floored
    assert stats.pi_beta_hat[1].tolist() == [0.5, 0.5]
    assert stats.pi_beta_hat[0, 0] == pytest.approx(1e-3)


def test_symmetric_actions():
    rows = [Transition(0, 0, 0, 0.0), Transition(0, 1, 0, 0.0)]
    stats = dataset_stats(OfflineDataset.from_transitions(rows), 1, 2)
    assert stats.pi_beta_hat[0].tolist() == [0.5, 0.5]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        dataset_stats(OfflineDataset.from_transitions([]), 2, 2)


def test_random_dataset_recount():
    rng = np.random.default_rng(5)
    mdp = random_mdp(6, 3, rng=rng)
    ds = collect_dataset(mdp, random_policy(6, 3, rng), 50, 20, seed=5)
    assert len(ds) == 1000
    stats = dataset_stats(ds, 6, 3, p_min=1e-3)
    assert abs(stats.d_beta_hat.sum() - 1.0) <= 1e-12
    counts = np.zeros((6, 3))
    for t in ds.transitions:
        counts[t.s, t.a] += 1
    assert np.array_equal(counts, stats.count_sa)
    ratio = counts / counts.sum(axis=1, keepdims=True)
    visited = counts.sum(axis=1) > 0
    assert np.allclose(stats.pi_beta_hat[visited], ratio[visited], atol=3e-3)
    p_hat = stats.transition_hat()
    assert np.allclose(p_hat.sum(axis=2)[stats.support_mask], 1.0)


@given(
    p=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8).filter(lambda x: sum(x) > 0),
    floor=st.floats(0.0, 0.1),
)
@settings(max_examples=200, deadline=None)
def test_floor_distribution_properties(p, floor):
    p = np.array(p) / sum(p)
    out = floor_distribution(p, floor)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(out >= floor - 1e-12)
    # the order of the entries is kept
    assert np.all(np.diff(out[np.argsort(p, kind="stable")]) >= -1e-12)


@given(seed=st.integers(0, 2**32 - 1), p_min=st.sampled_from([1e-3, 1e-2, 0.1]))
@settings(max_examples=30, deadline=None)
def test_stats_invariants(seed, p_min):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(5, 4, rng=rng)
    ds = collect_dataset(mdp, random_policy(5, 4, rng), 3, 10, seed=seed)
    stats = dataset_stats(ds, 5, 4, p_min)
    assert isinstance(stats, BehaviorStats)
    assert abs(stats.d_beta_hat.sum() - 1.0) <= 1e-12
    assert np.allclose(stats.pi_beta_hat.sum(axis=1), 1.0)
    assert np.all(stats.pi_beta_hat[stats.state_support] >= p_min - 1e-12)


def test_epsilon_greedy_mix():
    pi = epsilon_greedy(np.array([[1.0, 0.0]]), 0.2)
    assert pi.tolist() == [[0.9, 0.1]]


def test_optimal_behavior_is_near_optimal():
    mdp = build_maze_mdp(corridor())
    v = exact_policy_value(mdp, optimal_behavior(mdp, 0.0))
    assert v[0] == pytest.approx(1.0)
