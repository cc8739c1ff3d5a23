import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pessorl.envs import OfflineDataset, build_maze_mdp, collect_dataset, maze_from_ascii, optimal_behavior
from pessorl.mdp import DimensionError, Transition, greedy_policy
from pessorl.uncertainty import (
    DynamicsEnsemble,
    DynamicsMember,
    default_rbf_width,
    dphi_distribution,
    features,
    fit_ensemble,
    normalize_scores,
    policy_uncertainty,
    state_uncertainty,
    zeta_distribution,
)


def line_coords(n):
    return np.linspace(0.0, 1.0, n)[:, None]


def two_member(d):
    """Two members on one state and one action whose deltas differ by ``d``."""
    coords = np.zeros((1, len(d)))
    # linear features for 1 action in len(d) dims: [coords, onehot, bias]
    n_feat = len(d) + 2
    w1 = np.zeros((n_feat, len(d)))
    w2 = np.zeros((n_feat, len(d)))
    w2[-1] = d
    members = [DynamicsMember(w1, np.ones(len(d))), DynamicsMember(w2, np.ones(len(d)))]
    return DynamicsEnsemble(members, coords, 1, 1e-3, 0, feature_map="linear")


def test_identical_rows_give_identical_members():
    ds = OfflineDataset.from_transitions([Transition(0, 1, 1, 0.0)] * 20)
    ens = fit_ensemble(ds, line_coords(3), 2, n_models=3, feature_map="linear")
    f = ens.predict()
    assert np.max(np.abs(f - f[0])) <= 1e-8


def test_same_seed_same_ensemble():
    spec = maze_from_ascii(["S...", "....", "...G"])
    mdp = build_maze_mdp(spec)
    ds = collect_dataset(mdp, optimal_behavior(mdp, 0.3), 10, 30, seed=1)
    a = fit_ensemble(ds, spec.embedding(), 4, seed=9).to_dict()
    b = fit_ensemble(ds, spec.embedding(), 4, seed=9).to_dict()
    assert a == b


def test_half_covered_maze_errors_grow_off_data():
    spec = maze_from_ascii(["S.......", "........", ".......G"])
    mdp = build_maze_mdp(spec)
    cells = spec.free_cells()
    left = [s for s, (x, _) in enumerate(cells) if x < 4]
    right = [s for s, (x, _) in enumerate(cells) if x >= 4]
    rng = np.random.default_rng(0)
    rows = []
    for _ in range(400):
        s = int(rng.choice(left))
        a = int(rng.integers(4))
        sn = int(rng.choice(len(cells), p=mdp.transition[s, a]))
        rows.append(Transition(s, a, sn, 0.0))
    ds = OfflineDataset.from_transitions(rows)
    emb = spec.embedding()
    ens = fit_ensemble(ds, emb, 4, n_models=5, seed=0)
    true_delta = np.einsum("sat,td->sad", mdp.transition, emb) - emb[:, None, :]
    err = np.sum((ens.predict().mean(axis=0) - true_delta) ** 2, axis=-1).mean(axis=1)
    assert err[left].mean() < err[right].mean()


def test_fit_errors():
    ds = OfflineDataset.from_transitions([Transition(0, 0, 1, 0.0)])
    with pytest.raises(ValueError):
        fit_ensemble(OfflineDataset.from_transitions([]), line_coords(2), 1)
    with pytest.raises(ValueError):
        fit_ensemble(ds, line_coords(2), 1, n_models=0)
    with pytest.raises(ValueError):
        fit_ensemble(ds, line_coords(2), 1, ridge=0.0)
    with pytest.raises(DimensionError):
        fit_ensemble(ds, line_coords(1), 1)


def test_sigma_is_floored():
    ds = OfflineDataset.from_transitions([Transition(0, 0, 1, 0.0)] * 5)
    ens = fit_ensemble(ds, line_coords(2), 1, n_models=2)
    assert all(np.all(m.sigma >= 1e-6) for m in ens.members)


def test_single_member_has_zero_uncertainty():
    ds = OfflineDataset.from_transitions([Transition(0, 0, 1, 0.0), Transition(1, 1, 0, 0.0)])
    ens = fit_ensemble(ds, line_coords(3), 2, n_models=1)
    pi = np.full((3, 2), 0.5)
    assert np.all(policy_uncertainty(ens, pi) == 0.0)


def test_two_member_disagreement():
    d = np.array([0.3, -0.4])
    ens = two_member(d)
    assert state_uncertainty(ens, 0, np.ones((1, 1))) == pytest.approx(np.sum(d**2) / 4)


def test_policy_shape_checked():
    with pytest.raises(DimensionError):
        policy_uncertainty(two_member(np.ones(2)), np.ones((2, 1)))


def test_serialisation_roundtrip(tmp_path):
    ds = OfflineDataset.from_transitions([Transition(0, 0, 1, 0.0), Transition(1, 1, 2, 0.0)])
    ens = fit_ensemble(ds, line_coords(3), 2, n_models=3, seed=2)
    ens.save(tmp_path / "e.json")
    back = DynamicsEnsemble.load(tmp_path / "e.json")
    assert np.array_equal(back.predict(), ens.predict())
    assert back.feature_map == "rbf" and back.rbf_width == ens.rbf_width


def test_feature_maps():
    coords = line_coords(3)
    lin = features(coords, 2, "linear")
    assert lin.shape == (3, 2, 1 + 2 + 1)
    assert lin[2, 1].tolist() == [1.0, 0.0, 1.0, 1.0]
    rbf = features(coords, 2, "rbf")
    assert rbf.shape == (3, 2, 3 * 2 + 2 + 1)
    assert default_rbf_width(coords) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        features(coords, 2, "cubic")


def test_zeta_examples():
    assert normalize_scores(np.array([0.0, 3.0, 1.0])).tolist() == [0.0, 0.75, 0.25]
    assert normalize_scores(np.array([2.0, 2.0])).tolist() == [0.5, 0.5]
    assert normalize_scores(np.zeros(4)).tolist() == [0.25] * 4
    with pytest.raises(ValueError):
        normalize_scores(np.array([-1.0, 1.0]))


def test_zeta_over_ensemble():
    ds = OfflineDataset.from_transitions([Transition(0, 0, 1, 0.0)] * 3 + [Transition(2, 1, 1, 0.0)])
    ens = fit_ensemble(ds, line_coords(3), 2, n_models=4)
    pi = greedy_policy(np.zeros((3, 2)))
    zeta = zeta_distribution(ens, range(3), pi)
    assert zeta.sum() == pytest.approx(1.0) and np.all(zeta >= 0)


def test_dphi_examples():
    zeta = np.array([0.2, 0.3, 0.5])
    assert np.allclose(dphi_distribution(zeta, np.full(3, 7.0)), zeta)
    assert np.allclose(dphi_distribution(np.array([0.5, 0.5]), np.array([np.log(3.0), 0.0])), [0.75, 0.25])
    with pytest.raises(DimensionError):
        dphi_distribution(zeta, np.zeros(2))


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_dphi_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    zeta = rng.dirichlet(np.ones(20))
    v = rng.normal(0, 3, size=20)
    brute = zeta * np.exp(v)
    assert np.allclose(dphi_distribution(zeta, v), brute / brute.sum(), rtol=0, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-500, 500))
@settings(max_examples=50, deadline=None)
def test_dphi_translation_invariant_and_stable(seed, shift):
    rng = np.random.default_rng(seed)
    zeta = rng.dirichlet(np.ones(6))
    v = rng.normal(0, 3, size=6)
    out = dphi_distribution(zeta, v + shift)
    assert np.all(np.isfinite(out))
    assert np.allclose(out, dphi_distribution(zeta, v), atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_dphi_moves_mass_towards_higher_values(seed):
    rng = np.random.default_rng(seed)
    zeta = rng.dirichlet(np.ones(5))
    v = rng.normal(size=5)
    s = int(rng.integers(5))
    bumped = v.copy()
    bumped[s] += 1.0
    assert dphi_distribution(zeta, bumped)[s] >= dphi_distribution(zeta, v)[s] - 1e-15
