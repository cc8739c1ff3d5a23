"""Tabular pessimistic offline RL: regularised policy evaluation against OOD states."""

from .envs import (
    BehaviorStats,
    MazeSpec,
    OfflineDataset,
    build_maze_mdp,
    collect_dataset,
    dataset_stats,
    maze_preset,
)
from .mdp import (
    TabularMdp,
    Transition,
    empirical_bellman_backup,
    exact_bellman_backup,
    exact_policy_value,
    greedy_policy,
    value_iteration,
)
from .regularizers import (
    EpsilonMode,
    Kind,
    VariantConfig,
    closed_form_update,
    cql_cost,
    lagrangian_epsilon_step,
    pessimistic_q,
    pessorl_objective,
)
from .theory import (
    BoundReport,
    corollary1_alpha_bound,
    d_cql,
    delta_gap,
    feasibility_report,
    lemma1_error_bound,
    theorem1_ratio_bound,
    theorem2_threshold,
)
from .training import TrainerConfig, TrainResult, train
from .uncertainty import DynamicsEnsemble, fit_ensemble, state_uncertainty, zeta_distribution
