"""Mixtures of learning-pattern POMDPs for student modelling and tutoring."""

from .belief import Belief, fold_trajectory, init_belief, predict_response, update_belief
from .domain import (ConceptGraph, Dataset, HPOMDPModel, ObservationFunction, PatternComponent,
                     Question, RewardSpec, StateSpace, Trajectory, build_state_space, make_questions,
                     validate_model)
from .estimator import HPOMDPEstimator
from .evaluation import (compute_metrics, cross_validate, next_step_predictions, pairwise_auc,
                         rank_auc)
from .exceptions import (CapacityError, ContractError, DataError, HPOMDPError,
                         ImpossibleEvidenceError, ModelFileError, StructuralError)
from .inference import component_log_likelihoods, posterior_marginals, sequence_log_likelihood
from .io import (ColumnMapping, ingest_logs, load_config, load_graph, load_model, read_dataset,
                 save_graph, save_model, write_dataset)
from .learning import EMConfig, apply_constraints, em_fit, em_step, fit_baseline_pomdp
from .planning import PlannerConfig, action_value, best_action, exact_value
from .simulation import (FixedPolicy, PlannerPolicy, RandomPolicy, sample_dataset, simulate_cohort,
                         strategy_metrics, two_sample_t)

__version__ = "0.1.0"
