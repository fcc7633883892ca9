"""Debiased inference for reward-dependent functionals of soft-optimal agents on finite MDPs."""

from .agent_sim import TransitionDataset, gumbel_action_frequencies, sample_transitions
from .errors import MissingNuisanceError, PositivityError, SolverError, ValidationError
from .estimands import NormalizedPolicyValue, PolicyValue, SoftmaxValue
from .estimators import EstimateReport, EstimatorConfig, confidence_interval, estimate
from .mdp_core import TabularMDP, solve_policy_q, solve_soft_bellman
from .oracle import OracleTruth, true_eif_and_bound, true_psi

__all__ = [
    "TabularMDP",
    "solve_policy_q",
    "solve_soft_bellman",
    "TransitionDataset",
    "sample_transitions",
    "gumbel_action_frequencies",
    "PolicyValue",
    "SoftmaxValue",
    "NormalizedPolicyValue",
    "EstimatorConfig",
    "EstimateReport",
    "estimate",
    "confidence_interval",
    "OracleTruth",
    "true_psi",
    "true_eif_and_bound",
    "ValidationError",
    "PositivityError",
    "SolverError",
    "MissingNuisanceError",
]
