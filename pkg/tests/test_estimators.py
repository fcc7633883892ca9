import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debiased_irl.agent_sim import sample_transitions
from debiased_irl.errors import MissingNuisanceError, ValidationError
from debiased_irl.estimands import (
    NormalizedPolicyValue,
    PolicyValue,
    SoftmaxValue,
    estimand_from_dict,
    estimand_to_dict,
    validate_estimand,
)
from debiased_irl.estimators import (
    EstimatorConfig,
    confidence_interval,
    contribution_terms,
    eif_contribution,
    estimate,
    normal_quantile,
    normalization_adjoint,
    one_step_combine,
    plugin_estimate,
    riesz_transform_for_normalization,
)
from debiased_irl.fixtures import random_mdp, random_policy, ring2, ring2_n
from debiased_irl.mdp_core import (
    point_mass_policy,
    policy_average,
    solve_policy_q,
    solve_soft_bellman,
    state_occupancy,
    state_transition,
    uniform_policy,
)
from debiased_irl.nuisance import TransitionCounts, cross_fit, fit_nuisances
from debiased_irl.oracle import exact_nuisances, joint_law, true_eif_and_bound

U = uniform_policy(2, 2)
NU0 = point_mass_policy(2, 2, 0)
LOG1PE = 1.3132616875182228
PSI0_RING2_UNIFORM = -8.132616875182233


def ring2_truth(estimand, problem=ring2):
    mdp, r = problem()
    pi0 = solve_soft_bellman(mdp, r).pi
    return mdp, pi0, exact_nuisances(estimand, mdp, pi0)


def exact_mean(estimand, mdp, pi0, nuis):
    S, A = mdp.n_states, mdp.n_actions
    s, a, t = np.meshgrid(np.arange(S), np.arange(A), np.arange(S), indexing="ij")
    m, c = contribution_terms(estimand, s.ravel(), a.ravel(), t.ravel(), nuis)
    return float(np.sum(joint_law(mdp, pi0).ravel() * (m + c)))


# ------------------------------------------------------------------ config


def test_config_validation():
    with pytest.raises(ValidationError):
        EstimatorConfig(K=1)
    with pytest.raises(ValidationError):
        EstimatorConfig(level=1.0)
    with pytest.raises(ValidationError):
        EstimatorConfig(occupancy_mode="kernel")
    with pytest.raises(ValidationError):
        EstimatorConfig(ratio_cap=0.0)
    with pytest.raises(ValidationError):
        EstimatorConfig.from_dict({"K": 2, "folds": 3})
    cfg = EstimatorConfig.from_dict({"K": 3, "ratio_cap": None})
    assert EstimatorConfig.from_dict(cfg.to_dict()) == cfg


def test_estimand_json_round_trip():
    for est in (
        PolicyValue(U, 0.9),
        SoftmaxValue((0,), 0.5, 0.9),
        NormalizedPolicyValue(U, NU0, 0.9, 0.5),
    ):
        back = estimand_from_dict(estimand_to_dict(est), 2, 2)
        assert estimand_to_dict(back) == estimand_to_dict(est)


def test_estimand_validation():
    with pytest.raises(ValidationError):
        validate_estimand(SoftmaxValue((0,), 0.5, 0.5), 2, 2, behavior_gamma=0.9)
    with pytest.raises(ValidationError):
        validate_estimand(SoftmaxValue((), 0.5, 0.9), 2, 2)
    with pytest.raises(ValidationError):
        validate_estimand(SoftmaxValue((0,), 0.0, 0.9), 2, 2)
    with pytest.raises(ValidationError):
        validate_estimand(NormalizedPolicyValue(U, NU0, 0.9, 1.0), 2, 2)
    with pytest.raises(ValidationError):
        validate_estimand(PolicyValue(np.ones((3, 2)) / 3, 0.9), 2, 2)
    with pytest.raises(ValidationError):
        estimand_from_dict({"kind": "Nope"}, 2, 2)


# ------------------------------------------------------- small building blocks


def test_normal_quantile_values():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.995) == pytest.approx(2.5758293035489, abs=1e-12)
    with pytest.raises(ValidationError):
        normal_quantile(1.0)


def test_confidence_interval_examples():
    lo, hi, se = confidence_interval([-1.0, 1.0], 3.0, 0.95)
    assert se == pytest.approx(1.0)
    assert (lo, hi) == pytest.approx((3.0 - 1.959964, 3.0 + 1.959964), abs=1e-6)
    lo, hi, se = confidence_interval([2.0] * 5, 2.0)
    assert se == 0.0 and lo == hi == 2.0
    with pytest.raises(ValidationError):
        confidence_interval([1.0], 1.0)
    with pytest.raises(ValidationError):
        confidence_interval([1.0, 2.0], 1.0, level=0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(-1e3, 1e3))
def test_one_step_combine_is_sum_of_means(m, d):
    assert one_step_combine(m, [0.0] * len(m)) == pytest.approx(np.mean(m))
    assert one_step_combine([m[0]] * len(m), [d] * len(m)) == pytest.approx(m[0] + d)


def test_one_step_combine_rejects_bad_input():
    with pytest.raises(ValidationError):
        one_step_combine([], [])
    with pytest.raises(ValidationError):
        one_step_combine([1.0], [1.0, 2.0])


def test_missing_table_is_named():
    mdp, pi0, nuis = ring2_truth(PolicyValue(U, 0.9))
    del nuis.q["q_pi_gamma"]
    with pytest.raises(MissingNuisanceError, match="q_pi_gamma"):
        eif_contribution(PolicyValue(U, 0.9), (0, 0, 0), nuis)


# ---------------------------------------------------- contributions at truth


def test_policy_value_contribution_mean_is_psi0():
    est = PolicyValue(U, 0.9)
    mdp, pi0, nuis = ring2_truth(est)
    assert abs(exact_mean(est, mdp, pi0, nuis) - PSI0_RING2_UNIFORM) <= 1e-10


def test_gamma_zero_contribution_by_hand():
    est = PolicyValue(U, 0.0)
    mdp, pi0, nuis = ring2_truth(est)
    sigma = 1.0 / (1.0 + np.exp(-1.0))
    v0 = 0.5 - LOG1PE
    assert eif_contribution(est, (0, 0, 1), nuis) == pytest.approx(v0 + 0.5 / sigma - 1.0, abs=1e-12)
    assert eif_contribution(est, (0, 1, 0), nuis) == pytest.approx(v0 + 0.5 / (1 - sigma) - 1.0, abs=1e-12)


def test_softmax_full_set_unit_temperature_has_unit_ratios():
    est = SoftmaxValue((0, 1), 1.0, 0.9)
    mdp, pi0, nuis = ring2_truth(est)
    occ = nuis.occupancy["star"]
    np.testing.assert_allclose(occ.d, np.broadcast_to(occ.rho, occ.d.shape), atol=1e-12)
    assert abs(exact_mean(est, mdp, pi0, nuis) - true_eif_and_bound(est, mdp, ring2()[1]).psi0) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_contribution_mean_is_psi0_on_random_mdps(seed):
    rng = np.random.default_rng(seed)
    mdp, r = random_mdp(4, 3, 0.8, rng)
    pi0 = solve_soft_bellman(mdp, r).pi
    pi, nu = random_policy(4, 3, rng), random_policy(4, 3, rng)
    for est in (PolicyValue(pi, 0.7), SoftmaxValue((0, 2), 0.7, 0.8), NormalizedPolicyValue(pi, nu, 0.8, 0.6)):
        truth = true_eif_and_bound(est, mdp, r)
        assert abs(exact_mean(est, mdp, pi0, exact_nuisances(est, mdp, pi0)) - truth.psi0) <= 1e-10


def test_plugin_with_exact_nuisances_is_unbiased():
    est = PolicyValue(U, 0.0)
    mdp, r = ring2()
    mdp0, pi0, nuis = ring2_truth(est)
    data = sample_transitions(mdp, r, 2000, 4)
    m_bar = np.mean(policy_average(U, nuis.r_n)[data.s])
    assert plugin_estimate(est, data, nuis) == pytest.approx(m_bar, abs=1e-12)


# ------------------------------------------------------ normalization transform


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    mdp, r = random_mdp(5, 3, 0.9, rng)
    pi0 = solve_soft_bellman(mdp, r).pi
    nu = random_policy(5, 3, rng)
    w, f = rng.standard_normal((2, 3, 5))
    q = solve_policy_q(mdp, f, nu)
    lifted = q - policy_average(nu, q)[None, :]
    weight = mdp.rho0[None, :] * pi0
    lhs = np.sum(weight * w * lifted)
    rhs = np.sum(weight * normalization_adjoint(w, pi0, mdp.kernel, mdp.rho0, nu, mdp.gamma) * f)
    assert abs(lhs - rhs) <= 1e-10


def test_transform_of_zero_is_zero():
    est = NormalizedPolicyValue(U, NU0, 0.9, 0.5)
    _, _, nuis = ring2_truth(est, ring2_n)
    s = np.array([0, 1, 1])
    beta_t = np.array([0.3, -1.0, 2.0])
    alpha, beta = riesz_transform_for_normalization(np.zeros((2, 2)), beta_t, s, s, s, nuis, NU0, 0.9)
    assert np.all(alpha == 0.0)
    np.testing.assert_array_equal(beta, beta_t)


def test_transform_state_average_is_pushforward_occupancy():
    """``sum_a pi0 alpha`` equals the adjoint-resolvent term, not zero.

    The centering term vanishes only when the kernel ignores the action;
    see the action-blind case below.
    """
    rng = np.random.default_rng(5)
    mdp, r = random_mdp(4, 3, 0.9, rng)
    pi0 = solve_soft_bellman(mdp, r).pi
    nu = random_policy(4, 3, rng)
    alpha_t = rng.standard_normal((3, 4))
    alpha = normalization_adjoint(alpha_t, pi0, mdp.kernel, mdp.rho0, nu, mdp.gamma)
    x = alpha_t - nu / pi0 * policy_average(pi0, alpha_t)[None, :]
    push = np.einsum("as,ast->t", mdp.rho0[None, :] * pi0 * x, mdp.kernel)
    eta = mdp.gamma * state_occupancy(mdp, nu, rho0=push) / mdp.rho0
    np.testing.assert_allclose(policy_average(pi0, alpha), eta, atol=1e-10)
    assert np.max(np.abs(eta)) > 1e-3


def test_transform_with_action_blind_kernel_is_simple_centering():
    rng = np.random.default_rng(6)
    mdp, r = random_mdp(4, 3, 0.9, rng)
    kernel = np.broadcast_to(mdp.kernel[:1], mdp.kernel.shape).copy()
    pi0 = random_policy(4, 3, rng, floor=0.05)
    alpha_t = rng.standard_normal((3, 4))
    alpha = normalization_adjoint(alpha_t, pi0, kernel, mdp.rho0, pi0, mdp.gamma)
    np.testing.assert_allclose(alpha, alpha_t - policy_average(pi0, alpha_t)[None, :], atol=1e-10)
    np.testing.assert_allclose(policy_average(pi0, alpha), 0.0, atol=1e-10)


def test_transform_matches_oracle_eif_on_ring2n():
    est = NormalizedPolicyValue(U, NU0, 0.9, 0.5)
    mdp, r = ring2_n()
    truth = true_eif_and_bound(est, mdp, r)
    pi0 = solve_soft_bellman(mdp, r).pi
    nuis = exact_nuisances(est, mdp, pi0)
    assert truth.psi0 == pytest.approx(0.25, abs=1e-10)
    assert truth.sigma0_sq == pytest.approx(4.497076672850245, rel=1e-9)
    for rec in [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)]:
        s, a, t = rec
        assert eif_contribution(est, rec, nuis) - truth.psi0 == pytest.approx(truth.eif_table[s, a, t], abs=1e-10)


# ------------------------------------------------------------------ estimate


def test_estimate_requires_enough_records():
    mdp, r = ring2()
    data = sample_transitions(mdp, r, 5, 0)
    with pytest.raises(ValidationError, match="2K"):
        estimate(PolicyValue(U, 0.9), data, EstimatorConfig(K=3))


def test_estimate_requires_table_sizes():
    mdp, r = ring2()
    data = sample_transitions(mdp, r, 50, 0)
    data.n_states = None
    with pytest.raises(ValidationError):
        estimate(PolicyValue(U, 0.9), data)


def test_estimate_wraps_fold_failures():
    mdp, r = ring2()
    data = sample_transitions(mdp, r, 200, 0)
    with pytest.raises(Exception, match="fold 0"):
        estimate(PolicyValue(U, 0.9), data, EstimatorConfig(fqi_iters=2))


def test_estimate_is_decomposable_bit_for_bit():
    mdp, r = ring2()
    est = PolicyValue(U, 0.9)
    data = sample_transitions(mdp, r, 100, 12)
    cfg = EstimatorConfig(seed=5)
    report = estimate(est, data, cfg, keep_nuisances=True)
    plan = cross_fit(data, cfg.K, cfg.seed)
    m_all, c_all = np.empty(data.n), np.empty(data.n)
    for idx, nuis in zip(plan.folds, report.diagnostics["nuisances"]):
        m_all[idx], c_all[idx] = contribution_terms(est, data.s[idx], data.a[idx], data.s_next[idx], nuis)
    assert report.psi_hat == one_step_combine(m_all, c_all)
    assert report.std_error == confidence_interval(m_all + c_all, report.psi_hat)[2]
    weighted = sum(f["psi_fold"] * f["n_fold"] for f in report.per_fold) / data.n
    assert report.psi_hat == pytest.approx(weighted, abs=1e-12)
    assert report.ci_low <= report.psi_hat <= report.ci_high


def test_estimate_is_reproducible_and_serializable():
    mdp, r = ring2()
    data = sample_transitions(mdp, r, 300, 1)
    a = estimate(PolicyValue(U, 0.9), data, EstimatorConfig(seed=9))
    b = estimate(PolicyValue(U, 0.9), data, EstimatorConfig(seed=9))
    assert a.to_dict() == b.to_dict()
    assert {"fold_id", "psi_fold", "n_fold"} <= set(a.per_fold[0])
    assert a.diagnostics["smoothing_lambda"] == 0.5 and a.diagnostics["ratio_cap"] is None


def test_ratio_cap_is_reported_and_applied():
    mdp, r = ring2()
    data = sample_transitions(mdp, r, 400, 2)
    capped = estimate(PolicyValue(NU0, 0.9), data, EstimatorConfig(ratio_cap=1.0))
    free = estimate(PolicyValue(NU0, 0.9), data)
    assert capped.diagnostics["ratio_cap"] == 1.0
    assert capped.psi_hat != free.psi_hat


def test_policy_value_ring2_within_four_sigma():
    mdp, r = ring2()
    report = estimate(PolicyValue(U, 0.9), sample_transitions(mdp, r, 4000, 7), EstimatorConfig(seed=7))
    assert abs(report.psi_hat - PSI0_RING2_UNIFORM) <= 4 * report.std_error


def test_normalized_value_recovers_true_reward_value():
    mdp, r = ring2_n()
    pi = np.array([[0.3, 0.8], [0.7, 0.2]])
    target = mdp.rho0 @ policy_average(pi, solve_policy_q(mdp, r, pi))
    est = NormalizedPolicyValue(pi, NU0, 0.9, 0.9)
    report = estimate(est, sample_transitions(mdp, r, 8000, 3), EstimatorConfig(seed=3), behavior_gamma=0.9)
    assert abs(report.psi_hat - target) <= 4 * report.std_error


def test_softmax_estimate_reports_rho_tilde_range():
    mdp, r = ring2()
    report = estimate(SoftmaxValue((0,), 0.5, 0.9), sample_transitions(mdp, r, 1000, 3))
    lo, hi = report.diagnostics["rho_tilde_range"][0]
    assert lo <= hi


def test_quadratic_occupancy_mode_runs_end_to_end():
    mdp, r = ring2()
    report = estimate(
        PolicyValue(U, 0.9), sample_transitions(mdp, r, 4000, 7), EstimatorConfig(seed=7, occupancy_mode="quadratic_loss")
    )
    assert abs(report.psi_hat - PSI0_RING2_UNIFORM) <= 4 * report.std_error


def test_debiasing_beats_oversmoothed_plugin_most_of_the_time():
    mdp, r = ring2()
    est = PolicyValue(U, 0.9)
    cfg = EstimatorConfig(smoothing_lambda=50.0)
    wins = 0
    for rep in range(100):
        report = estimate(est, sample_transitions(mdp, r, 4000, 500 + rep), EstimatorConfig(**{**cfg.to_dict(), "seed": rep}))
        wins += abs(report.plugin_psi - PSI0_RING2_UNIFORM) > abs(report.psi_hat - PSI0_RING2_UNIFORM)
    assert wins >= 70


def test_fit_uses_counts_only():
    mdp, r = ring2()
    data = sample_transitions(mdp, r, 500, 1)
    counts = TransitionCounts.from_data(data, 2, 2)
    perm = np.random.default_rng(0).permutation(data.n)
    shuffled = TransitionCounts.from_data(data.subset(perm), 2, 2)
    a = fit_nuisances(PolicyValue(U, 0.9), counts)
    b = fit_nuisances(PolicyValue(U, 0.9), shuffled)
    np.testing.assert_array_equal(a.q["q_pi_gamma"], b.q["q_pi_gamma"])
    assert state_transition(a.k_n, U).shape == (2, 2)
