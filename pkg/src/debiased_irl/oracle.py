"""Exact population quantities on tabular MDPs.

All expectations are finite sums over ``(s, a, s')`` weighted by
``P0(s, a, s') = rho0(s) pi0(a|s) k(s'|a,s)``.
"""

from copy import deepcopy
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .estimands import NormalizedPolicyValue, PolicyValue, SoftmaxValue, validate_estimand
from .estimators import contribution_terms, normalization_adjoint
from .mdp_core import (
    TabularMDP,
    check_table,
    log_policy_reward,
    normalized_reward,
    occupancy_ratios,
    policy_average,
    solve_policy_q,
    solve_soft_bellman,
    state_occupancy,
)
from .nuisance import complete_nuisances


class OracleConsistencyError(RuntimeError):
    """An exact identity that must hold failed numerically."""


@dataclass
class OracleTruth:
    """Exact target, EIF and efficiency bound.

    Attributes
    ----------
    psi0 : float
    eif_table : ndarray, shape (S, A, S)
        ``chi0(s, a, s')``.
    sigma0_sq : float
        ``E_0[chi0^2]``.
    component_tables : dict
        ``m`` and ``correction`` tensors (indexed like ``eif_table``), the
        joint law ``p0`` and the exact NuisanceSet under ``"nuisances"``.
    """

    psi0: float
    eif_table: np.ndarray
    sigma0_sq: float
    component_tables: dict


def joint_law(mdp, pi0):
    """``P0[s, a, s']``."""
    return mdp.rho0[:, None, None] * pi0.T[:, :, None] * mdp.kernel.transpose(1, 0, 2)


def factor_joint(P, gamma):
    """Recover ``(mdp, pi)`` from a joint law ``P[s, a, s']`` by conditioning."""
    rho = P.sum(axis=(1, 2))
    sa = P.sum(axis=2)
    pi = (sa / rho[:, None]).T
    kernel = (P / sa[:, :, None]).transpose(1, 0, 2)
    return TabularMDP(kernel, rho, gamma), pi


def _grid(S, A):
    s, a, t = np.meshgrid(np.arange(S), np.arange(A), np.arange(S), indexing="ij")
    return s.ravel(), a.ravel(), t.ravel()


def exact_nuisances(estimand, mdp, pi0):
    """NuisanceSet holding the true tables for ``estimand``."""

    def q_solver(reward, pi, gamma):
        return solve_policy_q(mdp, reward, pi, gamma)

    def soft_solver(reward):
        return solve_soft_bellman(mdp, reward, estimand.tau_star, estimand.action_set, estimand.gamma).v

    def occupancy_solver(pi, gamma):
        return occupancy_ratios(mdp, pi, pi0, gamma), False

    return complete_nuisances(
        estimand, pi0, mdp.kernel, mdp.rho0, q_solver=q_solver, soft_solver=soft_solver, occupancy_solver=occupancy_solver
    )


def _terms_on_grid(estimand, mdp, nuis):
    S, A = mdp.n_states, mdp.n_actions
    s, a, t = _grid(S, A)
    m, c = contribution_terms(estimand, s, a, t, nuis)
    return m.reshape(S, A, S), c.reshape(S, A, S)


def functional_value(estimand, mdp, pi0):
    """Exact ``Psi`` at the law generated by ``(mdp, pi0)``."""
    validate_estimand(estimand, mdp.n_states, mdp.n_actions, mdp.gamma)
    r0 = log_policy_reward(pi0)
    if isinstance(estimand, PolicyValue):
        q = solve_policy_q(mdp, r0, estimand.pi, estimand.gamma)
        return float(mdp.rho0 @ policy_average(estimand.pi, q))
    if isinstance(estimand, SoftmaxValue):
        sol = solve_soft_bellman(mdp, r0, estimand.tau_star, estimand.action_set, estimand.gamma)
        q = solve_policy_q(mdp, r0, sol.pi, estimand.gamma)
        return float(mdp.rho0 @ policy_average(sol.pi, q))
    if isinstance(estimand, NormalizedPolicyValue):
        r_nu, _ = normalized_reward(mdp, r0, estimand.nu, estimand.gamma)
        q = solve_policy_q(mdp, r_nu, estimand.pi, estimand.gamma_prime)
        return float(mdp.rho0 @ policy_average(estimand.pi, q))
    raise ValidationError(f"unknown estimand {estimand!r}")


def behavior_from_reward(mdp, true_reward):
    return solve_soft_bellman(mdp, check_table(true_reward, mdp, "true_reward")).pi


def true_psi(estimand, mdp, true_reward):
    """Exact target parameter for data generated by ``true_reward``."""
    return functional_value(estimand, mdp, behavior_from_reward(mdp, true_reward))


def true_eif_and_bound(estimand, mdp, true_reward):
    """Exact EIF tensor and efficiency bound.

    Raises
    ------
    OracleConsistencyError
        If the EIF fails to be mean zero or the plug-in mean disagrees with
        the direct target computation.
    """
    pi0 = behavior_from_reward(mdp, true_reward)
    psi0 = functional_value(estimand, mdp, pi0)
    nuis = exact_nuisances(estimand, mdp, pi0)
    m, c = _terms_on_grid(estimand, mdp, nuis)
    P = joint_law(mdp, pi0)
    if abs(float((P * m).sum()) - psi0) > 1e-8:
        raise OracleConsistencyError("plug-in term disagrees with the target")
    chi = m + c - psi0
    mean = float((P * chi).sum())
    if abs(mean) > 1e-8:
        raise OracleConsistencyError(f"EIF mean {mean:.3g} is not zero")
    return OracleTruth(
        psi0=psi0,
        eif_table=chi,
        sigma0_sq=float((P * chi**2).sum()),
        component_tables={"m": m, "correction": c, "p0": P, "nuisances": nuis},
    )


def pathwise_derivative_probe(estimand, mdp, true_reward, phi, t=1e-4):
    """Compare a finite-difference derivative of ``Psi`` with ``E_0[chi0 phi]``.

    The submodel is ``P_t ∝ P0 exp(t phi)``; ``phi`` is centered under ``P0``
    before use.

    Returns
    -------
    finite_difference, inner_product : float
    """
    truth = true_eif_and_bound(estimand, mdp, true_reward)
    P0 = truth.component_tables["p0"]
    phi = np.asarray(phi, dtype=float)
    phi = phi - (P0 * phi).sum()

    def psi_at(step):
        P = P0 * np.exp(step * phi)
        tilted, pi_t = factor_joint(P / P.sum(), mdp.gamma)
        return functional_value(estimand, tilted, pi_t)

    fd = (psi_at(t) - psi_at(-t)) / (2 * t)
    return fd, float((P0 * truth.eif_table * phi).sum())


def random_direction(estimand, mdp, rng):
    """Random perturbation of every nuisance table the estimand uses."""
    A, S = mdp.n_actions, mdp.n_states
    out = {"r": rng.standard_normal((A, S)), "rho": rng.standard_normal(S)}
    keys = {
        PolicyValue: ["q_pi_gamma"],
        SoftmaxValue: ["v_star", "q_star"],
        NormalizedPolicyValue: ["q_nu_gamma", "q_pi_prime_nu"],
    }[type(estimand)]
    for key in keys:
        out[key] = rng.standard_normal((A, S))
    if isinstance(estimand, SoftmaxValue):
        out["rho_tilde"] = rng.standard_normal(S)
    return out


def perturb_nuisances(nuis, direction, eps):
    """Shift exact nuisances along ``direction``.

    The reward direction moves the behavior policy along
    ``pi ∝ pi0 exp(eps h)`` so that ``pi_n`` stays a policy and ``r_n = log pi_n``.
    ``"rho"`` shifts the state occupancy ratio of the estimand's main
    occupancy; every other key shifts the matching ``q`` table.
    """
    out = deepcopy(nuis)
    for key, h in direction.items():
        h = np.asarray(h, dtype=float)
        if key == "r":
            w = nuis.pi_n * np.exp(eps * h)
            out.pi_n = w / w.sum(axis=0)
            out.r_n = np.log(out.pi_n)
        elif key in ("rho", "rho_tilde"):
            occ = next(iter(out.occupancy.values()))
            setattr(occ, key, getattr(occ, key) + eps * h)
        elif key in out.q:
            out.q[key] = out.q[key] + eps * h
        else:
            raise ValidationError(f"unknown perturbation key {key!r}")
    return out


def von_mises_remainder(estimand, mdp, true_reward, direction, eps):
    """``E_0[m_n + correction_n] - psi0`` for nuisances ``truth + eps * direction``."""
    pi0 = behavior_from_reward(mdp, true_reward)
    psi0 = functional_value(estimand, mdp, pi0)
    nuis = perturb_nuisances(exact_nuisances(estimand, mdp, pi0), direction, eps)
    m, c = _terms_on_grid(estimand, mdp, nuis)
    return float((joint_law(mdp, pi0) * (m + c)).sum() - psi0)


def check_identification(mdp, true_reward, nu=None, policies=(), gamma=None, seed=0):
    """Exact violations of the identification and representation identities.

    Returns
    -------
    dict
        Maximum absolute violations keyed by check name; skipped checks map
        to ``None`` with a note under ``"notes"``.
    """
    gamma = mdp.gamma if gamma is None else gamma
    A, S = mdp.n_actions, mdp.n_states
    rng = np.random.default_rng(seed)
    pi0 = behavior_from_reward(mdp, true_reward)
    r0 = log_policy_reward(pi0)
    soft_true = solve_soft_bellman(mdp, true_reward)
    V_dag = soft_true.V
    policies = list(policies) or [pi0, np.full((A, S), 1.0 / A)]
    report = {"notes": []}

    viol = 0.0
    values = []
    for pi in policies:
        q0 = solve_policy_q(mdp, r0, pi)
        q_dag = solve_policy_q(mdp, true_reward, pi)
        viol = max(viol, np.max(np.abs(q0 - (q_dag - V_dag[None, :]))))
        values.append((policy_average(pi, q0), policy_average(pi, q_dag)))
    report["value_shift"] = float(viol)
    report["value_differences"] = float(
        max((np.max(np.abs((v0i - v0j) - (vdi - vdj))) for v0i, vdi in values for v0j, vdj in values), default=0.0)
    )

    if nu is not None:
        nu_r = policy_average(nu, true_reward)
        r_nu, _ = normalized_reward(mdp, r0, nu)
        if np.max(np.abs(nu_r)) <= 1e-12:
            report["normalization_recovery"] = float(np.max(np.abs(r_nu - true_reward)))
        else:
            report["normalization_recovery"] = None
            report["notes"].append("true reward is not nu-normalized; recovery check skipped")
        w = mdp.rho0[None, :] * pi0
        gaps, fixed = [], []
        for _ in range(5):
            wt = rng.standard_normal((A, S))
            lhs = np.sum(w * wt * r_nu)
            gaps.append(abs(lhs - np.sum(w * wt * (r0 - policy_average(nu, r0)[None, :]))))
            fixed.append(abs(lhs - np.sum(w * normalization_adjoint(wt, pi0, mdp.kernel, mdp.rho0, nu, gamma) * r0)))
        report["reward_average"] = float(max(gaps))
        report["reward_average_adjoint"] = float(max(fixed))
    else:
        report["normalization_recovery"] = report["reward_average"] = report["reward_average_adjoint"] = None
        report["notes"].append("no nu supplied; normalization checks skipped")

    first, second, shifted = adjoint_violations(mdp, pi0, policies, gamma, rng)
    report["adjoint_policy_average"] = first
    report["adjoint_resolvent"] = second
    report["adjoint_resolvent_shifted"] = shifted
    return report


def adjoint_violations(mdp, pi0, policies, gamma, rng, n_tests=10):
    """Violations of resolvent adjoint identities under ``rho0 x pi0``.

    Returns the maximum violation of

    * ``E[(pi T^{-1} f)(S)] = E[d f]``;
    * ``E[(T^{-1} f)(A,S)] = E[(1 - pi/pi0 + d) f]``;
    * ``E[(T^{-1} f)(A,S)] = E[(1 + d1) f]``, where ``d1`` is the ratio of
      the discounted occupancy from ``t = 1`` on, started from the one-step
      push-forward of ``rho0 x pi0`` and following ``pi``.

    The second form equals the third only when ``pi0`` and ``pi`` induce the
    same one-step state law from ``rho0``.
    """
    w = mdp.rho0[None, :] * pi0
    mu1 = np.einsum("as,ast->t", w, mdp.kernel)
    first = second = third = 0.0
    for pi in policies:
        d = occupancy_ratios(mdp, pi, pi0, gamma).d
        m1 = gamma * state_occupancy(mdp, pi, gamma, rho0=mu1)
        d1 = (m1 / mdp.rho0)[None, :] * pi / pi0
        for _ in range(n_tests):
            f = rng.standard_normal(pi0.shape)
            q = solve_policy_q(mdp, f, pi, gamma)
            lhs = np.sum(w * q)
            first = max(first, abs(mdp.rho0 @ policy_average(pi, q) - np.sum(w * d * f)))
            second = max(second, abs(lhs - np.sum(w * (1 - pi / pi0 + d) * f)))
            third = max(third, abs(lhs - np.sum(w * (1 + d1) * f)))
    return float(first), float(second), float(third)
