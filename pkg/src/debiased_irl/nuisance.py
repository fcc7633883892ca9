"""Nuisance estimation from transition records and cross-fitting plans."""

from dataclasses import dataclass, field

import numpy as np

from .errors import PositivityError, SolverError, ValidationError
from .estimands import NormalizedPolicyValue, PolicyValue, SoftmaxValue
from .mdp_core import (
    TabularMDP,
    OccupancyTables,
    action_mask,
    advantage_weighted_occupancy,
    conditional_occupancy,
    log_policy_reward,
    occupancy_ratios,
    policy_average,
    soft_max_value,
    state_transition,
)


@dataclass
class TransitionCounts:
    """Sufficient statistics of a tabular dataset.

    Attributes
    ----------
    n_ast : ndarray, shape (A, S, S)
        Transition counts.
    n_as : ndarray, shape (A, S)
    n_s : ndarray, shape (S,)
    """

    n_ast: np.ndarray

    @classmethod
    def from_data(cls, data, n_states, n_actions):
        flat = (data.a * n_states + data.s) * n_states + data.s_next
        n_ast = np.bincount(flat, minlength=n_actions * n_states * n_states)
        return cls(n_ast.reshape(n_actions, n_states, n_states).astype(float))

    @property
    def n_as(self):
        return self.n_ast.sum(axis=2)

    @property
    def n_s(self):
        return self.n_ast.sum(axis=(0, 2))

    @property
    def n(self):
        return float(self.n_ast.sum())

    @property
    def shape(self):
        A, S, _ = self.n_ast.shape
        return A, S


def as_counts(data, n_states=None, n_actions=None):
    """Accept either TransitionCounts or a dataset plus table sizes."""
    if isinstance(data, TransitionCounts):
        return data
    n_states = data.n_states if n_states is None else n_states
    n_actions = data.n_actions if n_actions is None else n_actions
    if n_states is None or n_actions is None:
        raise ValidationError("table sizes are required to tabulate a dataset")
    return TransitionCounts.from_data(data, n_states, n_actions)


def fit_behavior_policy(data, n_states=None, n_actions=None, smoothing_lambda=0.5):
    """Smoothed frequencies ``(n(a,s) + lam) / (n(s) + lam |A|)``; uniform where unvisited.

    Returns
    -------
    pi_n : ndarray, shape (A, S)
    r_n : ndarray, shape (A, S)
        ``log pi_n``.
    """
    counts = as_counts(data, n_states, n_actions)
    if smoothing_lambda < 0:
        raise ValidationError("smoothing_lambda must be non-negative")
    A, S = counts.shape
    n_as = counts.n_as
    n_s = n_as.sum(axis=0)
    pi = np.full((A, S), 1.0 / A)
    seen = n_s > 0
    pi[:, seen] = (n_as[:, seen] + smoothing_lambda) / (n_s[seen] + smoothing_lambda * A)
    if pi.min() <= 0:
        raise PositivityError("estimated behavior policy has zero entries; use smoothing_lambda > 0")
    return pi, log_policy_reward(pi)


def fit_kernel(data, n_states=None, n_actions=None, smoothing_alpha=0.5):
    """Smoothed transition frequencies; uniform rows for unobserved pairs."""
    counts = as_counts(data, n_states, n_actions)
    if smoothing_alpha < 0:
        raise ValidationError("smoothing_alpha must be non-negative")
    A, S = counts.shape
    n_as = counts.n_as
    k = np.full(counts.n_ast.shape, 1.0 / S)
    seen = n_as > 0
    k[seen] = (counts.n_ast[seen] + smoothing_alpha) / (n_as[seen] + smoothing_alpha * S)[:, None]
    return k


def fit_initial_distribution(counts, smoothing=0.5):
    """Smoothed empirical state frequency of the recorded initial states."""
    n_s = counts.n_s
    return (n_s + smoothing) / (n_s.sum() + smoothing * n_s.size)


def regression_kernel(counts, fallback_kernel):
    """Per-cell empirical next-state law, with ``fallback_kernel`` rows where a cell is empty.

    Regressing any target ``f(S')`` on the cell ``(A, S)`` by the cell mean
    equals applying this kernel to ``f``.
    """
    n_as = counts.n_as
    seen = n_as > 0
    k = np.array(fallback_kernel, dtype=float, copy=True)
    k[seen] = counts.n_ast[seen] / n_as[seen][:, None]
    return k


def fitted_q_iteration(data, reward, pi, gamma, tol=1e-10, max_iters=10_000, fallback_kernel=None):
    """Tabular fitted Q-iteration for ``T_{k,pi,gamma} q = reward``.

    Each sweep regresses ``reward(A,S) + gamma (pi q)(S')`` on the cell
    ``(A, S)`` by its cell mean, starting from ``q = 0``. Cells without data
    use ``fallback_kernel`` (default: the smoothed kernel estimate).

    Raises
    ------
    SolverError
        When the sup-norm change is still above ``tol`` after ``max_iters``.
    """
    counts = as_counts(data, *np.shape(reward)[::-1])
    if fallback_kernel is None:
        fallback_kernel = fit_kernel(counts)
    kreg = regression_kernel(counts, fallback_kernel)
    q = np.zeros_like(reward, dtype=float)
    change = np.inf
    for _ in range(max_iters):
        new = reward + gamma * (kreg @ policy_average(pi, q))
        change = np.max(np.abs(new - q))
        q = new
        if change <= tol:
            return q
    raise SolverError(f"fitted Q-iteration stalled at change {change:.3g}", residual=change, iterations=max_iters)


def soft_q_iteration(data, reward, tau, action_set, gamma, tol=1e-10, max_iters=10_000, fallback_kernel=None):
    """Regression analogue of the soft Bellman fixed point ``v = P Phi(v)``.

    Each sweep replaces ``v(a, s)`` by the cell mean of
    ``tau logsumexp_{A*}((reward(., S') + gamma v(., S')) / tau)``.
    """
    counts = as_counts(data, *np.shape(reward)[::-1])
    if fallback_kernel is None:
        fallback_kernel = fit_kernel(counts)
    kreg = regression_kernel(counts, fallback_kernel)
    mask = action_mask(action_set, reward.shape[0])
    v = np.zeros_like(reward, dtype=float)
    change = np.inf
    for _ in range(max_iters):
        phi, _ = soft_max_value(reward + gamma * v, tau, mask)
        new = kreg @ phi
        change = np.max(np.abs(new - v))
        v = new
        if change <= tol:
            return v
    raise SolverError(f"soft Q-iteration stalled at change {change:.3g}", residual=change, iterations=max_iters)


def fit_occupancy_ratio(data, pi, pi_n, k_n, rho0_n, gamma, mode="plugin"):
    """Occupancy ratio of ``pi`` relative to ``(rho0, pi0)``.

    ``mode="plugin"`` solves the occupancy equation under ``(k_n, rho0_n)``.
    ``mode="quadratic_loss"`` minimizes the empirical loss
    ``E_n[(B a)(S)^2 - 2 a(S)]`` over state functions ``a``, where
    ``B a = a - gamma K_pi a`` uses ``k_n``; the minimizer gives ``rho = B a``.
    Singular normal equations fall back to the plug-in solution.

    Returns
    -------
    tables : OccupancyTables
    fell_back : bool
        True when quadratic mode fell back to the plug-in ratio.
    """
    counts = as_counts(data, *np.shape(pi_n)[::-1])
    if mode not in ("plugin", "quadratic_loss"):
        raise ValidationError(f"unknown occupancy mode {mode!r}")
    plug = occupancy_ratios(TabularMDP(k_n, rho0_n, gamma, eps_pos=0.0), pi, pi_n, gamma)
    if mode == "plugin":
        return plug, False
    w = counts.n_s / counts.n
    B = np.eye(w.size) - gamma * state_transition(k_n, pi)
    gram = B.T @ (w[:, None] * B)
    if np.linalg.cond(gram) > 1e12:
        return plug, True
    rho = B @ np.linalg.solve(gram, w)
    return OccupancyTables(rho=rho, d=rho[None, :] * pi / pi_n), False


@dataclass
class FoldPlan:
    """Disjoint evaluation folds covering ``range(n)``."""

    folds: list
    seed: int

    @property
    def K(self):
        return len(self.folds)

    @property
    def assignments(self):
        """Fold index of every record."""
        out = np.empty(sum(f.size for f in self.folds), dtype=np.int64)
        for j, f in enumerate(self.folds):
            out[f] = j
        return out

    def train_index(self, j):
        """Records outside fold ``j``."""
        return np.flatnonzero(self.assignments != j)


def cross_fit(data, K, seed):
    """Shuffled partition of the records into ``K`` folds whose sizes differ by at most one.

    ``data`` is a dataset or a record count.
    """
    n = data if isinstance(data, (int, np.integer)) else data.n
    if K < 2 or K > n:
        raise ValidationError(f"K must lie in [2, n={n}], got {K}")
    perm = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed)))).permutation(n)
    return FoldPlan([np.sort(f) for f in np.array_split(perm, K)], int(seed))


@dataclass
class NuisanceSet:
    """Tables feeding one fold's one-step correction.

    Attributes
    ----------
    pi_n, r_n : ndarray, shape (A, S)
        Behavior policy estimate and its log.
    k_n : ndarray, shape (A, S, S)
    rho0_n : ndarray, shape (S,)
    q : dict of str to ndarray
        Q-type tables keyed by role.
    occupancy : dict of str to OccupancyTables
    tags : dict
        ``(policy, reward, gamma)`` description of each ``q`` table.
    fold_id : int or None
    flags : dict
    """

    pi_n: np.ndarray
    r_n: np.ndarray
    k_n: np.ndarray
    rho0_n: np.ndarray
    q: dict = field(default_factory=dict)
    occupancy: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    fold_id: int = None
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        def occ(o):
            return {k: (None if v is None else np.asarray(v).tolist()) for k, v in vars(o).items()}

        return {
            "fold_id": self.fold_id,
            "pi_n": self.pi_n.tolist(),
            "r_n": self.r_n.tolist(),
            "k_n": self.k_n.tolist(),
            "rho0_n": self.rho0_n.tolist(),
            "q": {k: v.tolist() for k, v in self.q.items()},
            "occupancy": {k: occ(v) for k, v in self.occupancy.items()},
            "tags": dict(self.tags),
            "flags": dict(self.flags),
        }


def softmax_tables(r, v_star, estimand, gamma):
    """Soft value and softmax policy implied by ``(r, v*)``."""
    mask = action_mask(estimand.action_set, r.shape[0])
    return soft_max_value(r + gamma * v_star, estimand.tau_star, mask)


def complete_nuisances(estimand, pi_b, k, rho0, *, q_solver, soft_solver, occupancy_solver):
    """Assemble every table an estimand needs from first-stage pieces.

    The three solver callbacks abstract over exact and data-driven routes:
    ``q_solver(reward, pi, gamma)``, ``soft_solver(reward)`` returning ``v*``,
    and ``occupancy_solver(pi, gamma)`` returning ``(OccupancyTables, flag)``.
    """
    r = log_policy_reward(pi_b)
    nuis = NuisanceSet(pi_n=pi_b, r_n=r, k_n=k, rho0_n=rho0)
    g = estimand.gamma
    if isinstance(estimand, PolicyValue):
        nuis.q["q_pi_gamma"] = q_solver(r, estimand.pi, g)
        nuis.tags["q_pi_gamma"] = {"policy": "pi", "reward": "r_n", "gamma": g}
        nuis.occupancy["pi_gamma"], fb = occupancy_solver(estimand.pi, g)
    elif isinstance(estimand, SoftmaxValue):
        v_star = soft_solver(r)
        _, pi_star = softmax_tables(r, v_star, estimand, g)
        q_star = q_solver(r, pi_star, g)
        occ, fb = occupancy_solver(pi_star, g)
        mdp_n = TabularMDP(k, rho0, g, eps_pos=0.0)
        occ.rho_cond = conditional_occupancy(mdp_n, pi_star, g)
        occ.rho_tilde = advantage_weighted_occupancy(
            mdp_n, pi_b, occ.d, q_star, policy_average(pi_star, q_star), occ.rho_cond
        )
        nuis.q["v_star"], nuis.q["q_star"] = v_star, q_star
        nuis.tags["v_star"] = {"policy": "softmax", "reward": "r_n", "gamma": g, "tau": estimand.tau_star}
        nuis.tags["q_star"] = {"policy": "pi_star", "reward": "r_n", "gamma": g}
        nuis.occupancy["star"] = occ
    elif isinstance(estimand, NormalizedPolicyValue):
        q_nu = q_solver(r, estimand.nu, g)
        r_nu = q_nu - policy_average(estimand.nu, q_nu)[None, :]
        nuis.q["q_nu_gamma"] = q_nu
        nuis.q["q_pi_prime_nu"] = q_solver(r_nu, estimand.pi, estimand.gamma_prime)
        nuis.tags["q_nu_gamma"] = {"policy": "nu", "reward": "r_n", "gamma": g}
        nuis.tags["q_pi_prime_nu"] = {"policy": "pi", "reward": "r_nu", "gamma": estimand.gamma_prime}
        nuis.occupancy["pi_gamma_prime"], fb = occupancy_solver(estimand.pi, estimand.gamma_prime)
    else:
        raise ValidationError(f"unknown estimand {estimand!r}")
    nuis.flags["occupancy_fallback"] = bool(fb)
    return nuis


def fit_nuisances(
    estimand,
    counts,
    smoothing_lambda=0.5,
    smoothing_alpha=0.5,
    fqi_tol=1e-10,
    fqi_iters=10_000,
    occupancy_mode="plugin",
):
    """Estimate all nuisances for ``estimand`` from one training sample (TransitionCounts)."""
    pi_n, _ = fit_behavior_policy(counts, smoothing_lambda=smoothing_lambda)
    k_n = fit_kernel(counts, smoothing_alpha=smoothing_alpha)
    rho0_n = fit_initial_distribution(counts, smoothing_alpha)

    def q_solver(reward, pi, gamma):
        return fitted_q_iteration(counts, reward, pi, gamma, fqi_tol, fqi_iters, k_n)

    def soft_solver(reward):
        return soft_q_iteration(
            counts, reward, estimand.tau_star, estimand.action_set, estimand.gamma, fqi_tol, fqi_iters, k_n
        )

    def occupancy_solver(pi, gamma):
        return fit_occupancy_ratio(counts, pi, pi_n, k_n, rho0_n, gamma, occupancy_mode)

    return complete_nuisances(
        estimand, pi_n, k_n, rho0_n, q_solver=q_solver, soft_solver=soft_solver, occupancy_solver=occupancy_solver
    )
