"""Cross-fitted one-step estimators and Wald intervals.

Every estimand's correction has the representer form

    alpha(A, S) - sum_a pi_n(a|S) alpha(a, S) + beta(S, A, S'),

evaluated with nuisances fit on the complementary folds.
"""

from dataclasses import asdict, dataclass, field, fields
from statistics import NormalDist

import numpy as np

from .errors import MissingNuisanceError, SolverError, ValidationError
from .estimands import NormalizedPolicyValue, PolicyValue, SoftmaxValue, validate_estimand
from .mdp_core import policy_average, state_transition
from .nuisance import TransitionCounts, cross_fit, fit_nuisances, softmax_tables


@dataclass
class EstimatorConfig:
    """Estimator settings.

    Attributes
    ----------
    K : int
        Number of cross-fitting folds (at least 2).
    level : float
        Confidence level of the Wald interval.
    smoothing_lambda : float
        Additive smoothing of the behavior-policy estimate.
    smoothing_alpha : float
        Additive smoothing of the kernel and initial-state estimates.
    fqi_tol, fqi_iters
        Stopping rule for fitted Q-iteration.
    occupancy_mode : {"plugin", "quadratic_loss"}
    ratio_cap : float or None
        Upper clip for policy ratios ``pi / pi_n``.
    seed : int
        Seed of the fold assignment.
    """

    K: int = 2
    level: float = 0.95
    smoothing_lambda: float = 0.5
    smoothing_alpha: float = 0.5
    fqi_tol: float = 1e-10
    fqi_iters: int = 10_000
    occupancy_mode: str = "plugin"
    ratio_cap: float = None
    seed: int = 0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise ValidationError(f"K must be an integer of at least 2, got {self.K}")
        if not 0.0 < self.level < 1.0:
            raise ValidationError(f"level must lie in (0, 1), got {self.level}")
        if self.smoothing_lambda < 0 or self.smoothing_alpha < 0:
            raise ValidationError("smoothing parameters must be non-negative")
        if self.occupancy_mode not in ("plugin", "quadratic_loss"):
            raise ValidationError(f"unknown occupancy_mode {self.occupancy_mode!r}")
        if self.ratio_cap is not None and self.ratio_cap <= 0:
            raise ValidationError("ratio_cap must be positive")

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ValidationError(f"unknown estimator config fields {sorted(extra)}")
        return cls(**obj)

    def to_dict(self):
        return asdict(self)


@dataclass
class EstimateReport:
    psi_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    level: float
    n: int
    plugin_psi: float
    per_fold: list
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _get(table_map, key):
    try:
        return table_map[key]
    except KeyError:
        raise MissingNuisanceError(f"nuisance table {key!r} is missing") from None


def _ratio(num, den, cap):
    w = num / den
    return w if cap is None else np.minimum(w, cap)


def representer_correction(alpha, beta, s, a, pi_n):
    """``alpha(A,S) - (pi_n alpha)(S) + beta`` evaluated at the records."""
    return alpha[a, s] - policy_average(pi_n, alpha)[s] + beta


def normalization_adjoint(w, pi_b, kernel, rho0, nu, gamma):
    """Adjoint of ``f -> (I - nu) T_{k,nu,gamma}^{-1} f`` in ``L2(rho0 x pi_b)``.

    For any table ``f``, ``E[w (I - nu) T^{-1} f] = E[adjoint(w) f]``.
    """
    x = w - nu / pi_b * policy_average(pi_b, w)[None, :]
    push = np.einsum("as,ast->t", rho0[None, :] * pi_b * x, kernel)
    K_nu = state_transition(kernel, nu)
    eta = gamma * np.linalg.solve(np.eye(push.size) - gamma * K_nu.T, push) / rho0
    return x + nu / pi_b * eta[None, :]


def riesz_transform_for_normalization(alpha_tilde, beta_tilde, s, a, s_next, nuis, nu, gamma):
    """Lift known-reward representers to the normalized-reward problem.

    The reward representer is the adjoint, in ``L2(rho0 x pi0)``, of
    ``f -> (I - nu) T_{k,nu,gamma}^{-1} f`` applied to ``alpha_tilde``:
    first the centering ``x = alpha_tilde - (nu / pi0) sum_a pi0 alpha_tilde``,
    then the adjoint resolvent, which adds ``(nu / pi0) eta(s)`` where ``eta``
    is the discounted ``nu``-occupancy of the one-step push-forward of
    ``rho0 pi0 x``, divided by ``rho0``.

    Parameters
    ----------
    alpha_tilde : ndarray, shape (A, S)
    beta_tilde : ndarray, shape (n,)
        ``beta_tilde / k`` evaluated at each record.
    nuis : NuisanceSet
        Supplies ``pi_n``, ``k_n``, ``rho0_n``, ``r_n`` and ``q["q_nu_gamma"]``.

    Returns
    -------
    alpha : ndarray, shape (A, S)
    beta : ndarray, shape (n,)
        ``beta_tilde + alpha(A,S) (r_n(A,S) + gamma V_nu(S') - q_nu(A,S))``.
    """
    q_nu = _get(nuis.q, "q_nu_gamma")
    V_nu = policy_average(nu, q_nu)
    alpha = normalization_adjoint(alpha_tilde, nuis.pi_n, nuis.k_n, nuis.rho0_n, nu, gamma)
    beta = beta_tilde + alpha[a, s] * (nuis.r_n[a, s] + gamma * V_nu[s_next] - q_nu[a, s])
    return alpha, beta


def contribution_terms(estimand, s, a, s_next, nuis, ratio_cap=None):
    """Plug-in term ``m`` and correction per record.

    Returns
    -------
    m, corr : ndarray, shape (n,)
    """
    s, a, s_next = (np.asarray(x, dtype=np.int64) for x in (s, a, s_next))
    r, pi_n = nuis.r_n, nuis.pi_n
    g = estimand.gamma
    if isinstance(estimand, PolicyValue):
        q = _get(nuis.q, "q_pi_gamma")
        V = policy_average(estimand.pi, q)
        rho = _get(nuis.occupancy, "pi_gamma").rho
        alpha = rho[None, :] * _ratio(estimand.pi, pi_n, ratio_cap)
        beta = alpha[a, s] * (r[a, s] + g * V[s_next] - q[a, s])
        return V[s], representer_correction(alpha, beta, s, a, pi_n)
    if isinstance(estimand, SoftmaxValue):
        tau = estimand.tau_star
        v = _get(nuis.q, "v_star")
        q = _get(nuis.q, "q_star")
        occ = _get(nuis.occupancy, "star")
        if occ.rho_tilde is None:
            raise MissingNuisanceError("nuisance table 'rho_tilde' is missing")
        phi, pi_star = softmax_tables(r, v, estimand, g)
        V = policy_average(pi_star, q)
        w = _ratio(pi_star, pi_n, ratio_cap)
        d = occ.rho[None, :] * w
        d_adv = d * (q - V[None, :])
        alpha = (occ.rho_tilde / tau + occ.rho)[None, :] * w + d_adv / tau
        beta = (g / tau) * (occ.rho_tilde[s] * w[a, s] + d_adv[a, s]) * (phi[s_next] - v[a, s]) + d[a, s] * (
            r[a, s] + g * V[s_next] - q[a, s]
        )
        return V[s], representer_correction(alpha, beta, s, a, pi_n)
    if isinstance(estimand, NormalizedPolicyValue):
        gp = estimand.gamma_prime
        q_nu = _get(nuis.q, "q_nu_gamma")
        r_nu = q_nu - policy_average(estimand.nu, q_nu)[None, :]
        q = _get(nuis.q, "q_pi_prime_nu")
        V = policy_average(estimand.pi, q)
        rho = _get(nuis.occupancy, "pi_gamma_prime").rho
        alpha_t = rho[None, :] * _ratio(estimand.pi, pi_n, ratio_cap)
        beta_t = alpha_t[a, s] * (r_nu[a, s] + gp * V[s_next] - q[a, s])
        alpha, beta = riesz_transform_for_normalization(alpha_t, beta_t, s, a, s_next, nuis, estimand.nu, g)
        return V[s], representer_correction(alpha, beta, s, a, pi_n)
    raise ValidationError(f"unknown estimand {estimand!r}")


def eif_contribution(estimand, record, nuis, ratio_cap=None):
    """Uncentered contribution ``m + correction`` of one record ``(s, a, s_next)``."""
    s, a, s_next = record
    m, c = contribution_terms(estimand, [s], [a], [s_next], nuis, ratio_cap)
    return float(m[0] + c[0])


def one_step_combine(m_values, corrections):
    """``mean(m) + mean(corrections)``."""
    m_values = np.asarray(m_values, dtype=float)
    corrections = np.asarray(corrections, dtype=float)
    if m_values.size == 0 or m_values.shape != corrections.shape:
        raise ValidationError("m_values and corrections must be non-empty and aligned")
    return float(np.mean(m_values) + np.mean(corrections))


def plugin_estimate(estimand, data, nuis):
    """Average of ``m`` over the records of ``data``."""
    m, _ = contribution_terms(estimand, data.s, data.a, data.s_next, nuis)
    return float(np.mean(m))


def normal_quantile(p):
    """Standard normal quantile (Wichura's AS241 rational approximation)."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"probability must lie in (0, 1), got {p}")
    return NormalDist().inv_cdf(p)


def confidence_interval(contributions, psi_hat, level=0.95):
    """Wald interval from uncentered per-record contributions.

    Returns
    -------
    low, high, std_error : float
        ``std_error = sd(contributions) / sqrt(n)`` with the ``n - 1`` divisor.
    """
    contributions = np.asarray(contributions, dtype=float)
    if contributions.size < 2:
        raise ValidationError("at least two contributions are required")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    se = float(np.std(contributions, ddof=1) / np.sqrt(contributions.size))
    z = normal_quantile(0.5 + level / 2.0)
    return psi_hat - z * se, psi_hat + z * se, se


def estimate(estimand, data, config=None, n_states=None, n_actions=None, behavior_gamma=None, keep_nuisances=False):
    """Cross-fitted one-step estimate with a Wald interval.

    Parameters
    ----------
    estimand : PolicyValue, SoftmaxValue or NormalizedPolicyValue
    data : TransitionDataset
    config : EstimatorConfig, optional
    n_states, n_actions : int, optional
        Table sizes; default to those carried by ``data``.
    behavior_gamma : float, optional
        Discount generating the data, checked against the estimand.
    keep_nuisances : bool
        Store each fold's NuisanceSet under ``diagnostics["nuisances"]``.

    Returns
    -------
    EstimateReport
    """
    config = EstimatorConfig() if config is None else config
    n_states = data.n_states if n_states is None else n_states
    n_actions = data.n_actions if n_actions is None else n_actions
    if n_states is None or n_actions is None:
        raise ValidationError("table sizes are required")
    validate_estimand(estimand, n_states, n_actions, behavior_gamma)
    if data.n < 2 * config.K:
        raise ValidationError(f"need at least 2K = {2 * config.K} records, got {data.n}")
    plan = cross_fit(data, config.K, config.seed)
    m_all = np.empty(data.n)
    c_all = np.empty(data.n)
    per_fold, kept, fallbacks, tilde_range = [], [], [], []
    max_ratio = 0.0
    for j, idx in enumerate(plan.folds):
        train = data.subset(plan.train_index(j))
        counts = TransitionCounts.from_data(train, n_states, n_actions)
        try:
            nuis = fit_nuisances(
                estimand,
                counts,
                config.smoothing_lambda,
                config.smoothing_alpha,
                config.fqi_tol,
                config.fqi_iters,
                config.occupancy_mode,
            )
        except SolverError as exc:
            raise SolverError(f"fold {j}, nuisance fitting: {exc}", exc.residual, exc.iterations) from exc
        except ValidationError as exc:
            raise type(exc)(f"fold {j}, nuisance fitting: {exc}") from exc
        nuis.fold_id = j
        m, c = contribution_terms(estimand, data.s[idx], data.a[idx], data.s_next[idx], nuis, config.ratio_cap)
        m_all[idx], c_all[idx] = m, c
        per_fold.append({"fold_id": j, "n_fold": int(idx.size), "psi_fold": one_step_combine(m, c), "plugin_fold": float(m.mean())})
        fallbacks.append(nuis.flags.get("occupancy_fallback", False))
        occ = next(iter(nuis.occupancy.values()))
        max_ratio = max(max_ratio, float(np.max(occ.d)))
        if occ.rho_tilde is not None:
            tilde_range.append([float(occ.rho_tilde.min()), float(occ.rho_tilde.max())])
        if keep_nuisances:
            kept.append(nuis)
    psi_hat = one_step_combine(m_all, c_all)
    lo, hi, std_error = confidence_interval(m_all + c_all, psi_hat, config.level)
    diagnostics = {
        "occupancy_fallback": fallbacks,
        "max_state_action_ratio": max_ratio,
        "smoothing_lambda": config.smoothing_lambda,
        "smoothing_alpha": config.smoothing_alpha,
        "ratio_cap": config.ratio_cap,
        "fold_seed": config.seed,
    }
    if tilde_range:
        diagnostics["rho_tilde_range"] = tilde_range
    if keep_nuisances:
        diagnostics["nuisances"] = kept
    return EstimateReport(psi_hat, std_error, lo, hi, config.level, data.n, float(m_all.mean()), per_fold, diagnostics)
