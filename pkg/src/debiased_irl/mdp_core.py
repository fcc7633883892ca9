"""Exact dynamic-programming primitives for finite discounted MDPs.

Array conventions
-----------------
``kernel[a, s, t]``  probability of moving to ``t`` after action ``a`` in ``s``.
``table[a, s]``      any state-action table (rewards, Q-functions, policies).
``vec[s]``           any state table (values, occupancy ratios, ``rho0``).

Policies are stored as ``pi[a, s]`` so that columns sum to one.
"""

from dataclasses import dataclass
import hashlib
import json

import numpy as np

from .errors import PositivityError, SolverError, ValidationError

EPS_POS = 1e-9
ETA = 1e-9
DIRECT_SOLVE_LIMIT = 4096


@dataclass
class TabularMDP:
    """Finite MDP ``(S, A, k, rho0, gamma)``.

    Parameters
    ----------
    kernel : ndarray, shape (A, S, S)
    rho0 : ndarray, shape (S,)
    gamma : float
    eps_pos : float
        Positivity floor enforced on ``kernel`` and ``rho0``. Estimated
        kernels built without smoothing may pass ``eps_pos=0``.
    """

    kernel: np.ndarray
    rho0: np.ndarray
    gamma: float
    eps_pos: float = EPS_POS

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=float)
        self.rho0 = np.asarray(self.rho0, dtype=float)
        self.gamma = float(self.gamma)
        if self.kernel.ndim != 3 or self.kernel.shape[1] != self.kernel.shape[2]:
            raise ValidationError(f"kernel must have shape (A, S, S), got {self.kernel.shape}")
        if self.rho0.shape != (self.kernel.shape[1],):
            raise ValidationError("rho0 length does not match the number of states")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(self.kernel)) or not np.all(np.isfinite(self.rho0)):
            raise ValidationError("kernel and rho0 must be finite")
        if np.max(np.abs(self.kernel.sum(axis=2) - 1.0)) > 1e-12:
            raise ValidationError("kernel rows must sum to one")
        if abs(self.rho0.sum() - 1.0) > 1e-12:
            raise ValidationError("rho0 must sum to one")
        if self.kernel.min() < self.eps_pos or self.kernel.min() < 0:
            raise PositivityError(f"kernel entry {self.kernel.min():.3g} below floor {self.eps_pos:g}")
        if self.rho0.min() < self.eps_pos or self.rho0.min() < 0:
            raise PositivityError(f"rho0 entry {self.rho0.min():.3g} below floor {self.eps_pos:g}")

    @property
    def n_states(self):
        return self.kernel.shape[1]

    @property
    def n_actions(self):
        return self.kernel.shape[0]

    def fingerprint(self, reward=None):
        """Hex digest identifying the MDP (and optionally a reward table)."""
        h = hashlib.sha256()
        h.update(np.array(self.kernel.shape, dtype="<i8").tobytes())
        h.update(self.kernel.astype("<f8").tobytes())
        h.update(self.rho0.astype("<f8").tobytes())
        h.update(np.array([self.gamma], dtype="<f8").tobytes())
        if reward is not None:
            h.update(np.asarray(reward, dtype="<f8").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------- validation


def check_table(table, mdp, name="table"):
    """Return ``table`` as a float array of shape (A, S) or raise."""
    table = np.asarray(table, dtype=float)
    if table.shape != (mdp.n_actions, mdp.n_states):
        raise ValidationError(f"{name} must have shape {(mdp.n_actions, mdp.n_states)}, got {table.shape}")
    if not np.all(np.isfinite(table)):
        raise ValidationError(f"{name} contains non-finite entries")
    return table


def check_policy(pi, mdp, floor=None, name="policy"):
    """Validate a policy table ``pi[a, s]``.

    Parameters
    ----------
    floor : float, optional
        When given, every entry must be at least ``floor``.
    """
    pi = check_table(pi, mdp, name)
    if pi.min() < 0:
        raise ValidationError(f"{name} has negative entries")
    if np.max(np.abs(pi.sum(axis=0) - 1.0)) > 1e-12:
        raise ValidationError(f"{name} columns must sum to one")
    if floor is not None and pi.min() < floor:
        raise PositivityError(f"{name} entry {pi.min():.3g} below floor {floor:g}")
    return pi


def uniform_policy(n_actions, n_states):
    return np.full((n_actions, n_states), 1.0 / n_actions)


def point_mass_policy(n_actions, n_states, action):
    pi = np.zeros((n_actions, n_states))
    pi[action] = 1.0
    return pi


# ---------------------------------------------------------- linear operators


def expect_next(kernel, v):
    """``(P_k v)(a, s) = sum_t k(t | a, s) v(t)``."""
    return kernel @ v


def policy_average(pi, q):
    """``(pi q)(s) = sum_a pi(a | s) q(a, s)``."""
    return np.einsum("as,as->s", pi, q)


def state_transition(kernel, pi):
    """State-to-state matrix ``K_pi[s, t] = sum_a pi(a|s) k(t|a,s)``."""
    return np.einsum("as,ast->st", pi, kernel)


def _solve_resolvent(mat, b, gamma, tol=1e-12, max_iters=1_000_000):
    """Solve ``(I - gamma * mat) x = b``.

    Dense LU for systems up to ``DIRECT_SOLVE_LIMIT`` unknowns, otherwise a
    damped fixed-point iteration ``x <- (x + b + gamma mat x) / 2``.
    """
    size = mat.shape[0]
    if size <= DIRECT_SOLVE_LIMIT:
        return np.linalg.solve(np.eye(size) - gamma * mat, b)
    x = np.array(b, dtype=float)
    for it in range(max_iters):
        new = 0.5 * (x + b + gamma * (mat @ x))
        change = np.max(np.abs(new - x))
        x = new
        if change <= tol:
            return x
    raise SolverError("resolvent iteration did not converge", residual=change, iterations=max_iters)


def apply_bellman(mdp, pi, gamma, q):
    """Forward operator ``T_{k,pi,gamma} q = q - gamma P_k(pi q)``."""
    q = check_table(q, mdp, "q")
    return q - gamma * expect_next(mdp.kernel, policy_average(pi, q))


def solve_policy_q(mdp, reward, pi, gamma=None):
    """Return ``q`` solving ``T_{k,pi,gamma} q = reward``.

    Parameters
    ----------
    mdp : TabularMDP
    reward : ndarray, shape (A, S)
    pi : ndarray, shape (A, S)
        Evaluation policy; zeros are allowed.
    gamma : float, optional
        Discount factor; defaults to ``mdp.gamma``.

    Returns
    -------
    ndarray, shape (A, S)
    """
    gamma = mdp.gamma if gamma is None else float(gamma)
    if not 0.0 <= gamma < 1.0:
        raise ValidationError(f"gamma must lie in [0, 1), got {gamma}")
    reward = check_table(reward, mdp, "reward")
    pi = check_policy(pi, mdp)
    A, S = reward.shape
    # M[(a,s),(b,t)] = k(t|a,s) pi(b|t)
    mat = np.einsum("ast,bt->asbt", mdp.kernel, pi).reshape(A * S, A * S)
    return _solve_resolvent(mat, reward.ravel(), gamma).reshape(A, S)


def policy_value_of(rho0, pi, q):
    """``E_{rho0}[(pi q)(S)]``."""
    return float(np.dot(rho0, policy_average(pi, q)))


# ------------------------------------------------------------- soft Bellman


@dataclass
class SoftBellmanSolution:
    """Fixed point of the restricted soft Bellman map.

    Attributes
    ----------
    v : ndarray, shape (A, S)
        Continuation ``v(a, s) = (P_k Phi)(a, s)``.
    V : ndarray, shape (S,)
        Soft value ``Phi(s) = tau logsumexp_{a in A*}((r + gamma v)(a, s) / tau)``.
    pi : ndarray, shape (A, S)
        Softmax policy, zero outside the action set.
    residual : float
        Sup-norm of ``v - P_k Phi(v)`` at the returned iterate.
    iterations : int
    residual_history : ndarray
        Successive sup-norm changes, one per iteration.
    """

    v: np.ndarray
    V: np.ndarray
    pi: np.ndarray
    residual: float
    iterations: int
    residual_history: np.ndarray


def action_mask(action_set, n_actions):
    """Boolean mask of shape (A,) for an action subset (``None`` means all)."""
    if action_set is None:
        return np.ones(n_actions, dtype=bool)
    idx = np.asarray(sorted(set(int(a) for a in action_set)), dtype=int)
    if idx.size == 0:
        raise ValidationError("action_set must be non-empty")
    if idx.min() < 0 or idx.max() >= n_actions:
        raise ValidationError(f"action_set {list(idx)} out of range for {n_actions} actions")
    mask = np.zeros(n_actions, dtype=bool)
    mask[idx] = True
    return mask


def soft_max_value(z, tau, mask):
    """Masked ``tau * logsumexp(z / tau)`` over actions and the softmax policy.

    Parameters
    ----------
    z : ndarray, shape (A, S)
    tau : float
    mask : ndarray of bool, shape (A,)

    Returns
    -------
    phi : ndarray, shape (S,)
    pi : ndarray, shape (A, S)
    """
    x = np.where(mask[:, None], z / tau, -np.inf)
    top = x.max(axis=0)
    w = np.exp(x - top)
    total = w.sum(axis=0)
    return tau * (top + np.log(total)), w / total


def solve_soft_bellman(mdp, reward, tau=1.0, action_set=None, gamma=None, tol=1e-12, max_iters=200_000):
    """Solve ``v = P_k Phi`` with ``Phi = tau logsumexp_{A*}((r + gamma v) / tau)``.

    Raises
    ------
    SolverError
        If the sup-norm change does not fall below ``tol`` within ``max_iters``.
    """
    gamma = mdp.gamma if gamma is None else float(gamma)
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    reward = check_table(reward, mdp, "reward")
    mask = action_mask(action_set, mdp.n_actions)
    v = np.zeros_like(reward)
    history = []
    change = np.inf
    for it in range(1, max_iters + 1):
        phi, _ = soft_max_value(reward + gamma * v, tau, mask)
        new = expect_next(mdp.kernel, phi)
        change = float(np.max(np.abs(new - v)))
        history.append(change)
        v = new
        if change <= tol:
            break
    else:
        raise SolverError(
            f"soft Bellman iteration stalled at residual {change:.3g}", residual=change, iterations=max_iters
        )
    phi, pi = soft_max_value(reward + gamma * v, tau, mask)
    residual = float(np.max(np.abs(v - expect_next(mdp.kernel, phi))))
    return SoftBellmanSolution(v, phi, pi, residual, it, np.asarray(history))


# ------------------------------------------------------------------ rewards


def log_policy_reward(pi_b, eta=ETA):
    """Pseudo-reward ``r0 = log pi_b``; entries below ``eta`` raise."""
    pi_b = np.asarray(pi_b, dtype=float)
    if pi_b.min() < eta:
        raise PositivityError(f"behavior policy entry {pi_b.min():.3g} below floor {eta:g}")
    return np.log(pi_b)


def shape_reward(mdp, reward, c, gamma=None):
    """Potential shaping ``r + c(s) - gamma sum_t c(t) k(t | a, s)``."""
    gamma = mdp.gamma if gamma is None else gamma
    reward = check_table(reward, mdp, "reward")
    c = np.asarray(c, dtype=float)
    return reward + c[None, :] - gamma * expect_next(mdp.kernel, c)


def normalized_reward(mdp, r0, nu, gamma=None):
    """Reward normalized so that ``nu``-averaged soft values vanish.

    Returns
    -------
    r_nu : ndarray, shape (A, S)
        ``q - nu q`` where ``q`` solves ``T_{k,nu,gamma} q = r0``.
    v_nu : ndarray, shape (A, S)
        Continuation ``(r0 - q) / gamma`` (zero when ``gamma == 0``).
    """
    gamma = mdp.gamma if gamma is None else gamma
    q = solve_policy_q(mdp, r0, nu, gamma)
    r_nu = q - policy_average(nu, q)[None, :]
    v_nu = np.zeros_like(q) if gamma == 0 else (r0 - q) / gamma
    return r_nu, v_nu


@dataclass
class AffineAnchor:
    """Anchor ``f + (I - nu) T_nu^{-1}(r0 - f)``."""

    nu: np.ndarray
    f: np.ndarray


@dataclass
class ValueAnchor:
    """Anchor ``r0 + (I - gamma P_k)(g - V^pi_{r0})``."""

    pi: np.ndarray
    g: np.ndarray


def anchored_reward(mdp, r0, mode, gamma=None):
    """Reward identified under an anchoring constraint."""
    gamma = mdp.gamma if gamma is None else gamma
    r0 = check_table(r0, mdp, "r0")
    if isinstance(mode, AffineAnchor):
        f = check_table(mode.f, mdp, "f")
        q = solve_policy_q(mdp, r0 - f, mode.nu, gamma)
        return f + q - policy_average(mode.nu, q)[None, :]
    if isinstance(mode, ValueAnchor):
        q = solve_policy_q(mdp, r0, mode.pi, gamma)
        h = np.asarray(mode.g, dtype=float) - policy_average(mode.pi, q)
        return r0 + h[None, :] - gamma * expect_next(mdp.kernel, h)
    raise ValidationError(f"unknown anchor mode {mode!r}")


# -------------------------------------------------------------- occupancies


@dataclass
class OccupancyTables:
    """Discounted occupancy ratios.

    Attributes
    ----------
    rho : ndarray, shape (S,)
        State occupancy divided by ``rho0``; ``E_{rho0}[rho] = 1 / (1 - gamma)``.
    d : ndarray, shape (A, S)
        ``rho * pi / pi_b``.
    rho_cond : ndarray, shape (A, S, S), optional
        Conditional ratio ``rho(t | a, s)``.
    rho_tilde : ndarray, shape (S,), optional
        Advantage-weighted ratio.
    """

    rho: np.ndarray
    d: np.ndarray
    rho_cond: np.ndarray = None
    rho_tilde: np.ndarray = None


def state_occupancy(mdp, pi, gamma=None, rho0=None):
    """Unnormalized discounted occupancy ``m = rho0 + gamma K_pi^T m``."""
    gamma = mdp.gamma if gamma is None else gamma
    rho0 = mdp.rho0 if rho0 is None else rho0
    return _solve_resolvent(state_transition(mdp.kernel, pi).T, rho0, gamma)


def occupancy_ratios(mdp, pi, pi_b, gamma=None):
    """State and state-action occupancy ratios of ``pi`` relative to ``(rho0, pi_b)``."""
    pi = check_policy(pi, mdp)
    pi_b = np.asarray(pi_b, dtype=float)
    if pi_b.min() <= 0:
        raise PositivityError("behavior policy must be strictly positive")
    rho = state_occupancy(mdp, pi, gamma) / mdp.rho0
    return OccupancyTables(rho=rho, d=rho[None, :] * pi / pi_b)


def conditional_occupancy(mdp, pi, gamma=None):
    """Ratio ``rho(t | a, s)`` of the occupancy started at ``(a, s)`` then following ``pi``.

    ``m(. | a, s) = delta_s + gamma sum_u k(u | a, s) m_pi(. | u)`` and the
    ratio divides by ``rho0(t)``. Returns an array of shape (A, S, S).
    """
    gamma = mdp.gamma if gamma is None else gamma
    pi = check_policy(pi, mdp)
    S = mdp.n_states
    resolvent = _solve_resolvent(state_transition(mdp.kernel, pi), np.eye(S), gamma)
    m = np.eye(S)[None] + gamma * np.einsum("asu,ut->ast", mdp.kernel, resolvent)
    return m / mdp.rho0[None, None, :]


def advantage_weighted_occupancy(mdp, pi0, d_star, q_star, V_star, rho_cond):
    """``rho_tilde(t) = E_{S~rho0, A~pi0}[d*(A,S) (q* - V*)(A,S) rho(t | A, S)]``."""
    w = mdp.rho0[None, :] * pi0 * d_star * (q_star - V_star[None, :])
    return np.einsum("as,ast->t", w, rho_cond)


# -------------------------------------------------------------------- I/O


def mdp_to_dict(mdp, reward=None):
    out = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "kernel": mdp.kernel.tolist(),
        "rho0": mdp.rho0.tolist(),
    }
    if reward is not None:
        out["reward"] = np.asarray(reward, dtype=float).tolist()
    return out


def mdp_from_dict(obj):
    """Parse an MDP mapping; returns ``(mdp, reward_or_None)``."""
    try:
        kernel = np.array(obj["kernel"], dtype=float)
        rho0 = np.array(obj["rho0"], dtype=float)
        gamma = float(obj["gamma"])
    except KeyError as exc:
        raise ValidationError(f"MDP description missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"malformed MDP description: {exc}") from None
    mdp = TabularMDP(kernel, rho0, gamma)
    if obj.get("n_states", mdp.n_states) != mdp.n_states or obj.get("n_actions", mdp.n_actions) != mdp.n_actions:
        raise ValidationError("declared sizes disagree with kernel shape")
    reward = obj.get("reward")
    if reward is not None:
        reward = check_table(reward, mdp, "reward")
    return mdp, reward


def save_mdp(path, mdp, reward=None):
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(mdp, reward), fh, indent=1)


def load_mdp(path):
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))
