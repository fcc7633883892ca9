"""Simulation of a soft-optimal agent and transition datasets.

Random numbers come from ``numpy.random.Generator(PCG64(SeedSequence(seed)))``.
A dataset of ``n`` records consumes one block of ``3 * n`` uniforms drawn in
record order: columns are (initial state, action, next state). Categorical
draws use inverse-CDF lookup on cumulative sums in index order, so the same
``(mdp, reward, n, seed)`` always yields identical records.
"""

from dataclasses import dataclass
import csv
import json
import os

import numpy as np

from .errors import ValidationError
from .mdp_core import check_table, log_policy_reward, solve_soft_bellman

U_MIN = 2.0**-53
U_MAX = 1.0 - 2.0**-53


def make_rng(seed):
    """PCG64 generator seeded through ``SeedSequence``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


@dataclass
class TransitionDataset:
    """i.i.d. records ``(S, A, S')``.

    Attributes
    ----------
    s, a, s_next : ndarray of int, shape (n,)
    seed : int or None
    mdp_fingerprint : str or None
    n_states, n_actions : int or None
        Table sizes, carried when known.
    """

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    seed: int = None
    mdp_fingerprint: str = None
    n_states: int = None
    n_actions: int = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        if not (self.s.shape == self.a.shape == self.s_next.shape) or self.s.ndim != 1:
            raise ValidationError("record columns must be 1-d and of equal length")

    @property
    def n(self):
        return self.s.size

    @property
    def records(self):
        return np.column_stack([self.s, self.a, self.s_next])

    def subset(self, idx):
        return TransitionDataset(
            self.s[idx], self.a[idx], self.s_next[idx], self.seed, self.mdp_fingerprint, self.n_states, self.n_actions
        )


def _inverse_cdf(cdf, u):
    """Index of the first cumulative weight exceeding ``u`` along the last axis."""
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def behavior_policy(mdp, true_reward):
    """Soft-optimal policy ``pi0`` of ``true_reward`` at temperature one."""
    return solve_soft_bellman(mdp, true_reward).pi


def sample_transitions(mdp, true_reward, n, seed):
    """Draw ``n`` records with ``S ~ rho0``, ``A ~ pi0(.|S)``, ``S' ~ k(.|A,S)``."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    true_reward = check_table(true_reward, mdp, "true_reward")
    pi0 = behavior_policy(mdp, true_reward)
    log_policy_reward(pi0)  # positivity check
    u = make_rng(seed).random((n, 3))
    s = _inverse_cdf(np.cumsum(mdp.rho0), u[:, 0])
    a = _inverse_cdf(np.cumsum(pi0, axis=0).T[s], u[:, 1])
    s_next = _inverse_cdf(np.cumsum(mdp.kernel, axis=2)[a, s], u[:, 2])
    return TransitionDataset(s, a, s_next, int(seed), mdp.fingerprint(true_reward), mdp.n_states, mdp.n_actions)


def gumbel_action_frequencies(q_total, state, n_draws, seed):
    """Empirical action frequencies of ``argmax_a q_total(a, state) + eps_a``.

    ``eps_a = -log(-log U)`` with ``U`` clamped to ``[2**-53, 1 - 2**-53]``.
    """
    q = np.asarray(q_total, dtype=float)[:, state]
    u = np.clip(make_rng(seed).random((n_draws, q.size)), U_MIN, U_MAX)
    choice = np.argmax(q[None, :] - np.log(-np.log(u)), axis=1)
    return np.bincount(choice, minlength=q.size) / n_draws


# -------------------------------------------------------------------- I/O


def sidecar_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".json"


def save_dataset(path, data):
    """Write ``s,a,s_next`` CSV plus a JSON sidecar with provenance fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "a", "s_next"])
        w.writerows(data.records.tolist())
    with open(sidecar_path(path), "w") as fh:
        json.dump({"n": data.n, "seed": data.seed, "mdp_fingerprint": data.mdp_fingerprint}, fh)


def load_dataset(path, n_states=None, n_actions=None):
    """Read a dataset CSV (and its sidecar when present)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["s", "a", "s_next"]:
            raise ValidationError(f"dataset header must be s,a,s_next, got {header}")
        try:
            rows = np.array([[int(x) for x in row] for row in reader if row], dtype=np.int64).reshape(-1, 3)
        except ValueError as exc:
            raise ValidationError(f"malformed dataset row: {exc}") from None
    meta = {}
    if os.path.exists(sidecar_path(path)):
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
        if meta.get("n") not in (None, len(rows)):
            raise ValidationError("sidecar record count disagrees with CSV")
    data = TransitionDataset(
        rows[:, 0], rows[:, 1], rows[:, 2], meta.get("seed"), meta.get("mdp_fingerprint"), n_states, n_actions
    )
    check_dataset(data, n_states, n_actions)
    return data


def check_dataset(data, n_states, n_actions):
    """Raise if any index is out of range."""
    if data.n == 0:
        raise ValidationError("dataset is empty")
    if n_states is not None and (min(data.s.min(), data.s_next.min()) < 0 or max(data.s.max(), data.s_next.max()) >= n_states):
        raise ValidationError("state index out of range")
    if n_actions is not None and (data.a.min() < 0 or data.a.max() >= n_actions):
        raise ValidationError("action index out of range")
