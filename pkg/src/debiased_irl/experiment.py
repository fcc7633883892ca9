"""Monte Carlo studies of estimator coverage, bias and efficiency."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import hashlib
import json
import os

import numpy as np

from .agent_sim import sample_transitions
from .errors import SolverError, ValidationError
from .estimands import estimand_from_dict
from .estimators import EstimatorConfig, estimate
from .mdp_core import load_mdp, mdp_from_dict
from .oracle import true_eif_and_bound

REP_FIELDS = ["n", "rep", "seed", "psi_hat", "std_error", "ci_low", "ci_high", "covered", "plugin_psi"]


@dataclass
class ExperimentConfig:
    """Monte Carlo design.

    Attributes
    ----------
    mdp_path : str or dict
        Path to an MDP JSON file (with a ``reward`` field) or its parsed form.
    estimand : dict
        Estimand JSON mapping.
    n_grid : list of int
    reps : int
    base_seed : int
    estimator_config : dict
        EstimatorConfig fields; ``seed`` is overridden per replication.
    output_dir : str or None
    max_failure_fraction : float
        Largest tolerated share of failed replications per sample size.
    """

    mdp_path: object
    estimand: dict
    n_grid: list
    reps: int
    base_seed: int = 0
    estimator_config: dict = field(default_factory=dict)
    output_dir: str = None
    max_failure_fraction: float = 0.0

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError("reps must be at least 1")
        grid = [int(n) for n in self.n_grid]
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("n_grid must be non-empty and increasing")
        self.n_grid = grid

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ValidationError(f"bad experiment config: {exc}") from None

    def load_problem(self):
        """Return ``(mdp, reward, estimand, estimator_config)``."""
        mdp, reward = load_mdp(self.mdp_path) if isinstance(self.mdp_path, str) else mdp_from_dict(self.mdp_path)
        if reward is None:
            raise ValidationError("the experiment MDP must include a reward table")
        est = estimand_from_dict(self.estimand, mdp.n_actions, mdp.n_states)
        return mdp, reward, est, EstimatorConfig.from_dict(dict(self.estimator_config))


@dataclass
class ExperimentSummary:
    n: int
    reps: int
    failures: int
    psi0: float
    sigma0_sq: float
    coverage: float
    mean_bias: float
    rmse: float
    variance: float
    mean_ci_width: float
    n_var_ratio: float
    plugin_bias: float
    plugin_rmse: float
    rep_records: str = None


def rep_seed(base_seed, n, rep):
    """``base_seed XOR h(n, rep)`` with ``h`` the first 8 bytes of SHA-256."""
    digest = hashlib.sha256(f"{int(n)}:{int(rep)}".encode()).digest()
    return (int(base_seed) ^ int.from_bytes(digest[:8], "little")) & (2**64 - 1)


def run_replication(mdp, reward, estimand, est_config, n, rep, base_seed, psi0):
    """One simulated dataset and its estimate, as a CSV row mapping."""
    seed = rep_seed(base_seed, n, rep)
    data = sample_transitions(mdp, reward, n, seed)
    cfg = EstimatorConfig(**{**est_config.to_dict(), "seed": seed})
    rep_out = estimate(estimand, data, cfg, behavior_gamma=mdp.gamma)
    return {
        "n": n,
        "rep": rep,
        "seed": seed,
        "psi_hat": rep_out.psi_hat,
        "std_error": rep_out.std_error,
        "ci_low": rep_out.ci_low,
        "ci_high": rep_out.ci_high,
        "covered": int(rep_out.ci_low <= psi0 <= rep_out.ci_high),
        "plugin_psi": rep_out.plugin_psi,
    }


def _worker(args):
    try:
        return run_replication(*args)
    except (SolverError, ValidationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        n, rep, base_seed = args[4], args[5], args[6]
        return {"n": n, "rep": rep, "seed": rep_seed(base_seed, n, rep), "error": f"{type(exc).__name__}: {exc}"}


def summarize(rows, n, psi0, sigma0_sq):
    """Aggregate successful replications at sample size ``n``.

    ``variance`` uses the population convention so ``rmse**2 = bias**2 + variance``;
    ``n_var_ratio`` uses the unbiased sample variance.
    """
    ok = [r for r in rows if r["n"] == n and "error" not in r]
    failed = sum(1 for r in rows if r["n"] == n and "error" in r)
    if not ok:
        nan = float("nan")
        return ExperimentSummary(n, 0, failed, psi0, sigma0_sq, nan, nan, nan, nan, nan, nan, nan, nan)
    psi = np.array([r["psi_hat"] for r in ok])
    plug = np.array([r["plugin_psi"] for r in ok])
    err = psi - psi0
    var_unbiased = float(np.var(psi, ddof=1)) if psi.size > 1 else float("nan")
    return ExperimentSummary(
        n=n,
        reps=len(ok),
        failures=failed,
        psi0=psi0,
        sigma0_sq=sigma0_sq,
        coverage=float(np.mean([r["covered"] for r in ok])),
        mean_bias=float(err.mean()),
        rmse=float(np.sqrt(np.mean(err**2))),
        variance=float(np.var(psi)),
        mean_ci_width=float(np.mean([r["ci_high"] - r["ci_low"] for r in ok])),
        n_var_ratio=n * var_unbiased / sigma0_sq if sigma0_sq > 0 else float("nan"),
        plugin_bias=float(plug.mean() - psi0),
        plugin_rmse=float(np.sqrt(np.mean((plug - psi0) ** 2))),
    )


def run_montecarlo(config, jobs=1):
    """Run every (n, rep) cell; results do not depend on ``jobs``.

    Returns
    -------
    summaries : list of ExperimentSummary
    rows : list of dict
        Per-replication records sorted by ``(n, rep)``; failed ones carry ``"error"``.
    """
    mdp, reward, estimand, est_config = config.load_problem()
    truth = true_eif_and_bound(estimand, mdp, reward)
    tasks = [
        (mdp, reward, estimand, est_config, int(n), rep, config.base_seed, truth.psi0)
        for n in config.n_grid
        for rep in range(config.reps)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        rows = [_worker(t) for t in tasks]
    rows.sort(key=lambda r: (r["n"], r["rep"]))
    summaries = [summarize(rows, int(n), truth.psi0, truth.sigma0_sq) for n in config.n_grid]
    if config.output_dir:
        for s in summaries:
            s.rep_records = os.path.join(config.output_dir, "reps.csv")
        write_outputs(config.output_dir, rows, summaries)
    return summaries, rows


def write_outputs(output_dir, rows, summaries):
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "reps.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REP_FIELDS)
        for r in rows:
            if "error" not in r:
                w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in REP_FIELDS])
    failures = [r for r in rows if "error" in r]
    with open(os.path.join(output_dir, "summary.json"), "w") as fh:
        json.dump({"summaries": [asdict(s) for s in summaries], "failures": failures}, fh, indent=1)


def failure_exceeded(summaries, max_fraction):
    """True when any sample size lost more than ``max_fraction`` of its replications."""
    for s in summaries:
        total = s.reps + s.failures
        if total and s.failures / total > max_fraction:
            return True
    return False
