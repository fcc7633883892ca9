"""Shared helpers for the experiment scripts."""

import argparse
import json
from dataclasses import asdict

from debiased_irl.experiment import ExperimentConfig, run_montecarlo
from debiased_irl.fixtures import ring2
from debiased_irl.mdp_core import mdp_to_dict

POLICY_VALUE = {"kind": "PolicyValue", "pi": "uniform", "gamma": 0.9}


def base_parser(description, n_grid, reps):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--n-grid", type=int, nargs="+", default=n_grid)
    p.add_argument("--reps", type=int, default=reps)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="directory for reps.csv and summary.json")
    return p


def run_ring2(args, estimand=POLICY_VALUE, estimator_config=None):
    mdp, reward = ring2()
    config = ExperimentConfig(
        mdp_path=mdp_to_dict(mdp, reward),
        estimand=estimand,
        n_grid=args.n_grid,
        reps=args.reps,
        base_seed=args.seed,
        estimator_config=estimator_config or {},
        output_dir=args.out,
    )
    summaries, _ = run_montecarlo(config, jobs=args.jobs)
    return summaries


def dump(summaries):
    print(json.dumps([asdict(s) for s in summaries], indent=1))
