"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 too many failed
Monte Carlo replications.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .agent_sim import load_dataset, sample_transitions, save_dataset
from .errors import SolverError, ValidationError
from .estimands import estimand_from_dict, policy_from_json
from .estimators import EstimatorConfig, estimate
from .experiment import ExperimentConfig, failure_exceeded, run_montecarlo
from .fixtures import ring2, ring2_n, random_mdp
from .mdp_core import load_mdp, mdp_to_dict, save_mdp
from .oracle import check_identification, true_eif_and_bound

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_MC_FAILURES = 0, 2, 3, 4


def _json_arg(value):
    """Parse a JSON file path or an inline JSON string."""
    if value is None:
        return None
    if os.path.exists(value):
        with open(value) as fh:
            return json.load(fh)
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        raise ValidationError(f"{value!r} is neither a file nor valid JSON") from None


def _emit(obj, out):
    text = json.dumps(obj, indent=1, default=_to_builtin)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _to_builtin(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _load_mdp_with_reward(path):
    mdp, reward = load_mdp(path)
    if reward is None:
        raise ValidationError(f"{path} has no reward table")
    return mdp, reward


def cmd_gen_mdp(args):
    if args.fixture:
        mdp, reward = {"ring2": ring2, "ring2n": ring2_n}[args.fixture]()
    else:
        rng = np.random.default_rng(args.seed)
        mdp, reward = random_mdp(args.n_states, args.n_actions, args.gamma, rng, args.floor, args.reward_scale)
    if args.out:
        save_mdp(args.out, mdp, reward)
    else:
        print(json.dumps(mdp_to_dict(mdp, reward)))
    return EXIT_OK


def cmd_simulate(args):
    mdp, reward = _load_mdp_with_reward(args.mdp)
    data = sample_transitions(mdp, reward, args.n, args.seed)
    save_dataset(args.out, data)
    return EXIT_OK


def cmd_estimate(args):
    mdp, _ = load_mdp(args.mdp)
    estimand = estimand_from_dict(_json_arg(args.estimand), mdp.n_actions, mdp.n_states)
    cfg = dict(_json_arg(args.config) or {})
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = EstimatorConfig.from_dict(cfg)
    data = load_dataset(args.data, mdp.n_states, mdp.n_actions)
    report = estimate(estimand, data, config, behavior_gamma=mdp.gamma, keep_nuisances=bool(args.dump_nuisances))
    if args.dump_nuisances:
        nuis = report.diagnostics.pop("nuisances")
        with open(args.dump_nuisances, "w") as fh:
            json.dump([n.to_dict() for n in nuis], fh)
    _emit(report.to_dict(), args.out)
    return EXIT_OK


def cmd_oracle_check(args):
    mdp, reward = _load_mdp_with_reward(args.mdp)
    nu = None if args.nu is None else policy_from_json(_json_arg(args.nu), mdp.n_actions, mdp.n_states)
    report = {"identification": check_identification(mdp, reward, nu=nu, seed=args.seed or 0)}
    if args.estimand:
        estimand = estimand_from_dict(_json_arg(args.estimand), mdp.n_actions, mdp.n_states)
        truth = true_eif_and_bound(estimand, mdp, reward)
        report["psi0"] = truth.psi0
        report["sigma0_sq"] = truth.sigma0_sq
    _emit(report, args.out)
    return EXIT_OK


def cmd_montecarlo(args):
    obj = _json_arg(args.config)
    if obj is None:
        raise ValidationError("montecarlo requires --config")
    config = ExperimentConfig.from_dict(obj)
    if args.seed is not None:
        config.base_seed = args.seed
    if args.out:
        config.output_dir = args.out
    summaries, _ = run_montecarlo(config, jobs=args.jobs)
    _emit([asdict(s) for s in summaries], None)
    return EXIT_MC_FAILURES if failure_exceeded(summaries, config.max_failure_fraction) else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="debiased-irl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mdp", help="write a random or reference MDP")
    p.add_argument("--fixture", choices=["ring2", "ring2n"])
    p.add_argument("--n-states", type=int, default=5)
    p.add_argument("--n-actions", type=int, default=3)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--floor", type=float, default=0.01)
    p.add_argument("--reward-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_mdp)

    p = sub.add_parser("simulate", help="sample a transition dataset")
    p.add_argument("--mdp", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="one-step estimate from a dataset")
    p.add_argument("--mdp", required=True, help="MDP JSON supplying table sizes and discount")
    p.add_argument("--data", required=True)
    p.add_argument("--estimand", required=True, help="estimand JSON file or inline JSON")
    p.add_argument("--config", help="estimator config JSON file or inline JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--dump-nuisances", metavar="PATH")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle-check", help="exact identification report")
    p.add_argument("--mdp", required=True)
    p.add_argument("--nu", help='normalizing policy, e.g. \'{"point_mass": 0}\'')
    p.add_argument("--estimand")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("montecarlo", help="run a Monte Carlo study")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
