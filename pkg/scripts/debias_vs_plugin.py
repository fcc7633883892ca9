"""Bias of the one-step estimator against the plug-in under over-smoothed nuisances."""

from _common import base_parser, dump, run_ring2


def main():
    parser = base_parser(__doc__, [4000], 100)
    parser.add_argument("--smoothing-lambda", type=float, default=50.0)
    args = parser.parse_args()
    summaries = run_ring2(args, estimator_config={"smoothing_lambda": args.smoothing_lambda})
    dump(summaries)
    for s in summaries:
        print(f"n={s.n}: one-step bias {s.mean_bias:+.4f}, plug-in bias {s.plugin_bias:+.4f}")


if __name__ == "__main__":
    main()
