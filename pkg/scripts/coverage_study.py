"""Wald-interval coverage of the one-step policy-value estimator on RING2."""

from _common import base_parser, dump, run_ring2


def main():
    args = base_parser(__doc__, [4000], 500).parse_args()
    summaries = run_ring2(args)
    dump(summaries)
    for s in summaries:
        print(f"n={s.n}: coverage {s.coverage:.3f}, mean CI width {s.mean_ci_width:.4f}")


if __name__ == "__main__":
    main()
