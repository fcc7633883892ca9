"""RMSE across sample sizes; successive ratios near 2 per fourfold n indicate root-n rates."""

from _common import base_parser, dump, run_ring2


def main():
    args = base_parser(__doc__, [1000, 4000, 16000], 300).parse_args()
    summaries = run_ring2(args)
    dump(summaries)
    for a, b in zip(summaries, summaries[1:]):
        print(f"RMSE({a.n})/RMSE({b.n}) = {a.rmse / b.rmse:.3f}")


if __name__ == "__main__":
    main()
