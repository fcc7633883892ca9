"""Ratio of n Var(psi_hat) to the efficiency bound on RING2."""

from _common import base_parser, dump, run_ring2


def main():
    args = base_parser(__doc__, [16000], 300).parse_args()
    summaries = run_ring2(args)
    dump(summaries)
    for s in summaries:
        print(f"n={s.n}: n Var / sigma0^2 = {s.n_var_ratio:.3f} (sigma0^2 = {s.sigma0_sq:.4f})")


if __name__ == "__main__":
    main()
