"""Numerical check of the two limits the averaging argument needs.

For a controller of index m, cos^(2m+1) of the phase splits into harmonics
cos((2m+1-2l) omega t).  Each scaled harmonic h must have a running integral H
that vanishes as omega grows, and each product h H must settle (weakly, i.e.
against test functions on [0, 1]) to a constant.  The script prints the
discrepancies and their fitted decay orders in omega.

Run:  python demos/limits.py [m]
"""

import sys

from escna import verify_uniform_limits, verify_weak_limits

OMEGAS = [100.0 * 2**i for i in range(7)]


def main(m=1, alpha=0.5):
    uni = verify_uniform_limits(m, OMEGAS, alpha)
    print(f"uniform limits, m={m}: max |H| on [0, 1]")
    for item in uni.items:
        print(f"  {item.name:10s} order {item.decay_order:+.3f} (bound {item.bound:+.3f})  "
              f"{item.discrepancies[0]:.3e} -> {item.discrepancies[-1]:.3e}")
    for l in range(m + 1):
        weak = verify_weak_limits(m, l, OMEGAS, alpha)
        print(f"weak limits, m={m}, l={l}")
        for item in weak.items:
            if item.test_function != "1":
                continue
            print(f"  {item.name:22s} -> {item.limit:+.5f}  order {item.decay_order:+.2f}  "
                  f"{'ok' if item.passed else 'FAIL'}")
        print(f"  all test functions pass: {weak.passed}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
