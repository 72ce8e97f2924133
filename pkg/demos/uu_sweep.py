"""Stability map of dx/dt = x + 0.1 (u + u^3 + u^5) + eps (u^2 + u^4).

The u^5 channel is the dominant odd power; with a matching m = 2 controller
its average is a pull of strength 2 (126/512) alpha toward the origin, which
has to beat the unstable drift x.  The even channels push the equilibrium off
zero, by an amount that grows with alpha omega.  Cells are labelled from
|x(5)| starting at x(0) = 1 and compared with the predicted boundary alpha(omega).

Run:  python demos/uu_sweep.py [eps] [m]
"""

import sys

import numpy as np

from escna import Axis, SweepSpec, run_sweep
from escna.sweep import boundary_agreement, large_product_mask


def main(eps=0.05, m=2, count=20):
    spec = SweepSpec(
        "uu",
        # alpha runs past 2 because with eps > 0 the predicted boundary sits
        # between 2.4 and 4.3 on this omega range
        (Axis("omega", 5, 200, count), Axis("alpha", 0.1, 4.5, count)),
        m=m,
        k=100,
        eps=eps,
    )
    grid = run_sweep(spec)
    glyph = {"convergent": "o", "indeterminate": ".", "divergent": "x", "blowup": "#"}

    print(f"eps={eps}, m={m}; rows alpha (top = 4.5), columns omega 5..200")
    alphas = spec.axes[1].values
    for j in reversed(range(count)):
        row = "".join(glyph[lab] for lab in grid.labels[:, j])
        print(f"{alphas[j]:5.2f} {row}")
    print(grid.counts())
    b = grid.boundary
    print(f"predicted boundary alpha: {np.nanmin(b):.3f} .. {np.nanmax(b):.3f}")
    print(f"agreement (margin 0.2): {boundary_agreement(grid):.3f}")
    print(f"agreement, large alpha*omega half: {boundary_agreement(grid, region=large_product_mask(grid)):.3f}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(float(args[0]) if args else 0.05, int(args[1]) if len(args) > 1 else 2)
