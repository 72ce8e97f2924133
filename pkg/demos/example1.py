"""Example 1: a plant driven through a deadzone/saturation.

    dx/dt = cos(2t) x^2 / 2 + 2 cos(20t) h(u)

h is zero for |u| < 0.5 and saturates at 2.25 beyond |u| = 2, so the input
enters non-affinely.  The dithered controller

    u = (alpha omega)^(1/6) cos(omega t + k x^2)

is run with alpha omega = 64, which puts the dither amplitude at 2, right at
the edge of the saturation.  The closed loop is compared with the average of
the polynomial stand-in h(u) ~ 0.05 u + 0.25 u^3.

Run:  python demos/example1.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from escna import (
    averaged_system_theorem1,
    builtin,
    compare,
    fit_odd_polynomial,
    integrate_average,
    integrate_closed_loop,
    synthesize_controller,
)
from escna.model import deadzone_saturation

X0 = 1.5
T = 10.0


def main(out_dir=None):
    plant = builtin("example1")
    approx = builtin("example1_approx")

    print("omega   alpha    |x(10)| loop  |x(10)| avg   sup gap")
    for omega in (200.0, 400.0, 800.0):
        c = synthesize_controller(1, 64 / omega, omega, 50, "x1^2")
        loop = integrate_closed_loop(plant, c, [X0], T=T, steps_per_period=50)
        avg = integrate_average(averaged_system_theorem1(approx, c), [X0], T=T)
        gap = compare(loop, avg).sup_error
        print(f"{omega:5.0f}  {c.alpha:6.3f}   {abs(loop.final_state[0]):12.4g}  {abs(avg.final_state[0]):12.4g}  {gap:8.4f}")
        if out_dir is not None:
            loop.to_csv(Path(out_dir) / f"loop_{omega:.0f}.csv")
            avg.to_csv(Path(out_dir) / f"avg_{omega:.0f}.csv")

    # where do 0.05 and 0.25 come from?  A least-squares fit on [-2, 2] lands
    # near a3 but puts a small negative weight on u.
    for m in (1, 2, 3):
        p = fit_odd_polynomial(deadzone_saturation, m, 2.0)
        coeffs = ", ".join(f"{c:+.4f}" for c in p.coeffs)
        print(f"fit m={m}: ({coeffs})  sup error {p.sup_error:.4f}")

    u = np.linspace(-2, 2, 9)
    print("u      h(u)    0.05u+0.25u^3")
    for v in u:
        print(f"{v:+.1f}  {deadzone_saturation(v):+.4f}  {0.05 * v + 0.25 * v**3:+.4f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
