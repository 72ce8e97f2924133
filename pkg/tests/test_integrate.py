import math

import numpy as np
import pytest

from escna.esc import averaged_system_theorem1, synthesize_controller
from escna.integrate import (
    DisjointWindowError,
    Trajectory,
    compare,
    integrate,
    integrate_average,
    integrate_closed_loop,
    step_count,
)
from escna.model import builtin, load_system


def decay(x, t):
    return -x


def test_exponential_decay():
    traj = integrate(decay, [1.0], T=1.0, dt=1e-3)
    assert traj.times[-1] == 1.0
    assert abs(traj.final_state[0] - math.exp(-1)) < 1e-9


def test_harmonic_oscillator_returns():
    traj = integrate(lambda x, t: np.array([x[1], -x[0]]), [1.0, 0.0], T=2 * math.pi, dt=1e-3)
    assert traj.times[-1] == 2 * math.pi
    assert np.max(np.abs(traj.final_state - [1.0, 0.0])) < 1e-8
    energy = np.sum(traj.states**2, axis=1)
    assert np.max(np.abs(energy - 1.0)) < 1e-8


def test_rk4_order():
    errs = [abs(integrate(decay, [1.0], T=1.0, dt=dt).final_state[0] - math.exp(-1)) for dt in (0.1, 0.05)]
    assert 12 <= errs[0] / errs[1] <= 20


def test_last_step_is_shortened():
    n, last = step_count(1.0, 0.3)
    assert n == 4 and last == pytest.approx(0.1)
    traj = integrate(decay, [1.0], T=1.0, dt=0.3)
    assert traj.times[-1] == 1.0
    assert len(traj.times) == 5


def test_step_policy_from_frequency():
    traj = integrate(decay, [1.0], T=2 * math.pi / 10, omega=10.0, steps_per_period=50)
    assert len(traj.times) == 51
    with pytest.raises(ValueError):
        integrate(decay, [1.0], T=1.0)
    with pytest.raises(ValueError):
        integrate(decay, [1.0], T=1.0, dt=0.0)
    with pytest.raises(ValueError):
        integrate(decay, [1.0], T=-1.0, dt=0.1)


def test_blowup_stops_the_run():
    traj = integrate(lambda x, t: x**2, [1.0], T=2.0, dt=1e-3, cutoff=1e6)
    assert traj.blowup
    assert traj.times[-1] < 1.0 + 1e-2
    assert np.all(np.isfinite(traj.states))


def test_determinism():
    sys = builtin("example1")
    c = synthesize_controller(1, 0.32, 200, 50, "x1^2")
    a = integrate_closed_loop(sys, c, [1.5], T=2.0)
    b = integrate_closed_loop(sys, c, [1.5], T=2.0)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.controls, b.controls)


def test_example1_closed_loop_settles():
    c = synthesize_controller(1, 0.32, 200, 50, "x1^2")
    traj = integrate_closed_loop(builtin("example1"), c, [1.5], T=10.0, steps_per_period=50)
    assert not traj.blowup
    assert abs(traj.final_state[0]) < 0.3
    assert traj.controls.shape == traj.times.shape
    assert np.max(np.abs(traj.controls)) <= c.amplitude + 1e-12


def test_pure_dither_has_no_drift():
    sys = load_system({"dim": 1, "drift": ["0"], "odd_channels": [{"power_index": 0, "exprs": ["1"]}]})
    slopes = []
    for omega in (10.0, 100.0, 1000.0):
        c = synthesize_controller(0, 1.0, omega, 0.0, "x1")
        traj = integrate_closed_loop(sys, c, [0.0], T=2 * math.pi)
        slopes.append(abs(np.polyfit(traj.times, traj.states[:, 0], 1)[0]))
    # x = sin(omega t) / sqrt(omega): the fitted slope falls like omega^(-1/2)
    assert slopes[0] > slopes[1] > slopes[2]
    assert slopes[-1] < 1e-2


def test_equilibrium_stays_put():
    sys = load_system({"dim": 1, "drift": ["0"], "odd_channels": [{"power_index": 0, "exprs": ["1"]}]})
    c = synthesize_controller(0, 1.0, 1000.0, 1.0, "x1^2")
    traj = integrate_closed_loop(sys, c, [0.0], T=1.0)
    # dither excursion is amplitude/omega
    assert np.max(np.abs(traj.states)) < 2 * c.amplitude / c.omega


def test_average_integration_default_step():
    c = synthesize_controller(0, 1, 100, 1, "x1^2")
    sys = load_system({"dim": 1, "drift": ["0"], "odd_channels": [{"power_index": 0, "exprs": ["1"]}]})
    traj = integrate_average(averaged_system_theorem1(sys, c), [1.0], T=1.0)
    assert len(traj.times) == 5001
    assert traj.final_state[0] == pytest.approx(math.exp(-1), abs=1e-12)


def test_compare_examples():
    t = np.linspace(0, 1, 11)
    a = Trajectory(t, np.sin(t)[:, None])
    assert compare(a, a).sup_error == 0.0
    b = Trajectory(t, np.sin(t)[:, None] + 0.3)
    r = compare(a, b)
    assert r.sup_error == pytest.approx(0.3) and r.terminal_error == pytest.approx(0.3)
    assert not r.resampled


def test_compare_resamples_and_rejects_disjoint_windows():
    a = Trajectory(np.linspace(0, 1, 11), np.linspace(0, 1, 11)[:, None])
    b = Trajectory(np.linspace(0, 2, 7), np.linspace(0, 2, 7)[:, None])
    r = compare(a, b)
    assert r.resampled and r.sup_error < 1e-15
    assert r.sup_error >= r.terminal_error >= 0
    c = Trajectory(np.linspace(3, 4, 5), np.zeros((5, 1)))
    with pytest.raises(DisjointWindowError):
        compare(a, c)


def test_csv_round_trip(tmp_path):
    c = synthesize_controller(1, 0.32, 200, 50, "x1^2")
    traj = integrate_closed_loop(builtin("example1"), c, [1.5], T=0.2)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,x1,u"
    back = Trajectory.from_csv(path)
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.controls, traj.controls)
