"""Every tunable default in one place.

==========================  =======  =============================================
name                        value    meaning
==========================  =======  =============================================
STEPS_PER_PERIOD (S)        50       RK4 steps per dither period 2 pi / omega
AVERAGE_STEPS               5000     RK4 steps over T for averaged systems
BLOWUP_CUTOFF               1e6      |x| beyond which a run is stopped as blow-up
THETA_CONV                  0.25     sweep: |x(T)| at or below this is convergent
SWEEP_CUTOFF                3        sweep: |x(T)| at or above this is divergent
GRID_COUNT                  40       sweep: cells per axis (40 x 40 grid)
SWEEP_T                     5        sweep: horizon in seconds
SWEEP_X0                    1        sweep: initial state
AGREEMENT_MARGIN            0.2      sweep: relative band around the boundary
                                     excluded from the agreement score
NODES_PER_PERIOD            200      quadrature nodes per dither period
MIN_NODES_PER_PERIOD        50       quadrature aliasing guard
FIT_SAMPLES                 401      odd-polynomial fit sample count
JOBS                        1        sweep worker processes
==========================  =======  =============================================
"""

STEPS_PER_PERIOD = 50
AVERAGE_STEPS = 5000
BLOWUP_CUTOFF = 1e6
THETA_CONV = 0.25
SWEEP_CUTOFF = 3.0
GRID_COUNT = 40
SWEEP_T = 5.0
SWEEP_X0 = 1.0
AGREEMENT_MARGIN = 0.2
NODES_PER_PERIOD = 200
MIN_NODES_PER_PERIOD = 50
FIT_SAMPLES = 401
JOBS = 1

TABLE = {
    "steps_per_period": STEPS_PER_PERIOD,
    "average_steps": AVERAGE_STEPS,
    "blowup_cutoff": BLOWUP_CUTOFF,
    "theta_conv": THETA_CONV,
    "sweep_cutoff": SWEEP_CUTOFF,
    "grid_count": GRID_COUNT,
    "sweep_T": SWEEP_T,
    "sweep_x0": SWEEP_X0,
    "agreement_margin": AGREEMENT_MARGIN,
    "nodes_per_period": NODES_PER_PERIOD,
    "min_nodes_per_period": MIN_NODES_PER_PERIOD,
    "fit_samples": FIT_SAMPLES,
    "jobs": JOBS,
}
