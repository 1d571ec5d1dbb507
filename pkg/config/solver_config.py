"""
Numerical Solver Configuration
Tolerances and iteration caps shared by the linear-algebra kernels
"""

# Rank decisions: sigma counts as nonzero when
# sigma > RANK_TOL_FACTOR * max(rows, cols) * sigma_max * machine_eps
RANK_TOL_FACTOR = 1.0

# Stein equation: Kronecker solve up to this many unknown rows, doubling above
STEIN_SWITCH_SIZE = 30
STEIN_TOL = 1e-12
STEIN_MAX_ITER = 64  # doubling steps, each one squares the transition matrix

# Riccati fixed-point oracle (step measured relative to max(1, ||P||))
DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000

# Theta_uu = B'PB + R must stay well conditioned
THETA_UU_MAX_COND = 1e12

# Warn when sigma_n / sigma_1 of a truncated block falls below this
SVD_WARN_RATIO = 1e-10

# Value iteration: steps below this multiple of machine_eps * max(1, ||P||) count
# as converged, whatever eps was requested
VI_STEP_FLOOR_FACTOR = 1e3

# Relative rank threshold for the data-derived controllability matrix used by
# the deadbeat initial gain
CTRB_RANK_TOL = 1e-8
