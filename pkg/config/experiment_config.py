"""
Experiment Configuration for the LQR learning runner
Defaults used when a JSON config or CLI flag does not override them
"""

# Artifact directory (override with the environment variable or --out)
OUT_DIR_ENV_VAR = "OFLQR_OUT_DIR"
DEFAULT_OUT_DIR = "results"

# Data collection
DEFAULT_T = 300
DEFAULT_NUM_TERMS = 100
DEFAULT_INPUT_SEED = 3
DEFAULT_PLANT_SEED = 1

# Learning
DEFAULT_ALGORITHM = "both"
DEFAULT_EPS = 1e-8
DEFAULT_MAX_ITER = 1000
DEFAULT_P0_SCALE = 1e3

# Closed-loop rollout written next to each run report
ROLLOUT_STEPS = 200

# Random plant recipe: spectral radius drawn uniformly from this range
RANDOM_RADIUS_RANGE = (0.3, 0.9)
RANDOM_MAX_COND = 1e6

# Sweeps
DEFAULT_SWEEP_COUNT = 50
DEFAULT_WORKERS = 4

# Noise table: fixed iteration counts per algorithm
NOISE_PI_ITERATIONS = 6
NOISE_VI_ITERATIONS = 150
DEFAULT_NOISE_LEVELS = (1e-3, 1e-4, 1e-6)
