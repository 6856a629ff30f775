from decouple import config

# Default output directory for artifacts written by dsm.py.
OUTPUT_DIR = config('DSM_OUTPUT_DIR', default='runs')
DEBUG = config('DSM_DEBUG', default=False, cast=bool)

EPS0 = 1.0
C0 = 1.0
K = 1.0

# Flow integration
DELTA = 1e-8
REL_TOL = 1e-8
ABS_TOL = 1e-10
T_MAX = 60.0
MAX_STEPS = 100_000
MIN_STEP = 1e-12

# Contraction iteration
CONTRACTION_TOL = 1e-12
MAX_ITER = 500
# ||psi|| above this is outside the "small source element" regime (advisory)
PSI_WARN = 0.1

# Diagnostics
BOUND_SAMPLES = 200
RESOLVENT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4)
