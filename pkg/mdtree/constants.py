import math

# --- Tolerances ---
PSD_EPS_RELATIVE = 1e-9  # psd_eps = PSD_EPS_RELATIVE * (1 + max|a|)
EQ_EPS = 1e-8  # residual slack for identity tests
SINGULAR_SLACK_RELATIVE = 1e-14  # slack eigenvalue treated as exactly zero

# --- Barrier solver ---
BARRIER_MU0 = 1.0
BARRIER_DECAY = 0.2
BARRIER_MU_MIN = 1e-10
MAX_OUTER = 40
MAX_INNER = 400
GRAD_TOL = 1e-8
SLACK_TOL = 1e-7
SLACK_THRESHOLD_RELATIVE = 1e-3  # active if slack eigenvalue <= this * (1 + max|Sigma_X|)
MULTISTART_SEEDS = (0, 1, 2, 3, 4)
RETRY_SEED_OFFSET = 100  # extra multistarts after a failed construction
INIT_SHRINK = 1e-3  # delta in Theta_k = (k/L)(1 - delta) Sigma_X
INIT_PERTURBATION = 0.25
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 60
ARMIJO_NOISE_FLOOR = 1e-14  # relative function-value noise tolerated by the line search
BOUNDARY_FRACTION = 0.9  # first trial step as a fraction of the distance to the slack boundary
BFGS_DAMPING = 0.2  # Powell damping keeps the curvature estimate positive definite
CENTERING_TOL = 1e-16  # half squared decrement that ends the last inner loop
CENTERING_MU_FACTOR = 1e-3  # looser centering, relative to mu, before the last one

# --- Certificate ---
KKT_TOL = 1e-6
ENHANCEMENT_TOL = 1e-6
STRUCTURE_TOL = 1e-6
LAMBDA_PSD_TOL = 1e-6  # relative to 1 + max|Lambda|; Lambda is singular at the optimum
RATE_REL_TOL = 1e-6
CERT_VERIFIED = "VERIFIED"
CERT_UNVERIFIED = "UNVERIFIED"
CERT_FAILED = "FAILED"

# --- Boundary handling ---
EPSILON_SCHEDULE = (1e-3, 1e-4, 1e-5)  # multiples of lambda_min(Sigma_X)

# --- Monte Carlo ---
MC_SHARD_SIZE = 200_000
MC_CLT_FACTOR = 5.0
TWO_PI_E = 2.0 * math.pi * math.e

# --- Oracle ---
ORACLE_DEFAULT_RESOLUTION = 1e-4
ORACLE_ZOOM = 10.0
ORACLE_MAX_LEVELS = 3

# --- Logging ---
LOG_ENV_VAR = "MDTREE_LOG"
LOG_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}
DEFAULT_LOG_LEVEL = "error"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

# --- CLI / report ---
EXIT_VERIFIED = 0
EXIT_UNVERIFIED = 1
EXIT_INPUT_ERROR = 2
DIGEST_LENGTH = 16  # hex characters kept from sha256
