"""
Configuration settings for the repair engine
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Solver defaults (synthetic and Adult experiment settings)
REPAIR_EPSILON = float(os.getenv("REPAIR_EPSILON", "0.01"))
REPAIR_ITERATIONS = int(os.getenv("REPAIR_ITERATIONS", "600"))
BASELINE_ITERATIONS = int(os.getenv("BASELINE_ITERATIONS", "400"))
REPAIR_VAREPSILON = float(os.getenv("REPAIR_VAREPSILON", "1e-4"))
TABULAR_VAREPSILON = float(os.getenv("TABULAR_VAREPSILON", "1e-5"))
MARGINAL_TOLERANCE = float(os.getenv("MARGINAL_TOLERANCE", "1e-6"))

# Epsilon scaling warm start: potentials are annealed from SCALING_START down to the
# target epsilon, shrinking by SCALING_FACTOR per stage
SCALING_START = float(os.getenv("SCALING_START", "1.0"))
SCALING_FACTOR = float(os.getenv("SCALING_FACTOR", "0.5"))
SCALING_TOLERANCE = float(os.getenv("SCALING_TOLERANCE", "1e-9"))
SCALING_CYCLES = int(os.getenv("SCALING_CYCLES", "1500"))
SCALING_FINAL_CYCLES = int(os.getenv("SCALING_FINAL_CYCLES", "8000"))

# Pipeline defaults
TV_THRESHOLD = float(os.getenv("TV_THRESHOLD", "0.08"))
CLASSIFIER_THRESHOLD = float(os.getenv("CLASSIFIER_THRESHOLD", "0.1"))
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "outputs")
ADULT_CSV = os.getenv("ADULT_CSV", "")

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Numerical guards
KERNEL_FLOOR = 1e-300
SIMPLEX_SUM_TOL = 1e-9
SIMPLEX_RENORM_TOL = 1e-6
NEGATIVE_DUST = 1e-12
ZERO_ENTRY_TOL = 1e-12
PRUNE_WEIGHT = 1e-15
ROOT_TOL = 1e-10
LOG_ROOT_TOL = 1e-12
EXP_BOUNDARY = 700.0
