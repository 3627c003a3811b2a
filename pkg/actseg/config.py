import os
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.environ.get("ACTSEG_LOG_LEVEL", "INFO")

# Worker count for per-frame predict/evaluate. Results are merged in frame
# order, so this never changes an output bit.
THREADS = max(1, int(os.environ.get("ACTSEG_THREADS", "1") or "1"))

# Output root for commands run without an explicit --out
OUTPUT_DIR = os.environ.get("ACTSEG_OUTPUT_DIR", "runs")

# Model defaults: C per stream, ROI grid G, L hidden FC layers of width D_h
FEATURE_WIDTH = 8
POOL_GRID = 7
HIDDEN_LAYERS = 2
HIDDEN_WIDTH = 256

# Initial background score for every non-background class. The background
# class itself starts at 0.
BACKGROUND_INIT = -4.0

# Stage-2 background learning rate as a fraction of the head's, when unset
BACKGROUND_LR_SCALE = 0.1

# Evaluation: "band width 15" read as a Chebyshev radius of 7 around label changes
BOUNDARY_RADIUS = 7

# Finite-difference verification
GRADCHECK_EPS = 1e-3
GRADCHECK_TOLERANCE = 1e-4

# Probabilities are clamped below before the log in the loss
LOG_CLAMP = 1e-12

# On-disk dataset / prediction manifest version
FORMAT_VERSION = 1
