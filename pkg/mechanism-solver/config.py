"""Configuration module for the mechanism solver."""
import os
import logging

# Configure logging
logging.basicConfig(level=logging.INFO, format='[%(levelname)s] %(message)s')

# Headless plotting
os.environ.setdefault('MPLBACKEND', 'Agg')

# Quadrature and root-finding
DEFAULT_ABS_TOL = 1e-9
DEFAULT_REL_TOL = 1e-9
DEFAULT_MAX_DEPTH = 60
QUAD_LIMIT_PER_DEPTH = 8

# Certification
DEFAULT_PROBE_COUNT = 200
DEFAULT_MASS_TOL = 1e-6
DEFAULT_CURVE_TOL = 1e-6
DEFAULT_CURVE_SAMPLES = 400
DEFAULT_REFINE_STEPS = 6
DEFAULT_FLOW_RESOLUTION = 1e-12
DEFAULT_FLOW_TOL = 1e-9

# Mechanisms and oracles
DEFAULT_GRID = 12
DEFAULT_SEED = 7
DEFAULT_MC_SAMPLES = 1_000_000
DEFAULT_MC_SHARD_SIZE = 100_000
DEFAULT_AUDIT_PAIRS = 10_000
DEFAULT_LP_SIZE_LIMIT = 1000
DEFAULT_SEPARATE_PRICE_GRID = 50
DEFAULT_BUNDLE_PRICE_GRID = 500
DEFAULT_QUANTILE_BOX = (0.001, 0.995)

# Performance
DEFAULT_NUM_WORKERS = 1

# Output
DEFAULT_OUTPUT_DIR = 'output'
