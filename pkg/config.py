"""Configuration, thresholds and presets for paired-box suppression and evaluation."""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

# Load .env file from project root
load_dotenv(Path(__file__).parent / ".env")

# Suppression defaults
NMS_CONFIG = {
    "method": "greedy-full",
    "threshold": 0.5,      # Omega, compared with strict ">"
    "soft_sigma": 0.5,     # gaussian soft-NMS decay
    "score_floor": 0.001,  # soft-NMS pruning cutoff
}

# Accepted method names on the command line -> canonical names
METHOD_ALIASES = {
    "greedy": "greedy-full",
    "greedy-full": "greedy-full",
    "nms": "greedy-full",
    "r2": "greedy-visible",
    "r2nms": "greedy-visible",
    "greedy-visible": "greedy-visible",
    "soft": "soft-linear",
    "soft-linear": "soft-linear",
    "soft-gaussian": "soft-gaussian",
    "adaptive": "adaptive",
}

# Paired anchor / proposal assignment
ASSIGN_CONFIG = {
    "alpha1": 0.7,            # IoU(anchor, full) for anchor positives
    "beta1": 0.7,             # IoF(anchor, visible) for anchor positives
    "alpha2": 0.5,            # IoU(proposal full, full) for proposal positives
    "beta2": 0.5,             # IoU(proposal visible, visible) for proposal positives
    "negative_iou_max": 0.3,  # standard RPN negative band
    "best_match_fallback": True,
}

ANCHOR_CONFIG = {
    "aspect_ratios": (0.5, 1.0, 2.0),  # width / height
}

# Attention mask grid (RoI Align output size)
MASK_RESOLUTION = (7, 7)

# Caltech-style evaluation
EVAL_CONFIG = {
    "match_iou": 0.5,
    "fppi_points": 9,
    "fppi_range": (1e-2, 1e0),
    "mr_floor": 1e-10,   # clamp before log-averaging
    "min_height": 0.0,
}

# Visibility subsets: (lo, hi, min_height). hi is exclusive.
VISIBILITY_SUBSETS = {
    "all": (None, None, 0.0),
    "reasonable": (0.65, float("inf"), 50.0),
    "heavy": (0.2, 0.65, 50.0),
    "partial": (0.65, 0.9, 50.0),
    "bare": (0.9, float("inf"), 50.0),
}

# Synthetic crowd presets
SCENE_PRESETS = {
    "sparse": {
        "image_size": (640, 480),
        "num_people": 8,
        "person_size": (120.0, 20.0),  # mean height, jitter (px)
        "aspect_ratio": 0.41,          # width / height of a pedestrian
        "clusters": 8,
        "cluster_spread": 10.0,
        "row_jitter": 40.0,            # vertical spread of the feet line
        "min_visible_fraction": 0.0,
    },
    "crowded": {
        "image_size": (640, 480),
        "num_people": 24,
        "person_size": (120.0, 0.0),
        "aspect_ratio": 0.41,
        "clusters": 4,
        "cluster_spread": 20.0,
        "row_jitter": 0.0,
        "min_visible_fraction": 0.1,
    },
}

# Noisy paired detector
NOISE_CONFIG = {
    "center_jitter_sigma": 0.1,   # fraction of the size of the box being moved
    "size_jitter_sigma": 0.1,
    "duplicates_per_gt": 2.0,
    "fp_per_image": 1.0,
    "tp_score_band": (0.6, 1.0),
    "fp_score_band": (0.05, 0.7),
}

# Perfect-detector sweep
ORACLE_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8)

# Suppression timing harness
BENCH_SIZES = (0, 10, 100, 1000)
BENCH_REPEAT = 3

# Output formatting
FLOAT_DIGITS = 9  # significant digits written to prediction files
HEADER_PREFIX = "# "

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4


def env_int(name: str, default: int) -> int:
    """Non-negative integer from the environment; bad values fall back to default."""
    raw = os.environ.get(name, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        value = -1
    if value < 0:
        logging.getLogger(__name__).warning("Ignoring %s=%r: expected a non-negative integer", name, raw)
        return default
    return value


# Worker pool and logging, overridable from the environment
WORKERS = env_int("PAIRNMS_WORKERS", 0) or (os.cpu_count() or 1)
LOG_LEVEL = os.environ.get("PAIRNMS_LOG_LEVEL", "WARNING")


def setup_logging(level: str = LOG_LEVEL) -> None:
    """Route library logging through rich on stderr."""
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    logging.basicConfig(
        level=level.upper(),
        format="%(name)s: %(message)s",
        datefmt="[%X]",
        handlers=[handler],
        force=True,
    )
