# Simulator Configuration
# This file contains default settings for the CDCM link simulator

import os
import json
import logging

LOG_LEVEL = logging.INFO

logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# Time base
FS_PER_SECOND = 10**15
RESOLUTION_FS = 1  # femtoseconds per simulation tick

# Carrier
DEFAULT_F0 = 125e6  # Hz

# Node delays (order of a discrete ECL flip-flop / clock buffer)
BUFFER_DELAY = 200e-12
FF_DELAY = 200e-12

# PLL defaults
PLL_LOCK_THRESHOLD = 50e-12
PLL_LOCK_COUNT = 16
PLL_CAPTURE_RANGE = 0.01  # fractional deviation of the mean input rate
PLL_DEFAULT_BANDWIDTH = 1e-3  # loop bandwidth as a fraction of f0
PLL_DEFAULT_DAMPING = 0.707
SAMPLING_PHASE = 0.5  # fraction of T after the recovered rising edge

# PRBS checker
PRBS_LOAD_BITS = 15
PRBS_VERIFY_BITS = 64
PRBS_SYNC_BUDGET = 4096

# Scrambler register length (x^7 + x^6 + 1)
SCRAMBLER_LENGTH = 7

# Confidence factor for a zero-error BER bound (95 %)
BER_ZERO_ERROR_FACTOR = 2.3

# Workers
MAX_WORKERS = 4

# Output
OUTPUT_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "reports")
SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")

# Hardware figures quoted next to model results
HARDWARE_REFERENCE = {
    "lock_limit_percent": 40,
    "no_lock_percent": 45,
    "ber_upper_bound": 1e-12,
    "latency_spread_ps": 2.0,
    "recovered_rj_ps": 15.0,
    "recovered_dj_ps": 7.0,
    "si5344_rj_ps": 4.39,
    "chain_hop4_rj_ps": 1.23,
    "leaf_skew_rms_ps": 13.0,
    "eye_opening_ns": 1.6,
}

# Settings file
SETTINGS_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "sim_settings.json")

DEFAULT_SETTINGS = {
    "resolution_fs": RESOLUTION_FS,
    "max_workers": MAX_WORKERS,
    "output_dir": OUTPUT_DIR,
    "seed": 1,
    "log_level": "INFO",
}


def load_settings(path: str = SETTINGS_PATH) -> dict:
    """
    Load user settings, falling back to the module defaults for missing keys.
    """
    settings = dict(DEFAULT_SETTINGS)
    try:
        with open(path, "r") as f:
            stored = json.load(f)
        for key in DEFAULT_SETTINGS:
            settings[key] = stored.get(key, DEFAULT_SETTINGS[key])
    except FileNotFoundError:
        pass
    except (OSError, json.JSONDecodeError) as e:
        logger.warning(f"Error loading settings from {path}: {e}")
    return settings


def save_settings(settings: dict, path: str = SETTINGS_PATH):
    """Write settings back, keeping only known keys."""
    stored = {key: settings.get(key, value) for key, value in DEFAULT_SETTINGS.items()}
    with open(path, "w") as f:
        json.dump(stored, f, indent=2)
