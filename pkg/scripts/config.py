"""
Shared configuration constants for the conversational uptake toolkit.

This module centralizes all default settings used by the library modules and
the `control.py` command line. Update settings here to affect every stage that
uses them; individual runs can still override them with a preset, a JSON
config file, or flags.

Usage:
    from config import CORPUS_SETTINGS, NUC_SETTINGS, STATS_SETTINGS, FILE_PATHS
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

TOOL_NAME = "uptake-toolkit"
TOOL_VERSION = "1.0.0"

# --- File Paths Configuration ---
# Get the base directory (parent of scripts directory)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

FILE_PATHS = {
    'data_dir': os.path.join(BASE_DIR, "data"),
    'stopwords': os.getenv("UPTAKE_STOPWORDS_FILE",
                           os.path.join(BASE_DIR, "data", "stopwords_english.txt")),
    'presets': os.path.join(BASE_DIR, "config_presets.json"),
}

# --- Corpus Extraction ---
CORPUS_SETTINGS = {
    'min_s_tokens': 5,
    'inaudible_marker': "[Inaudible]",
    'context_size': 2,
    'default_source': "ncte",
    'min_pairs_per_conversation': 1,
    'roles': ("student", "teacher"),
    'levels': {"low": 0, "mid": 1, "high": 2},
}

# --- Tokenization and Preprocessing ---
TEXTPREP_SETTINGS = {
    'default_stopword_list': "english-127",
    'stem_language': "english",
    'profile_cache_size': 200000,
}

# --- Similarity Metrics ---
# Default profiles are the best-performing preprocessing choices per metric,
# written in the CLI profile alphabet (P=punctuation, S=stopwords, T=stemming).
SIMILARITY_SETTINGS = {
    'default_profiles': {
        'lcs': "",
        'pct_s_in_t': "PST",
        'pct_t_in_s': "PS",
        'jaccard': "PS",
        'bleu': "PST",
        'glove_align': "P",
        'glove_utt': "PS",
    },
    'bleu_max_n': 4,
    'bleu_epsilon': 1e-9,
    'csv_float_format': "%.12g",
}

# --- Next Utterance Classification ---
NUC_SETTINGS = {
    'negatives_per_positive': 3,
    'learning_rate': 0.1,
    'epochs': 20,
    'batch_size': 256,
    'l2': 1e-4,
    'probability_clamp': 1e-7,
    'holdout_fraction': 0.0,
    'feature_schema_id': "default-v1",
}

# --- Statistics ---
STATS_SETTINGS = {
    'bootstrap_iterations': int(os.getenv("UPTAKE_BOOTSTRAP_ITERATIONS", "1000")),
    'confidence_level': 0.95,
    'max_degenerate_fraction': 0.5,
    'residual_threshold_sd': 1.5,
    'normal_approx_min_df': 30,
    'min_residual_rows': 10,
}

# --- Run Settings ---
RUN_SETTINGS = {
    'seed': int(os.getenv("UPTAKE_SEED", "0")),
    'jobs': int(os.getenv("UPTAKE_JOBS", "1")),
    'synthetic_pairs': 5000,
    'synthetic_pairs_per_conversation': 20,
}

# --- Debug and Logging Settings ---
DEBUG_SETTINGS = {
    'log_level': os.getenv("UPTAKE_LOG_LEVEL", "INFO"),
    'log_format': '%(name)s - %(message)s',
    'show_progress_bars': True,
}


# --- Validation Functions ---
def validate_config():
    """
    Validate that the configured defaults are usable.

    Returns:
        tuple: (bool, list) - (is_valid, list_of_errors)
    """
    errors = []

    if not os.path.exists(FILE_PATHS['stopwords']):
        errors.append(f"Stopword file not found: {FILE_PATHS['stopwords']}")

    if NUC_SETTINGS['negatives_per_positive'] < 1:
        errors.append("NUC_SETTINGS['negatives_per_positive'] must be at least 1")

    if not 0.0 < STATS_SETTINGS['confidence_level'] < 1.0:
        errors.append("STATS_SETTINGS['confidence_level'] must lie in (0, 1)")

    if RUN_SETTINGS['jobs'] < 1:
        errors.append("UPTAKE_JOBS must be a positive integer")

    return len(errors) == 0, errors
