import os
import sys
import json
import math
import logging
import hashlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np


BASE_PATH = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
ASSETS_PATH = os.path.join(BASE_PATH, "assets")
EXPERIMENTS_PATH = os.path.join(ASSETS_PATH, "experiments")
CONFIG_PATH = os.path.join(EXPERIMENTS_PATH, "config")

# Encoder layout (HuBERT-base)
HUBERT_BASE_LAYERS = 12
HUBERT_BASE_DIM = 768

# Privacy Transformer
SPEAKER_EMBED_DIM = 256
LAYER_EMBED_DIM = 128
ENCODER_DEPTH = 5
ATTENTION_HEADS = 8
FFN_DIM = 4608
DROPOUT = 0.1
TRANSFORMER_LR = 1e-3
TRANSFORMER_EPOCHS = 50
TRANSFORMER_BATCH = 32
VAL_FRACTION = 0.1
EMBEDDING_INIT_STD = 0.02
LAYER_NORM_EPS = 1e-5

# Probes
PROBE_HIDDEN = (256, 128)
PROBE_LR = 1e-3
PROBE_EPOCHS = 50
PROBE_PATIENCE = 5
PROBE_BATCH = 64

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Laplace baseline
LAPLACE_EPSILON = 15.0
CLIP_LO = -1.0
CLIP_HI = 1.0

# Synthetic utility task: content_id mod CONTENT_GROUPS
CONTENT_GROUPS = 4

# Efficiency protocol
BENCH_UTTERANCES = 500
BENCH_BATCH = 1
BENCH_THREADS = 4

SID_TASK = "sid"


# Errors

class AnonymizerError(Exception):
    """Root of every error raised by this package"""


class DimensionError(AnonymizerError, ValueError):
    """Tensor or matrix extents do not agree"""


class ContractError(AnonymizerError, ValueError):
    """An operation was called outside its pre-conditions"""


class SpeakerIndexError(AnonymizerError, IndexError):
    """An embedding id or target speaker lies outside its table"""


class ConfigError(AnonymizerError, ValueError):
    """Invalid configuration value"""


class FormatError(AnonymizerError):
    """Malformed on-disk artifact. Carries the byte offset where reading failed."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class DataError(AnonymizerError):
    """Non-finite or inconsistent data"""


class UnsatisfiableError(AnonymizerError):
    """A sampling request cannot be met by the corpus"""


class SplitError(AnonymizerError):
    """A split would leave a requested part empty"""


class DegenerateTaskError(AnonymizerError):
    """A classification task with fewer than two classes"""


# Common functions

def setup_logging(level="INFO"):
    """Configures the root logger once, with a rich handler on stderr."""
    from rich.console import Console
    from rich.logging import RichHandler

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def make_rng(seed) -> np.random.Generator:
    """Explicit generator for a seed; an existing Generator passes through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def config_hash(payload: dict) -> str:
    """Stable sha256 of a JSON-serialisable mapping"""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def require_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise DataError(f"{what} contains {bad} non-finite value(s)")
