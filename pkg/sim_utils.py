"""
sim_utils.py

Shared plumbing for every experiment: workload limits, the error hierarchy,
logging setup, reproducible random streams, and a sharded worker pool.
Modules never build generators or threads themselves; they come through here
so that a (master seed, stream id) pair fully determines every random draw,
whatever the number of workers.
"""

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

TOOL_VERSION = "0.3.0"

# === WORKLOAD LIMITS ===

WORKLOAD_LIMITS = {
    "gaussfield": {"max_threads": 8, "shard_size": 10_000, "max_grid": 8192},
    "spde":       {"max_threads": 8, "batch_size": 50},
    "slowset":    {"max_threads": 4},
}

DEFAULT_THREADS = int(os.getenv("SLOWPOINTS_THREADS", "1"))

logger = logging.getLogger(__name__)

# === ERRORS ===


class SlowpointsError(Exception):
    """Base class for every failure raised by this project."""


class DomainError(SlowpointsError, ValueError):
    """A precondition on an argument or config value does not hold."""

    def __init__(self, param, message):
        self.param = param
        super().__init__(f"{param}: {message}")


class ConfigError(DomainError):
    pass


class RefusalError(DomainError):
    """Not enough statistical information to answer; `details` keeps the partial result."""

    def __init__(self, param, message, details=None):
        super().__init__(param, message)
        self.details = details or {}


class NumericalError(SlowpointsError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def require(condition, param, message):
    if not condition:
        raise DomainError(param, message)


# === LOGGING ===

LOG_FORMAT = "[%(name)s] %(levelname)s %(message)s"


def configure_logging(level="INFO"):
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
    logging.captureWarnings(True)


# === RANDOM STREAMS ===

def stream_id(task, index):
    """64-bit stream id for (task, replica/shard index); stable across runs and platforms."""
    digest = hashlib.blake2b(f"{task}:{int(index)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed, *key):
    """
    Counter-based generator for `seed = (master, stream)` extended by `key`.
    Draws depend only on the seed tuple and key, never on call order.
    """
    master, stream = seed
    spawn_key = tuple(int(k) for k in (stream, *key))
    ss = np.random.SeedSequence(int(master), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


# === SHARDED WORKERS ===

def shard_sizes(total, shard_size):
    full, rest = divmod(int(total), int(shard_size))
    sizes = [int(shard_size)] * full
    if rest:
        sizes.append(rest)
    return sizes


def run_sharded(fn, jobs, threads=None, workload="gaussfield"):
    """
    Apply `fn(*job)` to every job and return results in job order.
    Results are merged by the caller, so scheduling order never leaks into output.
    """
    jobs = list(jobs)
    limit = WORKLOAD_LIMITS.get(workload, {}).get("max_threads", 1)
    n_workers = max(1, min(int(threads or DEFAULT_THREADS), limit, len(jobs) or 1))
    if n_workers == 1:
        return [fn(*job) for job in jobs]
    logger.debug("%s: %d jobs on %d threads", workload, len(jobs), n_workers)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]
