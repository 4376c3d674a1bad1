import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_rng(seed):
    """Get a numpy Generator for the given seed (a Generator is passed through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def setup_logging(verbosity=0):
    """
    Configure the root logger for command-line use.

    Args:
        verbosity: 0 for INFO, positive for DEBUG, negative for WARNING

    Returns:
        The chosen logging level
    """
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    return level


def ordered_map(func, items, threads=1):
    """Apply func to every item, optionally on a thread pool, keeping input order."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
