"""
RoughLik Extensions
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Centralized execution helpers shared by the services.
"""

from concurrent.futures import ThreadPoolExecutor
import logging

from roughlik.config import get_active_config

logger = logging.getLogger(__name__)


def worker_count(max_workers=None):
    """Worker count from the argument or the active config"""
    if max_workers is None:
        max_workers = get_active_config().MAX_WORKERS
    return max(1, int(max_workers))


def parallel_map(func, items, max_workers=None):
    """
    Apply func to every item, returning results in input order

    Work items are independent and seeded explicitly by the callers, so the
    result does not depend on scheduling. A single worker runs inline.
    """
    items = list(items)
    workers = min(worker_count(max_workers), len(items)) if items else 1
    if workers <= 1:
        return [func(item) for item in items]

    logger.debug(f"Dispatching {len(items)} work items to {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
