"""
Task Executor for the uptake toolkit.

Runs per-item work (scoring, featurizing, negative sampling) on a thread
pool while keeping results in input order, so output files do not depend on
the number of workers.
"""

import os
import sys
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

# Add scripts to path to import config
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'scripts'))

from config import RUN_SETTINGS
from common_utils import create_progress_bar

logger = logging.getLogger(__name__)


class TaskExecutor:
    """Ordered worker pool with a progress bar."""

    def __init__(self, jobs: Optional[int] = None):
        self.jobs = jobs or RUN_SETTINGS['jobs']
        if self.jobs < 1:
            raise ValueError(f"jobs must be a positive integer, got {self.jobs}")
        self.executor = ThreadPoolExecutor(max_workers=self.jobs) if self.jobs > 1 else None
        self.stop_requested = False

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.shutdown()
        return False

    def map_ordered(self, fn: Callable, items: Sequence, description: str = "Processing") -> List:
        """
        Apply `fn` to every item and return the results in input order.

        Exceptions raised by `fn` propagate to the caller.
        """
        items = list(items)
        if self.executor is None:
            return [fn(item) for item in create_progress_bar(items, description)]
        logger.debug("%s: %d item(s) on %d workers", description, len(items), self.jobs)
        results = self.executor.map(fn, items)
        return list(create_progress_bar(results, description, total=len(items)))

    def stop_all_tasks(self):
        """Cancel pending work (used by the interrupt handler)."""
        self.stop_requested = True
        if self.executor is not None:
            self.executor.shutdown(wait=False, cancel_futures=True)

    def shutdown(self):
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None
