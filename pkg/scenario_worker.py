# Scenario Worker
# Runs independent scenario jobs concurrently on a thread pool

import threading
import logging
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable

from config import LOG_LEVEL, MAX_WORKERS
from exceptions import CdcmError

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


@dataclass
class JobResult:
    name: str
    value: Any = None
    error: Exception | None = None
    stopped: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None and not self.stopped


class ScenarioWorker:
    """
    Thread-pool runner for scenario jobs.

    Jobs share no state; a stop request lets running jobs finish and cancels the
    pending ones.
    """

    def __init__(self, max_workers: int = MAX_WORKERS):
        self.max_workers = max(1, max_workers)
        self._stop_event = threading.Event()
        logger.debug("ScenarioWorker initialized")

    def stop(self):
        self._stop_event.set()
        logger.debug("Worker stop requested")

    @property
    def stopped(self) -> bool:
        return self._stop_event.is_set()

    def run(self, jobs: list[tuple[str, Callable[[], Any]]]) -> list[JobResult]:
        """Execute (name, callable) jobs; results come back in job order."""

        def execute(name, job):
            if self._stop_event.is_set():
                return JobResult(name, stopped=True)
            try:
                return JobResult(name, job())
            except CdcmError as e:
                logger.error(f"{name}: {e}")
                return JobResult(name, error=e)

        results = {}
        executor = ThreadPoolExecutor(max_workers=self.max_workers)
        futures = {executor.submit(execute, name, job): k for k, (name, job) in enumerate(jobs)}
        logger.debug(f"Submitted {len(futures)} jobs to executor")
        try:
            for future in as_completed(futures):
                if self._stop_event.is_set():
                    for f in futures:
                        f.cancel()
                k = futures[future]
                results[k] = future.result() if not future.cancelled() else JobResult(jobs[k][0], stopped=True)
        finally:
            logger.debug("Shutting down executor")
            executor.shutdown(wait=True)

        return [results.get(k, JobResult(name, stopped=True)) for k, (name, _) in enumerate(jobs)]
