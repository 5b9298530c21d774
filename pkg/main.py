import sys
import signal
from functools import partial

import cli
from scenario_worker import ScenarioWorker
from config import load_settings


def signal_handler(worker, signum, frame):
    """Handle SIGINT: let running scenarios finish and skip the pending ones."""
    print("Received interrupt signal. Stopping pending scenarios...")
    worker.stop()


if __name__ == '__main__':
    worker = ScenarioWorker(load_settings()["max_workers"])

    # Set up signal handler for graceful shutdown
    signal.signal(signal.SIGINT, partial(signal_handler, worker))

    sys.exit(cli.main(worker=worker))
