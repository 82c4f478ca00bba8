"""Background experiment jobs: one worker thread per submitted run."""

from __future__ import annotations

import itertools
import threading
import traceback
from dataclasses import dataclass, field
from typing import Optional

from ..config import ExperimentConfig
from ..experiment import run_experiment


@dataclass
class Job:
    id: str
    config: ExperimentConfig
    status: str = "queued"      # queued | running | done | failed
    step: int = 0
    total_steps: int = 0
    error: Optional[str] = None
    payload: Optional[dict] = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "id": self.id, "status": self.status, "step": self.step,
                "total_steps": self.total_steps,
                "out_dir": self.config.out_dir, "error": self.error,
            }


class JobManager:
    """Owns the job table; submit() returns immediately and trains on a
    daemon thread."""

    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)
        self._threads: dict[str, threading.Thread] = {}

    def submit(self, cfg: ExperimentConfig) -> Job:
        with self._lock:
            job = Job(id=f"exp-{next(self._counter):04d}", config=cfg,
                      total_steps=cfg.train.steps)
            self._jobs[job.id] = job
            thread = threading.Thread(target=self._run, args=(job,), daemon=True)
            self._threads[job.id] = thread
        thread.start()
        return job

    def _run(self, job: Job) -> None:
        with job._lock:
            job.status = "running"

        def on_step(step: int, total: int) -> None:
            with job._lock:
                job.step = step
                job.total_steps = total

        try:
            payload = run_experiment(job.config, on_step=on_step)
        except Exception as exc:  # surfaced via the status endpoint
            with job._lock:
                job.status = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
                job.payload = None
            traceback.print_exc()
            return
        with job._lock:
            job.status = "done"
            job.payload = payload

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def wait(self, job_id: str, timeout: Optional[float] = None) -> Optional[Job]:
        """Block until the job's worker thread finishes (local-mode helper)."""
        with self._lock:
            thread = self._threads.get(job_id)
        if thread is not None:
            thread.join(timeout)
        return self.get(job_id)
