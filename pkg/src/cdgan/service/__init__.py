"""HTTP layer: experiments run as background jobs behind a small FastAPI app."""

from .app import create_app
from .jobs import Job, JobManager

__all__ = ["create_app", "Job", "JobManager"]
