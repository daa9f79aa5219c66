"""Resource-limited runner for untrusted Python jobs, spawned per job."""

from .runner import JOB_FIELDS, REPORT_FIELDS, MalformedJob, SandboxJob, SandboxReport, run_job

__version__ = "0.1.0"

__all__ = [
    "JOB_FIELDS",
    "REPORT_FIELDS",
    "MalformedJob",
    "SandboxJob",
    "SandboxReport",
    "run_job",
]
