"""
Shared configuration for the simulation, training and sampling pipeline.
Centralizes environment variables and common settings.
"""

import logging
import os
from typing import List, Optional

from dotenv import load_dotenv

load_dotenv()


class Config:
    """Environment-level configuration for the pipeline."""

    # Output
    OUTPUT_ROOT: str = os.getenv("SGMUS_OUTPUT_ROOT", "runs")

    # Worker parallelism (independent experiments); 0 means "use cpu count"
    THREADS: int = int(os.getenv("SGMUS_THREADS", "0"))

    # Numerical guards shared by the integrators
    DIVERGENCE_BOUND: float = 1.0e6

    # Dense diffusion-map eigensolve cap
    MAX_DMAP_POINTS: int = 10_000

    @classmethod
    def worker_count(cls) -> int:
        """Resolve the worker cap, falling back to the machine's cpu count."""
        if cls.THREADS and cls.THREADS > 0:
            return cls.THREADS
        return os.cpu_count() or 1

    @classmethod
    def set_threads(cls, threads: Optional[int]) -> None:
        """Cap worker parallelism globally (the CLI's --threads flag)."""
        if threads is None:
            return
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        cls.THREADS = threads

    @classmethod
    def validate_environment(cls) -> tuple[bool, List[str]]:
        """Validate environment-driven settings."""
        problems = []

        if cls.THREADS < 0:
            problems.append("SGMUS_THREADS")
        if not cls.OUTPUT_ROOT:
            problems.append("SGMUS_OUTPUT_ROOT")

        return len(problems) == 0, problems

    @classmethod
    def resolve_output_dir(cls, output_dir: str) -> str:
        """Resolve a relative output directory against the output root."""
        if os.path.isabs(output_dir):
            return output_dir
        return os.path.join(cls.OUTPUT_ROOT, output_dir)


class LogConfig:
    """Logging configuration."""

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    @classmethod
    def setup_logging(cls, logger_name: str) -> logging.Logger:
        """Setup logging for pipeline components."""
        logging.basicConfig(
            level=getattr(logging, cls.LOG_LEVEL.upper(), logging.INFO),
            format=cls.LOG_FORMAT
        )

        return logging.getLogger(logger_name)
