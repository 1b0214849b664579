from pathlib import Path
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
import logging


class Settings(BaseSettings):

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[Path] = None

    # Output
    OUTPUT_DIR: Path = Path("out")

    # Solver defaults
    DEFAULT_EPSILON: float = 1e-6
    ZERO_THRESHOLD_REL: float = 1e-8
    BCD_MAX_SWEEPS: int = 100
    BCD_QP_TOL: float = 1e-10
    BCD_QP_MAX_ITER: int = 10000
    NESTEROV_GAP_CHECK_EVERY: int = 50

    # Benchmarks
    BENCH_TIMEOUT_SECONDS: float = 3600.0

    # Redis (benchmark worker broker)
    REDIS_HOST: str = "localhost"
    REDIS_PORT: int = 6379
    BENCH_BROKER_DB: int = 1
    BENCH_RESULT_DB: int = 2

    # Trials run in-process unless a worker pool is deployed
    CELERY_TASK_ALWAYS_EAGER: bool = True

    @property
    def CELERY_BROKER_URL(self) -> str:
        """
        Queue the benchmark trials are dispatched on when not running eagerly.
        """
        return f"redis://{self.REDIS_HOST}:{self.REDIS_PORT}/{self.BENCH_BROKER_DB}"

    @property
    def CELERY_RESULT_BACKEND(self) -> str:
        """
        Where workers leave trial records for the experiment driver to collect.
        """
        return f"redis://{self.REDIS_HOST}:{self.REDIS_PORT}/{self.BENCH_RESULT_DB}"

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )


try:
    settings = Settings()
except Exception as e:
    logging.error(f"Failed to load settings: {e}")
    raise
