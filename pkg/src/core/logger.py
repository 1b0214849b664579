import logging
from logging.config import dictConfig

from src.core.config import settings

ROOT_LOGGER = "precisionlab"


def build_logger_config(level: str, log_file=None) -> dict:
    handlers = {
        "console": {
            "class": "logging.StreamHandler",
            "level": level,
            "formatter": "default",
            "stream": "ext://sys.stdout",
        },
    }
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers["file"] = {
            "class": "logging.FileHandler",
            "level": level,
            "formatter": "default",
            "filename": str(log_file),
            "mode": "a",
        }

    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
            }
        },
        "handlers": handlers,
        "loggers": {
            ROOT_LOGGER: {
                "level": level,
                "handlers": list(handlers),
                "propagate": False,
            }
        },
    }


dictConfig(build_logger_config(settings.LOG_LEVEL, settings.LOG_FILE))


def get_logger(name: str = None):
    if name and name != "__main__":
        module = name.split(".")[-1]
        return logging.getLogger(f"{ROOT_LOGGER}.{module}")
    return logging.getLogger(ROOT_LOGGER)


logger = get_logger()
