import logging
import logging.config
import os


def setup_logging(log_file="~/.addrnet/logs/addrnet.log", level="INFO"):
    """
    Configure logging to file.

    Console output belongs to Typer/Rich, so only the file handler is set up.
    """
    log_file = os.path.expanduser(log_file)
    log_dir = os.path.dirname(log_file)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    config = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "standard": {
                "format": (
                    "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
                )
            },
        },
        "handlers": {
            "file": {
                "class": "logging.FileHandler",
                "level": level,
                "formatter": "standard",
                "filename": log_file,
                "encoding": "utf8",
            },
        },
        "loggers": {
            "addrnet": {"level": level, "handlers": ["file"]},
        },
    }
    logging.config.dictConfig(config)
