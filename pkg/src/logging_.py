__all__ = ["logger"]

import logging.config
import os
from pathlib import Path

import yaml

BASE_DIR = Path(__file__).resolve().parents[1]


class RelativePathFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        record.relativePath = os.path.relpath(record.pathname)
        return True


logging_path = Path(os.getenv("LOGGING_PATH", BASE_DIR / "logging.yaml"))

if logging_path.exists():
    with open(logging_path, encoding="utf-8") as f:
        config = yaml.safe_load(f)
        logging.config.dictConfig(config)
else:
    logging.basicConfig(level=logging.INFO)

logger = logging.getLogger("src")
logger.addFilter(RelativePathFilter())
