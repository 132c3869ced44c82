import os
from functools import cache
from pathlib import Path

from src.config_schema import Settings

settings_path = os.getenv("SETTINGS_PATH", "settings.yaml")


@cache
def get_settings() -> Settings:
    path = Path(settings_path)
    if not path.exists():
        return Settings()
    return Settings.from_yaml(path)
