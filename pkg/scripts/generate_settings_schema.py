"""
Regenerate settings.schema.yaml from the pydantic settings models. Run after changing src/config_schema.py.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).parents[1]
sys.path.append(str(ROOT))
from src.config_schema import Settings  # noqa: E402

if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "settings.schema.yaml"
    Settings.save_schema(target)
