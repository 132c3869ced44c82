import sys

from src.cli.app import app

sys.exit(app.run())
