__all__ = ["app", "CliApp"]

import argparse
from collections.abc import Sequence
from pathlib import Path

from src.cli.router import CommandRouter, positive_int
from src.config import get_settings
from src.config_schema import Settings
from src.exceptions import CustomError
from src.logging_ import logger

PROG = "python -m src.cli"
DESCRIPTION = "Core and penumbra segmentation of CT perfusion studies with 4D convolution networks."


class CliApp:
    parser: argparse.ArgumentParser

    def __init__(self):
        self.parser = argparse.ArgumentParser(prog=PROG, description=DESCRIPTION)
        self._subparsers = self.parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def include_router(self, router: CommandRouter) -> None:
        for command in router.commands:
            sub = self._subparsers.add_parser(command.name, help=command.help, description=command.help)
            sub.add_argument("--config", type=Path, help="Settings document (YAML or JSON); default $SETTINGS_PATH")
            sub.add_argument("--seed", type=int, help="Override the seed of the command")
            sub.add_argument("--jobs", type=positive_int, default=1, help="Worker threads for per-patient work")
            for flags, kwargs in command.arguments:
                sub.add_argument(*flags, **kwargs)
            sub.set_defaults(handler=command.handler)

    def load_settings(self, args: argparse.Namespace) -> Settings:
        if args.config is not None:
            return Settings.from_file(args.config)
        return get_settings()

    def run(self, argv: Sequence[str] | None = None) -> int:
        """
        Exit code: 0 success, 1 partial failure or runtime error, 2 usage or configuration error.
        """
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)

        try:
            settings = self.load_settings(args)
            logger.info(f"Running {args.command}")
            code = args.handler(args, settings)
        except CustomError as e:
            logger.error(f"{type(e).__name__}: {e.detail}")
            return e.exit_code
        except OSError as e:
            logger.error(f"{type(e).__name__}: {e}")
            return 1
        logger.info(f"Finished {args.command} with exit code {code}")
        return code


app = CliApp()

from src.modules.metrics.commands import router as router_metrics  # noqa: E402
from src.modules.networks.commands import router as router_networks  # noqa: E402
from src.modules.pipeline.commands import router as router_pipeline  # noqa: E402
from src.modules.training.commands import router as router_training  # noqa: E402

app.include_router(router_pipeline)
app.include_router(router_training)
app.include_router(router_metrics)
app.include_router(router_networks)
