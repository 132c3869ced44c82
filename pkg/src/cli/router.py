__all__ = ["CommandRouter", "Command", "Handler", "arg", "positive_int"]

import argparse
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from src.config_schema import Settings

Handler = Callable[[argparse.Namespace, Settings], int]
"Returns the exit code: 0 success, 1 partial failure"


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def arg(*flags: str, **kwargs: Any) -> tuple[tuple[str, ...], dict[str, Any]]:
    return flags, kwargs


@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: list[tuple[tuple[str, ...], dict[str, Any]]] = field(default_factory=list)


class CommandRouter:
    """Subcommands of one feature, registered by the CLI app."""

    commands: list[Command]

    def __init__(self):
        self.commands = []

    def command(self, name: str, help: str, *arguments: tuple[tuple[str, ...], dict[str, Any]]):
        def decorator(handler: Handler) -> Handler:
            self.commands.append(Command(name, help, handler, list(arguments)))
            return handler

        return decorator
