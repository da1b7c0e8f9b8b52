"""Command routers: handlers register subcommands, the dispatcher builds one argparse CLI."""
import argparse
import asyncio
import inspect
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

Handler = Callable[[argparse.Namespace], Any]


@dataclass(frozen=True)
class Argument:
    flags: tuple[str, ...]
    options: dict[str, Any]


def arg(*flags: str, **options: Any) -> Argument:
    return Argument(flags, options)


@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: Sequence[Argument] = field(default_factory=tuple)


class Router:
    def __init__(self, name: str | None = None):
        self.name = name
        self.commands: list[Command] = []

    def command(self, name: str, help: str = "", *arguments: Argument) -> Callable[[Handler], Handler]:
        def decorator(handler: Handler) -> Handler:
            self.commands.append(Command(name, help, handler, arguments))
            return handler

        return decorator


class Dispatcher:
    def __init__(self, prog: str, description: str = ""):
        self.prog = prog
        self.description = description
        self.commands: dict[str, Command] = {}

    def include_routers(self, *routers: Router) -> None:
        for router in routers:
            for command in router.commands:
                if command.name in self.commands:
                    raise ValueError(f"command {command.name} registered twice")
                self.commands[command.name] = command

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self.prog, description=self.description)
        subparsers = parser.add_subparsers(dest="command", metavar="command", required=True)
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.help, description=command.help)
            for argument in command.arguments:
                sub.add_argument(*argument.flags, **argument.options)
            sub.set_defaults(handler=command.handler)
        return parser

    def dispatch(self, args: argparse.Namespace) -> int:
        result = args.handler(args)
        if inspect.iscoroutine(result):
            result = asyncio.run(result)
        return int(result or 0)
