import shlex
from argparse import ArgumentParser, Namespace
from textwrap import dedent
from typing import Callable, NoReturn, Sequence, Union

from msevo.error import ConfigError, MseError
from msevo.utility.match import Match

from .shell import EXIT_FAILURE, EXIT_SUCCESS, EXIT_USAGE, Shell, ShellError, ShellType


def command() -> Callable:
    """
    Make a command compatible with the underlying ``cmd.Cmd`` class

    It should only be used on methods of a class derived from ``Shell`` whose identifiers begin with ``do_``. The command sets the ``status`` of the shell: recoverable errors are logged and turned into an exit status.
    """

    def impl(f: Callable) -> Callable[[ShellType, str], bool]:
        wrapper = _ensure_wrapper(f)

        def do(obj: ShellType, line: Union[str, Sequence[str]]) -> bool:
            wrapper.call_command(obj, line)
            return False

        do.__doc__ = wrapper.doc
        return do

    return impl


def argument(*args, **kwargs) -> Callable[[Callable], Callable]:
    """
    Provide an argument specification

    This decorator behaves like the ``ArgumentParser.add_argument`` method. However, the result from the call of ``ArgumentParser.parse_args`` is unpacked to the command.
    """

    def impl(f):
        f = _ensure_wrapper(f)
        f.parser.add_argument(*args, **kwargs)
        return f

    return impl


class _Wrapper:
    def __init__(self, f: Callable):
        """
        Hold a callable which will received the CLI arguments
        """
        self.__f = f

        self.doc = dedent(f.__doc__).strip() if f.__doc__ else None
        self.parser = _Parser(prog=f.__name__[3:].replace("_", "-"), description=self.doc)

    def call_command(self, shell: Shell, line: Union[str, Sequence[str]]) -> None:
        """
        Forward the parsed CLI arguments to the held function

        A parsing failure sets the usage exit status. ``ShellError`` and solver errors are reported and set the status they carry.
        """
        try:
            arguments = self.parser.parse(shell, line)
        except SystemExit as e:
            shell.status = EXIT_SUCCESS if not e.code else EXIT_USAGE
            return

        try:
            self.__f(shell, **vars(arguments))
        except ShellError as e:
            shell.log_error(str(e))
            shell.status = e.status
        except MseError as e:
            shell.log_error(str(e))
            shell.status = Match(e) & {ConfigError: EXIT_USAGE, MseError: EXIT_FAILURE}


class _Parser(ArgumentParser):
    def __init__(self, *args, **kwargs):
        """
        Initialize the underlying parser
        """
        super().__init__(
            *args,
            **kwargs,
        )

    def parse(self, shell: Shell, line: Union[str, Sequence[str]]) -> Namespace:
        """
        Parse the arguments from a command line, or from a list of words

        Instead of exiting the program, this method will raise a ``SystemExit`` caught by the command if the parsing fails.
        """
        self.__shell = shell
        return self.parse_args(shlex.split(line) if isinstance(line, str) else list(line))

    def print_usage(self, _=None) -> None:
        """
        Print the usage string to the output stream of the shell
        """
        self.__shell.log_error(self.format_usage().strip())

    def print_help(self, _=None) -> None:
        """
        Print the help string to the output stream of the shell
        """
        self.__shell.log_help(self.format_help())

    def error(self, msg: str) -> NoReturn:
        """
        Print the usage and the reason of the parsing failure
        """
        self.print_usage()
        self.__shell.log_error(msg)
        raise SystemExit(EXIT_USAGE)

    def _print_message(self, message: str, _=None) -> None:
        """
        Print to the output stream

        It overrides the method of the base class so it does not write to the standard error.
        """
        if message:
            self.__shell.log(message.rstrip("\n"))


def _ensure_wrapper(f: Union[Callable, _Wrapper]) -> _Wrapper:
    """
    Wrap a function if needed
    """
    if isinstance(f, _Wrapper):
        return f
    else:
        return _Wrapper(f)
