import cmd
import shlex
from sys import stdin, stdout
from typing import Optional, Sequence, TextIO, TypeVar

import terminology as tmg

from msevo.utility.synchronized_ostream import SynchronizedOStream

"""
Exit status of a command whose criterion was met
"""
EXIT_SUCCESS = 0

"""
Exit status of a command that ran but failed (solver divergence, failed gradient check, no convergence...)
"""
EXIT_FAILURE = 1

"""
Exit status of a command line that could not be understood
"""
EXIT_USAGE = 2


class Shell(cmd.Cmd):
    def __init__(self, istream: TextIO = stdin, ostream: TextIO = stdout):
        """
        Initialize the base class with IO streams

        Colors are used if and only if the output stream is connected to a terminal.
        """

        self.__ostream = SynchronizedOStream(
            ostream, use_colors=ostream.isatty(), modifier=tmg.in_yellow
        )
        self.status = EXIT_SUCCESS

        super().__init__(stdin=istream, stdout=self.__ostream)

    def execute(self, argv: Sequence[str]) -> int:
        """
        Run a single command given as a list of words and return its exit status

        Hyphens in the command name stand for the underscores of the ``do_`` method name.
        """
        self.status = EXIT_SUCCESS
        if not argv or not argv[0].strip():
            self.log_error("No command given")
            self.log_help(self.usage())
            return EXIT_USAGE

        name, *args = argv
        if name in ("-h", "--help"):
            name = "help"
        self.onecmd(" ".join([name.replace("-", "_"), *map(shlex.quote, args)]))
        return self.status

    def usage(self) -> str:
        """
        List the available commands with the first line of their description
        """
        lines = ["Commands:"]
        for name in sorted(self.get_names()):
            if not name.startswith("do_"):
                continue
            doc = (getattr(self, name).__doc__ or "").strip().splitlines()
            lines.append(f"  {name[3:].replace('_', '-'):<16}{doc[0] if doc else ''}")
        return "\n".join(lines)

    def default(self, line: str) -> None:
        """
        Report an unknown command

        It overrides the base class method of the same name.
        """
        self.status = EXIT_USAGE
        word = line.split()[0] if line.split() else line
        self.log_error("`" + tmg.in_bold(word.replace("_", "-")) + "` is not a command")
        self.log_help(self.usage())

    def do_help(self, arg: str) -> None:
        """
        Describe a command, or list them all without argument
        """
        if arg.strip():
            super().do_help(arg.strip().replace("-", "_"))
        else:
            self.log_help(self.usage())

    def emptyline(self) -> None:
        """
        Do nothing, instead of repeating the last command like the base class does
        """

    def log(self, *args, **kwargs) -> None:
        """
        Log a message of any choosen style

        ``args`` and ``kwargs`` are forwarded to ``SynchronizedOStream.log``.
        """
        self.__ostream.log(*args, **kwargs)

    def log_error(self, msg: str, *args, **kwargs) -> None:
        """
        Log an error
        """
        self.__ostream.log(msg, tmg.in_red, *args, **kwargs)

    def log_help(self, msg: str, *args, **kwargs) -> None:
        """
        Log a help message
        """
        self.__ostream.log(msg, tmg.in_green, *args, **kwargs)

    def log_status(self, msg: str, *args, **kwargs) -> None:
        """
        Log a status message
        """
        self.__ostream.log(
            msg, lambda x: tmg.in_yellow(tmg.in_bold(x)), *args, **kwargs
        )


ShellType = TypeVar("ShellType", bound=Shell)


class ShellError(Exception):
    """
    Used to signal a recoverable error to the shell

    When caught, the command is interrupted and the shell reports the message with the exit status ``status``.
    """

    def __init__(self, message: Optional[str] = None, status: int = EXIT_FAILURE):
        super().__init__(message)
        self.status = status
