import sys
from typing import Optional, Sequence, TextIO

from .mse_shell import MseShell


def run(argv: Optional[Sequence[str]] = None, ostream: Optional[TextIO] = None) -> int:
    """
    Run one command line and return its exit status

    ``argv`` defaults to the arguments of the program and ``ostream`` to the standard output.
    """
    shell = MseShell(ostream=ostream if ostream is not None else sys.stdout)
    return shell.execute(list(argv) if argv is not None else sys.argv[1:])


def main() -> None:
    sys.exit(run())
