import os
import warnings
from dataclasses import replace
from typing import List, Optional

import numpy as np
from pandas import concat

from msevo.gradient import check_gradient, random_check_structure
from msevo.optimizer import RunConfig, load_config, solve
from msevo.problem import get_problem, list_problems
from msevo.tracker import Tracker

from .command import argument, command
from .report import make_problem, save_report, trace_report, write_table
from .shell import EXIT_USAGE, Shell, ShellError

"""
Mesh of the gradient check, in steps per horizon
"""
GRADIENT_CHECK_STEPS = 1000

GRADIENT_CHECK_FILE = "grad_check.csv"


class MseShell(Shell):
    """
    Commands of the ``msevo`` program
    """

    @command()
    @argument("problem", nargs="?", help="registered problem, overrides the `problem` key of the configuration")
    @argument("--config", help="run configuration file")
    @argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a configuration key")
    @argument("--out", help="report directory, overrides the `out` key of the configuration")
    def do_solve(self, problem: Optional[str], config: Optional[str], overrides: List[str], out: Optional[str]):
        """
        Solve a problem and write its report

        The report directory receives the summary, the structure record, the configuration, the tables of the performance index, of the structural events and of the final trajectory, and a gnuplot script. The exit status is 0 if and only if the maximum principle residual fell below its tolerance.
        """
        run = self.__run_config(problem, config, overrides)
        out = _output_directory(out or run.out or os.curdir)
        prob = make_problem(run)

        self.log_status(f"Solving `{prob.name}`...")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            report = solve(prob, run.solver, run.stages, Tracker(log=self.log_status))
        for warning in caught:
            self.log_status(f"warning: {warning.message}")

        self.log(report.summary().rstrip("\n"))
        for path in save_report(out, run, report):
            self.log(f"wrote {path}")

        if not report.converged:
            raise ShellError(f"`{prob.name}` did not converge ({report.reason.value})")

    @command()
    @argument("problem", help="registered problem")
    @argument("--seed", type=int, default=0, help="seed of the random check structures")
    @argument("--samples", type=int, default=20, help="number of random check structures")
    @argument("--config", help="run configuration file, for `x3max` and `h_max`")
    @argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a configuration key")
    @argument("--out", help="directory receiving the comparison table as CSV")
    def do_grad_check(
        self,
        problem: str,
        seed: int,
        samples: int,
        config: Optional[str],
        overrides: List[str],
        out: Optional[str],
    ):
        """
        Compare analytic gradients with central differences on random structures

        Every decision entry of every sample is printed with both values, their relative error and PASS or FAIL. The exit status is nonzero if any entry fails.
        """
        if seed < 0 or samples < 1:
            raise ShellError("`--seed` must be nonnegative and `--samples` positive", EXIT_USAGE)
        run = self.__run_config(problem, config, overrides)
        if out is not None:
            out = _output_directory(out)
        prob = make_problem(run)
        h_max = run.solver.h_max if run.solver.h_max is not None else prob.horizon / GRADIENT_CHECK_STEPS

        rng = np.random.default_rng(seed)
        tables = []
        for k in range(samples):
            s = random_check_structure(prob, rng)
            table = check_gradient(prob, s, h_max)
            table.insert(0, "sample", k)
            tables.append(table)
            self.log(f"sample {k}: {s.describe()}")
            self.log(table.drop(columns="sample").to_string(index=False))

        results = concat(tables, ignore_index=True)
        if out is not None:
            path = os.path.join(out, GRADIENT_CHECK_FILE)
            write_table(results, path)
            self.log(f"wrote {path}")

        failed = int((results["status"] == "FAIL").sum())
        if failed:
            raise ShellError(f"{failed} of {len(results)} gradient entries FAIL")
        self.log_status(f"All {len(results)} gradient entries PASS")

    @command()
    @argument("report", help="directory written by `solve`")
    @argument("--out", help="directory receiving the tables, the report directory by default")
    def do_trace(self, report: str, out: Optional[str]):
        """
        Emit again the tables of a saved report

        The trajectory is integrated again from the saved structure, so the files are identical to the ones `solve` wrote.
        """
        if not os.path.isdir(report):
            raise ShellError(f"`{report}` is not a directory", EXIT_USAGE)
        if out is not None:
            out = _output_directory(out)
        for path in trace_report(report, out):
            self.log(f"wrote {path}")

    @command()
    def do_list_problems(self):
        """
        List the registered problems
        """
        for name in list_problems():
            prob = get_problem(name)
            lower, upper = prob.bounds
            self.log(f"{name}: n = {prob.n}, m = {prob.m}, T = {prob.horizon:g}, {lower:g} <= u <= {upper:g}")

    def __run_config(self, problem: Optional[str], config: Optional[str], overrides: List[str]) -> RunConfig:
        """
        Load the run configuration and check the problem exists before any work begins
        """
        if config is not None and not os.path.isfile(config):
            raise ShellError(f"Configuration file `{config}` does not exist", EXIT_USAGE)
        run = load_config(config, overrides)
        if problem is not None:
            run = replace(run, problem=problem)
        if run.problem not in list_problems():
            raise ShellError(
                f"Unknown problem `{run.problem}` (known: {', '.join(list_problems())})", EXIT_USAGE
            )
        return run


def _output_directory(path: str) -> str:
    """
    Create ``path`` if needed and check it can receive files
    """
    if os.path.exists(path) and not os.path.isdir(path):
        raise ShellError(f"`{path}` exists and is not a directory", EXIT_USAGE)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ShellError(f"Cannot create `{path}`: {e.strerror}", EXIT_USAGE)
    if not os.access(path, os.W_OK):
        raise ShellError(f"`{path}` is not writable", EXIT_USAGE)
    return path
