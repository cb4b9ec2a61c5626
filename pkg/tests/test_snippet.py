from io import StringIO

import numpy as np
import pytest

from msevo.integrate import performance
from msevo.optimizer import SolverConfig, solve, starting_structure
from msevo.problem import ProblemDef, get_problem, register_problem
from msevo.shell import EXIT_SUCCESS, MseShell
from msevo.shell.command import argument, command


def make_double_integrator(horizon: float = 2.0) -> ProblemDef:
    """
    Bring a double integrator close to rest at the origin with little control effort
    """
    return ProblemDef(
        name="double-integrator",
        n=3,
        m=1,
        horizon=horizon,
        x0=np.array([1.0, 0.0, 0.0]),
        dynamics=lambda x, u: np.array([x[1], u[0], 0.5 * u[0] ** 2]),
        fx=lambda x, u: np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        fu=lambda x, u: np.array([[0.0], [1.0], [u[0]]]),
        terminal_cost=lambda x: 5.0 * (x[0] ** 2 + x[1] ** 2) + x[2],
        terminal_gradient=lambda x: np.array([10.0 * x[0], 10.0 * x[1], 1.0]),
        lower=np.array([-1.0]),
        upper=np.array([1.0]),
    )


class MyShell(MseShell):
    @command()
    @argument("problem", type=str)
    def do_sigma(self, problem):
        """
        Print the performance index of the starting structure of a problem
        """
        prob = get_problem(problem)
        self.log_status(f"{performance(prob, starting_structure(prob)):.6g}")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_solve_a_registered_problem():
    register_problem("double-integrator", make_double_integrator)
    prob = get_problem("double-integrator", horizon=3.0)

    report = solve(prob, SolverConfig(h_max=0.01, max_iterations=5))

    assert report.sigma <= report.sigma_history["sigma"].iloc[0]


def test_extend_the_shell():
    register_problem("double-integrator", make_double_integrator)
    ostream = StringIO()

    assert MyShell(ostream=ostream).execute(["sigma", "double-integrator"]) == EXIT_SUCCESS
    assert ostream.getvalue() == "5\n"
