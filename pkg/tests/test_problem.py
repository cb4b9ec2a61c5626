from dataclasses import replace

import numpy as np
import pytest

from msevo.error import InvalidArgumentError, JacobianMismatchError
from msevo.problem import *

from .mock_problem import make_steering


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_benchmarks_are_registered():
    assert {"lq", "fermentation", "pendulum"} <= set(list_problems())


@pytest.mark.parametrize("name", ["lq", "fermentation", "pendulum"])
def test_benchmark_jacobians_match_finite_differences(name):
    assert check_problem(get_problem(name), points=20) < JACOBIAN_CHECK_TOLERANCE


def test_penalized_pendulum_jacobians_match_finite_differences():
    assert check_problem(make_pendulum(x3max=0.5), points=20) < JACOBIAN_CHECK_TOLERANCE


def test_get_unknown_problem():
    with pytest.raises(InvalidArgumentError):
        get_problem("no-such-problem")


def test_register_custom_problem():
    register_problem("registered-steering", make_steering)

    assert "registered-steering" in list_problems()
    assert get_problem("registered-steering", target=2.0).n == 2


def test_register_rejects_wrong_jacobian():
    def broken():
        return replace(make_steering(), fu=lambda x, u: np.array([[2.0], [u[0]]]))

    with pytest.raises(JacobianMismatchError):
        register_problem("broken-steering", broken)
    assert "broken-steering" not in list_problems()


def test_hamiltonian_of_steering():
    prob = make_steering()
    psi, x = np.array([0.5, -1.0]), np.zeros(2)

    assert hamiltonian(psi, x, 0.5, prob) == pytest.approx(0.5 * 0.5 - 0.125)
    assert grad_u_hamiltonian(psi, x, 0.5, prob) == pytest.approx([0.0])


def test_hamiltonian_checks_dimensions():
    with pytest.raises(InvalidArgumentError):
        hamiltonian(np.zeros(3), np.zeros(2), 0.0, make_steering())


def test_problem_rejects_crossed_bounds():
    with pytest.raises(InvalidArgumentError):
        replace(make_steering(), lower=np.array([1.0]), upper=np.array([0.0]))


def test_with_penalty_weight():
    prob = make_pendulum(x3max=0.5)
    heavier = with_penalty_weight(prob, 1e3)
    x = np.array([1.0, 0.2, 0.4, -0.1, 0.03])

    assert heavier.penalty.weight == 1e3
    assert heavier.constants["rho"] == 1e3
    assert heavier.terminal_cost(x) - prob.terminal_cost(x) == pytest.approx((1e3 - 10.0) * 0.03)
    assert heavier.terminal_gradient(x)[4] == pytest.approx(1e3)
    assert unpenalized_cost(heavier, x) == pytest.approx(unpenalized_cost(prob, x))


def test_with_penalty_weight_needs_a_penalty():
    with pytest.raises(InvalidArgumentError):
        with_penalty_weight(make_lq(), 100.0)


def test_pendulum_without_bound_has_no_penalty():
    assert make_pendulum().penalty is None
    assert make_pendulum().n == 4


def test_fermentation_brackets_match_jacobians(rng):
    prob = make_fermentation()
    for _ in range(10):
        x = prob.x0 * rng.uniform(0.5, 1.5, 3)
        f0 = prob.dynamics(x, np.zeros(1))
        f1 = prob.dynamics(x, np.ones(1)) - f0
        df0 = prob.fx(x, np.zeros(1))
        df1 = prob.fx(x, np.ones(1)) - df0

        _, g, _, _ = fermentation_lie_brackets(x)

        assert np.allclose(g, df1 @ f0 - df0 @ f1, rtol=1e-8, atol=1e-10)


def test_fermentation_singular_feedback_keeps_switching_surface(rng):
    prob = make_fermentation()
    for _ in range(10):
        x = prob.x0 * rng.uniform(0.5, 1.5, 3)
        f1, g, a, b = fermentation_lie_brackets(x)
        u = singular_feedback_fermentation(x)
        normal = np.cross(f1, g)

        assert abs(normal @ (a + u * b)) <= 1e-8 * max(1.0, abs(normal @ a))


def test_pendulum_constrained_feedback_stops_the_cart(rng):
    prob = make_pendulum()
    for _ in range(10):
        x = rng.uniform(-1.0, 1.0, 4)
        u = constrained_feedback_pendulum(x)

        assert abs(prob.dynamics(x, np.array([u]))[3]) < 1e-12


def test_lq_canonical_modes():
    canonical = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, -1.0, 0.0],
        ]
    )
    alpha, beta = make_lq().canonical_modes

    assert alpha > 0 and beta > 0
    assert np.min(np.abs(np.linalg.eigvals(canonical) - complex(alpha, beta))) < 1e-10
