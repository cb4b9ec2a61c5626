from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
import sympy as sp

from msevo.annotation import Matrix, Vector
from msevo.error import DegenerateSingularError

from .problem import Feedback, PenaltyState, ProblemDef, register_problem

SINGULAR_DENOMINATOR_TOLERANCE = 1e-12
DEFAULT_PENALTY_WEIGHT = 10.0

LQ_HORIZON = 15.0
LQ_X0 = (4.0, -4.0)

FERMENTATION_HORIZON = 6.0
FERMENTATION_X0 = (3.0, 40.0, 5.0)
FERMENTATION_CONSTANTS = {
    "a1": 0.2,
    "a2": 0.5,
    "b1": 0.2,
    "b2": 0.001,
    "b3": 0.1,
    "b4": 0.0004,
    "c1": 0.25,
    "c2": 0.00125,
}

PENDULUM_HORIZON = 4.0
PENDULUM_EPSILON = 0.5


class BenchmarkId(Enum):
    """
    Benchmark problems compiled into the package
    """

    LQ = "lq"
    FERMENTATION = "fermentation"
    PENDULUM_CART = "pendulum"


def make_benchmark(id: BenchmarkId, **params) -> ProblemDef:
    """
    Build a benchmark problem with its published constants

    ``params`` are forwarded to the specific factory (e.g. ``x3max`` and ``rho`` for the pendulum).
    """
    factories = {
        BenchmarkId.LQ: make_lq,
        BenchmarkId.FERMENTATION: make_fermentation,
        BenchmarkId.PENDULUM_CART: make_pendulum,
    }
    return factories[BenchmarkId(id)](**params)


def make_lq() -> ProblemDef:
    """
    Control-constrained LQ problem, augmented with the running cost integrator ``x3``
    """
    f, fx, fu, x, u = _lq_symbolic()
    alpha, beta = canonical_mode_constants(
        np.array(
            [
                [0.0, 1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0, 1.0],
                [1.0, 0.0, 0.0, 1.0],
                [0.0, 1.0, -1.0, 0.0],
            ]
        )
    )

    return ProblemDef(
        name=BenchmarkId.LQ.value,
        n=3,
        m=1,
        horizon=LQ_HORIZON,
        x0=np.array([*LQ_X0, 0.0]),
        dynamics=f,
        fx=fx,
        fu=fu,
        terminal_cost=lambda x: float(x[2]),
        terminal_gradient=lambda x: np.array([0.0, 0.0, 1.0]),
        lower=np.array([-1.0]),
        upper=np.array([1.0]),
        stationary_control=_lq_stationary_control,
        canonical_modes=(alpha, beta),
    )


def make_fermentation() -> ProblemDef:
    """
    Fed-batch fermentation problem with a second order singular arc
    """
    f, fx, fu, f1 = _fermentation_symbolic()
    singular = Feedback(
        control=singular_feedback_fermentation,
        jacobian=lambda x: _fermentation_singular()[1](x),
    )

    return ProblemDef(
        name=BenchmarkId.FERMENTATION.value,
        n=3,
        m=1,
        horizon=FERMENTATION_HORIZON,
        x0=np.array(FERMENTATION_X0),
        dynamics=f,
        fx=fx,
        fu=fu,
        terminal_cost=lambda x: float((x[1] - 50.0) * x[2]),
        terminal_gradient=lambda x: np.array([0.0, x[2], x[1] - 50.0]),
        lower=np.array([0.0]),
        upper=np.array([1.0]),
        singular_feedback=singular,
        switching_function=lambda x, psi: float(psi @ f1(x)),
        constants=dict(FERMENTATION_CONSTANTS),
    )


def make_pendulum(x3max: Optional[float] = None, rho: float = DEFAULT_PENALTY_WEIGHT) -> ProblemDef:
    """
    Swing-up of a pendulum on a cart

    When ``x3max`` is given, the cart position constraint ``x3 <= x3max`` is handled by the penalty state ``x5`` weighted by ``rho``.
    """
    f, fx, fu, x, u = _pendulum_symbolic()
    constrained = Feedback(
        control=constrained_feedback_pendulum,
        jacobian=_pendulum_constrained_jacobian,
    )

    def cost(x: Vector) -> float:
        return 0.5 * float((x[0] - np.pi) ** 2 + x[1] ** 2 + x[2] ** 2 + x[3] ** 2)

    def cost_gradient(x: Vector) -> Vector:
        return np.array([x[0] - np.pi, x[1], x[2], x[3]])

    def switching(x: Vector, psi: Vector) -> float:
        return float(-np.cos(x[0]) * psi[1] + psi[3])

    common = dict(
        name=BenchmarkId.PENDULUM_CART.value,
        m=1,
        horizon=PENDULUM_HORIZON,
        lower=np.array([-1.0]),
        upper=np.array([1.0]),
        constrained_feedback=constrained,
        switching_function=switching,
    )

    if x3max is None:
        return ProblemDef(
            n=4,
            x0=np.zeros(4),
            dynamics=f,
            fx=fx,
            fu=fu,
            terminal_cost=cost,
            terminal_gradient=cost_gradient,
            constants={"epsilon": PENDULUM_EPSILON},
            **common,
        )

    penalty = PenaltyState(index=4, constrained=2, bound=x3max, weight=rho)

    def dynamics(x: Vector, u: Vector) -> Vector:
        return np.append(f(x[:4], u), penalty.integrand(x))

    def jacobian_x(x: Vector, u: Vector) -> Matrix:
        jacobian = np.zeros((5, 5))
        jacobian[:4, :4] = fx(x[:4], u)
        jacobian[4, 2] = penalty.integrand_gradient(x)
        return jacobian

    def jacobian_u(x: Vector, u: Vector) -> Matrix:
        return np.vstack((fu(x[:4], u), np.zeros((1, 1))))

    return ProblemDef(
        n=5,
        x0=np.zeros(5),
        dynamics=dynamics,
        fx=jacobian_x,
        fu=jacobian_u,
        terminal_cost=lambda x: cost(x) + rho * float(x[4]),
        terminal_gradient=lambda x: np.append(cost_gradient(x), rho),
        penalty=penalty,
        state_constraint=lambda x: float(x[2] - x3max),
        constants={"epsilon": PENDULUM_EPSILON, "x3max": x3max, "rho": rho},
        **common,
    )


def singular_feedback_fermentation(x: Vector) -> float:
    """
    Singular control of the fermentation problem as a function of the state only

    With ``f = f0 + f1 u`` and ``phi = psi^T f1``, ``phi' = psi^T g`` where ``g = [f0, f1]``, and ``phi'' = psi^T (A + u B)`` with ``A = [f0, g]``, ``B = [f1, g]``. On the singular surface ``psi`` is orthogonal to ``f1`` and ``g``, hence parallel to ``f1 x g`` in three dimensions, and ``phi'' = 0`` gives ``u = -det(f1, g, A) / det(f1, g, B)``.
    """
    numerator, denominator = _fermentation_singular()[0](x)
    if abs(denominator) <= SINGULAR_DENOMINATOR_TOLERANCE * max(1.0, abs(numerator)):
        raise DegenerateSingularError(
            f"Singular feedback denominator vanishes at x = {x}"
        )
    return -numerator / denominator


def fermentation_lie_brackets(x: Vector) -> Tuple[Vector, Vector, Vector, Vector]:
    """
    Evaluate ``f1``, ``g = [f0, f1]``, ``A = [f0, g]`` and ``B = [f1, g]`` at ``x``
    """
    return _fermentation_singular()[2](x)


def constrained_feedback_pendulum(x: Vector) -> float:
    """
    Control keeping the cart at rest on the position bound: ``u = -eps sin(x1) (x2^2 + cos(x1))``
    """
    return float(-PENDULUM_EPSILON * np.sin(x[0]) * (x[1] ** 2 + np.cos(x[0])))


def canonical_mode_constants(canonical: Matrix) -> Tuple[float, float]:
    """
    Return ``(alpha, beta)`` for the eigenvalue ``alpha + i beta`` of the canonical system with positive real and imaginary parts
    """
    eigenvalues = np.linalg.eigvals(canonical)
    candidates = [e for e in eigenvalues if e.real > 0 and e.imag > 0]
    if not candidates:
        raise DegenerateSingularError("The canonical system has no oscillating unstable mode")
    mode = max(candidates, key=lambda e: (e.real, e.imag))
    return float(mode.real), float(mode.imag)


def _lq_stationary_control(x: Vector, psi: Vector) -> float:
    return float(psi[1] / -psi[2]) if psi[2] != 0 else float(psi[1])


def _pendulum_constrained_jacobian(x: Vector) -> Vector:
    s, c = np.sin(x[0]), np.cos(x[0])
    jacobian = np.zeros(len(x))
    jacobian[0] = -PENDULUM_EPSILON * (c * (x[1] ** 2 + c) - s * s)
    jacobian[1] = -PENDULUM_EPSILON * s * 2 * x[1]
    return jacobian


def _vector(expr: sp.Matrix, args) -> Callable:
    compiled = sp.lambdify(args, expr, modules="numpy", cse=True)
    return lambda *values: np.asarray(compiled(*values), dtype=float).reshape(-1)


def _matrix(expr: sp.Matrix, args) -> Callable:
    compiled = sp.lambdify(args, expr, modules="numpy", cse=True)
    shape = expr.shape
    return lambda *values: np.asarray(compiled(*values), dtype=float).reshape(shape)


def _compile(f: sp.Matrix, x: List[sp.Symbol], u: List[sp.Symbol]):
    args = [x, u]
    return (
        _vector(f, args),
        _matrix(f.jacobian(x), args),
        _matrix(f.jacobian(u), args),
    )


@lru_cache(maxsize=None)
def _lq_symbolic():
    x = list(sp.symbols("x1:4"))
    u = [sp.Symbol("u")]
    f = sp.Matrix(
        [
            x[1],
            -x[0] + u[0],
            (x[0] ** 2 + x[1] ** 2 + u[0] ** 2) / 2,
        ]
    )
    return (*_compile(f, x, u), x, u)


def _fermentation_fields():
    k = {name: sp.Float(value) for name, value in FERMENTATION_CONSTANTS.items()}
    x1, x2, x3 = x = sp.symbols("x1:4")
    # The x1 growth factor (1/x3 + c1 + c2 x2) is kept here as published
    growth = k["a1"] * x1 * x2 / (1 + k["b1"] * x2 + k["b2"] * x2**2)
    uptake = k["a2"] * x1 * x2 / (1 + k["b3"] * x2 + k["b4"] * x2**2)
    f0 = sp.Matrix([growth * (1 / x3 + k["c1"] + k["c2"] * x2), -uptake, 0])
    f1 = sp.Matrix([-x1 / x3, (200 - x2) / x3, 1])
    return list(x), f0, f1


@lru_cache(maxsize=None)
def _fermentation_symbolic():
    x, f0, f1 = _fermentation_fields()
    u = [sp.Symbol("u")]
    f, fx, fu = _compile(f0 + f1 * u[0], x, u)
    return f, fx, fu, _vector(f1, [x])


@lru_cache(maxsize=None)
def _fermentation_singular():
    x, f0, f1 = _fermentation_fields()

    def bracket(a: sp.Matrix, b: sp.Matrix) -> sp.Matrix:
        return b.jacobian(x) * a - a.jacobian(x) * b

    g = bracket(f0, f1)
    a = bracket(f0, g)
    b = bracket(f1, g)
    normal = f1.cross(g)
    numerator = normal.dot(a)
    denominator = normal.dot(b)

    ratio = sp.lambdify([x], [numerator, denominator], modules="numpy", cse=True)
    gradients = sp.lambdify(
        [x],
        [
            [sp.diff(numerator, xi) for xi in x],
            [sp.diff(denominator, xi) for xi in x],
        ],
        modules="numpy",
        cse=True,
    )
    fields = sp.lambdify([x], [list(f1), list(g), list(a), list(b)], modules="numpy", cse=True)

    def jacobian(state: Vector) -> Vector:
        numerator, denominator = ratio(state)
        dnumerator, ddenominator = (np.asarray(v, dtype=float) for v in gradients(state))
        if abs(denominator) <= SINGULAR_DENOMINATOR_TOLERANCE * max(1.0, abs(numerator)):
            raise DegenerateSingularError(
                f"Singular feedback denominator vanishes at x = {state}"
            )
        return -(dnumerator * denominator - numerator * ddenominator) / denominator**2

    def brackets(state: Vector):
        return tuple(np.asarray(v, dtype=float) for v in fields(state))

    return ratio, jacobian, brackets


@lru_cache(maxsize=None)
def _pendulum_symbolic():
    x = list(sp.symbols("x1:5"))
    u = [sp.Symbol("u")]
    eps = sp.Float(PENDULUM_EPSILON)
    s, c = sp.sin(x[0]), sp.cos(x[0])
    f = sp.Matrix(
        [
            x[1],
            -(eps * x[1] ** 2 * s * c + s + c * u[0]) / (1 - eps * c**2),
            x[3],
            (eps * s * (x[1] ** 2 + c) + u[0]) / (1 - eps * c**2),
        ]
    )
    return (*_compile(f, x, u), x, u)


register_problem(BenchmarkId.LQ.value, make_lq)
register_problem(BenchmarkId.FERMENTATION.value, make_fermentation)
register_problem(BenchmarkId.PENDULUM_CART.value, make_pendulum)
