from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from msevo.annotation import Matrix, Vector
from msevo.error import InvalidArgumentError, JacobianMismatchError

JACOBIAN_CHECK_POINTS = 100
JACOBIAN_CHECK_TOLERANCE = 1e-6
JACOBIAN_CHECK_STEP = 1e-6


@dataclass(frozen=True)
class Feedback:
    """
    Control law depending on the state only, used on feedback arcs

    ``control`` returns the (unclipped) control value and ``jacobian`` its gradient with respect to the state.
    """

    control: Callable[[Vector], float]
    jacobian: Callable[[Vector], Vector]


@dataclass(frozen=True)
class PenaltyState:
    """
    Augmented state integrating the violation of ``x[constrained] <= bound``

    The integrand is ``max(0, x[constrained] - bound)^2 / 2`` and the state enters the terminal cost with ``weight``.
    """

    index: int
    constrained: int
    bound: float
    weight: float

    def integrand(self, x: Vector) -> float:
        excess = max(0.0, x[self.constrained] - self.bound)
        return 0.5 * excess * excess

    def integrand_gradient(self, x: Vector) -> float:
        """
        Derivative of the integrand with respect to ``x[constrained]``
        """
        return max(0.0, x[self.constrained] - self.bound)


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """
    Mayer-form optimal control problem with box control bounds

    The problem is immutable once built. Lagrange costs are carried by an augmented state whose terminal weight is 1.
    """

    name: str
    n: int
    m: int
    horizon: float
    x0: Vector
    dynamics: Callable[[Vector, Vector], Vector]
    fx: Callable[[Vector, Vector], Matrix]
    fu: Callable[[Vector, Vector], Matrix]
    terminal_cost: Callable[[Vector], float]
    terminal_gradient: Callable[[Vector], Vector]
    lower: Vector
    upper: Vector
    singular_feedback: Optional[Feedback] = None
    constrained_feedback: Optional[Feedback] = None
    switching_function: Optional[Callable[[Vector, Vector], float]] = None
    penalty: Optional[PenaltyState] = None
    state_constraint: Optional[Callable[[Vector], float]] = None
    stationary_control: Optional[Callable[[Vector, Vector], float]] = None
    canonical_modes: Optional[Tuple[float, float]] = None
    constants: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x0) != self.n:
            raise InvalidArgumentError(
                f"x0 has {len(self.x0)} components, {self.n} expected"
            )
        if len(self.lower) != self.m or len(self.upper) != self.m:
            raise InvalidArgumentError(f"Control bounds must have {self.m} components")
        if np.any(np.asarray(self.lower) >= np.asarray(self.upper)):
            raise InvalidArgumentError("Every lower control bound must be below the upper one")
        if self.horizon <= 0:
            raise InvalidArgumentError("The horizon must be positive")

    def constraint(self, x: Vector, u: Vector) -> Vector:
        """
        Evaluate ``g(x, u) <= 0``

        Only box bounds are instantiated, so the state is not used.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.concatenate((self.lower - u, u - self.upper))

    @property
    def bounds(self) -> Tuple[float, float]:
        """
        Bounds of the first control component
        """
        return float(self.lower[0]), float(self.upper[0])


def hamiltonian(psi: Vector, x: Vector, u, prob: ProblemDef) -> float:
    """
    Compute ``H = psi^T f(x, u)``
    """
    psi, x, u = _checked(psi, x, u, prob)
    return float(psi @ prob.dynamics(x, u))


def grad_u_hamiltonian(psi: Vector, x: Vector, u, prob: ProblemDef) -> Vector:
    """
    Compute ``grad_u H = fu(x, u)^T psi``
    """
    psi, x, u = _checked(psi, x, u, prob)
    return prob.fu(x, u).T @ psi


def with_penalty_weight(prob: ProblemDef, rho: float) -> ProblemDef:
    """
    Same problem with the penalty state weighted by ``rho`` in the terminal cost
    """
    if prob.penalty is None:
        raise InvalidArgumentError(f"Problem `{prob.name}` has no penalty state")
    delta = rho - prob.penalty.weight
    unit = np.zeros(prob.n)
    unit[prob.penalty.index] = 1.0
    cost, gradient = prob.terminal_cost, prob.terminal_gradient

    return replace(
        prob,
        terminal_cost=lambda x: cost(x) + delta * float(x[prob.penalty.index]),
        terminal_gradient=lambda x: np.asarray(gradient(x), dtype=float) + delta * unit,
        penalty=replace(prob.penalty, weight=rho),
        constants={**prob.constants, "rho": rho},
    )


def unpenalized_cost(prob: ProblemDef, x: Vector) -> float:
    """
    Terminal cost without the penalty term
    """
    if prob.penalty is None:
        return float(prob.terminal_cost(x))
    return float(prob.terminal_cost(x)) - prob.penalty.weight * float(x[prob.penalty.index])


def check_problem(
    prob: ProblemDef,
    points: int = JACOBIAN_CHECK_POINTS,
    seed: int = 0,
    tolerance: float = JACOBIAN_CHECK_TOLERANCE,
) -> float:
    """
    Compare the supplied Jacobians and terminal gradient with central differences at random points

    The points are drawn around ``x0`` and within the control bounds. The largest relative error is returned and ``JacobianMismatchError`` is raised if it exceeds ``tolerance``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0

    for _ in range(points):
        x = prob.x0 + 0.5 * np.maximum(1.0, np.abs(prob.x0)) * rng.uniform(
            -1.0, 1.0, prob.n
        )
        u = rng.uniform(prob.lower, prob.upper)

        fx_fd = _central_jacobian(lambda y: prob.dynamics(y, u), x)
        fu_fd = _central_jacobian(lambda v: prob.dynamics(x, v), u)
        dphi_fd = _central_jacobian(
            lambda y: np.atleast_1d(prob.terminal_cost(y)), x
        ).reshape(-1)

        for what, analytic, approx in (
            ("fx", prob.fx(x, u), fx_fd),
            ("fu", prob.fu(x, u), fu_fd),
            ("terminal gradient", prob.terminal_gradient(x), dphi_fd),
        ):
            error = _relative_error(np.asarray(analytic, dtype=float), approx)
            worst = max(worst, error)
            if error > tolerance:
                raise JacobianMismatchError(
                    f"{what} of problem `{prob.name}` is off by {error:.3e} at x = {x}, u = {u}"
                )

    return worst


_REGISTRY: Dict[str, Callable[..., ProblemDef]] = {}


def register_problem(name: str, factory: Callable[..., ProblemDef]) -> None:
    """
    Make a problem available by name after checking its Jacobians

    ``factory`` is called once without arguments for the check.
    """
    check_problem(factory())
    _REGISTRY[name] = factory


def get_problem(name: str, **params) -> ProblemDef:
    """
    Build a registered problem, forwarding ``params`` to its factory
    """
    if name not in _REGISTRY:
        raise InvalidArgumentError(
            f"Unknown problem `{name}` (known: {', '.join(list_problems())})"
        )
    return _REGISTRY[name](**params)


def list_problems() -> List[str]:
    return sorted(_REGISTRY)


def _checked(psi, x, u, prob: ProblemDef) -> Tuple[Vector, Vector, Vector]:
    psi = np.asarray(psi, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if len(psi) != prob.n or len(x) != prob.n or len(u) != prob.m:
        raise InvalidArgumentError(
            f"Expected dimensions ({prob.n}, {prob.n}, {prob.m}), got ({len(psi)}, {len(x)}, {len(u)})"
        )
    return psi, x, u


def _central_jacobian(f: Callable[[Vector], Vector], at: Vector) -> Matrix:
    at = np.asarray(at, dtype=float)
    columns = []
    for i in range(len(at)):
        step = JACOBIAN_CHECK_STEP * max(1.0, abs(at[i]))
        forward, backward = at.copy(), at.copy()
        forward[i] += step
        backward[i] -= step
        columns.append(
            (np.asarray(f(forward), dtype=float) - np.asarray(f(backward), dtype=float))
            / (2 * step)
        )
    return np.stack(columns, axis=-1)


def _relative_error(analytic: np.ndarray, approx: np.ndarray) -> float:
    analytic = analytic.reshape(approx.shape)
    return float(np.max(np.abs(analytic - approx)) / max(1.0, np.max(np.abs(approx))))
