from typing import List, Optional

import numpy as np
from pandas import DataFrame

from msevo.annotation import Vector
from msevo.error import DegenerateSingularError, DivergenceError, InvalidArgumentError
from msevo.integrate import evaluate, performance
from msevo.problem import BenchmarkId, ProblemDef
from msevo.structure import (
    Arc,
    Bound,
    BoundaryArc,
    CanonicalArc,
    ConstrainedArc,
    ControlStructure,
    HermiteArc,
    SingularArc,
    TimePolynomialArc,
    layout,
    pack,
    unpack,
)

from .gradient import assemble_gradient

"""
Relative size of the central difference steps
"""
FINITE_DIFFERENCE_STEP = 1e-5
GRADIENT_CHECK_TOLERANCE = 1e-4
GRADIENT_CHECK_FLOOR = 1e-8

"""
Smallest arc length of a random check structure, relative to the horizon
"""
MIN_CHECK_ARC_FRACTION = 0.05

"""
Random control values stay within this fraction of the control range around its middle
"""
CHECK_VALUE_FRACTION = 0.8

MAX_CHECK_DRAWS = 20


def finite_difference_gradient(
    prob: ProblemDef, s: ControlStructure, h_max: Optional[float] = None, step: float = FINITE_DIFFERENCE_STEP
) -> Vector:
    """
    Central differences of the performance index along every decision entry, with steps ``step * max(1, |d_k|)``

    Every evaluation builds the mesh of the perturbed structure.
    """
    d = pack(s).values
    gradient = np.empty(len(d))
    for k in range(len(d)):
        h = step * max(1.0, abs(d[k]))
        forth, back = d.copy(), d.copy()
        forth[k] += h
        back[k] -= h
        gradient[k] = (
            performance(prob, unpack(s, forth), h_max) - performance(prob, unpack(s, back), h_max)
        ) / (2.0 * h)
    return gradient


def check_gradient(
    prob: ProblemDef,
    s: ControlStructure,
    h_max: Optional[float] = None,
    tolerance: float = GRADIENT_CHECK_TOLERANCE,
    floor: float = GRADIENT_CHECK_FLOOR,
) -> DataFrame:
    """
    Compare the analytic gradient of ``s`` with central differences, entry by entry

    The relative error is ``|analytic - fd| / max(|fd|, floor)`` and an entry passes when it is below ``tolerance`` or when both values are within ``floor`` of each other.
    """
    analytic = assemble_gradient(evaluate(prob, s, h_max), s).values
    approx = finite_difference_gradient(prob, s, h_max)
    error = np.abs(analytic - approx) / np.maximum(np.abs(approx), floor)
    passed = (error < tolerance) | (np.abs(analytic - approx) <= floor)
    return DataFrame(
        {
            "entry": [str(entry) for entry in layout(s)],
            "analytic": analytic,
            "finite_difference": approx,
            "relative_error": error,
            "status": np.where(passed, "PASS", "FAIL"),
        }
    )


def random_check_structure(prob: ProblemDef, rng: np.random.Generator) -> ControlStructure:
    """
    Random structure mixing the arc kinds of a problem, so that every node formula gets exercised

    Nodes are at least ``MIN_CHECK_ARC_FRACTION * T`` apart. Outside the pendulum, the last explicit arc starts beyond the upper bound so that its control is clipped, and problems with canonical modes get a canonical arc. Draws whose integration fails are replaced.
    """
    for _ in range(MAX_CHECK_DRAWS):
        s = _draw(prob, rng)
        try:
            evaluate(prob, s)
        except (DivergenceError, DegenerateSingularError):
            continue
        return s
    raise InvalidArgumentError(f"No integrable check structure found for `{prob.name}`")


def _draw(prob: ProblemDef, rng: np.random.Generator) -> ControlStructure:
    lower, upper = prob.bounds
    middle, radius = 0.5 * (lower + upper), 0.5 * CHECK_VALUE_FRACTION * (upper - lower)
    value = lambda: float(middle + radius * rng.uniform(-1.0, 1.0))
    slope = lambda: float(radius * rng.uniform(-1.0, 1.0))

    arcs: List[Arc]
    if prob.name == BenchmarkId.FERMENTATION.value:
        arcs = [
            BoundaryArc(bound=Bound.LOWER),
            BoundaryArc(bound=Bound.UPPER),
            SingularArc(),
            BoundaryArc(bound=Bound.LOWER),
        ]
    elif prob.name == BenchmarkId.PENDULUM_CART.value:
        arcs = [
            TimePolynomialArc(p=(value(), slope(), value(), slope())),
            BoundaryArc(bound=Bound.LOWER),
            TimePolynomialArc(p=(value(), slope(), value(), slope())),
            ConstrainedArc(),
            BoundaryArc(bound=Bound.UPPER),
        ]
    else:
        joint, joint_slope, last = value(), slope(), value()
        arcs = [
            # Pinned ends leave the bound towards the inside
            HermiteArc(p=(value(), slope(), upper, abs(slope())), pin_end=True),
            BoundaryArc(bound=Bound.UPPER),
            HermiteArc(p=(upper, -abs(slope()), joint, joint_slope), pin_start=True),
            HermiteArc(p=(joint, joint_slope, last, slope()), link_value=True, link_slope=True),
        ]
        if prob.canonical_modes is not None:
            alpha, beta = prob.canonical_modes
            # The modes grow like exp(alpha s), their weights are scaled down accordingly
            scale = 0.1 * radius * np.exp(-abs(alpha) * prob.horizon)
            weights = tuple(float(w) for w in scale * rng.uniform(-1.0, 1.0, 4))
            arcs.append(
                CanonicalArc(p=(last, slope(), value(), slope(), *weights), alpha=alpha, beta=beta, link_value=True)
            )
        # Clipped from its start up to the crossing of the upper bound
        arcs.append(TimePolynomialArc(p=(upper + radius, -8.0 * radius / prob.horizon, value(), slope())))

    gap = MIN_CHECK_ARC_FRACTION * prob.horizon
    free = prob.horizon - gap * len(arcs)
    cuts = np.sort(rng.uniform(0.0, free, len(arcs) - 1))
    nodes = [0.0, *(cut + gap * (k + 1) for k, cut in enumerate(cuts)), prob.horizon]
    return ControlStructure(nodes=nodes, arcs=arcs, problem=prob)
