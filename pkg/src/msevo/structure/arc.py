from dataclasses import dataclass, replace
from enum import Enum
from typing import ClassVar, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from msevo.annotation import Vector
from msevo.error import InvalidArgumentError, MissingStateError
from msevo.problem import Feedback, ProblemDef
from msevo.utility.runs import runs

from .basis import (
    MESH_TOLERANCE,
    extended_basis,
    extended_basis_dnode,
    extended_basis_dt,
    extended_basis_dtt,
    hermite_basis,
    hermite_basis_dnode,
    hermite_basis_dt,
    hermite_basis_dtt,
    mode_shift,
)

"""
Accuracy of the times where an explicit arc meets a bound
"""
CROSSING_TOLERANCE = 1e-14


class Bound(Enum):
    LOWER = "lower"
    UPPER = "upper"

    def level(self, prob: ProblemDef) -> float:
        lower, upper = prob.bounds
        return lower if self is Bound.LOWER else upper


class Arc:
    """
    Procedure computing the control on one arc of a control structure

    Explicit arcs are functions of time described by parameters, the other ones take the bound value or a state feedback.
    """

    kind: ClassVar[str] = ""
    explicit: ClassVar[bool] = False

    @property
    def params(self) -> Tuple[float, ...]:
        return ()

    def free_slots(self) -> Tuple[int, ...]:
        """
        Parameter slots which are decision variables
        """
        return ()

    def control(self, t: float, a: float, b: float, x: Optional[Vector], prob: ProblemDef) -> float:
        raise NotImplementedError()

    def start_value(self, a: float, b: float, x: Optional[Vector], prob: ProblemDef) -> float:
        """
        Control value at ``a+``
        """
        return self.control(a, a, b, x, prob)

    def end_value(self, a: float, b: float, x: Optional[Vector], prob: ProblemDef) -> float:
        """
        Control value at ``b-``
        """
        return self.control(b, a, b, x, prob)

    def state_jacobian(self, x: Vector, prob: ProblemDef) -> Optional[Vector]:
        """
        Gradient of the control with respect to the state, ``None`` when the control does not depend on it
        """
        return None

    def same_procedure(self, other: "Arc") -> bool:
        """
        Tell whether two adjacent arcs can be unified without changing the control
        """
        return False


@dataclass(frozen=True)
class BoundaryArc(Arc):
    bound: Bound

    kind: ClassVar[str] = "boundary"

    def control(self, t, a, b, x, prob) -> float:
        return self.bound.level(prob)

    def same_procedure(self, other: Arc) -> bool:
        return isinstance(other, BoundaryArc) and other.bound is self.bound


class FeedbackArc(Arc):
    def feedback(self, prob: ProblemDef) -> Feedback:
        raise NotImplementedError()

    def unclipped(self, x: Vector, prob: ProblemDef) -> float:
        return self.feedback(prob).control(x)

    def control(self, t, a, b, x, prob) -> float:
        if x is None:
            raise MissingStateError(f"A {self.kind} arc needs the state to compute the control")
        lower, upper = prob.bounds
        return float(np.clip(self.unclipped(x, prob), lower, upper))

    def state_jacobian(self, x: Vector, prob: ProblemDef) -> Optional[Vector]:
        lower, upper = prob.bounds
        if not lower < self.unclipped(x, prob) < upper:
            return np.zeros(len(x))
        return self.feedback(prob).jacobian(x)

    def same_procedure(self, other: Arc) -> bool:
        return type(other) is type(self)


@dataclass(frozen=True)
class SingularArc(FeedbackArc):
    kind: ClassVar[str] = "singular"

    def feedback(self, prob: ProblemDef) -> Feedback:
        if prob.singular_feedback is None:
            raise InvalidArgumentError(f"Problem `{prob.name}` has no singular feedback")
        return prob.singular_feedback


@dataclass(frozen=True)
class ConstrainedArc(FeedbackArc):
    kind: ClassVar[str] = "constrained"

    def feedback(self, prob: ProblemDef) -> Feedback:
        if prob.constrained_feedback is None:
            raise InvalidArgumentError(f"Problem `{prob.name}` has no constrained feedback")
        return prob.constrained_feedback


class ExplicitArc(Arc):
    """
    Arc whose unclipped control is ``p^T w(t, a, b)`` for a basis ``w``
    """

    explicit: ClassVar[bool] = True
    p: Tuple[float, ...]

    @property
    def params(self) -> Tuple[float, ...]:
        return self.p

    def basis(self, t, a: float, b: float) -> np.ndarray:
        raise NotImplementedError()

    def basis_dt(self, t, a: float, b: float) -> np.ndarray:
        raise NotImplementedError()

    def basis_dtt(self, t, a: float, b: float) -> np.ndarray:
        raise NotImplementedError()

    def basis_dnode(self, t, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError()

    def raw(self, t, a: float, b: float):
        """
        Unclipped control
        """
        if b - a < MESH_TOLERANCE:
            return np.full(np.shape(t), self.p[0]) if np.ndim(t) else self.p[0]
        return np.asarray(self.p) @ self.basis(t, a, b)

    def raw_dt(self, t, a: float, b: float):
        return np.asarray(self.p) @ self.basis_dt(t, a, b)

    def raw_dtt(self, t, a: float, b: float):
        return np.asarray(self.p) @ self.basis_dtt(t, a, b)

    def raw_dnode(self, t, a: float, b: float):
        """
        Derivatives of the control with respect to ``a`` and ``b`` at fixed ``t`` and parameters
        """
        da, db = self.basis_dnode(t, a, b)
        p = np.asarray(self.p)
        return p @ da, p @ db

    def control(self, t, a, b, x, prob) -> float:
        lower, upper = prob.bounds
        return float(np.clip(self.raw(t, a, b), lower, upper))

    def start_value(self, a, b, x, prob) -> float:
        lower, upper = prob.bounds
        return float(np.clip(self.p[0], lower, upper))

    def end_value(self, a, b, x, prob) -> float:
        lower, upper = prob.bounds
        if b - a < MESH_TOLERANCE:
            return self.start_value(a, b, x, prob)
        return float(np.clip(self.p[2], lower, upper))

    def with_params(self, p) -> "ExplicitArc":
        return replace(self, p=tuple(float(v) for v in p))

    def restrict(self, a: float, b: float, start: float, end: float) -> "ExplicitArc":
        """
        Arc of the same kind reproducing the unclipped control of ``[a, b]`` on ``[start, end]``

        Links and pins are dropped; the caller decides which ones apply to the new arc.
        """
        raise NotImplementedError()

    def inside(self, t, a: float, b: float, prob: ProblemDef) -> List[Tuple[float, float]]:
        """
        Maximal intervals of ``[a, b]`` where the unclipped control stays within the bounds

        The samples ``t`` cover ``[a, b]``; ends strictly inside it are the roots of ``raw - bound`` between two samples.
        """
        lower, upper = prob.bounds
        t = np.asarray(t, dtype=float)
        raw = np.asarray(self.raw(t, a, b), dtype=float)
        within = (raw >= lower) & (raw <= upper)
        if within.all():
            return [(a, b)]

        def crossing(outside: int, inner: int) -> float:
            level = upper if raw[outside] > upper else lower
            t0, t1 = sorted((t[outside], t[inner]))
            return float(brentq(lambda time: float(self.raw(time, a, b)) - level, t0, t1, xtol=CROSSING_TOLERANCE))

        pieces = []
        for first, last in runs(within):
            start = a if first == 0 else crossing(first - 1, first)
            end = b if last == len(t) - 1 else crossing(last + 1, last)
            if end - start > MESH_TOLERANCE:
                pieces.append((start, end))
        return pieces

    def crossings(self, t, a: float, b: float, prob: ProblemDef) -> List[float]:
        """
        Times strictly inside ``]a, b[`` where the unclipped control meets a bound as it enters or leaves
        """
        ends = [time for piece in self.inside(t, a, b, prob) for time in piece]
        return sorted({time for time in ends if a + MESH_TOLERANCE < time < b - MESH_TOLERANCE})


@dataclass(frozen=True)
class HermiteArc(ExplicitArc):
    """
    Cubic Hermite arc, ``p = (u(a), u'(a+), u(b), u'(b-))``

    ``link_value`` and ``link_slope`` identify ``p1`` and ``p2`` with ``p3`` and ``p4`` of the left neighbor. ``pin_start`` and ``pin_end`` freeze ``p1`` and ``p3`` (at a control bound).
    """

    p: Tuple[float, ...]
    link_value: bool = False
    link_slope: bool = False
    pin_start: bool = False
    pin_end: bool = False

    kind: ClassVar[str] = "hermite"

    def __post_init__(self):
        if len(self.p) != 4:
            raise InvalidArgumentError("A Hermite arc has 4 parameters")

    def free_slots(self) -> Tuple[int, ...]:
        frozen = set()
        if self.link_value or self.pin_start:
            frozen.add(0)
        if self.link_slope:
            frozen.add(1)
        if self.pin_end:
            frozen.add(2)
        return tuple(k for k in range(4) if k not in frozen)

    def basis(self, t, a, b):
        return hermite_basis(t, a, b)

    def basis_dt(self, t, a, b):
        return hermite_basis_dt(t, a, b)

    def basis_dtt(self, t, a, b):
        return hermite_basis_dtt(t, a, b)

    def basis_dnode(self, t, a, b):
        return hermite_basis_dnode(t, a, b)

    def restrict(self, a, b, start, end) -> "HermiteArc":
        return HermiteArc(p=_hermite_data(self, a, b, start, end))

    def extended(self, alpha: float, beta: float) -> "CanonicalArc":
        """
        Canonical arc with zero mode weights, evaluating to the same control
        """
        return CanonicalArc(
            p=(*self.p, 0.0, 0.0, 0.0, 0.0),
            alpha=alpha,
            beta=beta,
            link_value=self.link_value,
            pin_start=self.pin_start,
            pin_end=self.pin_end,
        )


@dataclass(frozen=True)
class TimePolynomialArc(ExplicitArc):
    """
    Cubic Hermite polynomial of time without any continuity requirement
    """

    p: Tuple[float, ...]

    kind: ClassVar[str] = "polynomial"

    def __post_init__(self):
        if len(self.p) != 4:
            raise InvalidArgumentError("A time polynomial arc has 4 parameters")

    def free_slots(self) -> Tuple[int, ...]:
        return (0, 1, 2, 3)

    def basis(self, t, a, b):
        return hermite_basis(t, a, b)

    def basis_dt(self, t, a, b):
        return hermite_basis_dt(t, a, b)

    def basis_dtt(self, t, a, b):
        return hermite_basis_dtt(t, a, b)

    def basis_dnode(self, t, a, b):
        return hermite_basis_dnode(t, a, b)

    def restrict(self, a, b, start, end) -> "TimePolynomialArc":
        return TimePolynomialArc(p=_hermite_data(self, a, b, start, end))


@dataclass(frozen=True)
class CanonicalArc(ExplicitArc):
    """
    Hermite arc extended with the four oscillating modes of the canonical system

    ``p[4:]`` weight the modes, corrected so that ``u(a) = p1`` and ``u(b) = p3`` still hold.
    """

    p: Tuple[float, ...]
    alpha: float
    beta: float
    link_value: bool = False
    pin_start: bool = False
    pin_end: bool = False

    kind: ClassVar[str] = "canonical"

    def __post_init__(self):
        if len(self.p) != 8:
            raise InvalidArgumentError("A canonical arc has 8 parameters")

    def free_slots(self) -> Tuple[int, ...]:
        frozen = set()
        if self.link_value or self.pin_start:
            frozen.add(0)
        if self.pin_end:
            frozen.add(2)
        return tuple(k for k in range(8) if k not in frozen)

    def basis(self, t, a, b):
        return extended_basis(t, a, b, self.alpha, self.beta)

    def basis_dt(self, t, a, b):
        return extended_basis_dt(t, a, b, self.alpha, self.beta)

    def basis_dtt(self, t, a, b):
        return extended_basis_dtt(t, a, b, self.alpha, self.beta)

    def basis_dnode(self, t, a, b):
        return extended_basis_dnode(t, a, b, self.alpha, self.beta)

    def restrict(self, a, b, start, end) -> "CanonicalArc":
        weights = mode_shift(self.alpha, self.beta, start - a).T @ np.asarray(self.p[4:])
        # The mode part of the new arc is fixed, its Hermite data absorb the remaining cubic
        modes = CanonicalArc(p=(0.0, 0.0, 0.0, 0.0, *weights), alpha=self.alpha, beta=self.beta)
        value = lambda t: self.raw(t, a, b)
        slope = lambda t: self.raw_dt(t, a, b)
        mode_slope = lambda t: modes.raw_dt(t, start, end)
        return replace(
            modes,
            p=(
                float(value(start)),
                float(slope(start) - mode_slope(start)),
                float(value(end)),
                float(slope(end) - mode_slope(end)),
                *(float(w) for w in weights),
            ),
        )


def _hermite_data(arc: ExplicitArc, a: float, b: float, start: float, end: float) -> Tuple[float, ...]:
    return (
        float(arc.raw(start, a, b)),
        float(arc.raw_dt(start, a, b)),
        float(arc.raw(end, a, b)),
        float(arc.raw_dt(end, a, b)),
    )
