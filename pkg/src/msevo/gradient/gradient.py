from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from msevo.annotation import Vector
from msevo.error import InvalidArgumentError, NoParametersError, StructuralInconsistencyError
from msevo.integrate import Trajectory
from msevo.problem import hamiltonian
from msevo.structure import (
    MESH_TOLERANCE,
    BoundaryArc,
    ControlStructure,
    FeedbackArc,
    HermiteArc,
    Layout,
    layout,
)


@dataclass(frozen=True, eq=False)
class GradientReport:
    """
    Gradient of the performance index with respect to the decision vector

    ``node_jumps`` maps every inner node to its Hamiltonian jump and ``param_integrals`` every explicit arc to the integrals of its own interval, for all of its slots.
    """

    values: Vector
    layout: Layout
    node_jumps: Dict[int, float] = field(default_factory=dict)
    param_integrals: Dict[int, Vector] = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def entry(self, node: Optional[int] = None, arc: Optional[int] = None, slot: Optional[int] = None) -> float:
        for entry, value in zip(self.layout, self.values):
            if (entry.node, entry.arc, entry.slot) == (node, arc, slot):
                return float(value)
        raise InvalidArgumentError(f"No decision entry for node={node}, arc={arc}, slot={slot}")


def own_param_integrals(traj: Trajectory, s: ControlStructure, i: int) -> Vector:
    """
    ``-integral of grad_u H * du/dp_k`` over arc ``i`` alone, for every slot ``k``
    """
    arc = s.arcs[i]
    if not arc.explicit:
        raise NoParametersError(f"Arc {i} ({arc.kind}) has no parameters")
    a, b = s.interval(i)
    if b - a <= MESH_TOLERANCE:
        return np.zeros(len(arc.params))

    return -_inside_integral(traj, s, i, lambda t: arc.basis(t, a, b))


def grad_params(traj: Trajectory, s: ControlStructure, i: int, k: int) -> float:
    """
    Derivative of the performance index with respect to slot ``k`` of arc ``i``

    A slot identified with a slot of the right neighbor also collects the integral over the neighbor's interval.
    """
    value = float(own_param_integrals(traj, s, i)[k])
    shared = _shared_slot(s, i, k)
    if shared is not None:
        value += float(own_param_integrals(traj, s, i + 1)[shared])
    return value


def node_jump(traj: Trajectory, s: ControlStructure, i: int) -> float:
    """
    ``H(u(tau_i+)) - H(u(tau_i-))`` at node ``i``, with the state and adjoint at the node
    """
    _check_inner_node(s, i)
    x, psi = traj.node_state(i), traj.node_adjoint(i)
    u_left, u_right = traj.arcs[i - 1].u[-1], traj.arcs[i].u[0]
    if u_left == u_right:
        return 0.0
    return hamiltonian(psi, x, u_right, s.problem) - hamiltonian(psi, x, u_left, s.problem)


def grad_node_jump(traj: Trajectory, s: ControlStructure, i: int) -> float:
    """
    Derivative with respect to a node between two arcs without parameters: the Hamiltonian jump
    """
    _check_inner_node(s, i)
    if s.arcs[i - 1].explicit or s.arcs[i].explicit:
        raise InvalidArgumentError(f"Node {i} bounds an arc with parameters")
    return node_jump(traj, s, i)


def grad_node_interior_right(traj: Trajectory, s: ControlStructure, i: int) -> float:
    """
    Derivative with respect to the right end of a Hermite arc

    The node moves while the end value and slope follow the cubic, so that ``-u'(tau-) dS/dp3 - u''(tau-) dS/dp4- - u''(tau+) dS/dp4+`` remains. The right neighbor is a Hermite arc linked in value and slope, or a boundary arc at the pinned end value, whose terms vanish.
    """
    _check_inner_node(s, i)
    left, right = s.arcs[i - 1], s.arcs[i]
    linked = isinstance(right, HermiteArc) and right.link_value and right.link_slope
    pinned = isinstance(right, BoundaryArc) and getattr(left, "pin_end", False)
    if not isinstance(left, HermiteArc) or not (linked or pinned) or _degenerate(s, i - 1, i):
        raise InvalidArgumentError(f"Node {i} is not the right end of a linked Hermite arc")

    a, tau = s.interval(i - 1)
    value = -float(left.raw_dt(tau, a, tau)) * grad_params(traj, s, i - 1, 2)
    value -= float(left.raw_dtt(tau, a, tau)) * float(own_param_integrals(traj, s, i - 1)[3])
    if linked:
        c = s.nodes[i + 1]
        value -= float(right.raw_dtt(tau, tau, c)) * float(own_param_integrals(traj, s, i)[1])
    return value


def grad_node_interior_left(traj: Trajectory, s: ControlStructure, i: int) -> float:
    """
    Derivative with respect to the left end of a Hermite arc whose start value is pinned to the left boundary arc

    Mirror of the right end formula, ``-u'(tau+) dS/dp1 - u''(tau+) dS/dp2``.
    """
    _check_inner_node(s, i)
    left, right = s.arcs[i - 1], s.arcs[i]
    if (
        not isinstance(right, HermiteArc)
        or not isinstance(left, BoundaryArc)
        or not right.pin_start
        or _degenerate(s, i, i)
    ):
        raise InvalidArgumentError(f"Node {i} is not the pinned left end of a Hermite arc")

    tau, c = s.interval(i)
    integrals = own_param_integrals(traj, s, i)
    return -float(right.raw_dt(tau, tau, c)) * float(integrals[0]) - float(
        right.raw_dtt(tau, tau, c)
    ) * float(integrals[1])


def grad_node_mixed(traj: Trajectory, s: ControlStructure, i: int) -> float:
    """
    Hamiltonian jump corrected by the integrals of ``grad_u H * du/dtau`` over both adjacent arcs

    Arcs without parameters contribute no integral.
    """
    _check_inner_node(s, i)
    value = node_jump(traj, s, i)
    for j, end in ((i - 1, 1), (i, 0)):
        arc = s.arcs[j]
        a, b = s.interval(j)
        if not arc.explicit or b - a <= MESH_TOLERANCE:
            continue
        value -= float(_inside_integral(traj, s, j, lambda t: arc.raw_dnode(t, a, b)[end]))
    return value


def assemble_gradient(traj: Trajectory, s: ControlStructure) -> GradientReport:
    """
    Fill every decision entry of ``s`` with the formula matching its kind
    """
    if not traj.complete:
        raise InvalidArgumentError("The adjoint has not been integrated")

    integrals = {
        i: own_param_integrals(traj, s, i) for i, arc in enumerate(s.arcs) if arc.explicit
    }
    entries = layout(s)
    values = np.empty(len(entries))

    for n, entry in enumerate(entries):
        if entry.is_node:
            values[n] = node_formula(s, entry.node)(traj, s, entry.node)
        else:
            value = integrals[entry.arc][entry.slot]
            shared = _shared_slot(s, entry.arc, entry.slot)
            if shared is not None:
                value += integrals[entry.arc + 1][shared]
            values[n] = value

    if not np.all(np.isfinite(values)):
        raise StructuralInconsistencyError("The gradient has non-finite entries")

    return GradientReport(
        values=values,
        layout=entries,
        node_jumps={i: node_jump(traj, s, i) for i in range(1, s.N)},
        param_integrals=integrals,
    )


def node_formula(s: ControlStructure, i: int):
    """
    Select the derivative formula of node ``i`` from the kinds of its neighbors
    """
    left, right = s.arcs[i - 1], s.arcs[i]
    for arc in (left, right):
        if not (arc.explicit or isinstance(arc, (BoundaryArc, FeedbackArc))):
            raise StructuralInconsistencyError(f"Node {i} has an arc of unknown kind `{arc.kind}`")

    if not left.explicit and not right.explicit:
        return grad_node_jump
    if isinstance(left, HermiteArc) and not _degenerate(s, i - 1, i):
        if isinstance(right, HermiteArc) and right.link_value and right.link_slope:
            return grad_node_interior_right
        if isinstance(right, BoundaryArc) and left.pin_end:
            return grad_node_interior_right
    if isinstance(right, HermiteArc) and isinstance(left, BoundaryArc) and right.pin_start:
        if not _degenerate(s, i, i):
            return grad_node_interior_left
    return grad_node_mixed


def _shared_slot(s: ControlStructure, i: int, k: int) -> Optional[int]:
    """
    Slot of arc ``i + 1`` identified with slot ``k`` of arc ``i``
    """
    if i + 1 >= s.N:
        return None
    right = s.arcs[i + 1]
    if k == 2 and getattr(right, "link_value", False):
        return 0
    if k == 3 and getattr(right, "link_slope", False):
        return 1
    return None


def _inside_integral(traj: Trajectory, s: ControlStructure, i: int, factor: Callable) -> Vector:
    """
    Integral of ``grad_u H * factor(t)`` over the parts of the explicit arc ``i`` where its control is not clipped

    Each part is integrated on its own, from its samples and its ends. Ends which are not samples get ``grad_u H`` from the cubic spline of the samples.
    """
    a, b = s.interval(i)
    samples = traj.arcs[i]
    t, g = samples.t, samples.grad_u_h
    pieces = s.arcs[i].inside(t, a, b, s.problem)
    if pieces == [(a, b)]:
        return simpson(g * factor(t), x=t, axis=-1)

    spline = CubicSpline(t, g)
    total = np.zeros(np.shape(factor(t[:1]))[:-1])
    for start, end in pieces:
        inner = (t > start + MESH_TOLERANCE) & (t < end - MESH_TOLERANCE)
        x = np.concatenate(([start], t[inner], [end]))
        values = np.concatenate(([spline(start)], g[inner], [spline(end)]))
        total = total + simpson(values * factor(x), x=x, axis=-1)
    return total


def _degenerate(s: ControlStructure, *arcs: int) -> bool:
    return any(s.length(j) <= MESH_TOLERANCE for j in arcs)


def _check_inner_node(s: ControlStructure, i: int) -> Tuple[int, int]:
    if not 0 < i < s.N:
        raise InvalidArgumentError(f"Node {i} is not an inner node of a structure with {s.N} arcs")
    return i - 1, i
