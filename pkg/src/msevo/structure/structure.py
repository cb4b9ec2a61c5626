from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from msevo.annotation import Vector
from msevo.error import InvalidArgumentError, StructuralInconsistencyError
from msevo.problem import ProblemDef

from .arc import Arc, CanonicalArc, HermiteArc
from .basis import MESH_TOLERANCE


@dataclass(frozen=True)
class ControlStructure:
    """
    Division nodes ``0 = tau_0 <= ... <= tau_N = T`` and the arc procedure used on each ``[tau_{i-1}, tau_i]``

    Only scalar controls are represented. A structure is a value: every change builds a new one.
    """

    nodes: Tuple[float, ...]
    arcs: Tuple[Arc, ...]
    problem: ProblemDef = field(compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(float(t) for t in self.nodes))
        object.__setattr__(self, "arcs", tuple(self.arcs))

        if self.problem.m != 1:
            raise InvalidArgumentError("Control structures handle scalar controls only")
        if len(self.arcs) == 0 or len(self.nodes) != len(self.arcs) + 1:
            raise InvalidArgumentError(
                f"{len(self.arcs)} arcs need {len(self.arcs) + 1} nodes, got {len(self.nodes)}"
            )
        if self.nodes[0] != 0.0 or self.nodes[-1] != self.problem.horizon:
            raise InvalidArgumentError(
                f"Nodes must start at 0 and end at {self.problem.horizon}"
            )
        if any(b < a for a, b in zip(self.nodes, self.nodes[1:])):
            raise InvalidArgumentError(f"Nodes {self.nodes} are not ordered")

        for i, arc in enumerate(self.arcs):
            link_value = getattr(arc, "link_value", False)
            link_slope = getattr(arc, "link_slope", False)
            if not (link_value or link_slope):
                continue
            left = self.arcs[i - 1] if i > 0 else None
            if link_value and not isinstance(left, (HermiteArc, CanonicalArc)):
                raise StructuralInconsistencyError(
                    f"Arc {i} is value-linked to an arc without an end value"
                )
            if link_slope and not (isinstance(left, HermiteArc) and isinstance(arc, HermiteArc)):
                raise StructuralInconsistencyError(
                    f"Arc {i} is slope-linked to an arc which is not a Hermite arc"
                )
            if link_value and arc.params[0] != left.params[2]:
                raise StructuralInconsistencyError(f"Value link of arc {i} is broken")
            if link_slope and arc.params[1] != left.params[3]:
                raise StructuralInconsistencyError(f"Slope link of arc {i} is broken")

    @property
    def horizon(self) -> float:
        return self.problem.horizon

    @property
    def N(self) -> int:
        """
        Number of arcs
        """
        return len(self.arcs)

    def interval(self, i: int) -> Tuple[float, float]:
        return self.nodes[i], self.nodes[i + 1]

    def length(self, i: int) -> float:
        a, b = self.interval(i)
        return b - a

    def locate(self, t: float, side: str = "right") -> int:
        """
        Index of the arc of positive length giving the control at ``t``

        With ``side="right"`` the arc starting at a node wins, with ``side="left"`` the arc ending there.
        """
        if not 0.0 <= t <= self.horizon:
            raise InvalidArgumentError(f"Time {t} is outside [0, {self.horizon}]")
        if side == "right":
            i = min(bisect_right(self.nodes, t) - 1, self.N - 1)
            while self.length(i) <= MESH_TOLERANCE and i > 0:
                i -= 1
        elif side == "left":
            i = max(bisect_left(self.nodes, t) - 1, 0)
            while self.length(i) <= MESH_TOLERANCE and i < self.N - 1:
                i += 1
        else:
            raise InvalidArgumentError(f"Unknown side `{side}`")
        return i

    def with_arcs(self, nodes, arcs) -> "ControlStructure":
        return ControlStructure(nodes=tuple(nodes), arcs=tuple(arcs), problem=self.problem)

    def with_problem(self, prob: ProblemDef) -> "ControlStructure":
        """
        Same nodes and arcs bound to another problem of the same horizon, such as a penalized variant
        """
        return ControlStructure(nodes=self.nodes, arcs=self.arcs, problem=prob)

    def describe(self) -> str:
        """
        Short human readable summary such as ``lower[0, 3] upper[3, 6]``
        """
        parts = []
        for i, arc in enumerate(self.arcs):
            a, b = self.interval(i)
            name = arc.bound.value if arc.kind == "boundary" else arc.kind
            parts.append(f"{name}[{a:.4g}, {b:.4g}]")
        return " ".join(parts)


@dataclass(frozen=True)
class Entry:
    """
    One decision variable: a node or a parameter slot of an arc
    """

    node: Optional[int] = None
    arc: Optional[int] = None
    slot: Optional[int] = None

    @property
    def is_node(self) -> bool:
        return self.node is not None

    def __str__(self) -> str:
        if self.is_node:
            return f"tau{self.node}"
        return f"p{self.arc}.{self.slot + 1}"


Layout = Tuple[Entry, ...]


@dataclass(frozen=True, eq=False)
class DecisionVector:
    """
    Flat vector of the free decision variables and the layout mapping each entry into the structure
    """

    values: Vector
    layout: Layout

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (len(self.layout),):
            raise InvalidArgumentError(
                f"Decision vector of dimension {values.size} does not match a layout of {len(self.layout)} entries"
            )
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.layout)

    def node_indices(self) -> List[int]:
        """
        Positions of the node entries
        """
        return [k for k, entry in enumerate(self.layout) if entry.is_node]


def layout(s: ControlStructure) -> Layout:
    """
    Free nodes ``tau_1 .. tau_{N-1}`` followed by the free parameter slots of each arc, left to right
    """
    entries = [Entry(node=i) for i in range(1, s.N)]
    for i, arc in enumerate(s.arcs):
        entries.extend(Entry(arc=i, slot=k) for k in arc.free_slots())
    return tuple(entries)


def pack(s: ControlStructure) -> DecisionVector:
    entries = layout(s)
    values = [
        s.nodes[entry.node] if entry.is_node else s.arcs[entry.arc].params[entry.slot]
        for entry in entries
    ]
    return DecisionVector(values=np.array(values, dtype=float), layout=entries)


def unpack(s: ControlStructure, d) -> ControlStructure:
    """
    Structure of the same layout as ``s`` taking its free variables from ``d``

    Linked slots receive the value of the slot they are identified with, pinned slots keep theirs. Unordered nodes are rejected.
    """
    entries = layout(s)
    values = np.asarray(d.values if isinstance(d, DecisionVector) else d, dtype=float)
    if values.shape != (len(entries),):
        raise InvalidArgumentError(
            f"Decision vector of dimension {values.size} given, {len(entries)} expected"
        )

    nodes = list(s.nodes)
    params = [list(arc.params) for arc in s.arcs]
    for entry, value in zip(entries, values):
        if entry.is_node:
            nodes[entry.node] = float(value)
        else:
            params[entry.arc][entry.slot] = float(value)

    if any(b < a for a, b in zip(nodes, nodes[1:])):
        raise InvalidArgumentError(f"Unpacked nodes {nodes} violate the node ordering")

    arcs = []
    for i, arc in enumerate(s.arcs):
        if not arc.explicit:
            arcs.append(arc)
            continue
        p = params[i]
        if getattr(arc, "link_value", False):
            p[0] = params[i - 1][2]
        if getattr(arc, "link_slope", False):
            p[1] = params[i - 1][3]
        arcs.append(arc.with_params(p))

    return s.with_arcs(nodes, arcs)


def eval_control(
    s: ControlStructure, t: float, x: Optional[Vector] = None, side: str = "right"
) -> float:
    """
    Control at ``t``, right continuous at nodes unless ``side="left"`` asks for the left limit

    Interior arcs are clipped to the control bounds.
    """
    i = s.locate(t, side)
    a, b = s.interval(i)
    return s.arcs[i].control(t, a, b, x, s.problem)


def zero_length_arcs(s: ControlStructure) -> List[int]:
    return [i for i in range(s.N) if s.length(i) <= MESH_TOLERANCE]
