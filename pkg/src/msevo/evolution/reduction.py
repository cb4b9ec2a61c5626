from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from msevo.annotation import Vector
from msevo.structure import (
    ControlStructure,
    DecisionVector,
    Entry,
    layout,
    pack,
    unpack,
    zero_length_arcs,
)

from .generation import relink
from .projection import ActiveSet

"""
Widening derivatives above ``-REDUCTION_TOLERANCE`` do not prevent the removal of an arc of zero length
"""
REDUCTION_TOLERANCE = 1e-12


class ReductionKind(Enum):
    ZERO_LENGTH_ARC = "zero-length"
    MERGE_ADJACENT = "merge"


@dataclass(frozen=True)
class ReductionEvent:
    """
    Structural change shrinking the decision space without changing the control

    ``arcs`` are indices in the structure before the event, ``removed`` the decision entries which disappeared.
    """

    kind: ReductionKind
    tau: float
    arcs: Tuple[int, ...]
    removed: Tuple[Entry, ...]
    dimension_before: int = 0
    dimension_after: int = 0


def reduce(
    s: ControlStructure,
    d: Optional[DecisionVector] = None,
    gradient: Optional[Vector] = None,
    active: ActiveSet = (),
    tolerance: float = REDUCTION_TOLERANCE,
) -> Tuple[ControlStructure, DecisionVector, List[ReductionEvent]]:
    """
    Remove the arcs of zero length which no admissible widening would improve, then unify adjacent arcs computed by the same procedure

    ``gradient`` is aligned with the layout of ``s``; without it, arcs of zero length are kept. When ``d`` is given, the structure is first brought to that point. Chains of ``active`` tied with ``0`` or ``T`` cannot widen outwards, which the node positions already tell.
    """
    if d is not None:
        s = unpack(s, d)
    events: List[ReductionEvent] = []

    if gradient is not None:
        # Node i sits at position i - 1
        node_gradient = [0.0, *np.asarray(gradient, dtype=float)[: s.N - 1], 0.0]
        for z in reversed(zero_length_arcs(s)):
            if s.N == 1 or not _removable(s, z, node_gradient, tolerance):
                continue
            node = z + 1 if z < s.N - 1 else z
            tau = s.nodes[z]
            before = len(layout(s))
            s, removed = _remove(s, node, z)
            del node_gradient[node]
            events.append(
                ReductionEvent(ReductionKind.ZERO_LENGTH_ARC, tau, (z,), removed, before, len(layout(s)))
            )

    i = 1
    while i < s.N:
        if s.arcs[i - 1].same_procedure(s.arcs[i]):
            tau = s.nodes[i]
            before = len(layout(s))
            s, removed = _remove(s, i, i)
            events.append(
                ReductionEvent(ReductionKind.MERGE_ADJACENT, tau, (i - 1, i), removed, before, len(layout(s)))
            )
        else:
            i += 1

    return s, pack(s), events


def _removable(s: ControlStructure, z: int, node_gradient: List[float], tolerance: float) -> bool:
    """
    Whether the directional derivative is nonnegative along every admissible widening of arc ``z``

    Moving the start node left changes the index by ``-g_start``, moving the end node right by ``g_end``. Nodes at ``0`` or ``T`` cannot move outwards.
    """
    start, end = z, z + 1
    if s.nodes[start] > 0.0 and -node_gradient[start] < -tolerance:
        return False
    if s.nodes[end] < s.horizon and node_gradient[end] < -tolerance:
        return False
    return True


def _remove(s: ControlStructure, node: int, arc: int) -> Tuple[ControlStructure, Tuple[Entry, ...]]:
    """
    Delete ``node`` and ``arc`` from ``s`` and list the decision entries which have no counterpart afterwards
    """
    nodes, arcs = list(s.nodes), list(s.arcs)
    del nodes[node]
    del arcs[arc]
    reduced = s.with_arcs(nodes, relink(arcs, s.problem))

    kept = set(layout(reduced))
    removed = []
    for entry in layout(s):
        if entry.is_node:
            moved = None if entry.node == node else Entry(node=entry.node - (entry.node > node))
        else:
            moved = None if entry.arc == arc else Entry(arc=entry.arc - (entry.arc > arc), slot=entry.slot)
        if moved is None or moved not in kept:
            removed.append(entry)
    return reduced, tuple(removed)
