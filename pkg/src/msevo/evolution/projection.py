from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import isotonic_regression

from msevo.annotation import Vector
from msevo.structure import ControlStructure


@dataclass(frozen=True)
class TiedNodes:
    """
    Chain of free nodes sharing the same time, possibly tied with ``0`` (``anchor="start"``) or ``T`` (``anchor="end"``)

    ``positions`` are the positions of the nodes in the decision vector, in increasing node order. Any admissible direction keeps the chain ordered.
    """

    positions: Tuple[int, ...]
    anchor: Optional[str] = None


ActiveSet = Tuple[TiedNodes, ...]


def active_set(s: ControlStructure) -> ActiveSet:
    """
    Node ordering constraints holding with equality in ``s``

    Node ``i`` sits at position ``i - 1`` of the decision vector.
    """
    chains = []
    i = 0
    while i <= s.N:
        j = i
        while j < s.N and s.nodes[j + 1] == s.nodes[i]:
            j += 1
        free = tuple(k - 1 for k in range(i, j + 1) if 0 < k < s.N)
        anchor = "start" if i == 0 else "end" if j == s.N else None
        if free and (len(free) > 1 or anchor is not None):
            chains.append(TiedNodes(positions=free, anchor=anchor))
        i = j + 1
    return tuple(chains)


def projected_antigradient(g: Vector, active: ActiveSet = ()) -> Vector:
    """
    Orthogonal projection of ``-g`` onto the cone of directions keeping every chain of ``active`` ordered

    On a chain the projection is the increasing isotonic regression of the antigradient entries, clipped at zero on the side of an anchor.
    """
    direction = -np.asarray(g, dtype=float)
    for chain in active:
        positions = list(chain.positions)
        values = direction[positions]
        if len(values) > 1:
            values = isotonic_regression(values, increasing=True).x
        if chain.anchor == "start":
            values = np.maximum(values, 0.0)
        elif chain.anchor == "end":
            values = np.minimum(values, 0.0)
        direction[positions] = values
    return direction


def project_direction(direction: Vector, active: ActiveSet = ()) -> Vector:
    """
    Projection of an arbitrary direction onto the same cone
    """
    return projected_antigradient(-np.asarray(direction, dtype=float), active)
