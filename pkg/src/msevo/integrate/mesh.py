from dataclasses import dataclass
from math import ceil
from typing import Tuple

import numpy as np

from msevo.annotation import Vector
from msevo.error import InvalidArgumentError
from msevo.structure import MESH_TOLERANCE, ControlStructure

"""
Slack allowing an arc whose length is a multiple of the maximal step to be split in exactly that many steps
"""
STEP_COUNT_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Integration grid aligned with the division nodes

    ``segments[i]`` holds the points of arc ``i``, both ends included, so every node appears once per adjacent arc. Arcs of zero length get a single point and no step.
    """

    breakpoints: Tuple[float, ...]
    segments: Tuple[Vector, ...]

    @property
    def steps(self) -> Tuple[int, ...]:
        return tuple(len(points) - 1 for points in self.segments)

    @property
    def points(self) -> Vector:
        """
        Sorted distinct mesh points
        """
        return np.unique(np.concatenate(self.segments))

    @property
    def max_step(self) -> float:
        return max(
            (float(np.max(np.diff(points))) for points in self.segments if len(points) > 1),
            default=0.0,
        )


def build_mesh(s: ControlStructure, h_max: float) -> Mesh:
    """
    Uniformly refine every arc of ``s`` with steps no longer than ``h_max``

    The times where the unclipped control of an explicit arc meets a bound are added, so that no step straddles a kink of the control.
    """
    if not h_max > 0:
        raise InvalidArgumentError(f"The maximal step must be positive, got {h_max}")

    segments = []
    for i in range(s.N):
        a, b = s.interval(i)
        if b - a <= MESH_TOLERANCE:
            segments.append(np.array([a]))
            continue
        steps = max(1, ceil((b - a) / h_max - STEP_COUNT_SLACK))
        points = np.linspace(a, b, steps + 1)
        points[-1] = b
        if s.arcs[i].explicit:
            points = _with_crossings(points, s.arcs[i].crossings(points, a, b, s.problem))
        segments.append(points)

    return Mesh(breakpoints=s.nodes, segments=tuple(segments))


def remesh(mesh: Mesh, s: ControlStructure) -> Mesh:
    """
    Mesh of ``s`` made of the points of ``mesh`` and the nodes of ``s``

    After a change preserving the control, integrating on this mesh repeats the same steps, up to the ones cut by new nodes.
    """
    points = mesh.points
    segments = []
    for i in range(s.N):
        a, b = s.interval(i)
        if b - a <= MESH_TOLERANCE:
            segments.append(np.array([a]))
            continue
        inside = points[(points > a + MESH_TOLERANCE) & (points < b - MESH_TOLERANCE)]
        segments.append(np.concatenate(([a], inside, [b])))
    return Mesh(breakpoints=s.nodes, segments=tuple(segments))


def _with_crossings(points: Vector, crossings) -> Vector:
    extra = [t for t in crossings if np.min(np.abs(points - t)) > MESH_TOLERANCE]
    return np.union1d(points, extra) if extra else points
