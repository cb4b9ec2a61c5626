from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from msevo.annotation import Vector
from msevo.error import DegenerateSingularError, DivergenceError, InvalidArgumentError, LinesearchFailure
from msevo.integrate import Trajectory, build_mesh, default_step, forward
from msevo.problem import ProblemDef
from msevo.structure import ControlStructure, DecisionVector, layout, unpack

from .config import SolverConfig

"""
Steps within this relative distance of the ordering cap activate the constraint
"""
CAP_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class LinesearchResult:
    """
    Accepted step along a direction

    ``trajectory`` holds the state only. ``tied`` lists the nodes whose ordering constraint became active, as pairs ``(i, i + 1)``.
    """

    step: float
    d: DecisionVector
    structure: ControlStructure
    trajectory: Trajectory
    sigma: float
    capped: bool
    tied: Tuple[Tuple[int, int], ...]
    evaluations: int


def max_step(s: ControlStructure, direction: Vector) -> Tuple[float, Tuple[Tuple[int, int], ...]]:
    """
    Largest step along ``direction`` keeping ``0 <= tau_1 <= ... <= tau_{N-1} <= T``, and the pairs of nodes meeting there

    Node ``i`` moves with the entry at position ``i - 1``, ``0`` and ``T`` stay.
    """
    speed = np.zeros(s.N + 1)
    speed[1 : s.N] = np.asarray(direction, dtype=float)[: s.N - 1]
    gaps = np.diff(np.asarray(s.nodes))
    closing = speed[:-1] - speed[1:]

    caps = np.full(s.N, np.inf)
    approaching = closing > 0
    caps[approaching] = gaps[approaching] / closing[approaching]
    cap = float(np.min(caps)) if len(caps) else np.inf
    if not np.isfinite(cap):
        return cap, ()
    tied = tuple(
        (i, i + 1) for i in np.flatnonzero(caps <= cap * (1 + CAP_TOLERANCE) + CAP_TOLERANCE)
    )
    return cap, tuple((int(a), int(b)) for a, b in tied)


def linesearch(
    d: DecisionVector,
    direction: Vector,
    s: ControlStructure,
    prob: ProblemDef,
    cfg: SolverConfig,
    gradient: Vector,
    sigma: Optional[float] = None,
    first_step: float = 1.0,
) -> LinesearchResult:
    """
    Backtracking search for a sufficient decrease of the performance index along ``direction``

    The first trial step is ``first_step`` capped at the first activation of a node ordering constraint. At the cap the meeting nodes are set exactly equal, and so are the nodes of an arc the step shrinks below ``cfg.min_arc_fraction * T``. Trial points whose integration fails count as no decrease.
    """
    direction = np.asarray(direction, dtype=float)
    slope = float(np.dot(gradient, direction))
    if not slope < 0:
        raise InvalidArgumentError(f"Not a descent direction (slope {slope:.3e})")

    h_max = cfg.h_max if cfg.h_max is not None else default_step(prob)
    if sigma is None:
        sigma = forward(prob, s, build_mesh(s, h_max)).sigma

    cap, tied = max_step(s, direction)
    snap = cfg.min_arc_fraction * s.horizon
    step = min(first_step, cap)
    evaluations = 0

    while step >= cfg.min_step * max(1.0, first_step):
        capped = step == cap
        trial_values = _stepped(s, d, direction, step, tied if capped else (), snap)
        evaluations += 1
        try:
            trial = unpack(s, trial_values)
            traj = forward(prob, trial, build_mesh(trial, h_max))
        except (DivergenceError, DegenerateSingularError, InvalidArgumentError):
            step *= cfg.backtracking
            continue

        if traj.sigma <= sigma + cfg.sufficient_decrease * step * slope and traj.sigma < sigma:
            return LinesearchResult(
                step=step,
                d=DecisionVector(values=trial_values, layout=layout(trial)),
                structure=trial,
                trajectory=traj,
                sigma=traj.sigma,
                capped=capped,
                tied=tied if capped else (),
                evaluations=evaluations,
            )
        step *= cfg.backtracking

    raise LinesearchFailure(f"No sufficient decrease after {evaluations} trial steps")


def _stepped(
    s: ControlStructure, d: DecisionVector, direction: Vector, step: float, tied, snap: float = 0.0
) -> Vector:
    """
    ``d + step * direction`` with the nodes kept ordered within ``[0, T]`` and the meeting pairs snapped together

    An arc the step shrinks below ``snap`` collapses onto its start, or onto ``T`` for the last arc.
    """
    values = np.asarray(d.values, dtype=float) + step * direction
    nodes = np.concatenate(([0.0], values[: s.N - 1], [s.horizon]))
    nodes = np.clip(np.maximum.accumulate(nodes), 0.0, s.horizon)
    for i, j in tied:
        # Ties with 0 or T snap onto the fixed node
        if j == s.N:
            nodes[i] = nodes[j]
        else:
            nodes[j] = nodes[i]
    nodes = np.maximum.accumulate(nodes)
    before = np.diff(s.nodes)
    for i in range(s.N):
        gap = nodes[i + 1] - nodes[i]
        if 0.0 < gap < snap and gap < before[i]:
            if i == s.N - 1:
                nodes[i] = nodes[i + 1]
            else:
                nodes[i + 1] = nodes[i]
    values[: s.N - 1] = nodes[1 : s.N]
    return values
