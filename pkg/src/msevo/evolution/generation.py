from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.signal import find_peaks

from msevo.annotation import Vector
from msevo.utility.runs import runs
from msevo.error import DegenerateSingularError, InvalidArgumentError, StaleCandidateError
from msevo.gradient import GradientReport, assemble_gradient
from msevo.integrate import Trajectory, resegment
from msevo.problem import ProblemDef, hamiltonian
from msevo.structure import (
    CROSSING_TOLERANCE,
    MESH_TOLERANCE,
    Arc,
    Bound,
    BoundaryArc,
    CanonicalArc,
    ConstrainedArc,
    ControlStructure,
    ExplicitArc,
    HermiteArc,
    SingularArc,
    TimePolynomialArc,
)

from .projection import active_set, projected_antigradient

RELATIVE_EFFICIENCY_THRESHOLD = 0.1
EFFICIENCY_FLOOR = 1e-8
CANDIDATES_PER_ARC = 2
INSERTION_SAMPLES = 40
SATURATION_ROOT_TOLERANCE = 1e-10
STATE_CONSTRAINT_TOLERANCE = 1e-3

"""
Refinement of the arc samples searched for bound crossings
"""
SATURATION_REFINEMENT = 4


class GenerationKind(Enum):
    SATURATION = "saturation"
    SPIKE = "spike"
    NODE_INSERTION = "insertion"
    BASIS_EXTENSION = "extension"


@dataclass(frozen=True)
class GenerationCandidate:
    """
    Structural change enlarging the decision space without changing the control

    ``arc`` is the index, in ``origin``, of the arc the change applies to and ``tau`` where it happens. ``segments`` lists the ``(start, end, bound)`` pieces of a saturation.
    """

    kind: GenerationKind
    tau: float
    arc: int
    origin: ControlStructure = field(repr=False)
    procedure: Optional[Arc] = None
    efficiency: float = 0.0
    relative_efficiency: float = 0.0
    score: float = 0.0
    segments: Tuple[Tuple[float, float, Bound], ...] = ()

    def edit(self, s: ControlStructure) -> ControlStructure:
        """
        Perform the change on ``s``, in which arc ``arc`` must still contain ``tau``
        """
        if self.kind is GenerationKind.SPIKE:
            return insert_spike(s, self.arc, self.tau, self.procedure)
        if self.kind is GenerationKind.NODE_INSERTION:
            return insert_node(s, self.arc, self.tau)
        if self.kind is GenerationKind.BASIS_EXTENSION:
            return extend_basis(s, self.arc)
        return split_saturated(s, self.arc, self.segments)


def apply_generation(s: ControlStructure, cand: GenerationCandidate) -> ControlStructure:
    if s != cand.origin:
        raise StaleCandidateError(f"The {cand.kind.value} candidate at t = {cand.tau} was scored on another structure")
    return cand.edit(s)


def generation_steps(
    s: ControlStructure, candidates: Iterable[GenerationCandidate]
) -> Iterator[Tuple[GenerationCandidate, ControlStructure]]:
    """
    Apply several candidates scored on ``s``, yielding every candidate with the structure obtained once it is applied

    Candidates are applied from the latest to the earliest so that arc indices stay valid.
    """
    candidates = list(candidates)
    for cand in candidates:
        if s != cand.origin:
            raise StaleCandidateError(f"The {cand.kind.value} candidate at t = {cand.tau} was scored on another structure")
    for cand in sorted(candidates, key=lambda c: (c.tau, c.arc), reverse=True):
        s = cand.edit(s)
        yield cand, s


def relink(arcs: Sequence[Arc], prob: ProblemDef) -> List[Arc]:
    """
    Set the links and pins of interior arcs from their neighbors

    An end meeting a boundary arc at its level is pinned, a Hermite arc starting with the end value (and slope) of a Hermite neighbor is linked to it. Other links and pins are dropped. Ends meeting a boundary arc away from its level stay free, the control jumps there.
    """
    arcs = list(arcs)
    for i, arc in enumerate(arcs):
        if not isinstance(arc, (HermiteArc, CanonicalArc)):
            continue
        left = arcs[i - 1] if i > 0 else None
        right = arcs[i + 1] if i + 1 < len(arcs) else None
        p = arc.params
        flags = {
            "pin_start": isinstance(left, BoundaryArc) and p[0] == left.bound.level(prob),
            "pin_end": isinstance(right, BoundaryArc) and p[2] == right.bound.level(prob),
            "link_value": isinstance(left, (HermiteArc, CanonicalArc)) and left.params[2] == p[0],
        }
        if isinstance(arc, HermiteArc):
            flags["link_slope"] = flags["link_value"] and isinstance(left, HermiteArc) and left.params[3] == p[1]
        changes = {flag: value for flag, value in flags.items() if getattr(arc, flag) != value}
        if changes:
            arcs[i] = replace(arc, **changes)
    return arcs


def insert_spike(s: ControlStructure, j: int, tau: float, procedure: Arc) -> ControlStructure:
    """
    Seed ``procedure`` as an arc of zero length at ``tau`` inside arc ``j``

    Two coincident nodes are added inside the arc, a single one at ``0`` or ``T``.
    """
    a, b = s.interval(j)
    nodes, arcs = list(s.nodes), list(s.arcs)
    if tau == a == 0.0:
        arcs.insert(j, procedure)
        nodes.insert(j, a)
        return s.with_arcs(nodes, relink(arcs, s.problem))
    if tau == b == s.horizon:
        arcs.insert(j + 1, procedure)
        nodes.insert(j + 1, b)
        return s.with_arcs(nodes, relink(arcs, s.problem))
    if not a < tau < b:
        raise InvalidArgumentError(f"Time {tau} is not inside arc {j} [{a}, {b}]")

    left, right = _split(s.arcs[j], a, b, tau)
    arcs[j : j + 1] = [left, procedure, right]
    nodes[j + 1 : j + 1] = [tau, tau]
    return s.with_arcs(nodes, relink(arcs, s.problem))


def insert_node(s: ControlStructure, j: int, tau: float) -> ControlStructure:
    """
    Split the explicit arc ``j`` at ``tau`` into two arcs linked in value, and in slope for Hermite arcs
    """
    arc = s.arcs[j]
    a, b = s.interval(j)
    if not isinstance(arc, ExplicitArc) or not a < tau < b:
        raise InvalidArgumentError(f"Cannot insert a node at {tau} in arc {j}")

    left, right = _split(arc, a, b, tau)
    if isinstance(right, HermiteArc):
        right = replace(right, link_value=True, link_slope=True)
    elif isinstance(right, CanonicalArc):
        right = replace(right, link_value=True)
    arcs = list(s.arcs)
    arcs[j : j + 1] = [left, right]
    nodes = list(s.nodes)
    nodes.insert(j + 1, tau)
    return s.with_arcs(nodes, relink(arcs, s.problem))


def extend_basis(s: ControlStructure, j: int) -> ControlStructure:
    """
    Replace the Hermite arc ``j`` by a canonical arc whose mode weights are zero
    """
    arc = s.arcs[j]
    if not isinstance(arc, HermiteArc) or s.problem.canonical_modes is None:
        raise InvalidArgumentError(f"Arc {j} cannot be extended with canonical modes")
    arcs = list(s.arcs)
    arcs[j] = arc.extended(*s.problem.canonical_modes)
    return s.with_arcs(s.nodes, relink(arcs, s.problem))


def split_saturated(
    s: ControlStructure, j: int, segments: Sequence[Tuple[float, float, Bound]]
) -> ControlStructure:
    """
    Cut the explicit arc ``j`` into interior pieces and the boundary pieces listed in ``segments``

    Interior ends meeting a boundary piece are pinned to the bound.
    """
    arc = s.arcs[j]
    a, b = s.interval(j)
    if not isinstance(arc, ExplicitArc):
        raise InvalidArgumentError(f"Arc {j} is not an interior arc")

    pieces: List[Tuple[float, float, Arc]] = []
    cursor = a
    for start, end, bound in segments:
        if start > cursor:
            pieces.append((cursor, start, arc.restrict(a, b, cursor, start)))
        pieces.append((start, end, BoundaryArc(bound=bound)))
        cursor = end
    if cursor < b:
        pieces.append((cursor, b, arc.restrict(a, b, cursor, b)))

    arcs: List[Arc] = []
    for k, (start, end, piece) in enumerate(pieces):
        if isinstance(piece, ExplicitArc):
            piece = _pinned(piece, pieces, k, s)
            if k == 0:
                piece = _with_start_flags(piece, arc)
            if k == len(pieces) - 1:
                piece = _with_end_flags(piece, arc)
        arcs.append(piece)

    nodes = list(s.nodes)
    nodes[j + 1 : j + 1] = [start for start, _, _ in pieces[1:]]
    all_arcs = list(s.arcs)
    all_arcs[j : j + 1] = arcs
    return s.with_arcs(nodes, relink(all_arcs, s.problem))


def saturation_check(traj: Trajectory, s: ControlStructure) -> List[GenerationCandidate]:
    """
    Find the explicit arcs whose unclipped control leaves the bounds and the exact times where it does

    Excursions below ``SATURATION_ROOT_TOLERANCE`` are ignored, except at a local extremum inside the arc, where the tangency is recorded as a boundary piece of zero length. Longer runs of samples lying on the bound are not touches.
    """
    lower, upper = s.problem.bounds
    value_tolerance = SATURATION_ROOT_TOLERANCE * (upper - lower)
    candidates = []

    for j, arc in enumerate(s.arcs):
        a, b = s.interval(j)
        if not isinstance(arc, ExplicitArc) or b - a <= MESH_TOLERANCE:
            continue
        t = _refined(traj.arcs[j].t)
        raw = np.asarray(arc.raw(t, a, b), dtype=float)
        segments = []

        for bound, excess in ((Bound.UPPER, raw - upper), (Bound.LOWER, lower - raw)):
            level = bound.level(s.problem)
            f = lambda time, level=level: float(arc.raw(time, a, b)) - level
            for first, last in runs(excess > 0):
                if np.max(excess[first : last + 1]) <= value_tolerance:
                    continue
                start = a if first == 0 else brentq(f, t[first - 1], t[first], xtol=CROSSING_TOLERANCE)
                end = b if last == len(t) - 1 else brentq(f, t[last], t[last + 1], xtol=CROSSING_TOLERANCE)
                segments.append((float(start), float(end), bound))
            touches = np.zeros(len(t), dtype=bool)
            for k in range(1, len(t) - 1):
                touching = abs(excess[k]) <= value_tolerance
                extremum = excess[k] >= max(excess[k - 1], excess[k + 1]) - value_tolerance
                touches[k] = touching and extremum and not any(s0 <= t[k] <= s1 for s0, s1, _ in segments)
            # Two samples may share a touch, longer runs lie along the bound
            for first, last in runs(touches):
                if last - first > 1:
                    continue
                middle = float(t[(first + last) // 2])
                segments.append((middle, middle, bound))

        if segments:
            segments.sort(key=lambda segment: segment[0])
            candidates.append(
                GenerationCandidate(
                    kind=GenerationKind.SATURATION,
                    tau=segments[0][0],
                    arc=j,
                    origin=s,
                    segments=tuple(segments),
                )
            )
    return candidates


def spike_candidates(
    traj: Trajectory,
    s: ControlStructure,
    grid: Optional[Vector] = None,
    gradient: Optional[GradientReport] = None,
    threshold: float = RELATIVE_EFFICIENCY_THRESHOLD,
    floor: float = EFFICIENCY_FLOOR,
    per_arc: int = CANDIDATES_PER_ARC,
) -> List[GenerationCandidate]:
    """
    Score the spikes of the procedure chosen at every mesh point and keep the local maximizers of relative efficiency

    At ``t`` the procedure is the singular feedback when its value lies strictly between the control and the bound favored by the switching function, the constrained feedback when the state constraint is active, a constant explicit arc halfway to the favored bound on boundary arcs of problems without singular feedback, and otherwise the favored bound itself. That explicit arc is a time polynomial for problems with a constrained feedback and a Hermite arc for the others. The efficiency of a spike is ``2 max(0, H(new) - H(old))^2``, halved at ``0`` and ``T``. Spikes seeding an interior arc need an efficiency of at least ``floor``, spikes on an interior arc at least ``floor`` times the squared norm of the projected antigradient.
    """
    prob = s.problem
    gradient = gradient if gradient is not None else assemble_gradient(traj, s)
    before = _squared_norm(gradient, s)
    candidates = []

    for j, arc in enumerate(s.arcs):
        if s.length(j) <= MESH_TOLERANCE:
            continue
        samples = traj.arcs[j]
        indices = _scan_indices(s, j, samples.t, grid)
        efficiency = np.zeros(len(samples.t))
        procedures: List[Optional[Arc]] = [None] * len(samples.t)

        for k in indices:
            x, psi, u = samples.x[k], samples.psi[k], float(samples.u[k])
            sw = samples.sw[k] if np.isfinite(samples.sw[k]) else samples.grad_u_h[k]
            procedure, u_new = _spike_procedure(s, arc, x, psi, u, sw)
            if procedure is None:
                continue
            gain = hamiltonian(psi, x, u_new, prob) - hamiltonian(psi, x, u, prob)
            value = 2.0 * max(0.0, gain) ** 2
            if samples.t[k] in (0.0, s.horizon):
                value *= 0.5
            # Chattering guard
            if not isinstance(procedure, BoundaryArc) and value < floor:
                continue
            efficiency[k] = value
            procedures[k] = procedure

        minimum = 0.0 if isinstance(arc, BoundaryArc) else floor * before + 1e-16
        for k in _maximizers(efficiency, per_arc, before, threshold, minimum):
            candidates.append(
                GenerationCandidate(
                    kind=GenerationKind.SPIKE,
                    tau=float(samples.t[k]),
                    arc=j,
                    origin=s,
                    procedure=procedures[k],
                    efficiency=float(efficiency[k]),
                    relative_efficiency=_relative(efficiency[k], before),
                )
            )
    return _ranked(candidates)


def node_insertion_candidates(
    traj: Trajectory,
    s: ControlStructure,
    gradient: Optional[GradientReport] = None,
    threshold: float = RELATIVE_EFFICIENCY_THRESHOLD,
    per_arc: int = CANDIDATES_PER_ARC,
    samples_per_arc: int = INSERTION_SAMPLES,
) -> List[GenerationCandidate]:
    """
    Score the insertion of a linked node at up to ``samples_per_arc`` inner mesh points, evenly spread over every Hermite or canonical arc

    The gradient after insertion is assembled from the stored samples split at the new node, without integrating again. The secondary score is the distance between the control zeroing ``grad_u H`` and its cubic fit on both sides of the node.
    """
    gradient = gradient if gradient is not None else assemble_gradient(traj, s)
    before = _squared_norm(gradient, s)
    candidates = []

    for j, arc in enumerate(s.arcs):
        if not isinstance(arc, (HermiteArc, CanonicalArc)) or s.length(j) <= MESH_TOLERANCE:
            continue
        samples = traj.arcs[j]
        inner = np.arange(1, len(samples.t) - 1)
        if len(inner) == 0:
            continue
        step = max(1, int(np.ceil(len(inner) / samples_per_arc)))
        indices = inner[step // 2 :: step]
        efficiency = np.zeros(len(samples.t))

        for k in indices:
            trial = insert_node(s, j, float(samples.t[k]))
            efficiency[k] = max(0.0, _trial_squared_norm(traj, trial) - before)

        for k in _maximizers(efficiency, per_arc, before, threshold, 0.0):
            tau = float(samples.t[k])
            candidates.append(
                GenerationCandidate(
                    kind=GenerationKind.NODE_INSERTION,
                    tau=tau,
                    arc=j,
                    origin=s,
                    efficiency=float(efficiency[k]),
                    relative_efficiency=_relative(efficiency[k], before),
                    score=stationary_distance(traj, s, j, tau),
                )
            )
    return _ranked(candidates)


def basis_extension_candidates(
    traj: Trajectory,
    s: ControlStructure,
    gradient: Optional[GradientReport] = None,
    threshold: float = RELATIVE_EFFICIENCY_THRESHOLD,
) -> List[GenerationCandidate]:
    """
    Score the extension of every Hermite arc with the canonical modes of the problem
    """
    if s.problem.canonical_modes is None:
        return []
    gradient = gradient if gradient is not None else assemble_gradient(traj, s)
    before = _squared_norm(gradient, s)
    candidates = []

    for j, arc in enumerate(s.arcs):
        if not isinstance(arc, HermiteArc) or s.length(j) <= MESH_TOLERANCE:
            continue
        efficiency = max(0.0, _trial_squared_norm(traj, extend_basis(s, j)) - before)
        relative = _relative(efficiency, before)
        if relative >= threshold:
            candidates.append(
                GenerationCandidate(
                    kind=GenerationKind.BASIS_EXTENSION,
                    tau=s.nodes[j],
                    arc=j,
                    origin=s,
                    efficiency=efficiency,
                    relative_efficiency=relative,
                )
            )
    return _ranked(candidates)


def stationary_distance(traj: Trajectory, s: ControlStructure, j: int, tau: float) -> float:
    """
    Largest deviation of the stationary control from its least squares cubic on ``[tau_j, tau]`` and ``[tau, tau_{j+1}]``
    """
    stationary = s.problem.stationary_control
    if stationary is None:
        return 0.0
    samples = traj.arcs[j]
    target = np.array([stationary(x, psi) for x, psi in zip(samples.x, samples.psi)])
    distance = 0.0
    for part in (samples.t <= tau, samples.t >= tau):
        t, y = samples.t[part], target[part]
        if len(t) < 5:
            continue
        fit = np.polyval(np.polyfit(t - t[0], y, 3), t - t[0])
        distance = max(distance, float(np.max(np.abs(fit - y))))
    return distance


def _spike_procedure(
    s: ControlStructure, arc: Arc, x: Vector, psi: Vector, u: float, sw: float
) -> Tuple[Optional[Arc], float]:
    prob = s.problem
    lower, upper = prob.bounds
    favored = upper if sw > 0 else lower if sw < 0 else None
    if favored is None:
        return None, u

    if prob.singular_feedback is not None and not isinstance(arc, SingularArc):
        try:
            u_int = prob.singular_feedback.control(x)
        except DegenerateSingularError:
            u_int = np.nan
        if (sw > 0 and u < u_int < upper) or (sw < 0 and lower < u_int < u):
            return SingularArc(), float(u_int)

    if (
        prob.constrained_feedback is not None
        and prob.state_constraint is not None
        and not isinstance(arc, ConstrainedArc)
        and prob.state_constraint(x) >= -STATE_CONSTRAINT_TOLERANCE
    ):
        u_con = prob.constrained_feedback.control(x)
        if lower < u_con < upper and hamiltonian(psi, x, u_con, prob) > hamiltonian(psi, x, u, prob):
            return ConstrainedArc(), float(u_con)

    if u == favored:
        return None, u
    if prob.singular_feedback is None and isinstance(arc, BoundaryArc):
        seed = 0.5 * (u + favored)
        if prob.constrained_feedback is not None:
            return TimePolynomialArc(p=(seed, 0.0, seed, 0.0)), seed
        return HermiteArc(p=(seed, 0.0, seed, 0.0)), seed
    if isinstance(arc, BoundaryArc) and arc.bound.level(prob) == favored:
        return None, u
    return BoundaryArc(bound=Bound.UPPER if favored == upper else Bound.LOWER), favored


def _split(arc: Arc, a: float, b: float, tau: float) -> Tuple[Arc, Arc]:
    """
    Two arcs evaluating on ``[a, tau]`` and ``[tau, b]`` to the control of ``arc`` on ``[a, b]``

    Restricted Hermite data reproduce the end values and slopes of ``arc`` exactly, so the flags of its ends carry over.
    """
    if not isinstance(arc, ExplicitArc):
        return arc, arc
    left = _with_start_flags(arc.restrict(a, b, a, tau), arc)
    right = _with_end_flags(arc.restrict(a, b, tau, b), arc)
    return left, right


def _with_start_flags(piece: ExplicitArc, arc: Arc) -> ExplicitArc:
    changes = {
        flag: True
        for flag in ("link_value", "link_slope", "pin_start")
        if getattr(arc, flag, False) and hasattr(piece, flag)
    }
    return replace(piece, **changes) if changes else piece


def _with_end_flags(piece: ExplicitArc, arc: Arc) -> ExplicitArc:
    if getattr(arc, "pin_end", False) and hasattr(piece, "pin_end"):
        return replace(piece, pin_end=True)
    return piece


def _pinned(piece: ExplicitArc, pieces, k: int, s: ControlStructure) -> ExplicitArc:
    """
    Pin the ends of an interior piece meeting a boundary piece at the bound value
    """
    p = list(piece.params)
    changes = {}
    if k > 0 and isinstance(pieces[k - 1][2], BoundaryArc) and hasattr(piece, "pin_start"):
        p[0] = pieces[k - 1][2].bound.level(s.problem)
        changes["pin_start"] = True
    if k < len(pieces) - 1 and isinstance(pieces[k + 1][2], BoundaryArc) and hasattr(piece, "pin_end"):
        p[2] = pieces[k + 1][2].bound.level(s.problem)
        changes["pin_end"] = True
    return replace(piece, p=tuple(p), **changes) if changes else piece


def _refined(t: Vector) -> Vector:
    if len(t) < 2:
        return t
    fine = [np.linspace(t0, t1, SATURATION_REFINEMENT + 1)[:-1] for t0, t1 in zip(t[:-1], t[1:])]
    return np.append(np.concatenate(fine), t[-1])


def _scan_indices(s: ControlStructure, j: int, t: Vector, grid: Optional[Vector]) -> List[int]:
    """
    Sample indices of arc ``j`` where a spike may be seeded: inside the arc, or at ``0`` and ``T``
    """
    indices = list(range(1, len(t) - 1))
    if t[0] == 0.0:
        indices.insert(0, 0)
    if t[-1] == s.horizon:
        indices.append(len(t) - 1)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        indices = [k for k in indices if np.min(np.abs(grid - t[k])) <= MESH_TOLERANCE]
    return indices


def _maximizers(
    efficiency: Vector, count: int, before: float, threshold: float, minimum: float
) -> List[int]:
    """
    Indices of the local maximizers of efficiency passing the thresholds, best first, earliest first on ties
    """
    padded = np.concatenate(([-1.0], efficiency, [-1.0]))
    peaks, properties = find_peaks(padded, plateau_size=1)
    peaks = properties["left_edges"] - 1
    kept = [
        int(k)
        for k in peaks
        if efficiency[k] > 0.0
        and efficiency[k] >= minimum
        and _relative(efficiency[k], before) >= threshold
    ]
    kept.sort(key=lambda k: (-efficiency[k], k))
    return kept[:count]


def _relative(efficiency: float, before: float) -> float:
    total = before + efficiency
    return float(efficiency / total) if total > 0 else 0.0


def _squared_norm(gradient: GradientReport, s: ControlStructure) -> float:
    direction = projected_antigradient(gradient.values, active_set(s))
    return float(direction @ direction)


def _trial_squared_norm(traj: Trajectory, trial: ControlStructure) -> float:
    trial_traj = resegment(traj, trial, recompute=False)
    return _squared_norm(assemble_gradient(trial_traj, trial), trial)


def _ranked(candidates: List[GenerationCandidate]) -> List[GenerationCandidate]:
    return sorted(candidates, key=lambda c: (-c.relative_efficiency, -c.score, c.tau))
