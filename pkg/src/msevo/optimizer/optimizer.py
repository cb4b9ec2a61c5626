from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Deque, Iterable, List, Optional, Sequence, Tuple
from warnings import warn

import numpy as np
from pandas import DataFrame

from msevo.annotation import Vector
from msevo.error import InvalidArgumentError, LinesearchFailure
from msevo.evolution import (
    GenerationCandidate,
    GenerationKind,
    active_set,
    basis_extension_candidates,
    generation_steps,
    node_insertion_candidates,
    project_direction,
    projected_antigradient,
    reduce,
    saturation_check,
    spike_candidates,
)
from msevo.gradient import GradientReport, assemble_gradient
from msevo.integrate import Trajectory, backward, default_step, evaluate, remesh
from msevo.problem import (
    BenchmarkId,
    ProblemDef,
    hamiltonian,
    unpenalized_cost,
    with_penalty_weight,
)
from msevo.structure import (
    MESH_TOLERANCE,
    Bound,
    BoundaryArc,
    ConstrainedArc,
    ControlStructure,
    DecisionVector,
    HermiteArc,
    TimePolynomialArc,
    layout,
    pack,
    zero_length_arcs,
)
from msevo.tracker import Tracker

from .config import SolverConfig
from .linesearch import linesearch

"""
Curvature pairs with ``y^T s`` below this fraction of ``|y| |s|`` are not stored
"""
CURVATURE_TOLERANCE = 1e-10

"""
Projected antigradient norm below which the decision vector is stationary
"""
STATIONARY_GRADIENT_NORM = 1e-12

"""
Increase of the penalty state along the schedule tolerated without warning
"""
PENALTY_HANDOFF_TOLERANCE = 1e-12

"""
Switching time of the starting structure of the fermentation problem
"""
FERMENTATION_START_SWITCH = 3.0


class TerminationReason(Enum):
    CONVERGED = "converged"
    STATIONARY = "stationary"
    BUDGET_EXHAUSTED = "budget exhausted"
    STALLED = "stalled"


@dataclass(frozen=True, eq=False)
class SolveReport:
    """
    Outcome of a solve

    ``sigma_history`` and ``events`` are the tables recorded by the tracker of the solve, ``stages`` has one row per penalty weight when the problem is penalized.
    """

    structure: ControlStructure
    decision: DecisionVector
    trajectory: Trajectory
    sigma_history: DataFrame
    events: DataFrame
    residual: float
    iterations: int
    structural_changes: int
    reason: TerminationReason
    stages: Optional[DataFrame] = None

    @property
    def sigma(self) -> float:
        return self.trajectory.sigma

    @property
    def converged(self) -> bool:
        return self.reason is TerminationReason.CONVERGED

    def summary(self) -> str:
        """
        Human readable report, one ``key = value`` per line
        """
        lines = [
            f"problem = {self.structure.problem.name}",
            f"reason = {self.reason.value}",
            f"sigma = {self.sigma!r}",
            f"cost = {unpenalized_cost(self.structure.problem, self.trajectory.terminal_state)!r}",
            f"mp_residual = {self.residual!r}",
            f"iterations = {self.iterations}",
            f"structural_changes = {self.structural_changes}",
            f"dimension = {len(self.decision.values)}",
            f"arcs = {self.structure.N}",
            f"structure = {self.structure.describe()}",
        ]
        if self.stages is not None:
            for row in self.stages.itertuples():
                lines.append(
                    f"stage rho = {row.rho!r}: sigma = {row.sigma!r}, x5 = {row.penalty!r}, violation = {row.violation!r}, reason = {row.reason}"
                )
        return "\n".join(lines) + "\n"


class CurvatureMemory:
    def __init__(self, size: int):
        """
        Keep the last ``size`` curvature pairs of a limited-memory BFGS method
        """
        self.__pairs: Deque[Tuple[Vector, Vector]] = deque(maxlen=size)

    def __len__(self) -> int:
        return len(self.__pairs)

    def reset(self) -> None:
        self.__pairs.clear()

    def push(self, step: Vector, change: Vector) -> bool:
        """
        Store the pair ``(d_{k+1} - d_k, g_{k+1} - g_k)`` if it satisfies the curvature condition
        """
        curvature = float(np.dot(step, change))
        if curvature <= CURVATURE_TOLERANCE * np.linalg.norm(step) * np.linalg.norm(change):
            return False
        self.__pairs.append((np.asarray(step, dtype=float), np.asarray(change, dtype=float)))
        return True

    def direction(self, g: Vector) -> Vector:
        """
        ``-H g`` for the inverse Hessian approximation ``H`` built from the stored pairs (two-loop recursion)
        """
        q = np.array(g, dtype=float)
        alphas = []
        for s, y in reversed(self.__pairs):
            alpha = float(np.dot(s, q)) / float(np.dot(y, s))
            q -= alpha * y
            alphas.append(alpha)
        if self.__pairs:
            s, y = self.__pairs[-1]
            q *= float(np.dot(s, y)) / float(np.dot(y, y))
        for (s, y), alpha in zip(self.__pairs, reversed(alphas)):
            beta = float(np.dot(y, q)) / float(np.dot(y, s))
            q += (alpha - beta) * s
        return -q


def mp_residual(traj: Trajectory, s: ControlStructure, prob: ProblemDef) -> float:
    """
    Violation of the maximum principle by a trajectory, relative to ``max(1, sup |H|)``

    It is the largest of ``|grad_u H|`` where the control is strictly inside the bounds, outside constrained arcs; of the derivative of ``H`` towards the inside where the control is at a bound; and of the Hamiltonian jumps between consecutive arcs of positive length.
    """
    if not traj.complete:
        raise InvalidArgumentError("The adjoint has not been integrated")
    lower, upper = prob.bounds
    positive = [i for i in range(s.N) if s.length(i) > MESH_TOLERANCE]
    scale = max([1.0] + [float(np.max(np.abs(traj.arcs[i].hamiltonian))) for i in positive])
    worst = 0.0

    for i in positive:
        samples = traj.arcs[i]
        g, u = samples.grad_u_h, samples.u
        at_lower, at_upper = u <= lower, u >= upper
        violations = [np.maximum(0.0, g[at_lower]), np.maximum(0.0, -g[at_upper])]
        if not isinstance(s.arcs[i], ConstrainedArc):
            violations.append(np.abs(g[~(at_lower | at_upper)]))
        for values in violations:
            if len(values):
                worst = max(worst, float(np.max(values)))

    for left, right in zip(positive, positive[1:]):
        x, psi = traj.arcs[right].x[0], traj.arcs[right].psi[0]
        u_left, u_right = traj.arcs[left].u[-1], traj.arcs[right].u[0]
        if u_left != u_right:
            jump = hamiltonian(psi, x, u_right, prob) - hamiltonian(psi, x, u_left, prob)
            worst = max(worst, abs(jump))

    return worst / scale


def starting_structure(prob: ProblemDef) -> ControlStructure:
    """
    Default first structure of a problem

    The LQ problem starts from zero control on a single Hermite arc, the fermentation problem switches from the lower to the upper bound at ``t = 3`` and the pendulum starts from a zero time polynomial. Other problems start from the admissible constant closest to zero on a Hermite arc.
    """
    lower, upper = prob.bounds
    T = prob.horizon
    if prob.name == BenchmarkId.FERMENTATION.value:
        return ControlStructure(
            nodes=(0.0, FERMENTATION_START_SWITCH, T),
            arcs=(BoundaryArc(bound=Bound.LOWER), BoundaryArc(bound=Bound.UPPER)),
            problem=prob,
        )
    if prob.name == BenchmarkId.PENDULUM_CART.value:
        return ControlStructure(
            nodes=(0.0, T), arcs=(TimePolynomialArc(p=(0.0, 0.0, 0.0, 0.0)),), problem=prob
        )
    value = float(np.clip(0.0, lower, upper))
    return ControlStructure(
        nodes=(0.0, T), arcs=(HermiteArc(p=(value, 0.0, value, 0.0)),), problem=prob
    )


def mse_solve(
    prob: ProblemDef,
    initial: ControlStructure,
    cfg: Optional[SolverConfig] = None,
    tracker: Optional[Tracker] = None,
    generations: Optional[Iterable[GenerationKind]] = None,
) -> SolveReport:
    """
    Minimize the performance index by alternating quasi-Newton steps and structural changes which preserve the control

    Every loop checks the maximum principle residual, then generates (saturations whenever needed, the other enabled ``generations`` when the projected antigradient has shrunk by the cadence factor since the last change), then takes one step and reduces the structure if an ordering constraint became active.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    tracker = tracker if tracker is not None else Tracker()
    kinds = frozenset(generations if generations is not None else cfg.generations)
    h_max = cfg.h_max if cfg.h_max is not None else default_step(prob)

    s = initial if initial.problem is prob else initial.with_problem(prob)
    traj = evaluate(prob, s, h_max)
    state = _SolveState(tracker=tracker, memory=CurvatureMemory(cfg.memory))
    tracker.record_sigma(0, "start", traj.sigma, len(layout(s)))
    reason = TerminationReason.STATIONARY

    while True:
        report = assemble_gradient(traj, s)
        p = projected_antigradient(report.values, active_set(s))
        norm = float(np.linalg.norm(p))
        state.learn(pack(s).values, report.values)
        if state.reference is None:
            state.reference = norm

        if mp_residual(traj, s, prob) < cfg.mp_tolerance:
            reason = TerminationReason.CONVERGED
            break

        if state.changes < cfg.max_structural_changes:
            candidates = saturation_check(traj, s) if GenerationKind.SATURATION in kinds else []
            scan = (
                state.force
                or norm <= cfg.cadence * state.reference
                or state.epoch >= cfg.max_iterations
                or norm <= STATIONARY_GRADIENT_NORM
            )
            if not candidates and scan:
                candidates = _intentional_candidates(traj, s, report, kinds, cfg)
                if not candidates:
                    state.reference = norm
            if candidates:
                s, traj = _generate(prob, s, traj, candidates, state)
                continue

        if state.force:
            reason = TerminationReason.STALLED
            break
        if state.epoch >= cfg.max_iterations:
            reason = TerminationReason.BUDGET_EXHAUSTED
            warn(f"{cfg.max_iterations} iterations without structural change", RuntimeWarning)
            break
        if norm <= STATIONARY_GRADIENT_NORM:
            reason = TerminationReason.STATIONARY
            break

        d = pack(s)
        result = None
        for direction, first_step in _directions(report, s, p, state.memory):
            try:
                result = linesearch(d, direction, s, prob, cfg, report.values, traj.sigma, first_step)
                break
            except LinesearchFailure as e:
                tracker.log(f"[{state.iterations}] {e}")
        if result is None:
            state.force = True
            state.forget()
            continue

        state.remember(d.values, report.values)
        s, traj = result.structure, backward(prob, result.structure, result.trajectory)
        state.iterations += 1
        state.epoch += 1
        tracker.record_sigma(state.iterations, "step", traj.sigma, len(d.values), result.step, norm)

        if result.capped or _reducible(s):
            s, traj = _reduce(prob, s, traj, state)

    s, traj = _reduce(prob, s, traj, state)
    return SolveReport(
        structure=s,
        decision=pack(s),
        trajectory=traj,
        sigma_history=tracker.sigma_frame,
        events=tracker.events_frame,
        residual=mp_residual(traj, s, prob),
        iterations=state.iterations,
        structural_changes=state.changes,
        reason=reason,
    )


def staged_solve(
    prob: ProblemDef,
    initial: ControlStructure,
    cfg: Optional[SolverConfig] = None,
    stages: Sequence[Sequence[GenerationKind]] = (),
    tracker: Optional[Tracker] = None,
) -> SolveReport:
    """
    Solve successively with each set of enabled generation kinds, warm-starting every stage from the previous one

    Without ``stages`` this is a single solve with the kinds of ``cfg``.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    tracker = tracker if tracker is not None else Tracker()
    if not stages:
        return mse_solve(prob, initial, cfg, tracker)

    s, iterations, changes, report = initial, 0, 0, None
    for k, kinds in enumerate(stages):
        with tracker.staged(f"stage {k + 1}"):
            report = mse_solve(prob, s, cfg, tracker, kinds)
        s = report.structure
        iterations += report.iterations
        changes += report.structural_changes
    return replace(
        report,
        sigma_history=tracker.sigma_frame,
        events=tracker.events_frame,
        iterations=iterations,
        structural_changes=changes,
    )


def penalty_loop(
    prob: ProblemDef,
    initial: ControlStructure,
    cfg: Optional[SolverConfig] = None,
    stages: Sequence[Sequence[GenerationKind]] = (),
    tracker: Optional[Tracker] = None,
) -> SolveReport:
    """
    Solve the penalized problem for the increasing weights of ``cfg.penalty_schedule()``, each one warm-started from the previous solution

    The report gets one row per weight with the penalty state ``x5(T)`` and the violation ``max(0, max_t x3 - x3max)``.
    """
    if prob.penalty is None:
        raise InvalidArgumentError(f"Problem `{prob.name}` has no penalty state")
    cfg = cfg if cfg is not None else SolverConfig()
    tracker = tracker if tracker is not None else Tracker()

    s, iterations, changes, report = initial, 0, 0, None
    rows: List[dict] = []
    for rho in cfg.penalty_schedule():
        weighted = with_penalty_weight(prob, rho)
        with tracker.staged(f"rho={rho:g}"):
            report = staged_solve(weighted, s.with_problem(weighted), cfg, stages, tracker)
        s = report.structure
        iterations += report.iterations
        changes += report.structural_changes

        terminal = report.trajectory.terminal_state
        penalty = float(terminal[prob.penalty.index])
        if rows and penalty > rows[-1]["penalty"] + PENALTY_HANDOFF_TOLERANCE:
            warn(f"The penalty state grew from {rows[-1]['penalty']:.3e} to {penalty:.3e} at rho = {rho:g}", RuntimeWarning)
        rows.append(
            {
                "rho": rho,
                "sigma": report.sigma,
                "cost": unpenalized_cost(weighted, terminal),
                "penalty": penalty,
                "violation": constraint_violation(report.trajectory, weighted),
                "iterations": report.iterations,
                "reason": report.reason.value,
            }
        )

    return replace(
        report,
        sigma_history=tracker.sigma_frame,
        events=tracker.events_frame,
        iterations=iterations,
        structural_changes=changes,
        stages=DataFrame(rows),
    )


def solve(
    prob: ProblemDef,
    cfg: Optional[SolverConfig] = None,
    stages: Sequence[Sequence[GenerationKind]] = (),
    tracker: Optional[Tracker] = None,
    initial: Optional[ControlStructure] = None,
) -> SolveReport:
    """
    Solve a problem from its default starting structure, through the penalty loop when it has a penalty state
    """
    initial = initial if initial is not None else starting_structure(prob)
    if prob.penalty is not None:
        return penalty_loop(prob, initial, cfg, stages, tracker)
    return staged_solve(prob, initial, cfg, stages, tracker)


def constraint_violation(traj: Trajectory, prob: ProblemDef) -> float:
    """
    ``max(0, max_t x[constrained] - bound)`` over the mesh points
    """
    if prob.penalty is None:
        return 0.0
    highest = max(float(np.max(samples.x[:, prob.penalty.constrained])) for samples in traj.arcs)
    return max(0.0, highest - prob.penalty.bound)


class _SolveState:
    """
    Counters and curvature bookkeeping of one solve
    """

    def __init__(self, tracker: Tracker, memory: CurvatureMemory):
        self.tracker = tracker
        self.memory = memory
        self.iterations = 0
        self.epoch = 0
        self.changes = 0
        self.force = False
        self.reference: Optional[float] = None
        self.__previous: Optional[Tuple[Vector, Vector]] = None

    def remember(self, d: Vector, g: Vector) -> None:
        self.__previous = (np.array(d), np.array(g))

    def learn(self, d: Vector, g: Vector) -> None:
        """
        Store the curvature pair of the last step, if any
        """
        if self.__previous is not None:
            d0, g0 = self.__previous
            self.memory.push(d - d0, g - g0)
            self.__previous = None

    def forget(self) -> None:
        self.memory.reset()
        self.__previous = None

    def changed(self) -> None:
        """
        Start a new epoch after a change of the decision space
        """
        self.forget()
        self.changes += 1
        self.epoch = 0
        self.force = False
        self.reference = None


def _directions(report: GradientReport, s: ControlStructure, p: Vector, memory: CurvatureMemory):
    """
    Quasi-Newton direction re-projected onto the feasible cone when it descends, then the projected antigradient
    """
    if len(memory):
        direction = project_direction(memory.direction(report.values), active_set(s))
        if float(np.dot(report.values, direction)) < 0:
            yield direction, 1.0
    yield p, 1.0 / max(1.0, float(np.max(np.abs(p))))


def _intentional_candidates(
    traj: Trajectory,
    s: ControlStructure,
    report: GradientReport,
    kinds: frozenset,
    cfg: SolverConfig,
) -> List[GenerationCandidate]:
    candidates: List[GenerationCandidate] = []
    if GenerationKind.SPIKE in kinds:
        candidates += spike_candidates(
            traj,
            s,
            gradient=report,
            threshold=cfg.efficiency_threshold,
            floor=cfg.efficiency_floor,
            per_arc=cfg.candidates_per_arc,
        )
    if GenerationKind.NODE_INSERTION in kinds:
        candidates += node_insertion_candidates(
            traj, s, gradient=report, threshold=cfg.efficiency_threshold, per_arc=cfg.candidates_per_arc
        )
    if GenerationKind.BASIS_EXTENSION in kinds:
        candidates += basis_extension_candidates(
            traj, s, gradient=report, threshold=cfg.efficiency_threshold
        )
    return _compatible(candidates)


def _compatible(candidates: List[GenerationCandidate]) -> List[GenerationCandidate]:
    """
    Best ranked candidates which can be applied together: one per point, extensions only on arcs no other candidate changes
    """
    ranked = sorted(candidates, key=lambda c: (-c.relative_efficiency, -c.score, c.tau))
    kept, points, touched = [], set(), set()
    for cand in ranked:
        if cand.kind is GenerationKind.BASIS_EXTENSION or (cand.arc, cand.tau) in points:
            continue
        kept.append(cand)
        points.add((cand.arc, cand.tau))
        touched.add(cand.arc)
    kept += [
        cand
        for cand in ranked
        if cand.kind is GenerationKind.BASIS_EXTENSION and cand.arc not in touched
    ]
    return kept


def _generate(
    prob: ProblemDef,
    s: ControlStructure,
    traj: Trajectory,
    candidates: List[GenerationCandidate],
    state: _SolveState,
) -> Tuple[ControlStructure, Trajectory]:
    changes = []
    current = s
    for cand, after in generation_steps(s, candidates):
        changes.append((cand, len(layout(current)), len(layout(after))))
        current = after

    new_traj = evaluate(prob, current, mesh=remesh(traj.mesh, current))
    for cand, before, after in changes:
        target = cand.procedure.kind if cand.procedure is not None else ""
        state.tracker.record_event(
            state.iterations,
            cand.kind.value,
            cand.tau,
            before,
            after,
            traj.sigma,
            new_traj.sigma,
            f"{cand.arc}" + (f" -> {target}" if target else ""),
        )
    state.tracker.record_sigma(state.iterations, "generation", new_traj.sigma, len(layout(current)))
    state.changed()
    return current, new_traj


def _reducible(s: ControlStructure) -> bool:
    return bool(zero_length_arcs(s)) or any(
        left.same_procedure(right) for left, right in zip(s.arcs, s.arcs[1:])
    )


def _reduce(
    prob: ProblemDef, s: ControlStructure, traj: Trajectory, state: _SolveState
) -> Tuple[ControlStructure, Trajectory]:
    if not _reducible(s):
        return s, traj
    report = assemble_gradient(traj, s)
    reduced, _, events = reduce(s, gradient=report.values, active=active_set(s))
    if not events:
        return s, traj

    new_traj = evaluate(prob, reduced, mesh=remesh(traj.mesh, reduced))
    for event in events:
        state.tracker.record_event(
            state.iterations,
            event.kind.value,
            event.tau,
            event.dimension_before,
            event.dimension_after,
            traj.sigma,
            new_traj.sigma,
            ",".join(str(i) for i in event.arcs),
        )
    state.tracker.record_sigma(state.iterations, "reduction", new_traj.sigma, len(layout(reduced)))
    state.changed()
    return reduced, new_traj
