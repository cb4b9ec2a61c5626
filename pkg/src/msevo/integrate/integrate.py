from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from msevo.annotation import Matrix, Vector
from msevo.error import DivergenceError, InvalidArgumentError
from msevo.problem import ProblemDef
from msevo.structure import MESH_TOLERANCE, Arc, ControlStructure, FeedbackArc

from .mesh import Mesh, build_mesh

"""
Default number of steps over the horizon
"""
DEFAULT_STEPS_PER_HORIZON = 2000


@dataclass(frozen=True, eq=False)
class ArcSamples:
    """
    Samples of one arc at its mesh points, both ends included

    At the ends ``u`` is the value of this arc (one-sided limit), so the samples of two adjacent arcs at their common node differ in control only.
    """

    t: Vector
    x: Matrix
    xdot: Matrix
    u: Vector
    psi: Optional[Matrix] = None
    grad_u_h: Optional[Vector] = None
    hamiltonian: Optional[Vector] = None
    sw: Optional[Vector] = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    State, adjoint and control samples of a structure, arc by arc
    """

    structure: ControlStructure
    mesh: Mesh
    arcs: List[ArcSamples]
    sigma: float

    @property
    def problem(self) -> ProblemDef:
        return self.structure.problem

    @property
    def complete(self) -> bool:
        return all(samples.psi is not None for samples in self.arcs)

    @property
    def terminal_state(self) -> Vector:
        return self.arcs[-1].x[-1]

    def node_state(self, i: int) -> Vector:
        """
        State at node ``i``, which is continuous
        """
        return self.arcs[i].x[0] if i < len(self.arcs) else self.arcs[-1].x[-1]

    def node_adjoint(self, i: int) -> Vector:
        samples = self.arcs[i] if i < len(self.arcs) else self.arcs[-1]
        if samples.psi is None:
            raise InvalidArgumentError("The adjoint has not been integrated")
        return samples.psi[0] if i < len(self.arcs) else samples.psi[-1]


def forward(prob: ProblemDef, s: ControlStructure, mesh: Mesh) -> Trajectory:
    """
    Integrate the state with the classical RK4 method, one arc after the other

    Feedback arcs evaluate the control from the state of every stage.
    """
    x = np.array(prob.x0, dtype=float)
    arcs = []

    for i, points in enumerate(mesh.segments):
        law = _ArcLaw(s.arcs[i], *s.interval(i), prob)
        xs = np.empty((len(points), prob.n))
        us = np.empty(len(points))
        xdots = np.empty((len(points), prob.n))
        on_points, on_midpoints = law.of_time(points), law.of_time(_midpoints(points))

        xs[0] = x
        us[0] = on_points[0] if on_points is not None else law(points[0], x)
        for k in range(len(points) - 1):
            t, h = points[k], points[k + 1] - points[k]
            u0 = us[k]
            k1 = _f(prob, x, u0)
            xdots[k] = k1

            x2 = x + 0.5 * h * k1
            k2 = _f(prob, x2, on_midpoints[k] if on_midpoints is not None else law(t + 0.5 * h, x2))
            x3 = x + 0.5 * h * k2
            k3 = _f(prob, x3, on_midpoints[k] if on_midpoints is not None else law(t + 0.5 * h, x3))
            x4 = x + h * k3
            k4 = _f(prob, x4, on_points[k + 1] if on_points is not None else law(points[k + 1], x4))

            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(float(points[k + 1]))
            xs[k + 1] = x
            us[k + 1] = on_points[k + 1] if on_points is not None else law(points[k + 1], x)

        xdots[-1] = _f(prob, xs[-1], us[-1])
        arcs.append(ArcSamples(t=points, x=xs, xdot=xdots, u=us))

    sigma = float(prob.terminal_cost(x))
    if not np.isfinite(sigma):
        raise DivergenceError(prob.horizon, "performance index")
    return Trajectory(structure=s, mesh=mesh, arcs=arcs, sigma=sigma)


def backward(prob: ProblemDef, s: ControlStructure, traj: Trajectory) -> Trajectory:
    """
    Integrate the adjoint ``psi' = -A^T psi`` from ``psi(T) = -grad phi(x(T))`` with the RK4 method

    ``A`` is ``fx`` on arcs explicit in time and the total derivative ``fx + fu du/dx`` on feedback arcs. States between samples come from the cubic Hermite interpolant of the stored samples and derivatives.
    """
    psi = -np.asarray(prob.terminal_gradient(traj.terminal_state), dtype=float)
    filled: List[ArcSamples] = [None] * len(traj.arcs)  # type: ignore

    for i in reversed(range(len(traj.arcs))):
        samples = traj.arcs[i]
        law = _ArcLaw(s.arcs[i], *s.interval(i), prob)
        on_midpoints = law.of_time(_midpoints(samples.t))
        psis = np.empty_like(samples.x)

        psis[-1] = psi
        a_next = law.state_matrix(samples.x[-1], samples.u[-1])
        for k in reversed(range(len(samples.t) - 1)):
            t0, t1 = samples.t[k], samples.t[k + 1]
            h = t1 - t0
            xm = 0.5 * (samples.x[k] + samples.x[k + 1]) + h / 8.0 * (
                samples.xdot[k] - samples.xdot[k + 1]
            )
            um = on_midpoints[k] if on_midpoints is not None else law(t0 + 0.5 * h, xm)
            a_mid = law.state_matrix(xm, um)
            a_prev = law.state_matrix(samples.x[k], samples.u[k])

            k1 = a_next.T @ psi
            k2 = a_mid.T @ (psi + 0.5 * h * k1)
            k3 = a_mid.T @ (psi + 0.5 * h * k2)
            k4 = a_prev.T @ (psi + h * k3)
            psi = psi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(psi)):
                raise DivergenceError(float(t0), "adjoint")
            psis[k] = psi
            a_next = a_prev

        filled[i] = _with_adjoint(prob, samples, psis)

    return replace(traj, arcs=filled)


def evaluate(
    prob: ProblemDef, s: ControlStructure, h_max: Optional[float] = None, mesh: Optional[Mesh] = None
) -> Trajectory:
    """
    Integrate both the state and the adjoint, on ``mesh`` or on a mesh of ``s`` built with steps up to ``h_max``
    """
    if mesh is None:
        mesh = build_mesh(s, h_max if h_max is not None else default_step(prob))
    elif mesh.breakpoints != s.nodes:
        raise InvalidArgumentError("The mesh does not match the nodes of the structure")
    return backward(prob, s, forward(prob, s, mesh))


def performance(prob: ProblemDef, s: ControlStructure, h_max: Optional[float] = None) -> float:
    """
    Performance index of ``s``, computed with the state integration only
    """
    mesh = build_mesh(s, h_max if h_max is not None else default_step(prob))
    return forward(prob, s, mesh).sigma


def default_step(prob: ProblemDef) -> float:
    return prob.horizon / DEFAULT_STEPS_PER_HORIZON


def resegment(traj: Trajectory, s: ControlStructure, recompute: bool = True) -> Trajectory:
    """
    Distribute the samples of ``traj`` over the arcs of ``s``, whose nodes must be mesh points of ``traj``

    The state and adjoint are kept. With ``recompute`` the control and the quantities derived from it are evaluated again with the arcs of ``s``, otherwise they are sliced as well, which is exact when ``s`` evaluates to the same control as the structure of ``traj``.
    """
    prob = traj.problem
    keys = ("t", "x", "xdot", "u", "psi", "grad_u_h", "hamiltonian", "sw")
    tables = {
        key: np.concatenate([getattr(samples, key) for samples in traj.arcs])
        for key in keys
        if all(getattr(samples, key) is not None for samples in traj.arcs)
    }
    # Row of the first sample of every old arc
    offsets = np.cumsum([0] + [len(samples.t) for samples in traj.arcs])

    arcs = []
    for i in range(s.N):
        a, b = s.interval(i)
        positive = b - a > MESH_TOLERANCE
        j = traj.structure.locate(a, "right" if positive else "left")
        local = tables["t"][offsets[j] : offsets[j + 1]]
        first = _mesh_index(local, a)
        last = _mesh_index(local, b) if positive else first
        rows = slice(offsets[j] + first, offsets[j] + last + 1)

        if not recompute:
            arcs.append(ArcSamples(**{key: table[rows] for key, table in tables.items()}))
            continue

        law = _ArcLaw(s.arcs[i], a, b, prob)
        t, x = tables["t"][rows], tables["x"][rows]
        u = law.of_time(t)
        if u is None:
            u = np.array([law(tk, xk) for tk, xk in zip(t, x)])
        samples = ArcSamples(
            t=t, x=x, xdot=np.array([_f(prob, xk, uk) for xk, uk in zip(x, u)]), u=u
        )
        if "psi" in tables:
            samples = _with_adjoint(prob, samples, tables["psi"][rows])
        arcs.append(samples)

    return replace(traj, structure=s, mesh=_mesh_of(arcs, s), arcs=arcs)


def _mesh_of(arcs: List[ArcSamples], s: ControlStructure) -> Mesh:
    return Mesh(breakpoints=s.nodes, segments=tuple(samples.t for samples in arcs))


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """
    One row per distinct mesh point, with the right-continuous control at nodes

    Columns are ``t, u, x1..xn, psi1..psin, gradUH, sw``; ``sw`` is empty where the problem has no switching function.
    """
    n = traj.problem.n
    positive = [
        i for i in range(len(traj.arcs)) if traj.structure.length(i) > MESH_TOLERANCE
    ]
    parts = []
    for i in positive:
        samples = traj.arcs[i]
        rows = slice(None) if i == positive[-1] else slice(None, -1)
        data = {"t": samples.t[rows], "u": samples.u[rows]}
        data.update({f"x{k + 1}": samples.x[rows, k] for k in range(n)})
        if samples.psi is not None:
            data.update({f"psi{k + 1}": samples.psi[rows, k] for k in range(n)})
            data["gradUH"] = samples.grad_u_h[rows]
            data["sw"] = samples.sw[rows]
        parts.append(pd.DataFrame(data))
    return pd.concat(parts, ignore_index=True)


class _ArcLaw:
    """
    Control and linearization of one arc
    """

    def __init__(self, arc: Arc, a: float, b: float, prob: ProblemDef):
        self.__arc = arc
        self.__a = a
        self.__b = b
        self.__prob = prob

    def __call__(self, t: float, x: Vector) -> float:
        return self.__arc.control(t, self.__a, self.__b, x, self.__prob)

    def of_time(self, t: Vector) -> Optional[Vector]:
        """
        Control at the times ``t`` when the arc does not depend on the state
        """
        if isinstance(self.__arc, FeedbackArc):
            return None
        if len(t) == 0:
            return np.empty(0)
        lower, upper = self.__prob.bounds
        if self.__arc.explicit:
            return np.clip(np.asarray(self.__arc.raw(t, self.__a, self.__b), dtype=float), lower, upper)
        return np.full(len(t), self.__arc.control(t[0], self.__a, self.__b, None, self.__prob))

    def state_matrix(self, x: Vector, u: float) -> Matrix:
        """
        ``fx`` corrected by the feedback Jacobian on feedback arcs
        """
        uv = np.array([u])
        matrix = np.asarray(self.__prob.fx(x, uv), dtype=float)
        gain = self.__arc.state_jacobian(x, self.__prob)
        if gain is not None:
            matrix = matrix + np.outer(np.asarray(self.__prob.fu(x, uv), dtype=float)[:, 0], gain)
        return matrix


def _with_adjoint(prob: ProblemDef, samples: ArcSamples, psis: Matrix) -> ArcSamples:
    fu = [np.asarray(prob.fu(x, np.array([u])), dtype=float)[:, 0] for x, u in zip(samples.x, samples.u)]
    grad_u_h = np.array([column @ psi for column, psi in zip(fu, psis)])
    hamiltonian = np.einsum("ij,ij->i", psis, samples.xdot)
    switching: Optional[Callable] = prob.switching_function
    sw = (
        np.array([switching(x, psi) for x, psi in zip(samples.x, psis)])
        if switching is not None
        else np.full(len(samples.t), np.nan)
    )
    return replace(samples, psi=psis, grad_u_h=grad_u_h, hamiltonian=hamiltonian, sw=sw)


def _f(prob: ProblemDef, x: Vector, u: float) -> Vector:
    return np.asarray(prob.dynamics(x, np.array([u])), dtype=float)


def _midpoints(points: Vector) -> Vector:
    return 0.5 * (points[:-1] + points[1:])


def _mesh_index(points: Vector, t: float) -> int:
    k = int(np.searchsorted(points, t))
    for candidate in (k - 1, k, k + 1):
        if 0 <= candidate < len(points) and abs(points[candidate] - t) <= MESH_TOLERANCE:
            return candidate
    raise InvalidArgumentError(f"Time {t} is not a mesh point")
