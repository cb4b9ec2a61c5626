from functools import lru_cache

import numpy as np
import pytest

from msevo.error import ConfigError, InvalidArgumentError
from msevo.evolution import GenerationKind
from msevo.integrate import build_mesh, evaluate, forward
from msevo.optimizer import *
from msevo.problem import get_problem, make_lq, make_pendulum, unpenalized_cost
from msevo.structure import (
    Bound,
    BoundaryArc,
    ConstrainedArc,
    ControlStructure,
    HermiteArc,
    SingularArc,
    TimePolynomialArc,
    eval_control,
    pack,
)

from .mock_problem import bang_bang, make_idle, make_race, make_steering


def test_parse_config_skips_comments():
    text = "# solver tuning\nh_max = 0.01  # finer\n\nmax_iterations=20\n"

    assert parse_config(text) == {"h_max": "0.01", "max_iterations": "20"}


def test_parse_config_needs_pairs():
    with pytest.raises(ConfigError):
        parse_config("h_max 0.01\n")


def test_make_config():
    run = make_config(
        {
            "problem": "pendulum",
            "x3max": "0.5",
            "max_iterations": "20",
            "generations": "saturation, spike",
            "stages": "saturation; saturation,insertion",
        }
    )

    assert run.problem == "pendulum"
    assert run.x3max == 0.5
    assert run.solver.max_iterations == 20
    assert run.solver.generations == (GenerationKind.SATURATION, GenerationKind.SPIKE)
    assert run.stages == (
        (GenerationKind.SATURATION,),
        (GenerationKind.SATURATION, GenerationKind.NODE_INSERTION),
    )
    assert run.solver.h_max is None


@pytest.mark.parametrize(
    "entries",
    [
        {"tolerance": "1e-3"},
        {"max_iterations": "many"},
        {"max_iterations": "2.5"},
        {"generations": "saturation,mutation"},
        {"backtracking": "2"},
        {"memory": "0"},
        {"rho_multiplier": "1"},
        {"h_max": "-0.1"},
        {"min_arc_fraction": "0"},
    ],
)
def test_invalid_config(entries):
    with pytest.raises(ConfigError):
        make_config(entries)


def test_config_round_trip():
    run = make_config(
        {
            "problem": "pendulum",
            "x3max": "0.5",
            "h_max": "0.002",
            "cadence": "0.25",
            "generations": "saturation,extension",
            "stages": "saturation; spike,insertion",
        }
    )

    assert make_config(parse_config(dump_config(run))) == run
    assert make_config(parse_config(dump_config(RunConfig()))) == RunConfig()


def test_load_config_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("problem = fermentation\nmax_iterations = 50\n")

    run = load_config(str(path), ["max_iterations=7", "out = results"])

    assert run.problem == "fermentation"
    assert run.solver.max_iterations == 7
    assert run.out == "results"


def test_load_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.cfg"))


def test_malformed_override():
    with pytest.raises(ConfigError):
        parse_overrides(["max_iterations"])


def test_penalty_schedule():
    assert SolverConfig().penalty_schedule() == [10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7]
    assert SolverConfig(rho0=1.0, rho_multiplier=3.0, rho_max=10.0).penalty_schedule() == [1.0, 3.0, 9.0]


def test_max_step_meets_the_next_node():
    s = bang_bang(make_race(), 0.5)

    assert max_step(s, np.array([-2.0])) == (0.25, ((0, 1),))
    assert max_step(s, np.array([1.0])) == (0.5, ((1, 2),))
    assert max_step(s, np.array([0.0])) == (np.inf, ())


def test_linesearch_ties_the_node_to_the_start():
    prob = make_race()
    s = bang_bang(prob, 0.5)
    cfg = SolverConfig(h_max=0.1)

    result = linesearch(pack(s), np.array([-2.0]), s, prob, cfg, np.array([2.0]))

    assert result.capped
    assert result.step == 0.25
    assert result.tied == ((0, 1),)
    assert result.structure.nodes == (0.0, 0.0, 1.0)
    assert result.sigma == pytest.approx(-1.0)


def test_linesearch_collapses_a_sliver():
    prob = make_race()
    s = bang_bang(prob, 0.5)
    cfg = SolverConfig(h_max=0.1, min_arc_fraction=1e-3)

    result = linesearch(pack(s), np.array([-2.0]), s, prob, cfg, np.array([2.0]), first_step=0.2499)

    assert not result.capped
    assert result.step == 0.2499
    assert result.structure.nodes == (0.0, 0.0, 1.0)
    assert result.sigma == pytest.approx(-1.0)


def test_linesearch_keeps_arcs_above_the_minimum_length():
    prob = make_race()
    s = bang_bang(prob, 0.5)
    cfg = SolverConfig(h_max=0.1, min_arc_fraction=1e-3)

    result = linesearch(pack(s), np.array([-2.0]), s, prob, cfg, np.array([2.0]), first_step=0.2)

    assert result.structure.nodes == (0.0, pytest.approx(0.1), 1.0)


def test_linesearch_needs_a_descent_direction():
    prob = make_race()
    s = bang_bang(prob, 0.5)

    with pytest.raises(InvalidArgumentError):
        linesearch(pack(s), np.array([2.0]), s, prob, SolverConfig(h_max=0.1), np.array([2.0]))


def test_curvature_memory_two_loop_recursion():
    memory = CurvatureMemory(2)

    assert memory.push(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert memory.push(np.array([0.0, 1.0]), np.array([0.0, 4.0]))
    assert np.allclose(memory.direction(np.array([1.0, 4.0])), [-1.0, -1.0])


def test_curvature_memory_rejects_negative_curvature():
    memory = CurvatureMemory(2)

    assert not memory.push(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert len(memory) == 0
    assert memory.direction(np.array([1.0, 2.0])).tolist() == [-1.0, -2.0]


def test_curvature_memory_forgets_old_pairs():
    memory = CurvatureMemory(2)
    for k in range(3):
        memory.push(np.array([1.0, k]), np.array([1.0, k]))

    assert len(memory) == 2
    memory.reset()
    assert len(memory) == 0


def test_mp_residual():
    prob = make_race()
    optimal = ControlStructure(nodes=(0.0, 1.0), arcs=(BoundaryArc(bound=Bound.UPPER),), problem=prob)

    assert mp_residual(evaluate(prob, optimal, 0.1), optimal, prob) == 0.0
    s = bang_bang(prob, 0.5)
    assert mp_residual(evaluate(prob, s, 0.1), s, prob) == pytest.approx(2.0)


def test_mp_residual_needs_the_adjoint():
    prob = make_race()
    s = bang_bang(prob, 0.5)

    with pytest.raises(InvalidArgumentError):
        mp_residual(forward(prob, s, build_mesh(s, 0.1)), s, prob)


def test_starting_structures():
    lq = starting_structure(make_lq())
    fermentation = starting_structure(get_problem("fermentation"))
    pendulum = starting_structure(get_problem("pendulum"))

    assert [arc.kind for arc in lq.arcs] == ["hermite"]
    assert lq.arcs[0].params == (0.0, 0.0, 0.0, 0.0)
    assert fermentation.nodes == (0.0, 3.0, 6.0)
    assert [arc.bound for arc in fermentation.arcs] == [Bound.LOWER, Bound.UPPER]
    assert [arc.kind for arc in pendulum.arcs] == ["polynomial"]


def test_solve_steering():
    prob = make_steering()
    cfg = SolverConfig(h_max=0.01, generations=(GenerationKind.SATURATION,))

    report = solve(prob, cfg)

    assert report.converged
    assert report.residual < cfg.mp_tolerance
    assert report.sigma == pytest.approx(0.25, abs=1e-4)
    assert all(abs(eval_control(report.structure, t) - 0.5) < 1e-2 for t in np.linspace(0.0, 1.0, 11))
    assert "reason = converged" in report.summary()
    assert list(report.sigma_history["kind"])[0] == "start"


def test_solve_idle_problem():
    report = solve(make_idle(), SolverConfig(h_max=0.01))

    assert report.converged
    assert report.iterations == 0
    assert report.structural_changes == 0


def test_solve_budget_exhausted():
    cfg = SolverConfig(h_max=0.01, max_iterations=1, generations=())

    with pytest.warns(RuntimeWarning):
        report = solve(make_steering(), cfg)

    assert report.reason is TerminationReason.BUDGET_EXHAUSTED
    assert not report.converged
    assert report.iterations == 1


def test_staged_solve_labels_stages():
    prob = make_steering()
    cfg = SolverConfig(h_max=0.01)
    stages = ((GenerationKind.SATURATION,), (GenerationKind.SATURATION, GenerationKind.NODE_INSERTION))

    report = solve(prob, cfg, stages)

    assert report.converged
    assert set(report.sigma_history["stage"]) == {"stage 1", "stage 2"}


def test_penalty_loop_needs_a_penalty():
    prob = make_steering()

    with pytest.raises(InvalidArgumentError):
        penalty_loop(prob, starting_structure(prob))


def test_constraint_violation_without_penalty():
    prob = make_race()
    s = bang_bang(prob, 0.5)

    assert constraint_violation(evaluate(prob, s, 0.1), prob) == 0.0


@pytest.mark.slow
@pytest.mark.timeout(1800)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_lq_descent_is_monotone():
    prob = make_lq()
    report = solve(prob, SolverConfig(h_max=prob.horizon / 500, max_iterations=200))
    history = report.sigma_history

    assert history["sigma"].iloc[-1] < history["sigma"].iloc[0]
    for k in range(1, len(history)):
        if history["kind"].iloc[k] == "step":
            assert history["sigma"].iloc[k] < history["sigma"].iloc[k - 1]


def test_mse_solve_without_generations():
    prob = make_steering()
    initial = ControlStructure(nodes=(0.0, 1.0), arcs=(HermiteArc(p=(0.2, 0.3, 0.7, -0.1)),), problem=prob)

    report = mse_solve(prob, initial, SolverConfig(h_max=0.01), generations=())

    assert report.converged
    assert report.structural_changes == 0
    assert report.structure.describe() == "hermite[0, 1]"
    assert report.sigma == pytest.approx(0.25, abs=1e-4)


@pytest.mark.slow
@pytest.mark.timeout(3600)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_lq_saturation_then_node_insertion():
    prob = make_lq()
    cfg = SolverConfig(h_max=prob.horizon / 1000)
    saturation = (GenerationKind.SATURATION,)

    saturated = solve(prob, cfg, (saturation,))
    for i, arc in enumerate(saturated.structure.arcs):
        if isinstance(arc, BoundaryArc) and saturated.structure.length(i) > 0.0:
            psi2 = saturated.trajectory.arcs[i].psi[1:-1, 1]
            # u = sgn psi2 where |psi2| > 1
            assert np.all(np.sign(psi2) == arc.bound.level(prob))

    report = solve(prob, cfg, (saturation, (*saturation, GenerationKind.NODE_INSERTION)))

    assert report.converged
    assert report.residual < 1e-3


@pytest.mark.slow
@pytest.mark.timeout(3600)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_lq_canonical_basis_run():
    prob = make_lq()
    cfg = SolverConfig(h_max=prob.horizon / 1000)
    saturation = (GenerationKind.SATURATION,)

    report = solve(prob, cfg, (saturation, (*saturation, GenerationKind.BASIS_EXTENSION)))
    last = report.structure.arcs[-1]

    assert len(report.decision) <= 20
    assert len(report.structure.nodes) <= 8
    assert last.explicit
    assert max(abs(value) for value in last.params[:4]) < 1e-2


@pytest.mark.slow
@pytest.mark.timeout(3600)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fermentation_finds_the_singular_arc():
    prob = get_problem("fermentation")

    report = solve(prob, SolverConfig(h_max=prob.horizon / 1000))
    kinds = list(report.events["kind"])
    singular = [i for i, arc in enumerate(report.structure.arcs) if isinstance(arc, SingularArc)]
    arcs = report.trajectory.arcs
    scale = max(1.0, *(float(np.max(np.abs(samples.hamiltonian))) for samples in arcs))

    assert report.converged
    assert singular
    for i in singular:
        assert np.max(np.abs(arcs[i].grad_u_h)) < 1e-3 * scale
    assert kinds.count("spike") >= 1
    assert kinds.count("zero-length") + kinds.count("merge") >= 2


@lru_cache(maxsize=None)
def _pendulum_run(x3max: float):
    prob = make_pendulum(x3max=x3max)
    report = solve(prob, SolverConfig(h_max=prob.horizon / 1000))
    s = report.structure

    def total_length(kind) -> float:
        return sum(s.length(i) for i, arc in enumerate(s.arcs) if isinstance(arc, kind))

    highest = max(float(np.max(samples.x[:, 2])) for samples in report.trajectory.arcs)
    return report, total_length(ConstrainedArc), total_length(TimePolynomialArc), highest


@pytest.mark.slow
@pytest.mark.timeout(7200)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pendulum_touches_a_loose_constraint():
    report, constrained, _, highest = _pendulum_run(0.75)
    T = report.structure.horizon

    assert report.stages["rho"].iloc[-1] == 1e7
    assert report.stages["violation"].iloc[-1] < 1e-3
    assert constrained < 0.05 * T
    assert highest > 0.75 - 1e-2


@pytest.mark.slow
@pytest.mark.timeout(7200)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pendulum_rides_a_tighter_constraint():
    report, constrained, singular, _ = _pendulum_run(0.5)
    T = report.structure.horizon

    assert constrained > 0.05 * T
    assert singular > 0.0


@pytest.mark.slow
@pytest.mark.timeout(7200)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pendulum_rides_the_tightest_constraint_without_singular_arc():
    report, constrained, singular, _ = _pendulum_run(0.25)
    T = report.structure.horizon

    assert constrained > _pendulum_run(0.5)[1]
    assert singular < 0.02 * T


@pytest.mark.slow
@pytest.mark.timeout(14400)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pendulum_cost_grows_as_the_constraint_tightens():
    costs = []
    for x3max in (0.75, 0.5, 0.25):
        report = _pendulum_run(x3max)[0]
        costs.append(unpenalized_cost(report.structure.problem, report.trajectory.terminal_state))

    assert costs[0] <= costs[1] <= costs[2]
