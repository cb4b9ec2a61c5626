import numpy as np
import pytest

from msevo.error import InvalidArgumentError, NoParametersError
from msevo.gradient import *
from msevo.integrate import build_mesh, evaluate, forward
from msevo.problem import get_problem, make_lq, make_pendulum
from msevo.structure import Bound, BoundaryArc, CanonicalArc, ControlStructure, HermiteArc, TimePolynomialArc

from .mock_problem import bang_bang, make_race, make_steering


@pytest.fixture
def steering():
    return make_steering()


@pytest.fixture
def linked(steering):
    return ControlStructure(
        nodes=(0.0, 0.4, 1.0),
        arcs=(
            HermiteArc(p=(0.2, 0.3, 0.7, -0.1)),
            HermiteArc(p=(0.7, -0.1, 0.4, 0.5), link_value=True, link_slope=True),
        ),
        problem=steering,
    )


def _all_pass(table):
    return (table["status"] == "PASS").all()


def test_bang_bang_node_gradient_is_the_hamiltonian_jump():
    prob = make_race()
    s = bang_bang(prob, 0.5)
    report = assemble_gradient(evaluate(prob, s, 0.01), s)

    assert node_formula(s, 1) is grad_node_jump
    assert report.entry(node=1) == pytest.approx(2.0)
    assert report.node_jumps == {1: pytest.approx(2.0)}


def test_gradient_needs_the_adjoint():
    prob = make_race()
    s = bang_bang(prob, 0.5)

    with pytest.raises(InvalidArgumentError):
        assemble_gradient(forward(prob, s, build_mesh(s, 0.1)), s)


def test_boundary_arcs_have_no_parameters():
    prob = make_race()
    s = bang_bang(prob, 0.5)

    with pytest.raises(NoParametersError):
        own_param_integrals(evaluate(prob, s, 0.1), s, 0)


def test_unknown_entry():
    prob = make_race()
    s = bang_bang(prob, 0.5)

    with pytest.raises(InvalidArgumentError):
        assemble_gradient(evaluate(prob, s, 0.1), s).entry(arc=0, slot=0)


def test_node_formula_selection(steering):
    upper = BoundaryArc(bound=Bound.UPPER)

    def structure(*arcs):
        nodes = np.linspace(0.0, 1.0, len(arcs) + 1)
        return ControlStructure(nodes=tuple(nodes), arcs=arcs, problem=steering)

    pinned_end = structure(HermiteArc(p=(0.0, 0.0, 2.0, 1.0), pin_end=True), upper)
    pinned_start = structure(upper, HermiteArc(p=(2.0, -1.0, 0.0, 0.0), pin_start=True))
    free = structure(TimePolynomialArc(p=(0.0, 0.0, 1.0, 0.0)), upper)

    assert node_formula(pinned_end, 1) is grad_node_interior_right
    assert node_formula(pinned_start, 1) is grad_node_interior_left
    assert node_formula(free, 1) is grad_node_mixed


def test_node_formula_of_linked_hermite_arcs(linked):
    assert node_formula(linked, 1) is grad_node_interior_right


def test_single_hermite_arc_gradient(steering):
    s = ControlStructure(nodes=(0.0, 1.0), arcs=(HermiteArc(p=(0.2, 0.3, 0.7, -0.1)),), problem=steering)
    table = check_gradient(steering, s, 1e-3)

    assert list(table["entry"]) == ["p0.1", "p0.2", "p0.3", "p0.4"]
    assert _all_pass(table)


def test_linked_hermite_arcs_gradient(steering, linked):
    table = check_gradient(steering, linked, 1e-3)

    assert list(table["entry"]) == ["tau1", "p0.1", "p0.2", "p0.3", "p0.4", "p1.3", "p1.4"]
    assert _all_pass(table)


def test_shared_slot_collects_both_arcs(steering, linked):
    traj = evaluate(steering, linked, 1e-3)
    report = assemble_gradient(traj, linked)
    own = report.param_integrals

    assert report.entry(arc=0, slot=2) == pytest.approx(own[0][2] + own[1][0])
    assert report.entry(arc=0, slot=3) == pytest.approx(own[0][3] + own[1][1])


def test_clipped_hermite_arc_gradient(steering):
    s = ControlStructure(nodes=(0.0, 1.0), arcs=(HermiteArc(p=(1.5, 4.0, 1.5, -4.0)),), problem=steering)

    assert _all_pass(check_gradient(steering, s, 1e-3))


def test_clipped_arc_next_to_a_linked_arc_gradient(steering):
    s = ControlStructure(
        nodes=(0.0, 0.6, 1.0),
        arcs=(
            HermiteArc(p=(1.5, 4.0, 1.5, -4.0)),
            HermiteArc(p=(1.5, -4.0, 0.5, 0.0), link_value=True, link_slope=True),
        ),
        problem=steering,
    )
    table = check_gradient(steering, s, 1e-3)

    assert list(table["entry"])[0] == "tau1"
    assert _all_pass(table)


def test_canonical_arc_gradient():
    prob = make_lq()
    alpha, beta = prob.canonical_modes
    weights = tuple(w * np.exp(-abs(alpha) * 10.0) for w in (0.02, -0.01, 0.01, 0.02))
    s = ControlStructure(
        nodes=(0.0, 5.0, prob.horizon),
        arcs=(
            HermiteArc(p=(0.2, 0.0, 0.3, 0.1)),
            CanonicalArc(p=(0.3, -0.1, -0.2, 0.0, *weights), alpha=alpha, beta=beta, link_value=True),
        ),
        problem=prob,
    )
    table = check_gradient(prob, s, prob.horizon / 1000)

    assert list(table["entry"])[-4:] == ["p1.5", "p1.6", "p1.7", "p1.8"]
    assert _all_pass(table)


def test_random_steering_structures(steering):
    rng = np.random.default_rng(0)
    for _ in range(3):
        s = random_check_structure(steering, rng)
        a, b = s.interval(s.N - 1)

        assert s.arcs[-1].crossings(np.linspace(a, b, 201), a, b, steering)
        assert _all_pass(check_gradient(steering, s, 1e-3))


@pytest.mark.slow
@pytest.mark.timeout(600)
@pytest.mark.parametrize(
    "prob",
    [get_problem("lq"), get_problem("fermentation"), make_pendulum(x3max=0.5)],
    ids=["lq", "fermentation", "pendulum"],
)
def test_benchmark_gradients(prob):
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = random_check_structure(prob, rng)

        assert _all_pass(check_gradient(prob, s, prob.horizon / 1000))


def test_parameter_gradient_of_a_constant_switching_function(steering):
    # u = 0 gives x1(T) = 0, psi = (1, -1) and grad_u H = 1 everywhere
    s = ControlStructure(nodes=(0.0, 1.0), arcs=(HermiteArc(p=(0.0, 0.0, 0.0, 0.0)),), problem=steering)
    traj = evaluate(steering, s, 0.01)

    assert np.allclose(traj.arcs[0].psi, [1.0, -1.0], atol=1e-12)
    assert [grad_params(traj, s, 0, k) for k in range(4)] == pytest.approx([-0.5, -1 / 12, -0.5, 1 / 12])
