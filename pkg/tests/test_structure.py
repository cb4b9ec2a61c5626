import numpy as np
import pytest

from msevo.error import InvalidArgumentError, MissingStateError, StructuralInconsistencyError
from msevo.problem import make_fermentation, make_lq
from msevo.structure import *

from .mock_problem import bang_bang, make_race, make_steering


@pytest.fixture
def steering():
    return make_steering()


@pytest.fixture
def linked(steering):
    return ControlStructure(
        nodes=(0.0, 0.5, 1.0),
        arcs=(
            HermiteArc(p=(0.1, 0.2, 0.3, 0.4)),
            HermiteArc(p=(0.3, 0.4, 0.5, 0.6), link_value=True, link_slope=True),
        ),
        problem=steering,
    )


def test_nodes_must_cover_the_horizon(steering):
    with pytest.raises(InvalidArgumentError):
        ControlStructure(nodes=(0.1, 1.0), arcs=(BoundaryArc(bound=Bound.LOWER),), problem=steering)
    with pytest.raises(InvalidArgumentError):
        ControlStructure(nodes=(0.0, 0.9), arcs=(BoundaryArc(bound=Bound.LOWER),), problem=steering)


def test_nodes_must_match_arcs(steering):
    with pytest.raises(InvalidArgumentError):
        ControlStructure(nodes=(0.0, 0.5, 1.0), arcs=(BoundaryArc(bound=Bound.LOWER),), problem=steering)


def test_nodes_must_be_ordered(steering):
    lower, upper = BoundaryArc(bound=Bound.LOWER), BoundaryArc(bound=Bound.UPPER)

    with pytest.raises(InvalidArgumentError):
        ControlStructure(nodes=(0.0, 0.6, 0.4, 1.0), arcs=(lower, upper, lower), problem=steering)


def test_broken_value_link(steering):
    with pytest.raises(StructuralInconsistencyError):
        ControlStructure(
            nodes=(0.0, 0.5, 1.0),
            arcs=(HermiteArc(p=(0.0, 0.0, 1.0, 0.0)), HermiteArc(p=(0.5, 0.0, 1.0, 0.0), link_value=True)),
            problem=steering,
        )


def test_link_to_a_boundary_arc(steering):
    with pytest.raises(StructuralInconsistencyError):
        ControlStructure(
            nodes=(0.0, 0.5, 1.0),
            arcs=(BoundaryArc(bound=Bound.UPPER), HermiteArc(p=(2.0, 0.0, 1.0, 0.0), link_value=True)),
            problem=steering,
        )


def test_arc_parameter_count():
    with pytest.raises(InvalidArgumentError):
        HermiteArc(p=(0.0, 1.0, 2.0))
    with pytest.raises(InvalidArgumentError):
        CanonicalArc(p=(0.0,) * 4, alpha=1.0, beta=1.0)


def test_layout_skips_linked_slots(linked):
    assert [str(entry) for entry in layout(linked)] == ["tau1", "p0.1", "p0.2", "p0.3", "p0.4", "p1.3", "p1.4"]
    assert pack(linked).values.tolist() == [0.5, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    assert pack(linked).node_indices() == [0]


def test_unpack_propagates_links(linked):
    d = pack(linked).values.copy()
    d[0] = 0.25
    d[3] = 0.9
    d[4] = -1.0

    s = unpack(linked, d)

    assert s.nodes == (0.0, 0.25, 1.0)
    assert s.arcs[0].params == (0.1, 0.2, 0.9, -1.0)
    assert s.arcs[1].params == (0.9, -1.0, 0.5, 0.6)


def test_unpack_rejects_unordered_nodes(steering):
    lower, upper = BoundaryArc(bound=Bound.LOWER), BoundaryArc(bound=Bound.UPPER)
    s = ControlStructure(nodes=(0.0, 0.3, 0.6, 1.0), arcs=(lower, upper, lower), problem=steering)

    with pytest.raises(InvalidArgumentError):
        unpack(s, [0.7, 0.6])


def test_unpack_rejects_wrong_dimension(linked):
    with pytest.raises(InvalidArgumentError):
        unpack(linked, np.zeros(3))


def test_eval_control_sides():
    s = bang_bang(make_race(), 0.5)

    assert eval_control(s, 0.0) == -1.0
    assert eval_control(s, 0.5) == 1.0
    assert eval_control(s, 0.5, side="left") == -1.0
    assert eval_control(s, 1.0) == 1.0


def test_eval_control_skips_zero_length_arcs():
    prob = make_race()
    s = ControlStructure(
        nodes=(0.0, 0.5, 0.5, 1.0),
        arcs=(BoundaryArc(bound=Bound.LOWER), HermiteArc(p=(0.0, 0.0, 0.0, 0.0)), BoundaryArc(bound=Bound.UPPER)),
        problem=prob,
    )

    assert zero_length_arcs(s) == [1]
    assert eval_control(s, 0.5) == 1.0
    assert eval_control(s, 0.5, side="left") == -1.0


def test_locate_outside_the_horizon():
    with pytest.raises(InvalidArgumentError):
        bang_bang(make_race(), 0.5).locate(1.5)


def test_explicit_arcs_are_clipped(steering):
    s = ControlStructure(nodes=(0.0, 1.0), arcs=(HermiteArc(p=(3.0, 0.0, 3.0, 0.0)),), problem=steering)

    assert eval_control(s, 0.5) == 2.0


def test_feedback_arcs_need_the_state():
    prob = make_fermentation()
    s = ControlStructure(nodes=(0.0, prob.horizon), arcs=(SingularArc(),), problem=prob)

    with pytest.raises(MissingStateError):
        eval_control(s, 1.0)
    assert prob.bounds[0] <= eval_control(s, 1.0, prob.x0) <= prob.bounds[1]


def test_describe():
    assert bang_bang(make_race(), 0.5).describe() == "lower[0, 0.5] upper[0.5, 1]"


def test_record_round_trip():
    prob = make_lq()
    alpha, beta = prob.canonical_modes
    s = ControlStructure(
        nodes=(0.0, 2.0, 5.0, 9.0, 15.0),
        arcs=(
            BoundaryArc(bound=Bound.LOWER),
            HermiteArc(p=(-1.0, 0.3, 0.25, -0.1), pin_start=True),
            CanonicalArc(p=(0.25, 0.1, 0.0, 0.2, 1e-3, -2e-3, 1 / 3, 0.0), alpha=alpha, beta=beta, link_value=True),
            TimePolynomialArc(p=(0.1, 0.2, 0.3, 0.4)),
        ),
        problem=prob,
    )
    text = dump_structure(s)
    loaded = load_structure(text, prob)

    assert loaded == s
    assert dump_structure(loaded) == text


def test_record_of_feedback_arcs():
    prob = make_fermentation()
    s = ControlStructure(
        nodes=(0.0, 1.0, 4.5, prob.horizon),
        arcs=(BoundaryArc(bound=Bound.UPPER), SingularArc(), BoundaryArc(bound=Bound.LOWER)),
        problem=prob,
    )

    assert load_structure(dump_structure(s), prob) == s


def test_record_of_another_problem():
    text = dump_structure(bang_bang(make_race(), 0.5))

    with pytest.raises(InvalidArgumentError):
        load_structure(text, make_steering())


@pytest.mark.parametrize(
    "line",
    [
        "arc 0.0 1.0 spline",
        "arc 0.0 1.0 hermite p=1,2",
        "arc 0.0 1.0 boundary",
        "arc 0.0 1.0 hermite p=0,0,0,0 flags=frozen",
        "nonsense",
    ],
)
def test_malformed_records(line):
    with pytest.raises(InvalidArgumentError):
        load_structure(f"{RECORD_HEADER}\nproblem race\n{line}\n", make_race())


@pytest.mark.parametrize(
    "arc",
    [HermiteArc(p=(1.0, -2.0, 0.5, 3.0)), TimePolynomialArc(p=(-0.5, 4.0, 0.0, -1.0))],
    ids=["hermite", "polynomial"],
)
def test_restrict_reproduces_cubic_arcs(arc):
    a, b, start, end = 0.0, 2.0, 0.4, 1.3
    piece = arc.restrict(a, b, start, end)
    t = np.linspace(start, end, 50)

    assert type(piece) is type(arc)
    assert np.allclose(piece.raw(t, start, end), arc.raw(t, a, b), rtol=0.0, atol=1e-12)


def test_restrict_reproduces_canonical_arcs():
    alpha, beta = make_lq().canonical_modes
    arc = CanonicalArc(p=(0.2, 0.1, -0.3, 0.5, 0.01, -0.02, 0.03, 0.04), alpha=alpha, beta=beta)
    a, b, start, end = 0.0, 3.0, 1.1, 2.5
    piece = arc.restrict(a, b, start, end)
    t = np.linspace(start, end, 50)

    assert np.allclose(piece.raw(t, start, end), arc.raw(t, a, b), rtol=0.0, atol=1e-10)
    assert np.allclose(piece.raw_dt(t, start, end), arc.raw_dt(t, a, b), rtol=0.0, atol=1e-9)


def test_extended_hermite_arc_keeps_the_control():
    alpha, beta = make_lq().canonical_modes
    arc = HermiteArc(p=(0.2, 0.1, -0.3, 0.5))
    t = np.linspace(1.0, 4.0, 30)

    assert np.allclose(arc.extended(alpha, beta).raw(t, 1.0, 4.0), arc.raw(t, 1.0, 4.0), rtol=0.0, atol=1e-12)


def test_inside_parts_of_a_clipped_arc(steering):
    # 1.5 + 4 t - 4 t^2 leaves the upper bound 2 between 0.5 -+ sqrt(2) / 4
    arc = HermiteArc(p=(1.5, 4.0, 1.5, -4.0))
    t = np.linspace(0.0, 1.0, 101)
    first, second = 0.5 - np.sqrt(2.0) / 4, 0.5 + np.sqrt(2.0) / 4

    assert np.allclose(arc.inside(t, 0.0, 1.0, steering), [(0.0, first), (second, 1.0)], rtol=0.0, atol=1e-12)
    assert np.allclose(arc.crossings(t, 0.0, 1.0, steering), [first, second], rtol=0.0, atol=1e-12)


def test_inside_an_unclipped_arc(steering):
    arc = HermiteArc(p=(0.2, 0.3, 0.7, -0.1))
    t = np.linspace(0.0, 1.0, 11)

    assert arc.inside(t, 0.0, 1.0, steering) == [(0.0, 1.0)]
    assert arc.crossings(t, 0.0, 1.0, steering) == []
