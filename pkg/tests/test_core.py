import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discospec.core import (
    ContractError,
    Dirichlet,
    DomainError,
    Piece,
    Potential,
    ProblemSpec,
    Robin,
    Spectrum,
    Transmission,
    cell_means,
    eval_potential,
    integrate_potential,
    l2_distance,
)


def test_eval_examples():
    assert eval_potential(Potential.constant(0.0), 0.3) == 0.0
    assert eval_potential(Potential.constant(1.0), 0.75) == 1.0
    assert eval_potential(Potential.polynomial([0.0, 2.0]), 0.25) == pytest.approx(0.5, abs=1e-15)


def test_eval_left_piece_at_breakpoint():
    q = Potential.piecewise_constant([0, 0.5, 1], [3.0, -1.0])
    assert eval_potential(q, 0.5) == 3.0
    assert eval_potential(q, 1.0) == -1.0


def test_eval_out_of_range():
    q = Potential.constant(0.0)
    for x in (-1e-12, 1.0 + 1e-12, float("nan")):
        with pytest.raises(DomainError):
            eval_potential(q, x)


def test_integrate_examples():
    assert integrate_potential(Potential.constant(1.0), 0, 1) == pytest.approx(1.0, abs=1e-15)
    assert integrate_potential(Potential.constant(0.0), 0.2, 0.9) == 0.0
    assert integrate_potential(Potential.polynomial([0.0, 2.0]), 0.5, 1) == pytest.approx(0.75, abs=1e-15)


def test_integrate_bad_bounds():
    q = Potential.constant(1.0)
    with pytest.raises(DomainError):
        integrate_potential(q, 0.6, 0.4)
    with pytest.raises(DomainError):
        integrate_potential(q, -0.1, 0.4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4),
       st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_integrate_additive(coeffs, u, v, w):
    a, b, c = sorted((u, v, w))
    q = Potential.polynomial(coeffs, breaks=(0.0, 0.3, 0.5, 0.8, 1.0))
    whole = integrate_potential(q, a, c)
    parts = integrate_potential(q, a, b) + integrate_potential(q, b, c)
    scale = max(1.0, sum(abs(x) for x in coeffs))
    assert abs(whole - parts) <= 1e-14 * scale


def test_integrate_against_polynomial_antiderivative():
    coeffs = [0.3, -1.2, 2.5, 0.7]
    q = Potential.polynomial(coeffs, breaks=(0.0, 0.1, 0.5, 0.9, 1.0))
    P = np.polynomial.Polynomial(coeffs).integ()
    assert integrate_potential(q, 0.05, 0.95) == pytest.approx(P(0.95) - P(0.05), rel=1e-14)


def test_partition_and_midpoint():
    q = Potential.from_callable(lambda x: np.cos(3 * x), 20)
    lengths = sum(p.x1 - p.x0 for p in q.pieces)
    assert abs(lengths - 1.0) <= 4 * np.finfo(float).eps
    bps = q.breakpoints
    assert list(bps) == sorted(bps)
    assert 0.5 in bps


def test_partition_violations():
    with pytest.raises(DomainError):
        Potential((Piece(0.0, 0.5, (1.0,)), Piece(0.6, 1.0, (1.0,))))
    with pytest.raises(DomainError):
        Potential((Piece(0.0, 1.0, (1.0,)),))  # no breakpoint at 1/2
    with pytest.raises(DomainError):
        Piece(0.0, 0.5, (1.0, 2.0, 3.0, 4.0, 5.0))
    with pytest.raises(DomainError):
        Piece(0.5, 0.5, (1.0,))


def test_piecewise_constant_split_at_half():
    q = Potential.piecewise_constant([0, 0.25, 0.75, 1], [1.0, 2.0, 3.0])
    assert 0.5 in q.breakpoints
    assert integrate_potential(q, 0, 1) == pytest.approx(0.25 + 1.0 + 0.75, rel=1e-15)


def test_cell_means_and_l2():
    q = Potential.polynomial([0.0, 2.0])
    m = cell_means(q, np.array([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(m, [0.5, 1.5], rtol=1e-15)
    assert l2_distance(q, Potential.constant(0.0), 0, 1) == pytest.approx(2 / math.sqrt(3), rel=1e-14)


def test_join():
    head = Potential.constant(2.0)
    tail = Potential.polynomial([0.0, 1.0])
    q = Potential.join(head, tail, 0.25)
    assert eval_potential(q, 0.1) == 2.0
    assert eval_potential(q, 0.8) == pytest.approx(0.8, abs=1e-15)
    assert 0.5 in q.breakpoints


def test_transmission_det():
    for a1 in (0.1, 1.0, 1.5, 2.0, 7.3):
        t = Transmission(a1, -0.4)
        assert abs(a1 * (1 / a1) - 1) <= 1e-15
        assert abs(np.linalg.det(t.matrix) - 1) <= 1e-15
    with pytest.raises(DomainError):
        Transmission(0.0, 1.0)
    with pytest.raises(DomainError):
        Transmission(1.0, float("inf"))
    with pytest.raises(DomainError):
        Robin(float("nan"))


def test_problem_json_keys():
    P = ProblemSpec(Potential.constant(1.0), 0.3, Dirichlet(), Transmission(2.0, 1.0))
    d = json.loads(P.to_json())
    assert set(d) == {"q", "h", "right", "a1", "a2"}
    assert d["right"] == "dirichlet"
    assert d["q"][0] == {"interval": [0.0, 0.5], "coeffs": [1.0]}
    assert ProblemSpec.from_json(P.to_json()) == P
    R = P.with_right(Robin(-0.2))
    assert json.loads(R.to_json())["right"] == {"robin": -0.2}
    assert R.H == -0.2 and P.H is None


def test_problem_bad_right():
    d = json.loads(ProblemSpec(Potential.constant(0.0)).to_json())
    d["right"] = "neumann"
    with pytest.raises(ContractError):
        ProblemSpec.from_dict(d)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def problems(draw):
    n = draw(st.integers(1, 5))
    inner = sorted(set(draw(st.lists(st.floats(0.01, 0.99), min_size=0, max_size=4))) | {0.5})
    edges = [0.0] + [x for x in inner] + [1.0]
    pieces = []
    for x0, x1 in zip(edges, edges[1:]):
        if x1 - x0 < 1e-6:
            continue
        pieces.append(Piece(x0, x1, tuple(draw(st.lists(finite, min_size=1, max_size=n if n <= 4 else 4)))))
    # re-close gaps produced by dropped tiny pieces
    fixed = []
    for i, p in enumerate(pieces):
        x0 = 0.0 if i == 0 else fixed[-1].x1
        fixed.append(Piece(x0, p.x1, p.coeffs))
    q = Potential(tuple(fixed))
    right = draw(st.one_of(st.just(Dirichlet()), finite.map(Robin)))
    a1 = draw(st.floats(0.05, 20))
    return ProblemSpec(q, draw(finite), right, Transmission(a1, draw(finite)))


@settings(max_examples=80, deadline=None)
@given(problems())
def test_problem_json_round_trip(P):
    text = P.to_json()
    back = ProblemSpec.from_json(text)
    assert back == P
    assert back.to_json() == text


def test_spectrum_invariants():
    P = ProblemSpec(Potential.constant(0.0))
    s = Spectrum(P, [0.0, 1.0, 4.0])
    assert s.n_max == 2 and list(s.indices) == [0, 1, 2]
    with pytest.raises(ContractError):
        Spectrum(P, [0.0, 0.0, 1.0])
