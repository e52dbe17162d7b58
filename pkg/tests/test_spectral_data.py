import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discospec.asymptotics import DIRICHLET, ROBIN, constants, gamma
from discospec.core import (
    ContractError,
    Dirichlet,
    InsufficientDataError,
    Potential,
    ProblemSpec,
    Robin,
    Transmission,
)
from discospec.forward import eigenvalues
from discospec.spectral_data import (
    FAIL,
    INDETERMINATE,
    PASS,
    SpectralSubset,
    check_condition_I,
    check_density_i,
    check_multi_N,
    check_summability_ii,
    counting,
    generate_regular_subset,
)

ZERO = Potential.constant(0.0)
SMOOTH = Potential.from_callable(lambda x: 1 + np.cos(2 * np.pi * x), 64)


@pytest.fixture(scope="module")
def free_spectra():
    B = ProblemSpec(ZERO)
    return eigenvalues(B, 200), eigenvalues(B.with_right(Dirichlet()), 200)


@pytest.fixture(scope="module")
def smooth_spectra():
    # a1 = 1.5 gives a = 5/13 < 1/2; see test_summability_even_halves
    B = ProblemSpec(SMOOTH, 0.3, Robin(-0.2), Transmission(1.5, 1.0))
    return eigenvalues(B, 200), eigenvalues(B.with_right(Dirichlet()), 200)


# -- counting ----------------------------------------------------------------


def test_counting_examples():
    assert counting((np.arange(50) * np.pi) ** 2, 10.0) == 4
    assert counting([], 3.0) == 0
    assert counting([-1.0, 0.0, 5.0], 1.0) == 2


def test_counting_vectorised_and_contract():
    np.testing.assert_array_equal(counting([1.0, 4.0, 9.0], np.array([1.0, 2.0, 3.0])), [1, 2, 3])
    with pytest.raises(ContractError):
        counting([1.0], 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 1e4), max_size=40), st.lists(st.floats(-50, 1e4), max_size=40),
       st.floats(0.1, 120), st.floats(0.1, 120))
def test_counting_monotone_and_union(A, B, r1, r2):
    lo, hi = sorted((r1, r2))
    assert counting(A, lo) <= counting(A, hi)
    assert counting(A + B, hi) <= counting(A, hi) + counting(B, hi)
    assert counting(A + B, hi) == counting(A, hi) + counting(B, hi)  # multiset union


def test_weyl_law():
    for P in (ProblemSpec(SMOOTH, 0.3, Robin(-0.2), Transmission(2.0, 1.0)),
              ProblemSpec(SMOOTH, -1.0, Dirichlet(), Transmission(0.4, -2.0))):
        r = 100 * math.pi
        v = eigenvalues(P, 110).values
        assert 0.95 <= counting(v, r) * math.pi / r <= 1.05


# -- condition (I) -------------------------------------------------------------


def test_condition_I_examples(free_spectra):
    L = free_spectra[0]
    rep = check_condition_I(SpectralSubset.from_indices(L, range(41)), 40)
    assert rep.verdict == PASS and rep.margins["evens"] == 21 and rep.margins["odds"] == 20
    rep = check_condition_I(SpectralSubset.from_indices(L, range(0, 41, 2)), 40)
    assert rep.verdict == INDETERMINATE and rep.margins["odds"] == 0
    assert "fail" in rep.notes
    rep = check_condition_I(SpectralSubset.from_indices(L, list(range(0, 41, 2)) + [3]), 40)
    assert rep.verdict == INDETERMINATE and rep.margins["odds"] == 1


def test_condition_I_empty():
    with pytest.raises(ContractError):
        check_condition_I(SpectralSubset.empty())


# -- subsets -------------------------------------------------------------------------


def test_subset_must_match_parent(free_spectra):
    L = free_spectra[0]
    with pytest.raises(ContractError):
        SpectralSubset(np.array([0, 1]), np.array([0.0, 1.0]), ROBIN, L)
    with pytest.raises(ContractError):
        SpectralSubset(np.array([2, 1]), L.values[[2, 1]], ROBIN, L)


def test_regular_subset_examples(free_spectra):
    L = free_spectra[0]
    full = generate_regular_subset(L, 1.0)
    np.testing.assert_array_equal(full.indices, L.indices)
    np.testing.assert_array_equal(full.eps, 0.0)
    half = generate_regular_subset(L, 0.5)
    np.testing.assert_array_equal(half.indices, np.arange(0, 201, 2))
    L30 = eigenvalues(ProblemSpec(ZERO), 30)
    third = generate_regular_subset(L30, 1 / 3)
    np.testing.assert_array_equal(third.indices, np.arange(0, 31, 3))
    assert len(third) == 11


def test_regular_subset_dirichlet(free_spectra):
    M = free_spectra[1]
    full = generate_regular_subset(M, 1.0)
    np.testing.assert_array_equal(full.indices, M.indices)
    sub = generate_regular_subset(M, 0.5)
    eps = sub.eps[1:]
    # relative index error decays
    assert np.max(np.abs(eps[-10:])) < np.max(np.abs(eps[:10]))
    assert np.max(np.abs(eps[-10:])) < 0.02


def test_regular_subset_small_sigma_warns():
    L = eigenvalues(ProblemSpec(ZERO), 5)
    sub = generate_regular_subset(L, 0.1)
    assert sub.warnings
    with pytest.raises(ContractError):
        generate_regular_subset(L, 0.0)


# -- density (i) ----------------------------------------------------------------------


def test_density_full_data(free_spectra):
    L1, L2 = free_spectra
    rep = check_density_i(L1, L2, L1, L2, 1.0)
    assert rep.verdict == PASS
    np.testing.assert_array_equal(rep.margins["margin"], 0)


def test_density_even_half_fails(free_spectra):
    L1, L2 = free_spectra
    S1 = SpectralSubset.from_indices(L1, range(0, 201, 2))
    rep = check_density_i(S1, SpectralSubset.empty(DIRICHLET), L1, L2, 0.3)
    assert rep.verdict == FAIL
    assert rep.margins["slope"] == pytest.approx((0.5 - 2 * 0.3) / math.pi, abs=0.01)
    assert rep.margins["sigma_star"] == pytest.approx(0.25, abs=0.01)


def test_density_both_halves_borderline(free_spectra):
    L1, L2 = free_spectra
    S1 = SpectralSubset.from_indices(L1, range(0, 201, 2))
    S2 = SpectralSubset.from_indices(L2, range(0, 201, 2))
    rep = check_density_i(S1, S2, L1, L2, 0.5)
    assert rep.verdict == INDETERMINATE
    assert rep.margins["sigma_star"] == pytest.approx(0.5, abs=0.01)
    assert abs(rep.margins["slope"]) <= rep.margins["slope_band"]


def test_density_contracts(free_spectra):
    L1, L2 = free_spectra
    with pytest.raises(InsufficientDataError):
        check_density_i(L1, L2, L1, L2, 1.0, r_grid=np.linspace(1, 10, 5))
    with pytest.raises(ContractError):
        check_density_i(L1, L2, L1, L2, 1.5)


# -- summability (ii) ----------------------------------------------------------------


def test_summability_even_halves(smooth_spectra):
    L1, L2 = smooth_spectra
    S1 = SpectralSubset.from_indices(L1, range(0, 201, 2))
    S2 = SpectralSubset.from_indices(L2, range(0, 201, 2))
    a = constants(L2.problem).a
    rep = check_summability_ii(S1, S2, 0.5, 0.5, 0.5, a)
    assert rep.verdict == PASS


def test_summability_full_first_spectrum(smooth_spectra):
    L1, _ = smooth_spectra
    rep = check_summability_ii(SpectralSubset.full(L1), SpectralSubset.empty(DIRICHLET), 1.0, 0.0, 0.5)
    assert rep.verdict == PASS


def test_summability_every_third_fails(smooth_spectra):
    L1, _ = smooth_spectra
    S1 = SpectralSubset.from_indices(L1, range(0, 201, 3))
    rep = check_summability_ii(S1, SpectralSubset.empty(DIRICHLET), 1.0, 0.0, 0.5)
    assert rep.verdict == FAIL
    terms = np.diff(rep.margins["partial_sums"][0])
    assert terms[-1] == pytest.approx(8 * math.pi**2, rel=0.05)


def test_summability_contracts(smooth_spectra):
    L1, _ = smooth_spectra
    with pytest.raises(ContractError):
        check_summability_ii(L1, None, 1.0, 0.1, 0.5)
    with pytest.raises(ContractError):
        check_summability_ii(L1, L1, 1.0, 0.0, 0.5)
    with pytest.raises(ContractError):
        check_summability_ii(L1, None, -0.2, 1.2, 0.5)


def test_summability_n0_reported_separately(smooth_spectra):
    L1, _ = smooth_spectra
    rep = check_summability_ii(SpectralSubset.full(L1), None, 1.0, 0.0, 0.5)
    assert rep.margins["n0_terms"][0] == pytest.approx(max(L1.values[0], 0.0))
    assert len(rep.margins["partial_sums"][0]) == len(L1) - 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.lists(st.integers(1, 200), min_size=1, max_size=30))
def test_summability_monotone_under_enlargement(step, extra):
    L1 = _SMOOTH_L1
    base = list(range(0, 201, step))
    sigma = 1.0
    before = check_summability_ii(SpectralSubset.from_indices(L1, base), None, sigma, 0.0, 0.5)
    lattice = lambda n: (n * np.pi / sigma) ** 2
    # add only picks that sit below their comparison value in the enlarged list
    picks = sorted(set(base) | set(extra))
    kept = [p for i, p in enumerate(picks) if p in base or L1.values[p] <= lattice(i)]
    after = check_summability_ii(SpectralSubset.from_indices(L1, kept), None, sigma, 0.0, 0.5)
    assert not (before.verdict == PASS and after.verdict == FAIL)


_SMOOTH_L1 = eigenvalues(ProblemSpec(SMOOTH, 0.3, Robin(-0.2), Transmission(1.5, 1.0)), 200)


# -- N spectra ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def three_families():
    B = ProblemSpec(SMOOTH, 0.3, Robin(-0.2), Transmission(1.5, 1.0))
    probs = [B, B.with_right(Dirichlet()), B.with_right(Robin(0.7))]
    return [eigenvalues(P, 150) for P in probs]


def test_multi_N_every_third(three_families):
    subs = [SpectralSubset.from_indices(s, range(0, 151, 3)) for s in three_families]
    a = constants(three_families[1].problem).a
    rep = check_multi_N(subs, three_families, "ii", 0.5, sigmas=[1 / 3, 1 / 3, 1 / 3],
                        Hs=[-0.2, None, 0.7], a=a)
    assert rep.verdict == PASS


def test_multi_N_one_full_spectrum(three_families):
    subs = [SpectralSubset.full(three_families[0]), SpectralSubset.empty(DIRICHLET), SpectralSubset.empty()]
    rep = check_multi_N(subs, three_families, "i", 0.5, sigma=1 / 3 + 0.05)
    assert rep.verdict == FAIL
    rep = check_multi_N(subs, three_families, "i", 0.5, sigma=1 / 3)
    assert rep.verdict != PASS
    assert rep.margins["threshold"] == pytest.approx(1 / 3)
    assert not rep.margins["threshold_met"]


def test_multi_N_all_empty(three_families):
    subs = [SpectralSubset.empty(), SpectralSubset.empty(DIRICHLET), SpectralSubset.empty()]
    assert check_multi_N(subs, three_families, "i", 0.5, sigma=0.5).verdict == FAIL


def test_multi_N_contracts(three_families):
    subs = [SpectralSubset.full(s) for s in three_families]
    with pytest.raises(ContractError):
        check_multi_N(subs, three_families, "i", 0.5, sigma=0.5, Hs=[0.1, None, 0.1])
    with pytest.raises(ContractError):
        check_multi_N(subs[:2], three_families[:2], "i", 0.5, sigma=0.5)
    with pytest.raises(ContractError):
        check_multi_N(subs, three_families, "ii", 0.5, sigmas=[0.5, 0.5, 0.5])


def test_report_to_dict_is_plain(free_spectra):
    import json

    L1, L2 = free_spectra
    rep = check_density_i(L1, L2, L1, L2, 1.0)
    json.dumps(rep.to_dict())


def test_gamma_lattice_matches_dirichlet_spectrum(smooth_spectra):
    _, L2 = smooth_spectra
    a = constants(L2.problem).a
    n = np.arange(150, 201)
    assert np.max(np.abs(np.sqrt(L2.values[n]) - gamma(n, a))) < 0.01
