import json

import numpy as np
import pytest

from discospec.asymptotics import DIRICHLET, ROBIN
from discospec.core import ContractError, Dirichlet, Potential, ProblemSpec, Robin, Transmission
from discospec.forward import PropagatorConfig, eigenvalues
from discospec.inverse import (
    DEFAULT_TRUTH,
    PARAMS,
    DataSet,
    ExperimentConfig,
    InverseSetup,
    _gradient_rows,
    cosine_projection,
    eig_gradient,
    example_setup,
    fd_gradient,
    fit_partner,
    fresh_misfit,
    reconstruct,
    shift_potential,
    truth_problem,
    uniqueness_experiment,
    worker_count,
)
from oracles import mp_central_difference

ZERO = Potential.constant(0.0)
CFG = PropagatorConfig(cells_per_unit=64)


# -- gradients -----------------------------------------------------------------------


def test_gradient_examples():
    P = ProblemSpec(ZERO)
    assert eig_gradient(P, 3, "h") == pytest.approx(2.0, rel=1e-10)
    assert eig_gradient(P, 3, "H") == pytest.approx(2.0, rel=1e-10)
    assert eig_gradient(P, 3, "cell", (0.0, 1.0)) == pytest.approx(1.0, rel=1e-12)
    assert fd_gradient(P, 3, "h") == pytest.approx(2.0, rel=1e-6)
    assert fd_gradient(P, 3, "H") == pytest.approx(2.0, rel=1e-6)


def test_gradient_dirichlet_H_is_zero():
    P = ProblemSpec(ZERO, right=Dirichlet())
    assert eig_gradient(P, 2, "H") == 0.0


@pytest.mark.parametrize("param", ["a1", "a2", "h", "H"])
def test_jump_gradients_against_extended_precision(param):
    q = Potential.from_callable(lambda x: 2 * np.sin(3 * x) + x**2, 16)
    P = ProblemSpec(q, -0.3, Robin(0.4), Transmission(1.7, -0.6))
    for n in (0, 4, 11):
        ga = eig_gradient(P, n, param, cfg=CFG)
        lam = eigenvalues(P, n, CFG).values[n]
        from discospec.forward import make_grid

        gm = mp_central_difference(P, lam, param, edges=make_grid(P, CFG).edges)
        assert ga == pytest.approx(gm, rel=1e-7)


def test_fd_method_and_contracts():
    P = ProblemSpec(Potential.constant(1.0), 0.2, Robin(0.1), Transmission(1.5, 0.5))
    for param in ("h", "a1"):
        a = eig_gradient(P, 4, param, cfg=CFG)
        f = eig_gradient(P, 4, param, cfg=CFG, method="fd")
        assert a == pytest.approx(f, rel=1e-5)
    with pytest.raises(ContractError):
        eig_gradient(P, 2, "cell")
    with pytest.raises(ContractError):
        eig_gradient(P, 2, "q0")


def test_shift_identity():
    q = Potential.from_callable(lambda x: np.cos(5 * x), 16)
    P = ProblemSpec(q, 0.1, Robin(-0.3), Transmission(0.7, 0.9))
    c = 1.37
    Q = ProblemSpec(shift_potential(q, 0.0, 1.0, c), 0.1, Robin(-0.3), Transmission(0.7, 0.9))
    cfg = PropagatorConfig(refine_tol=1e-15)
    d = eigenvalues(Q, 30, cfg).values - eigenvalues(P, 30, cfg).values
    np.testing.assert_allclose(d, c, atol=1e-10 * 1e3)
    lam = eigenvalues(P, 30, CFG).values
    rows = _gradient_rows(P, lam, CFG, np.linspace(0, 1, 17))
    np.testing.assert_allclose(rows[:, :16].sum(axis=1), 1.0, atol=1e-12)


def test_shift_potential_region():
    q = shift_potential(ZERO, 0.25, 0.75, 2.0)
    from discospec.core import eval_potential

    assert eval_potential(q, 0.1) == 0.0
    assert eval_potential(q, 0.6) == 2.0
    assert 0.5 in q.breakpoints


# -- setups --------------------------------------------------------------------------


def _data(kind=ROBIN, n=20, H=None):
    sp = eigenvalues(truth_problem(kind), n, CFG)
    return DataSet(kind, np.arange(n + 1), sp.values, H)


def _init(m=8):
    return dict(DEFAULT_TRUTH, q=np.zeros(m))


def test_setup_contracts():
    tq = truth_problem().q
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.4, {"q", "a1"}, [_data()], 8, _init())
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.5, {"q"}, [], 8, _init())
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.5, {"q", "h"}, [_data(n=5)], 8, _init())
    even = DataSet(ROBIN, np.arange(0, 21, 2), eigenvalues(truth_problem(), 20, CFG).values[::2])
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.5, {"q", "H"}, [even], 8, _init())
    # H known for that family: parity no longer matters
    InverseSetup(tq, 0.5, {"q"}, [even], 8, _init())
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.5, {"q"}, [_data()], 8, dict(_init(), a1=-1.0))
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.5, {"q"}, [_data()], 8, dict(_init(), q=np.zeros(3)))
    with pytest.raises(ContractError):
        InverseSetup(tq, 1.5, {"q"}, [_data()], 8, _init())
    with pytest.raises(ContractError):
        InverseSetup(tq, 0.5, {"q", "k"}, [_data()], 8, _init())
    with pytest.raises(ContractError):
        DataSet("neumann", [0], [1.0])
    with pytest.raises(ContractError):
        DataSet(ROBIN, [2, 1], [1.0, 2.0])


def test_setup_round_trip():
    s = example_setup("three-quarter")
    d = s.to_dict()
    back = InverseSetup.from_dict(json.loads(json.dumps(d)))
    assert back.to_dict() == d
    theta = np.arange(s.n_unknowns, dtype=float) + 1.0
    np.testing.assert_array_equal(s.pack(s.unpack(theta)), theta)


def test_dataset_round_trip():
    ds = _data(DIRICHLET, 6)
    back = DataSet.from_dict(json.loads(json.dumps(ds.to_dict())))
    np.testing.assert_array_equal(back.values, ds.values)
    assert back.kind == DIRICHLET


def test_setup_problem_assembly():
    s = example_setup("half")
    P = s.problem(s.truth, s.data[0])
    T = truth_problem()
    np.testing.assert_allclose(eigenvalues(P, 10, CFG).values, eigenvalues(T, 10, CFG).values, rtol=1e-13)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("DISCOSPEC_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("DISCOSPEC_THREADS", "0")
    assert worker_count() >= 1
    monkeypatch.setenv("DISCOSPEC_THREADS", "-2")
    with pytest.raises(ContractError):
        worker_count()
    monkeypatch.setenv("DISCOSPEC_THREADS", "many")
    with pytest.raises(ContractError):
        worker_count()


def test_cosine_projection_means():
    v = cosine_projection(16)
    assert v.mean() == pytest.approx(1.0, abs=1e-15)
    assert v[0] == pytest.approx(1 + np.sin(2 * np.pi / 16) * 16 / (2 * np.pi), rel=1e-14)


# -- reconstruction ---------------------------------------------------------------------


def test_fixed_point():
    s = example_setup("fixed-point")
    res = reconstruct(s)
    assert res.iterations == 0 and res.status == "converged"
    assert res.misfit <= 1e-20
    np.testing.assert_array_equal(res.params["q"], s.truth["q"])
    doubled = fresh_misfit(s, res.params, 2 * s.cfg.cells_per_unit)
    assert doubled <= 10 * max(res.misfit, 1e-22)


def test_half_recovery_and_trace():
    s = example_setup("half")
    res = reconstruct(s)
    assert res.status == "converged"
    assert res.misfit <= 1e-10
    assert res.errors["q_cell_max"] <= 1e-3
    assert res.errors["h"] <= 1e-4 and res.errors["a2"] <= 1e-4
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.misfit == pytest.approx(fresh_misfit(s, res.params), rel=1e-6, abs=1e-24)
    json.dumps(res.to_dict())


def test_regularised_fit_runs():
    s = example_setup("half")
    s.reg = 1e-6
    res = reconstruct(s)
    assert res.status == "converged"
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    # the penalised objective cannot exceed its value at the truth, where the data fit is exact
    rough = lambda q: float(np.sum(np.diff(q) ** 2))
    assert res.misfit <= s.reg * rough(s.truth["q"]) * (1 + 1e-6)
    assert rough(res.params["q"]) < rough(s.truth["q"])


def test_stall_reported():
    s = example_setup("half")
    s.max_iter = 1
    res = reconstruct(s)
    assert res.status == "stalled" and res.iterations == 1


def test_fit_partner_shares_eigenvalues():
    B = truth_problem()
    cfg = PropagatorConfig(cells_per_unit=64, refine_tol=1e-15)
    Bt = fit_partner(B, [1, 4, 6], m=8, cfg=cfg)
    a, b = eigenvalues(B, 6, cfg).values, eigenvalues(Bt, 6, cfg).values
    np.testing.assert_allclose(b[[1, 4, 6]], a[[1, 4, 6]], rtol=1e-13)
    assert np.max(np.abs(b - a)) > 1e-3


# -- experiments --------------------------------------------------------------------------


def test_experiment_config_round_trip():
    c = ExperimentConfig(sigmas=(0.4,), Hs=(0.1, None, -0.3), families=(ROBIN, DIRICHLET, ROBIN))
    back = ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict())))
    assert back.to_dict() == c.to_dict()
    assert back.threshold == pytest.approx(1 / 3)
    assert ExperimentConfig().threshold == 0.5


def test_experiment_full_two_spectra():
    rep = uniqueness_experiment(ExperimentConfig(sigmas=(1.0,), runs=16), workers=1)[0]
    assert rep["n_success"] == 16 and rep["spread"] <= 1e-6 and rep["agree"]


def test_experiment_three_spectra():
    cfg = ExperimentConfig(sigmas=(0.4,), runs=16, families=(ROBIN, DIRICHLET, ROBIN),
                           Hs=(0.1, None, -0.3), unknowns=("q", "h", "a1", "a2"))
    rep = uniqueness_experiment(cfg, workers=1)[0]
    assert rep["above_threshold"]
    assert rep["n_success"] == 16 and rep["spread"] <= 1e-6 and rep["agree"]


def test_experiment_needs_dirichlet_family():
    with pytest.raises(ContractError):
        uniqueness_experiment(ExperimentConfig(families=(ROBIN,), runs=1), workers=1)


def test_experiment_deterministic():
    cfg = ExperimentConfig(sigmas=(0.7,), runs=2, n_max=20)
    a = uniqueness_experiment(cfg, workers=1)
    b = uniqueness_experiment(cfg, workers=1)
    assert json.dumps(a, sort_keys=True, default=str) == json.dumps(b, sort_keys=True, default=str)
    assert set(PARAMS) <= set(a[0]["first_minimizer"])
