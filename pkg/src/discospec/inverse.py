"""Recovery of the potential head and the scalar parameters from partial spectra.

The unknown part of q is piecewise constant on m equal cells of [0, b]. The
fit is a Levenberg-Marquardt least-squares iteration on weighted eigenvalue
residuals with analytic first-order eigenvalue derivatives.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .asymptotics import DIRICHLET, ROBIN
from .core import (
    MIDPOINT,
    ContractError,
    Dirichlet,
    IncompleteSpectrumError,
    Piece,
    Potential,
    ProblemSpec,
    Robin,
    Transmission,
    _clip_pieces,
)
from .forward import (
    PropagatorConfig,
    eigenvalues,
    make_grid,
    node_states,
    sweep,
)
from .spectral_data import SpectralSubset, generate_regular_subset

SCALARS = ("h", "H", "a1", "a2")
PARAMS = ("q",) + SCALARS
INVERSE_CONFIG = PropagatorConfig(cells_per_unit=64)


def worker_count() -> int:
    """Worker cap from DISCOSPEC_THREADS (0 or unset: one per CPU)."""
    raw = os.environ.get("DISCOSPEC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ContractError("DISCOSPEC_THREADS must be an integer") from None
    if n < 0:
        raise ContractError("DISCOSPEC_THREADS must be non-negative")
    return n if n > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# eigenvalue derivatives
# ---------------------------------------------------------------------------


def shift_potential(q: Potential, x0: float, x1: float, c: float) -> Potential:
    """q + c on [x0, x1]."""
    cuts = sorted({0.0, x0, x1, 1.0})
    pieces = []
    for u, v in zip(cuts, cuts[1:]):
        part = _clip_pieces(q.pieces, u, v)
        if x0 <= u and v <= x1:
            part = tuple(Piece(p.x0, p.x1, (p.coeffs[0] + c,) + tuple(p.coeffs[1:])) for p in part)
        pieces.extend(part)
    return Potential(tuple(pieces))


def _moments(problem: ProblemSpec, grid, lam: np.ndarray, nodes: int = 8):
    """Eigenfunction moments at real eigenvalues ``lam``, common scale per column.

    Returns per-cell integrals of y**2, y(0)**2, y(1)**2 and (y, y') at 1/2-0.
    """
    out = sweep(problem, grid, lam, record=True)
    Y, DY, L = out["Y"], out["DY"], out["L"]
    ref = L.max(axis=0)
    t, w = np.polynomial.legendre.leggauss(nodes)
    cells = np.arange(grid.ncells)
    ys = node_states(grid, lam, Y, DY, cells, t, problem.jump.a1, problem.jump.a2)
    scale = np.exp(L[:-1] - ref[None, :])
    cell_int = np.einsum("cnm,n->cm", ys**2, w) * (grid.widths / 2)[:, None] * scale**2
    ih = grid.i_half
    s_half = np.exp(L[ih] - ref)
    return {
        "cell": cell_int,
        "y0sq": np.exp(-2 * ref),
        "y1sq": (Y[-1] * np.exp(L[-1] - ref)) ** 2,
        "y_half": Y[ih] * s_half,
        "dy_half": DY[ih] * s_half,
    }


def _gradient_rows(problem: ProblemSpec, lam: np.ndarray, cfg: PropagatorConfig, q_edges=None):
    """Analytic derivatives of each eigenvalue in ``lam``.

    Columns: one per q cell of ``q_edges`` (if given), then h, H, a1, a2.
    """
    extra = tuple(q_edges) if q_edges is not None else ()
    grid = make_grid(problem, cfg, extra)
    mom = _moments(problem, grid, np.asarray(lam, dtype=float))
    norm = mom["cell"].sum(axis=0)
    cols = []
    if q_edges is not None:
        centers = 0.5 * (grid.edges[:-1] + grid.edges[1:])
        which = np.searchsorted(np.asarray(q_edges), centers, side="right") - 1
        for j in range(len(q_edges) - 1):
            cols.append(mom["cell"][which == j].sum(axis=0) / norm)
    a1, a2 = problem.jump.a1, problem.jump.a2
    yh, dyh = mom["y_half"], mom["dy_half"]
    cols.append(mom["y0sq"] / norm)
    cols.append(np.zeros_like(norm) if problem.dirichlet else mom["y1sq"] / norm)
    cols.append(-((2 / a1) * yh * dyh + a2 * yh**2) / norm)
    cols.append(a1 * yh**2 / norm)
    return np.column_stack(cols)


def _perturbed(problem: ProblemSpec, param: str, step: float, cell=None) -> ProblemSpec:
    if param == "cell":
        return replace(problem, q=shift_potential(problem.q, cell[0], cell[1], step))
    if param == "h":
        return replace(problem, h=problem.h + step)
    if param == "H":
        if problem.dirichlet:
            return problem
        return replace(problem, right=Robin(problem.right.H + step))
    if param == "a1":
        return replace(problem, jump=Transmission(problem.jump.a1 + step, problem.jump.a2))
    if param == "a2":
        return replace(problem, jump=Transmission(problem.jump.a1, problem.jump.a2 + step))
    raise ContractError(f"unknown parameter {param!r}")


def _param_value(problem: ProblemSpec, param: str) -> float:
    return {"cell": 0.0, "h": problem.h, "H": problem.H or 0.0,
            "a1": problem.jump.a1, "a2": problem.jump.a2}[param]


def fd_gradient(problem: ProblemSpec, n: int, param: str, cell=None,
                cfg: PropagatorConfig = INVERSE_CONFIG, step: Optional[float] = None) -> float:
    """Central difference of eigenvalue ``n`` with step 1e-6 (1 + |param|)."""
    h = step if step is not None else 1e-6 * (1 + abs(_param_value(problem, param)))
    fcfg = replace(cfg, refine_tol=min(cfg.refine_tol, 1e-15))
    extra = tuple(cell) if cell is not None else ()
    vals = []
    for s in (h, -h):
        p = _perturbed(problem, param, s, cell)
        vals.append(eigenvalues(p, n, fcfg, grid=make_grid(p, fcfg, extra)).values[n])
    return float((vals[0] - vals[1]) / (2 * h))


def eig_gradient(problem: ProblemSpec, n: int, param: str, cell=None,
                 cfg: PropagatorConfig = INVERSE_CONFIG, method: str = "analytic") -> float:
    """d lambda_n / d param for param in {cell, h, H, a1, a2}.

    ``cell = (x0, x1)`` names the interval on which q is shifted by a constant.
    Falls back to central differences when lambda_n is nearly degenerate.
    """
    if param == "cell" and cell is None:
        raise ContractError("parameter 'cell' needs an interval")
    if param not in ("cell",) + SCALARS:
        raise ContractError(f"unknown parameter {param!r}")
    if method == "fd":
        return fd_gradient(problem, n, param, cell, cfg)
    spec = eigenvalues(problem, n + 1, cfg)
    lam = spec.values
    gaps = np.diff(lam)
    if np.min(gaps[max(0, n - 1):n + 1]) < 1e-8 * (1 + abs(lam[n])):
        warnings.warn("nearly degenerate eigenvalue, using finite differences", RuntimeWarning)
        return fd_gradient(problem, n, param, cell, cfg)
    if param == "cell":
        x0, x1 = cell
        grid = make_grid(problem, cfg, (x0, x1))
        mom = _moments(problem, grid, lam[n:n + 1])
        mid = 0.5 * (grid.edges[:-1] + grid.edges[1:])
        inside = (mid > x0) & (mid < x1)
        return float(mom["cell"][inside].sum() / mom["cell"].sum())
    rows = _gradient_rows(problem, lam[n:n + 1], cfg)
    return float(rows[0, SCALARS.index(param)])


# ---------------------------------------------------------------------------
# setup and result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataSet:
    """Target eigenvalues of one family; ``H`` fixes that family's boundary constant."""

    kind: str
    indices: np.ndarray
    values: np.ndarray
    H: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (ROBIN, DIRICHLET):
            raise ContractError(f"unknown family kind {self.kind!r}")
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or len(idx) == 0:
            raise ContractError("a data set needs matching, nonempty indices and values")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0:
            raise ContractError("data indices must be non-negative and increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_subset(cls, subset: SpectralSubset, H: Optional[float] = None):
        return cls(subset.family, subset.indices, subset.values, H)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "indices": self.indices.tolist(),
                "values": self.values.tolist(), "H": self.H}

    @classmethod
    def from_dict(cls, d: dict):
        return cls(d["kind"], d["indices"], d["values"], d.get("H"))


def _check_params(p: dict, m: int) -> dict:
    missing = [k for k in PARAMS if k not in p]
    if missing:
        raise ContractError(f"parameter set lacks {missing}")
    q = np.asarray(p["q"], dtype=float)
    if q.shape != (m,):
        raise ContractError(f"q head needs {m} cell values")
    out = {"q": q}
    for k in SCALARS:
        out[k] = float(p[k])
    if out["a1"] <= 0:
        raise ContractError("a1 must be positive")
    return out


@dataclass
class InverseSetup:
    """Unknowns are a subset of {q, h, H, a1, a2}; known values are read from ``init``."""

    tail: Potential
    b: float
    unknowns: frozenset
    data: list
    m: int
    init: dict
    reg: float = 0.0
    cfg: PropagatorConfig = INVERSE_CONFIG
    truth: Optional[dict] = None
    max_iter: int = 200

    def __post_init__(self):
        self.unknowns = frozenset(self.unknowns)
        if not (0 < self.b <= 1):
            raise ContractError("b must lie in (0, 1]")
        if not self.unknowns <= set(PARAMS) or not self.unknowns:
            raise ContractError(f"unknowns must be a nonempty subset of {PARAMS}")
        if self.m < 1:
            raise ContractError("m must be positive")
        if self.reg < 0:
            raise ContractError("regularisation weight must be non-negative")
        if not self.data:
            raise ContractError("no spectral data")
        self.init = _check_params(self.init, self.m)
        if self.truth is not None:
            self.truth = _check_params(self.truth, self.m)
        if self.b < MIDPOINT and self.unknowns & {"a1", "a2", "H"}:
            raise ContractError("for b < 1/2 the parameters a1, a2 and H must be known")
        if "H" in self.unknowns:
            for ds in self.data:
                if ds.kind == ROBIN and ds.H is None:
                    par = ds.indices % 2
                    if not (np.any(par == 0) and np.any(par == 1)):
                        raise ContractError("with H unknown each B-type subset needs even and odd indices")
        if self.n_unknowns > self.n_data:
            raise ContractError("more unknowns than data")

    @property
    def q_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.b, self.m + 1)

    @property
    def n_unknowns(self) -> int:
        return sum(self.m if k == "q" else 1 for k in self.unknowns)

    @property
    def n_data(self) -> int:
        return sum(len(d.indices) for d in self.data)

    # parameter vector <-> dict
    def pack(self, p: dict) -> np.ndarray:
        parts = []
        for k in PARAMS:
            if k in self.unknowns:
                parts.append(np.atleast_1d(np.asarray(p[k], dtype=float)))
        return np.concatenate(parts)

    def unpack(self, theta: np.ndarray) -> dict:
        p = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.init.items()}
        i = 0
        for k in PARAMS:
            if k in self.unknowns:
                if k == "q":
                    p["q"] = np.asarray(theta[i:i + self.m], dtype=float)
                    i += self.m
                else:
                    p[k] = float(theta[i])
                    i += 1
        return p

    def potential(self, p: dict) -> Potential:
        head = Potential.piecewise_constant(self.q_edges.tolist() + ([1.0] if self.b < 1 else []),
                                            list(p["q"]) + ([0.0] if self.b < 1 else []))
        return Potential.join(head, self.tail, self.b) if self.b < 1 else head

    def problem(self, p: dict, ds: DataSet) -> ProblemSpec:
        right = Dirichlet() if ds.kind == DIRICHLET else Robin(p["H"] if ds.H is None else ds.H)
        return ProblemSpec(self.potential(p), p["h"], right, Transmission(p["a1"], p["a2"]))

    def to_dict(self) -> dict:
        def conv(p):
            return None if p is None else {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                           for k, v in p.items()}

        return {"tail": self.tail.to_dict(), "b": self.b, "unknowns": sorted(self.unknowns),
                "data": [d.to_dict() for d in self.data], "m": self.m, "init": conv(self.init),
                "reg": self.reg, "cells_per_unit": self.cfg.cells_per_unit,
                "truth": conv(self.truth), "max_iter": self.max_iter}

    @classmethod
    def from_dict(cls, d: dict):
        cfg = replace(INVERSE_CONFIG, cells_per_unit=int(d.get("cells_per_unit", INVERSE_CONFIG.cells_per_unit)))
        return cls(Potential.from_dict(d["tail"]), float(d["b"]), frozenset(d["unknowns"]),
                   [DataSet.from_dict(x) for x in d["data"]], int(d["m"]), d["init"],
                   float(d.get("reg", 0.0)), cfg, d.get("truth"), int(d.get("max_iter", 200)))


@dataclass
class InverseResult:
    params: dict
    theta: np.ndarray
    residuals: np.ndarray  # lambda_j(theta) - kappa_j, unweighted, data order
    misfit: float  # fresh forward pass at the returned parameters
    trace: list
    iterations: int
    status: str  # converged | stalled
    errors: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()},
            "theta": self.theta.tolist(),
            "residuals": self.residuals.tolist(),
            "misfit": self.misfit,
            "trace": list(self.trace),
            "iterations": self.iterations,
            "status": self.status,
            "errors": self.errors,
            "message": self.message,
        }


# ---------------------------------------------------------------------------
# Levenberg-Marquardt fit
# ---------------------------------------------------------------------------


class _Model:
    def __init__(self, setup: InverseSetup):
        self.s = setup
        self.targets = np.concatenate([d.values for d in setup.data])
        self.w = 1.0 / (1.0 + np.abs(self.targets))
        self.guess: list = [None] * len(setup.data)
        m = setup.m
        self.D = np.diff(np.eye(m), axis=0) if "q" in setup.unknowns and m > 1 else np.zeros((0, m))

    def eig(self, p: dict, cfg=None, warm=True):
        cfg = cfg or self.s.cfg
        out = []
        for i, ds in enumerate(self.s.data):
            prob = self.s.problem(p, ds)
            n_top = int(ds.indices[-1])
            g = self.guess[i] if warm else None
            sp = eigenvalues(prob, n_top, cfg, guess=g)
            if warm:
                self.guess[i] = sp.values
            out.append(sp.values[ds.indices])
        return np.concatenate(out)

    def residual(self, p: dict, lam: np.ndarray) -> np.ndarray:
        r = self.w * (lam - self.targets)
        if self.s.reg > 0 and "q" in self.s.unknowns:
            r = np.concatenate([r, math.sqrt(self.s.reg) * (self.D @ p["q"])])
        return r

    def jacobian(self, p: dict, lam: np.ndarray) -> np.ndarray:
        s = self.s
        rows, start = [], 0
        for ds in s.data:
            k = len(ds.indices)
            prob = s.problem(p, ds)
            G = _gradient_rows(prob, lam[start:start + k], s.cfg, s.q_edges)
            start += k
            cols = []
            for name in PARAMS:
                if name not in s.unknowns:
                    continue
                if name == "q":
                    cols.append(G[:, :s.m])
                else:
                    c = G[:, s.m + SCALARS.index(name)]
                    if name == "H" and ds.H is not None:
                        c = np.zeros_like(c)
                    cols.append(c[:, None])
            rows.append(np.hstack(cols))
        J = np.vstack(rows) * self.w[:, None]
        if s.reg > 0 and "q" in s.unknowns:
            R = np.zeros((self.D.shape[0], J.shape[1]))
            iq = 0  # q is packed first
            R[:, iq:iq + s.m] = math.sqrt(s.reg) * self.D
            J = np.vstack([J, R])
        return J


def _errors(setup: InverseSetup, p: dict) -> dict:
    if setup.truth is None:
        return {}
    t = setup.truth
    dq = p["q"] - t["q"]
    width = setup.b / setup.m
    out = {"q_cell_max": float(np.max(np.abs(dq))),
           "q_l2": float(math.sqrt(np.sum(dq**2) * width)),
           "q_rms": float(math.sqrt(np.mean(dq**2)))}
    for k in SCALARS:
        out[k] = abs(p[k] - t[k])
    return out


def reconstruct(setup: InverseSetup) -> InverseResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) fit of the unknowns to the data."""
    model = _Model(setup)
    theta = setup.pack(setup.init)
    p = setup.unpack(theta)
    lam = model.eig(p)
    r = model.residual(p, lam)
    f = float(r @ r)
    trace = [f]
    J = model.jacobian(p, lam)
    A = J.T @ J
    mu = 1e-3 * float(np.max(np.diag(A))) if A.size else 0.0
    status, message, it = "stalled", "iteration limit", 0
    for it in range(1, setup.max_iter + 1):
        g = J.T @ r
        # gradient measured in the Gauss-Newton metric, i.e. the undamped step length
        gn = np.linalg.lstsq(J, -r, rcond=None)[0]
        if np.linalg.norm(gn) <= 1e-10 * (1 + np.linalg.norm(theta)) or not np.any(g):
            status, message, it = "converged", "scaled gradient below tolerance", it - 1
            break
        # nonzero-residual optimum: the full undamped step would gain nothing relative to f
        if float(np.sum((J @ gn) ** 2)) <= 1e-8 * f:
            status, message, it = "converged", "predicted relative reduction below tolerance", it - 1
            break
        diag = np.maximum(np.diag(A), 1e-12 * np.max(np.diag(A)))
        accepted = False
        while mu < 1e20:
            try:
                step = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 4
                continue
            trial = setup.unpack(theta + step)
            try:
                if trial["a1"] <= 0:
                    raise ContractError("a1 left the admissible range")
                lam_t = model.eig(trial)
            except (ContractError, IncompleteSpectrumError, FloatingPointError):
                mu *= 4
                continue
            r_t = model.residual(trial, lam_t)
            f_t = float(r_t @ r_t)
            if f_t < f:
                accepted = True
                break
            mu *= 4
        if not accepted:
            status, message = ("converged", "no further decrease at rounding level") if f < 1e-20 else \
                ("stalled", "damping exhausted")
            break
        small_step = np.linalg.norm(step) <= 1e-13 * (1 + np.linalg.norm(theta))
        theta, p, lam, r, f = theta + step, trial, lam_t, r_t, f_t
        trace.append(f)
        mu = max(mu / 3, 1e-15 * float(np.max(diag)))
        J = model.jacobian(p, lam)
        A = J.T @ J
        if small_step:
            status, message = "converged", "step below tolerance"
            break
    lam_fresh = model.eig(p, warm=False)
    r_fresh = model.residual(p, lam_fresh)
    return InverseResult(p, theta, lam_fresh - model.targets, float(r_fresh @ r_fresh), trace,
                         it, status, _errors(setup, p), message)


def fresh_misfit(setup: InverseSetup, params: dict, cells_per_unit: Optional[int] = None) -> float:
    """Weighted data misfit from a cold forward pass, optionally at another resolution."""
    model = _Model(setup)
    cfg = setup.cfg if cells_per_unit is None else replace(setup.cfg, cells_per_unit=cells_per_unit)
    lam = model.eig(params, cfg, warm=False)
    r = model.residual(params, lam)
    return float(r @ r)


# ---------------------------------------------------------------------------
# fixtures and experiments
# ---------------------------------------------------------------------------


def cosine_projection(n_cells: int = 16) -> np.ndarray:
    """Cell averages of 1 + cos(2 pi x) on n_cells equal cells of [0, 1]."""
    e = np.linspace(0.0, 1.0, n_cells + 1)
    return 1.0 + (np.sin(2 * np.pi * e[1:]) - np.sin(2 * np.pi * e[:-1])) / (2 * np.pi * np.diff(e))


DEFAULT_TRUTH = {"h": 0.2, "H": 0.1, "a1": 1.5, "a2": 0.5}


def truth_problem(kind: str = ROBIN, n_cells: int = 16, scalars: Optional[dict] = None,
                  H: Optional[float] = None) -> ProblemSpec:
    s = dict(DEFAULT_TRUTH, **(scalars or {}))
    q = Potential.piecewise_constant(np.linspace(0, 1, n_cells + 1), cosine_projection(n_cells))
    right = Dirichlet() if kind == DIRICHLET else Robin(s["H"] if H is None else H)
    return ProblemSpec(q, s["h"], right, Transmission(s["a1"], s["a2"]))


def _truth_params(b: float, m: int, n_cells: int, scalars: dict) -> dict:
    vals = cosine_projection(n_cells)
    per = n_cells * b / m
    if abs(per - round(per)) > 1e-9 or round(per) < 1:
        raise ContractError("inversion cells must be unions of truth cells")
    head = vals[: int(round(n_cells * b))].reshape(m, int(round(per))).mean(axis=1)
    return {"q": head, **scalars}


def example_setup(name: str, cfg: PropagatorConfig = INVERSE_CONFIG) -> InverseSetup:
    """The three reference configurations: 'fixed-point', 'half', 'three-quarter'."""
    tq = truth_problem().q
    scal = dict(DEFAULT_TRUTH)
    if name in ("fixed-point", "half"):
        b, m = 0.5, 8
        truth = _truth_params(b, m, 16, scal)
        spec = eigenvalues(truth_problem(), 40, cfg)
        data = [DataSet(ROBIN, np.arange(41), spec.values)]
        if name == "fixed-point":
            init = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in truth.items()}
        else:
            init = dict(truth, q=np.zeros(m), h=0.0, a2=0.0)
        return InverseSetup(tq, b, frozenset({"q", "h", "a2"}), data, m, init, cfg=cfg, truth=truth)
    if name == "three-quarter":
        b, m, sigma = 0.75, 12, 0.75
        truth = _truth_params(b, m, 16, scal)
        data = []
        for kind in (ROBIN, DIRICHLET):
            spec = eigenvalues(truth_problem(kind), 40, cfg)
            data.append(DataSet.from_subset(generate_regular_subset(spec, sigma, kind)))
        init = {"q": np.zeros(m), "h": 0.0, "H": 0.0, "a1": 1.0, "a2": 0.0}
        return InverseSetup(tq, b, frozenset(PARAMS), data, m, init, cfg=cfg, truth=truth)
    raise ContractError(f"unknown example {name!r}")


@dataclass
class ExperimentConfig:
    b: float = 0.5
    m: int = 8
    sigmas: Sequence[float] = (0.3, 0.45, 0.55, 0.7)
    families: Sequence[str] = (ROBIN, DIRICHLET)
    Hs: Optional[Sequence[Optional[float]]] = None  # fixed H per family (multi-family mode)
    unknowns: Sequence[str] = PARAMS
    n_max: int = 40
    runs: int = 16
    seed: int = 0
    spread_init: float = 0.5
    scalars: dict = field(default_factory=lambda: dict(DEFAULT_TRUTH))
    n_cells: int = 16
    cells_per_unit: int = 64

    def to_dict(self) -> dict:
        return {"b": self.b, "m": self.m, "sigmas": list(self.sigmas), "families": list(self.families),
                "Hs": None if self.Hs is None else list(self.Hs), "unknowns": list(self.unknowns),
                "n_max": self.n_max, "runs": self.runs, "seed": self.seed,
                "spread_init": self.spread_init, "scalars": dict(self.scalars),
                "n_cells": self.n_cells, "cells_per_unit": self.cells_per_unit}

    @classmethod
    def from_dict(cls, d: dict):
        base = cls()
        kw = {k: d[k] for k in base.to_dict() if k in d}
        return cls(**kw)

    @property
    def threshold(self) -> float:
        N = len(self.families)
        return self.b if N <= 2 else 2 * self.b / N


def _random_init(truth: dict, rng: np.random.Generator, spread: float) -> dict:
    out = {"q": truth["q"] + rng.uniform(-spread, spread, len(truth["q"]))}
    for k in SCALARS:
        if k == "a1":
            out[k] = truth[k] * math.exp(rng.uniform(-spread, spread) / 2)
        else:
            out[k] = truth[k] + rng.uniform(-spread, spread)
    return out


def _run_one(setup: InverseSetup) -> InverseResult:
    try:
        return reconstruct(setup)
    except (IncompleteSpectrumError, ContractError) as exc:
        return InverseResult(setup.init, setup.pack(setup.init), np.zeros(setup.n_data), float("inf"),
                             [], 0, "stalled", {}, str(exc))


def _order_key(p: dict):
    return (float(np.linalg.norm(p["q"])), p["h"], p["a2"])


def uniqueness_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> list[dict]:
    """Multi-start reconstructions for each sigma of the schedule."""
    cfg = replace(INVERSE_CONFIG, cells_per_unit=config.cells_per_unit)
    N = len(config.families)
    Hs = list(config.Hs) if config.Hs is not None else [None] * N
    if DIRICHLET not in config.families:
        raise ContractError("the family list needs the Dirichlet family")
    truth = _truth_params(config.b, config.m, config.n_cells, dict(config.scalars))
    unknowns = frozenset(config.unknowns)
    spectra = [eigenvalues(truth_problem(kind, config.n_cells, config.scalars, H), config.n_max, cfg)
               for kind, H in zip(config.families, Hs)]
    tq = truth_problem(ROBIN, config.n_cells, config.scalars).q
    workers = worker_count() if workers is None else workers
    reports = []
    for si, sigma in enumerate(config.sigmas):
        data = [DataSet.from_subset(generate_regular_subset(sp, sigma, kind), H)
                for sp, kind, H in zip(spectra, config.families, Hs)]
        rng = np.random.default_rng([config.seed, si])
        setups = [InverseSetup(tq, config.b, unknowns, data, config.m,
                               _random_init(truth, rng, config.spread_init), cfg=cfg, truth=truth)
                  for _ in range(config.runs)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_run_one, setups))
        else:
            results = [_run_one(s) for s in setups]
        good = [r for r in results if r.misfit < 1e-9]
        if good:
            V = np.vstack([r.theta for r in good])
            spread = float(np.max(V.max(axis=0) - V.min(axis=0)))
        else:
            spread = float("nan")
        minima = sorted((r.params for r in good), key=_order_key)
        reports.append({
            "sigma": sigma,
            "threshold": config.threshold,
            "above_threshold": bool(sigma > config.threshold),
            "n_data": setups[0].n_data,
            "n_unknowns": setups[0].n_unknowns,
            "runs": config.runs,
            "n_success": len(good),
            "spread": spread,
            "agree": bool(len(good) == config.runs and spread <= 1e-6),
            "max_param_error": float(max((max(r.errors.values()) for r in good), default=float("nan"))),
            "misfits": [r.misfit for r in results],
            "statuses": [r.status for r in results],
            "first_minimizer": None if not minima else
            {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in minima[0].items()},
        })
    return reports


def fit_partner(B: ProblemSpec, indices, b: float = 0.5, m: int = 24, seed: int = 0,
                perturb: float = 0.5, cfg: PropagatorConfig = INVERSE_CONFIG,
                max_iter: int = 60) -> ProblemSpec:
    """A problem that shares the eigenvalues ``indices`` with B and agrees with it on [b, 1].

    The head of q on [0, b] is piecewise constant on m > len(indices) cells,
    started from a random perturbation of B's cell means and moved by
    minimum-norm Gauss-Newton steps, so the result generally differs from B.
    """
    idx = np.asarray(sorted(indices), dtype=np.int64)
    if m <= len(idx):
        raise ContractError("need more head cells than shared eigenvalues")
    cfg = replace(cfg, refine_tol=min(cfg.refine_tol, 1e-15))
    target = eigenvalues(B, int(idx[-1]), cfg).values[idx]
    edges = np.linspace(0.0, b, m + 1)
    rng = np.random.default_rng(seed)
    from .core import cell_means

    c = cell_means(B.q, edges) + rng.uniform(-perturb, perturb, m)

    def build(c):
        head = Potential.piecewise_constant(list(edges) + ([1.0] if b < 1 else []),
                                            list(c) + ([0.0] if b < 1 else []))
        q = Potential.join(head, B.q, b) if b < 1 else head
        return replace(B, q=q)

    guess, best, stale = None, np.inf, 0
    for _ in range(max_iter):
        P = build(c)
        sp = eigenvalues(P, int(idx[-1]), cfg, guess=guess)
        guess = sp.values
        r = sp.values[idx] - target
        err = float(np.max(np.abs(r) / (1 + np.abs(target))))
        # iterate down to rounding level, then stop once progress ends
        if err < best * 0.5:
            best, stale = err, 0
        else:
            stale += 1
        if err <= 4e-16 or (stale >= 3 and best <= 1e-13):
            return P
        G = _gradient_rows(P, sp.values[idx], cfg, edges)[:, :m]
        step = np.linalg.lstsq(G, -r, rcond=None)[0]
        c = c + step
    raise IncompleteSpectrumError("partner fit did not converge")
