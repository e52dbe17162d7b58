"""Numerical realisations of the entire functions behind the uniqueness argument.

``g(k)`` is evaluated in its integral form on the common cell grid of the two
problems, in log-scaled arithmetic so that large ``|Im k|`` does not overflow.
Values that may be huge are passed around as complex logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import polygamma

from .asymptotics import DIRICHLET, ROBIN, gamma
from .core import ContractError, ProblemSpec, l2_distance
from .forward import (
    DEFAULT_CONFIG,
    PropagatorConfig,
    _as_lambda,
    check_same_a1,
    cos_sinc,
    node_states,
    pair_grids,
    sweep,
)

CHUNK = 1024


# ---------------------------------------------------------------------------
# g(k), integral form
# ---------------------------------------------------------------------------


def _check_tail(B: ProblemSpec, Bt: ProblemSpec, b: float):
    if not (0 < b <= 1):
        raise ContractError("b must lie in (0, 1]")
    if b < 1 and l2_distance(B.q, Bt.q, b, 1.0) > 1e-10:
        raise ContractError("potentials must agree on [b, 1]")


def _pair_setup(B, Bt, b, cfg):
    return pair_grids(B, Bt, cfg, extra=(b,))


def g_integral_log(B: ProblemSpec, Bt: ProblemSpec, b: float, k, cfg: PropagatorConfig = DEFAULT_CONFIG,
                   nodes: int = 8):
    """log g(k) (complex; real part log|g|), g in its integral form.

    g(k) = int_0^b (q~ - q) y y~ dx + (h~ - h) + a1 (a2~ - a2) (y y~)(1/2 - 0).
    Exact zeros come back as -inf real part.
    """
    check_same_a1(B, Bt)
    _check_tail(B, Bt, b)
    k_arr = np.atleast_1d(np.asarray(k, dtype=complex))
    gB, gBt = _pair_setup(B, Bt, b, cfg)
    edges = gB.edges
    head = np.flatnonzero(edges[1:] <= b + 1e-15)
    dq = gBt.qbar[head] - gB.qbar[head]
    active = head[dq != 0]
    dq = dq[dq != 0]
    t, w = np.polynomial.legendre.leggauss(nodes)
    a1 = B.jump.a1
    out = np.empty(len(k_arr), dtype=complex)
    for lo in range(0, len(k_arr), CHUNK):
        kk = k_arr[lo:lo + CHUNK]
        lam, _ = _as_lambda(kk**2)
        lam = lam.astype(complex)
        o1 = sweep(B, gB, lam, record=True)
        o2 = sweep(Bt, gBt, lam, record=True)
        terms_m, terms_e = [], []
        if len(active):
            y1 = node_states(gB, lam, o1["Y"], o1["DY"], active, t, a1, B.jump.a2)
            y2 = node_states(gBt, lam, o2["Y"], o2["DY"], active, t, a1, Bt.jump.a2)
            half_d = gB.widths[active] / 2
            cell_m = np.einsum("cnm,n->cm", y1 * y2, w) * (dq * half_d)[:, None]
            cell_e = o1["L"][active] + o2["L"][active]
            E = cell_e.max(axis=0)
            terms_m.append((cell_m * np.exp(cell_e - E[None, :])).sum(axis=0))
            terms_e.append(E)
        if Bt.jump.a2 != B.jump.a2:
            ih = gB.i_half
            terms_m.append(a1 * (Bt.jump.a2 - B.jump.a2) * o1["Y"][ih] * o2["Y"][ih])
            terms_e.append(o1["L"][ih] + o2["L"][ih])
        if Bt.h != B.h:
            terms_m.append(np.full(len(kk), Bt.h - B.h, dtype=complex))
            terms_e.append(np.zeros(len(kk)))
        if not terms_m:
            out[lo:lo + CHUNK] = -np.inf
            continue
        E = np.max(np.vstack(terms_e), axis=0)
        total = sum(m * np.exp(e - E) for m, e in zip(terms_m, terms_e))
        with np.errstate(divide="ignore"):
            out[lo:lo + CHUNK] = np.log(total) + E
    return out[0] if np.ndim(k) == 0 else out


def g_integral(B: ProblemSpec, Bt: ProblemSpec, b: float, k, cfg: PropagatorConfig = DEFAULT_CONFIG,
               nodes: int = 8):
    lg = g_integral_log(B, Bt, b, k, cfg, nodes)
    return np.exp(lg)


def product_bound(B: ProblemSpec, Bt: ProblemSpec, b: float, k, cfg: PropagatorConfig = DEFAULT_CONFIG,
                  nodes: int = 4) -> float:
    """sup over sampled x in [0, b] and the given k of |y y~| exp(-2b|Im k|)."""
    check_same_a1(B, Bt)
    k_arr = np.atleast_1d(np.asarray(k, dtype=complex))
    gB, gBt = _pair_setup(B, Bt, b, cfg)
    head = np.flatnonzero(gB.edges[1:] <= b + 1e-15)
    t = np.polynomial.legendre.leggauss(nodes)[0]
    lam = (k_arr**2).astype(complex)
    o1 = sweep(B, gB, lam, record=True)
    o2 = sweep(Bt, gBt, lam, record=True)
    y1 = node_states(gB, lam, o1["Y"], o1["DY"], head, t, B.jump.a1, B.jump.a2)
    y2 = node_states(gBt, lam, o2["Y"], o2["DY"], head, t, Bt.jump.a1, Bt.jump.a2)
    logmag = (np.log(np.abs(y1 * y2)) + (o1["L"][head] + o2["L"][head])[:, None, :]
              - 2 * b * np.abs(k_arr.imag)[None, None, :])
    return float(np.exp(np.max(logmag)))


# ---------------------------------------------------------------------------
# Phi_0 and truncated canonical products
# ---------------------------------------------------------------------------


def phi0(lam, sigma1: float, sigma2: float, a: float):
    """sigma1^-1 sqrt(lam) sin(sigma1 sqrt(lam)) [cos(sigma2 sqrt(lam)) + a], branch free."""
    if sigma1 <= 0 or sigma2 < 0:
        raise ContractError("need sigma1 > 0 and sigma2 >= 0")
    lam = np.asarray(lam)
    _, s = cos_sinc(sigma1**2 * lam)
    c2 = 1.0 if sigma2 == 0 else cos_sinc(sigma2**2 * lam)[0]
    return lam * s * (c2 + a)


def sin_floor(sigma1: float, t):
    """|sin(sigma1 sqrt(i t))| exp(-sigma1 |Im sqrt(i t)|), overflow free."""
    z = sigma1 * np.sqrt(1j * np.asarray(t, dtype=float))
    e = np.exp(-2 * np.abs(z.imag))
    # |sin(x+iy)|^2 = sin^2 x cosh^2 y + cos^2 x sinh^2 y, scaled by exp(-2|y|)
    ch, sh = (1 + e) / 2, (1 - e) / 2
    return np.sqrt((np.sin(z.real) * ch) ** 2 + (np.cos(z.real) * sh) ** 2)


@dataclass(frozen=True)
class Lattice:
    """A zero sequence kappa_0, kappa_1, ... with a comparison lattice for its tail.

    ``kind`` picks the comparison: n^2 pi^2 / sigma^2 (robin) or
    gamma_n^2 / sigma^2 (dirichlet). Entries past ``head`` come from
    ``extension`` or, by default, from the comparison lattice itself.
    """

    kind: str
    sigma: float
    a: float = 0.0
    head: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extension: Optional[Callable] = None

    @classmethod
    def alpha(cls, sigma1: float):
        return cls(ROBIN, sigma1)

    @classmethod
    def beta(cls, sigma2: float, a: float):
        return cls(DIRICHLET, sigma2, a)

    @classmethod
    def empty(cls):
        return cls("empty", 0.0)

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty"

    def comparison(self, n):
        n = np.asarray(n)
        if self.kind == DIRICHLET:
            return (gamma(n, self.a) / self.sigma) ** 2
        return (n * np.pi / self.sigma) ** 2

    def values(self, N: int) -> np.ndarray:
        """kappa_0 .. kappa_N."""
        if self.is_empty:
            return np.zeros(0)
        n = np.arange(N + 1)
        out = self.comparison(n).astype(float)
        K = min(len(self.head), N + 1)
        out[:K] = self.head[:K]
        if self.extension is not None and N + 1 > K:
            out[K:] = self.extension(n[K:])
        return out

    def tail_sums(self, N: int):
        """Sums over n > N of 1/c_n and 1/c_n^2 for the comparison lattice c_n."""
        if self.is_empty:
            return 0.0, 0.0
        s2, s4 = self.sigma**2, self.sigma**4
        if self.kind == DIRICHLET:
            c = math.asin(self.a) / math.pi
            u, v = 0.5 + c, 1.5 - c
            me, mo = N // 2 + 1, (N - 1) // 2 + 1
            t1 = (polygamma(1, me + u / 2) + polygamma(1, mo + v / 2)) / 4
            t2 = (polygamma(3, me + u / 2) + polygamma(3, mo + v / 2)) / 6 / 16
            return float(s2 / math.pi**2 * t1), float(s4 / math.pi**4 * t2)
        return (float(s2 / math.pi**2 * polygamma(1, N + 1)),
                float(s4 / math.pi**4 * polygamma(3, N + 1) / 6))


def log_phi_product(lat1: Lattice, lat2: Lattice, lam, n_factors: int = 100_000):
    """log of prod_{n<=N} (1 - lam/kappa_1n)(1 - lam/kappa_2n), tail-corrected.

    Zero lattice entries contribute the factor ``lam`` instead. Returns the
    complex log and a relative error estimate.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    total = np.zeros(len(lam), dtype=complex)
    err = np.zeros(len(lam))
    for lat in (lat1, lat2):
        if lat.is_empty:
            continue
        kap = lat.values(n_factors)
        zero = kap == 0
        nz = kap[~zero]
        acc = np.zeros(len(lam), dtype=complex)
        cond = np.zeros(len(lam))
        for lo in range(0, len(lam), 64):
            lm = lam[lo:lo + 64]
            ratio = lm[:, None] / nz[None, :]
            fac = 1 - ratio
            with np.errstate(divide="ignore"):
                acc[lo:lo + 64] = np.log(fac).sum(axis=1)
                # rounding of factors close to a root
                cond[lo:lo + 64] = (np.abs(ratio) / np.abs(fac)).sum(axis=1)
        if np.any(zero):
            with np.errstate(divide="ignore"):
                for _ in range(np.count_nonzero(zero)):
                    acc = acc + np.log(lam)
        T1, T2 = lat.tail_sums(n_factors)
        total += acc - lam * T1
        # second-order tail term, doubled; mismatch between lattice and comparison tails
        mismatch = abs(kap[-1] - lat.comparison(n_factors)) if n_factors > 0 else 0.0
        err += np.abs(lam) ** 2 * T2 + 2 * np.abs(lam) * mismatch * T2
        err += np.finfo(float).eps * (8 * len(nz) + cond)
    return total, err


def phi_product(lat1: Lattice, lat2: Lattice, lam, n_factors: int = 100_000):
    """Truncated product value and absolute error estimate."""
    lg, rel = log_phi_product(lat1, lat2, lam, n_factors)
    val = np.exp(lg)
    # an exact root factor makes the value exactly zero
    err = np.where(val == 0, 0.0, rel * np.abs(np.where(val == 0, 1.0, val)))
    if np.ndim(lam) == 0:
        return val[0], float(err[0])
    return val, err


def spectrum_lattice(values, kind: str, sigma: float = 1.0, a: float = 0.0,
                     extension: Optional[Callable] = None) -> Lattice:
    return Lattice(kind, sigma, a, np.asarray(values, dtype=float), extension)


# ---------------------------------------------------------------------------
# E(it) decay and growth indicators
# ---------------------------------------------------------------------------


@dataclass
class DecayProbe:
    t: np.ndarray
    abs_E: np.ndarray
    slope: float
    skipped: np.ndarray


def E_decay_probe(G_log: Callable, Phi_log: Callable, t_samples) -> DecayProbe:
    """|E(it)| = |G(it)/Phi(it)| from log-evaluators; slope of log|E| against log t."""
    t = np.asarray(t_samples, dtype=float)
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ContractError("t samples must be positive and increasing")
    lam = 1j * t
    lg = np.real(G_log(lam))
    lp = np.real(Phi_log(lam))
    with np.errstate(invalid="ignore"):
        logE = lg - lp
    skipped = ~np.isfinite(lp)
    absE = np.where(skipped, np.nan, np.exp(np.where(skipped, 0.0, logE)))
    ok = ~skipped & np.isfinite(logE)
    if np.count_nonzero(ok) >= 2:
        slope = float(np.polyfit(np.log(t[ok]), logE[ok], 1)[0])
    else:
        slope = float("nan")
    return DecayProbe(t, absE, slope, skipped)


def decay_evaluators(B: ProblemSpec, Bt: ProblemSpec, b: float, lat1: Lattice, lat2: Lattice,
                     cfg: PropagatorConfig = DEFAULT_CONFIG, n_factors: int = 100_000):
    """(G_log, Phi_log) closures with G(lam) = g(sqrt(lam))."""

    def G_log(lam):
        return g_integral_log(B, Bt, b, np.sqrt(np.asarray(lam, dtype=complex)), cfg)

    def Phi_log(lam):
        return log_phi_product(lat1, lat2, lam, n_factors)[0]

    return G_log, Phi_log


@dataclass
class GrowthEstimate:
    theta: np.ndarray
    h: np.ndarray  # directional growth slopes on [0, pi/2]
    indicator: float  # (1/2pi) int_0^{2pi} h
    radii: np.ndarray
    zero_counts: np.ndarray  # n(r) by winding on |k| = r
    real_zero_counts: np.ndarray  # zeros on [-r, r] by sign changes
    zero_ratio: np.ndarray = field(init=False)

    def __post_init__(self):
        self.zero_ratio = self.zero_counts / self.radii


def _envelope(x: np.ndarray, width: float) -> np.ndarray:
    out = np.empty_like(x)
    r = np.arange(len(x))
    for i in r:
        out[i] = np.max(x[max(0, i - int(width)): i + int(width) + 1])
    return out


def growth_scan(g_log: Callable, radii, theta_grid=None, count_radii=None,
                samples_per_unit: int = 40) -> GrowthEstimate:
    """Directional growth of an even, real-on-the-axis entire function g(k).

    ``theta_grid`` must lie in [0, pi/2]; the other quadrants follow from
    g(-k) = g(k) and g(conj k) = conj g(k). Zeros inside |k| <= r are counted
    by the winding of g along the circle.
    """
    radii = np.asarray(radii, dtype=float)
    theta = np.linspace(0, np.pi / 2, 33) if theta_grid is None else np.asarray(theta_grid, float)
    if np.any(theta < 0) or np.any(theta > np.pi / 2 + 1e-12):
        raise ContractError("theta_grid must lie in [0, pi/2]")
    K = radii[None, :] * np.exp(1j * theta[:, None])
    L = np.real(g_log(K.ravel())).reshape(K.shape)
    dr = radii[1] - radii[0] if len(radii) > 1 else 1.0
    top = slice(len(radii) // 2, None)
    width = int(2.0 / dr)
    # the envelope is only complete where its window fits inside the radii
    fit = slice(len(radii) // 2, max(len(radii) - width, len(radii) // 2 + 2))
    h = np.empty(len(theta))
    for i in range(len(theta)):
        row = L[i]
        row = np.where(np.isfinite(row), row, np.nanmin(np.where(np.isfinite(row), row, np.nan)))
        env = _envelope(row, width)
        h[i] = np.polyfit(radii[fit], env[fit], 1)[0]
    h = np.maximum(h, 0.0)
    indicator = float(2 / np.pi * trapezoid(h, theta)) if len(theta) > 1 else float(h[0])
    count_radii = radii[top][::max(1, len(radii[top]) // 4)] if count_radii is None else np.asarray(count_radii, float)
    windings, reals = [], []
    for r in count_radii:
        M = max(1024, int(samples_per_unit * r))
        # g is even: one half circle winds half of the total
        phi = np.linspace(0, np.pi, M + 1)
        lg = g_log(r * np.exp(1j * phi))
        ph = np.unwrap(np.imag(lg))
        windings.append(int(round(2 * (ph[-1] - ph[0]) / (2 * np.pi))))
        lx = g_log(np.linspace(0, r, M))
        sg = np.where(np.isfinite(np.real(lx)), np.sign(np.cos(np.imag(lx))), 0.0)
        sc = int(np.count_nonzero(sg[:-1] * sg[1:] < 0))
        reals.append(2 * sc)
    return GrowthEstimate(theta, h, indicator, np.asarray(count_radii), np.asarray(windings, float),
                          np.asarray(reals, float))
