"""Two-term eigenvalue asymptotics and their residuals against computed spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import InsufficientDataError, ProblemSpec, Spectrum, integrate_potential

ROBIN = "robin"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class AsymptoticConstants:
    a: float
    omega0: float
    omega: Optional[float] = None  # absent for the Dirichlet family
    omega1: Optional[float] = None


def constants(problem: ProblemSpec) -> AsymptoticConstants:
    a1, a2 = problem.jump.a1, problem.jump.a2
    s = a1 + 1.0 / a1
    a = (a1 - 1.0 / a1) / s
    half_mean = 0.5 * integrate_potential(problem.q, 0.0, 1.0)
    omega0 = a2 / s + half_mean + problem.h
    if problem.dirichlet:
        return AsymptoticConstants(a, omega0)
    H = problem.right.H
    right_int = integrate_potential(problem.q, 0.5, 1.0)
    omega1 = a2 / s + a * (right_int + H - (half_mean + problem.h))
    return AsymptoticConstants(a, omega0, omega0 + H, omega1)


def gamma(n, a: float):
    """(n + 1/2) pi + (-1)**n arcsin(a)."""
    n = np.asarray(n)
    return (n + 0.5) * np.pi + np.where(n % 2 == 0, 1.0, -1.0) * math.asin(a)


def gamma_sequence(kind: str, a: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if kind == DIRICHLET:
        return gamma(n, a)
    return n * np.pi


def predict_sqrt(kind: str, c: AsymptoticConstants, n: int) -> float:
    """Two-term approximant of sqrt(eigenvalue n); n = 0 keeps only the leading term."""
    if kind == DIRICHLET:
        lead = float(gamma(n, c.a))
        return lead if n == 0 else lead + c.omega0 / (n * math.pi)
    lead = n * math.pi
    if n == 0:
        return lead
    return lead + (c.omega + (-1) ** n * c.omega1) / (n * math.pi)


def signed_sqrt(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.sqrt(np.abs(x))


@dataclass
class ResidualReport:
    n: np.ndarray
    sqrt_lambda: np.ndarray
    predicted: np.ndarray
    r: np.ndarray  # n * (sqrt(lambda_n) - predicted)
    tail_max: float  # max |r| over the last quartile of indices

    def window_max(self, lo: int, hi: int) -> float:
        m = (self.n >= lo) & (self.n <= hi)
        return float(np.max(np.abs(self.r[m])))


def residuals(spec: Spectrum, c: AsymptoticConstants | None = None) -> ResidualReport:
    if len(spec) < 8:
        raise InsufficientDataError("need at least 8 eigenvalues for residual statistics")
    c = c or constants(spec.problem)
    kind = DIRICHLET if spec.problem.dirichlet else ROBIN
    n = np.arange(1, len(spec))
    roots = signed_sqrt(spec.values[1:])
    pred = np.array([predict_sqrt(kind, c, int(k)) for k in n])
    r = n * (roots - pred)
    tail = r[-max(1, len(r) // 4):]
    return ResidualReport(n, roots, pred, r, float(np.max(np.abs(tail))))


def parity_limits(spec: Spectrum, n_from: int = 50):
    """Tail estimates of n*(sqrt(lambda_n) - n*pi) over even and odd n.

    Each parity class is fitted as ``L + c/n**2`` (the leading correction to
    ``n*(sqrt(lambda_n) - n*pi)`` for smooth q) and ``L`` is returned.
    """
    n = np.arange(len(spec))
    roots = signed_sqrt(spec.values)
    m = n >= max(n_from, 1)
    s = n[m] * (roots[m] - n[m] * np.pi)
    out = []
    for parity in (0, 1):
        sel = n[m] % 2 == parity
        nn, ss = n[m][sel].astype(float), s[sel]
        A = np.column_stack([np.ones_like(nn), 1.0 / nn**2])
        coef, *_ = np.linalg.lstsq(A, ss, rcond=None)
        out.append(float(coef[0]))
    return tuple(out)
