"""Domain types shared by every module: potentials, boundary data, problems, spectra.

A potential is stored piecewise-polynomially (degree <= 3, coefficients in the
local coordinate ``x - x0`` of each piece). The interior point 1/2, where the
transmission condition acts, is always a piece boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, Union

import numpy as np

MIDPOINT = 0.5
MAX_DEGREE = 3


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """Caller violated a documented precondition."""


class InsufficientDataError(ValueError):
    """Not enough samples to form the requested statistic."""


class IncompleteSpectrumError(RuntimeError):
    """The eigenvalue search could not account for every eigenvalue."""


# ---------------------------------------------------------------------------
# Potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Piece:
    x0: float
    x1: float
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if not (self.x1 > self.x0):
            raise DomainError(f"empty or reversed piece [{self.x0}, {self.x1}]")
        if len(self.coeffs) == 0 or len(self.coeffs) > MAX_DEGREE + 1:
            raise DomainError("piece needs 1 to 4 polynomial coefficients")
        if not all(math.isfinite(c) for c in self.coeffs):
            raise DomainError("non-finite polynomial coefficient")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    def antideriv(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for j in range(len(self.coeffs) - 1, -1, -1):
            out = (out + self.coeffs[j] / (j + 1)) * t
        return out

    def __call__(self, x):
        t = np.asarray(x, dtype=float) - self.x0
        out = np.zeros_like(t)
        for c in reversed(self.coeffs):
            out = out * t + c
        return out


@dataclass(frozen=True)
class Potential:
    """Real piecewise-polynomial function on [0, 1] with a breakpoint at 1/2."""

    pieces: tuple[Piece, ...]

    def __post_init__(self):
        pieces = tuple(p if isinstance(p, Piece) else Piece(*p) for p in self.pieces)
        object.__setattr__(self, "pieces", pieces)
        if not pieces:
            raise DomainError("potential needs at least one piece")
        if pieces[0].x0 != 0.0 or pieces[-1].x1 != 1.0:
            raise DomainError("pieces must cover [0, 1] exactly")
        for left, right in zip(pieces, pieces[1:]):
            if left.x1 != right.x0:
                raise DomainError(f"gap or overlap at {left.x1} / {right.x0}")
        if MIDPOINT not in self.breakpoints:
            raise DomainError("1/2 must be a breakpoint of the potential")

    # -- constructors -------------------------------------------------------

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], breaks: Sequence[float] = (0.0, 0.5, 1.0)):
        """Global polynomial ``sum c_j x**j`` re-expanded about each piece start."""
        breaks = sorted(set(float(b) for b in breaks) | {0.0, MIDPOINT, 1.0})
        poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
        pieces = []
        for x0, x1 in zip(breaks, breaks[1:]):
            shifted = poly(np.polynomial.Polynomial([x0, 1.0]))
            c = np.trim_zeros(shifted.coef, "b")
            pieces.append(Piece(x0, x1, tuple(c) if len(c) else (0.0,)))
        return cls(tuple(pieces))

    @classmethod
    def constant(cls, value: float = 0.0):
        return cls.polynomial([value])

    @classmethod
    def piecewise_constant(cls, edges: Sequence[float], values: Sequence[float]):
        edges = [float(e) for e in edges]
        if len(values) != len(edges) - 1:
            raise DomainError("need one value per interval")
        pieces = []
        for x0, x1, v in zip(edges, edges[1:], values):
            if x0 < MIDPOINT < x1:
                pieces += [Piece(x0, MIDPOINT, (v,)), Piece(MIDPOINT, x1, (v,))]
            else:
                pieces.append(Piece(x0, x1, (v,)))
        return cls(tuple(pieces))

    @classmethod
    def from_callable(cls, f: Callable, n_pieces: int = 64):
        """Cubic-spline representation of a smooth callable (knots include 1/2)."""
        from scipy.interpolate import CubicSpline

        if n_pieces % 2:
            n_pieces += 1
        knots = np.linspace(0.0, 1.0, n_pieces + 1)
        knots[n_pieces // 2] = MIDPOINT
        spline = CubicSpline(knots, f(knots))
        pieces = []
        for i in range(n_pieces):
            # PPoly stores highest power first, in the local coordinate
            c = spline.c[::-1, i]
            pieces.append(Piece(float(knots[i]), float(knots[i + 1]), tuple(c)))
        return cls(tuple(pieces))

    @classmethod
    def join(cls, head: "Potential", tail: "Potential", b: float):
        """``head`` on [0, b] and ``tail`` on [b, 1]."""
        pieces = _clip_pieces(head.pieces, 0.0, b) + _clip_pieces(tail.pieces, b, 1.0)
        return cls(tuple(pieces))

    # -- queries ------------------------------------------------------------

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.pieces[0].x0,) + tuple(p.x1 for p in self.pieces)

    def sup_norm(self) -> float:
        best = 0.0
        for p in self.pieces:
            xs = np.linspace(p.x0, p.x1, 9)
            best = max(best, float(np.max(np.abs(p(xs)))))
        return best

    def to_dict(self) -> list[dict]:
        return [{"interval": [p.x0, p.x1], "coeffs": list(p.coeffs)} for p in self.pieces]

    @classmethod
    def from_dict(cls, data: Iterable[dict]):
        return cls(tuple(Piece(d["interval"][0], d["interval"][1], tuple(d["coeffs"])) for d in data))


def _clip_pieces(pieces, lo, hi):
    out = []
    for p in pieces:
        x0, x1 = max(p.x0, lo), min(p.x1, hi)
        if x1 <= x0:
            continue
        if x0 == p.x0:
            out.append(Piece(x0, x1, p.coeffs))
        else:
            shifted = np.polynomial.Polynomial(p.coeffs)(np.polynomial.Polynomial([x0 - p.x0, 1.0]))
            out.append(Piece(x0, x1, tuple(shifted.coef)))
    # keep 1/2 a breakpoint after clipping
    split = []
    for p in out:
        if p.x0 < MIDPOINT < p.x1:
            split += _split_at(p, MIDPOINT)
        else:
            split.append(p)
    return split


def _split_at(p: Piece, x: float):
    shifted = np.polynomial.Polynomial(p.coeffs)(np.polynomial.Polynomial([x - p.x0, 1.0]))
    return [Piece(p.x0, x, p.coeffs), Piece(x, p.x1, tuple(shifted.coef))]


def _locate(q: Potential, x):
    """Index of the active piece; interior breakpoints belong to the left piece."""
    right_ends = np.array([p.x1 for p in q.pieces])
    return np.minimum(np.searchsorted(right_ends, x, side="left"), len(q.pieces) - 1)


def eval_potential(q: Potential, x):
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0.0) | (xa > 1.0)) or not np.all(np.isfinite(xa)):
        raise DomainError("x must lie in [0, 1]")
    idx = _locate(q, xa)
    out = np.empty_like(xa)
    for i in np.unique(idx):
        mask = idx == i
        out[mask] = q.pieces[i](xa[mask])
    return float(out) if out.ndim == 0 else out


def _primitive(q: Potential, x: np.ndarray) -> np.ndarray:
    """F(x) = integral of q from 0 to x, exact."""
    # cumulative integral at each piece start
    starts = np.zeros(len(q.pieces) + 1)
    for i, p in enumerate(q.pieces):
        starts[i + 1] = starts[i] + float(p.antideriv(p.x1 - p.x0))
    idx = _locate(q, x)
    out = np.empty_like(x)
    for i in np.unique(idx):
        mask = idx == i
        p = q.pieces[i]
        out[mask] = starts[i] + p.antideriv(x[mask] - p.x0)
    return out


def integrate_potential(q: Potential, x0: float, x1: float) -> float:
    if not (0.0 <= x0 <= x1 <= 1.0):
        raise DomainError(f"need 0 <= x0 <= x1 <= 1, got [{x0}, {x1}]")
    lo, hi = _primitive(q, np.array([x0, x1], dtype=float))
    return float(hi - lo)


def cell_means(q: Potential, edges: np.ndarray) -> np.ndarray:
    """Exact average of q over each cell ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    F = _primitive(q, edges)
    return np.diff(F) / np.diff(edges)


def l2_distance(q1: Potential, q2: Potential, x0: float, x1: float, nodes: int = 8) -> float:
    """L2 norm of q1 - q2 on [x0, x1] by Gauss quadrature on merged pieces (exact for cubics)."""
    bps = sorted({x0, x1} | {b for b in q1.breakpoints + q2.breakpoints if x0 < b < x1})
    t, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for a, b in zip(bps, bps[1:]):
        xs = 0.5 * (b - a) * (t + 1.0) + a
        diff = eval_potential(q1, xs) - eval_potential(q2, xs)
        total += 0.5 * (b - a) * float(np.dot(w, diff**2))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# Boundary and transmission data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Robin:
    """Right end condition ``y'(1) + H y(1) = 0``."""

    H: float

    def __post_init__(self):
        if not math.isfinite(self.H):
            raise DomainError("Robin coefficient must be finite")


@dataclass(frozen=True)
class Dirichlet:
    """Right end condition ``y(1) = 0``."""


BoundaryCondition = Union[Robin, Dirichlet]


@dataclass(frozen=True)
class Transmission:
    a1: float = 1.0
    a2: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a1) and math.isfinite(self.a2)):
            raise DomainError("transmission parameters must be finite")
        if self.a1 <= 0.0:
            raise DomainError("a1 must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a1, 0.0], [self.a2, 1.0 / self.a1]])


@dataclass(frozen=True)
class ProblemSpec:
    """The boundary value problem on [0, 1] with the jump at 1/2."""

    q: Potential
    h: float = 0.0
    right: BoundaryCondition = field(default_factory=lambda: Robin(0.0))
    jump: Transmission = field(default_factory=Transmission)

    def __post_init__(self):
        if not math.isfinite(self.h):
            raise DomainError("h must be finite")

    @property
    def dirichlet(self) -> bool:
        return isinstance(self.right, Dirichlet)

    @property
    def H(self):
        return None if self.dirichlet else self.right.H

    def with_right(self, right: BoundaryCondition) -> "ProblemSpec":
        return ProblemSpec(self.q, self.h, right, self.jump)

    def to_dict(self) -> dict:
        right: Any = "dirichlet" if self.dirichlet else {"robin": self.right.H}
        return {"q": self.q.to_dict(), "h": self.h, "right": right,
                "a1": self.jump.a1, "a2": self.jump.a2}

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        r = d.get("right", {"robin": 0.0})
        if r == "dirichlet":
            right: BoundaryCondition = Dirichlet()
        elif isinstance(r, dict) and "robin" in r:
            right = Robin(float(r["robin"]))
        else:
            raise ContractError(f"unrecognised right boundary condition {r!r}")
        return cls(Potential.from_dict(d["q"]), float(d.get("h", 0.0)), right,
                   Transmission(float(d.get("a1", 1.0)), float(d.get("a2", 0.0))))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class StateVector:
    """(y, y') at position x; the true state is ``(y, dy) * exp(log_scale)``."""

    y: Any
    dy: Any
    x: float
    log_scale: Any = 0.0

    def unscaled(self):
        s = np.exp(self.log_scale)
        return self.y * s, self.dy * s


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues indexed 0..n_max of a given problem."""

    problem: ProblemSpec
    values: np.ndarray
    residuals: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ContractError("spectrum values must be one-dimensional")
        if np.any(np.diff(v) <= 0):
            raise ContractError("spectrum must be strictly increasing")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(len(self.values))

    @property
    def n_max(self) -> int:
        return len(self.values) - 1

    def __len__(self):
        return len(self.values)
