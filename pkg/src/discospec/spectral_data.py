"""Counting functions, regular subset selection and the mixed-data sufficiency checks.

The conditions are statements about infinite sets, so every check returns
finite-truncation evidence with a three-valued verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .asymptotics import DIRICHLET, ROBIN, gamma
from .core import ContractError, InsufficientDataError, Spectrum

PASS, FAIL, INDETERMINATE = "pass", "fail", "indeterminate"


@dataclass(frozen=True)
class SpectralSubset:
    """Indexed picks ``(n, kappa)`` from a parent spectrum."""

    indices: np.ndarray
    values: np.ndarray
    family: str = ROBIN
    parent: Optional[Spectrum] = None
    eps: Optional[np.ndarray] = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape:
            raise ContractError("indices and values differ in length")
        if np.any(np.diff(idx) <= 0):
            raise ContractError("subset indices must be strictly increasing")
        if self.parent is not None and len(idx):
            if idx[0] < 0 or idx[-1] >= len(self.parent):
                raise ContractError("subset index outside the parent spectrum")
            if not np.array_equal(self.parent.values[idx], val):
                raise ContractError("subset values do not match the parent spectrum")

    @classmethod
    def from_indices(cls, spectrum: Spectrum, indices, family: str | None = None):
        idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.int64)
        fam = family or (DIRICHLET if spectrum.problem.dirichlet else ROBIN)
        return cls(idx, spectrum.values[idx], fam, spectrum)

    @classmethod
    def full(cls, spectrum: Spectrum, family: str | None = None):
        return cls.from_indices(spectrum, range(len(spectrum)), family)

    @classmethod
    def empty(cls, family: str = ROBIN):
        return cls(np.zeros(0, np.int64), np.zeros(0), family)

    def __len__(self):
        return len(self.indices)


@dataclass
class ConditionReport:
    condition: str
    verdict: str
    margins: dict = field(default_factory=dict)
    truncation: int = 0
    notes: str = ""

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            return v

        return {"condition": self.condition, "verdict": self.verdict,
                "margins": conv(self.margins), "truncation": self.truncation, "notes": self.notes}


# ---------------------------------------------------------------------------


def counting(values, r):
    """#{x in values : x <= r**2}; vectorised over r."""
    v = np.sort(np.asarray(values, dtype=float))
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ContractError("r must be positive")
    out = np.searchsorted(v, r**2, side="right")
    return int(out) if out.ndim == 0 else out


def check_condition_I(subset: SpectralSubset, n_max: int | None = None) -> ConditionReport:
    if len(subset) == 0:
        raise ContractError("condition (I) needs a nonempty subset")
    n_max = int(subset.indices[-1]) if n_max is None else int(n_max)
    evens = int(np.count_nonzero(subset.indices % 2 == 0))
    odds = len(subset) - evens
    need = max(3, n_max / 10)
    if evens >= need and odds >= need:
        verdict, notes = PASS, ""
    else:
        verdict = INDETERMINATE
        notes = "leaning fail: " + ("no odd indices" if odds == 0 else
                                    "no even indices" if evens == 0 else "few indices of one parity")
    return ConditionReport("I", verdict, {"evens": evens, "odds": odds, "threshold": need}, n_max, notes)


def default_r_grid(*spectra_values, points: int = 64) -> np.ndarray:
    """Radii up to the truncation edge of the shortest spectrum."""
    tops = [np.max(v) for v in spectra_values if len(v)]
    r_max = math.sqrt(max(min(tops), 1.0))
    return np.linspace(r_max / 8, r_max, points)


def _ls_slope(x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xm = x - x.mean()
    return float(np.dot(xm, y - y.mean()) / np.dot(xm, xm))


def _density(S_values: Sequence[np.ndarray], L_values: Sequence[np.ndarray], sigma, r_grid, tag):
    r_grid = np.asarray(r_grid, dtype=float)
    if len(r_grid) < 8:
        raise InsufficientDataError("r_grid needs at least 8 points")
    if np.any(np.diff(r_grid) <= 0):
        raise ContractError("r_grid must be increasing")
    NS = sum((counting(v, r_grid) for v in S_values), np.zeros(len(r_grid), dtype=np.int64))
    NL = sum((counting(v, r_grid) for v in L_values), np.zeros(len(r_grid), dtype=np.int64))
    M = NS - sigma * NL
    top = slice(len(r_grid) // 2, None)
    sS, sL = _ls_slope(r_grid[top], NS[top]), _ls_slope(r_grid[top], NL[top])
    slope = sS - sigma * sL
    eps = 0.01 * sigma / math.pi
    # one count of drift across the fitted window is below what the data can resolve
    band = max(eps, 1.0 / (r_grid[-1] - r_grid[len(r_grid) // 2]))
    sigma_star = sS / sL if sL > 0 else float("nan")
    if np.all(NS == NL) and sigma <= 1:
        verdict, notes = PASS, "subsets exhaust the spectra up to truncation"
    elif slope > band:
        verdict, notes = PASS, ""
    elif slope < -band:
        verdict, notes = FAIL, ""
    else:
        verdict, notes = INDETERMINATE, "margin slope within resolution of zero"
    margins = {"r": r_grid, "margin": M, "N_S": NS, "N_Lambda": NL, "slope": slope,
               "slope_band": band, "sigma_star": sigma_star}
    return ConditionReport(tag, verdict, margins, 0, notes)


def _values(s):
    if s is None:
        return np.zeros(0)
    if isinstance(s, (SpectralSubset, Spectrum)):
        return s.values
    return np.asarray(s, dtype=float)


def check_density_i(S1, S2, L1, L2, sigma: float, r_grid=None) -> ConditionReport:
    """Margin curve N_{S1+S2}(r) - sigma N_{L1+L2}(r) and its large-r slope."""
    if not (0 < sigma <= 1):
        raise ContractError("sigma must lie in (0, 1]")
    Ls = [_values(L1), _values(L2)]
    r_grid = default_r_grid(*Ls) if r_grid is None else r_grid
    rep = _density([_values(S1), _values(S2)], Ls, sigma, r_grid, "density-i")
    rep.truncation = max(len(v) for v in Ls) - 1
    return rep


def _summable(terms_list, tag, truncation, extra):
    terms = np.concatenate([t for t in terms_list if len(t)]) if any(len(t) for t in terms_list) else np.zeros(0)
    total = float(terms.sum())
    tails = []
    for t in terms_list:
        if len(t):
            k = max(1, len(t) // 10)
            tails.append(float(t[-k:].sum()))
    tail = float(sum(tails))
    frac = tail / total if total > 0 else 0.0
    if tail < 1e-6 or frac < 0.01:
        verdict = PASS
    elif frac >= 0.05:
        verdict = FAIL
    else:
        verdict = INDETERMINATE
    margins = {"partial_sum": total, "tail_sum": tail, "tail_fraction": frac,
               "partial_sums": [np.cumsum(t) for t in terms_list], **extra}
    return ConditionReport(tag, verdict, margins, truncation, "tail = last tenth of the terms of each series")


def _series_terms(kappa, lattice):
    """((kappa_n - lattice_n)_+ / n**2) for n >= 1, plus the n = 0 numerator."""
    kappa = np.asarray(kappa, dtype=float)
    if len(kappa) == 0:
        return np.zeros(0), 0.0
    n = np.arange(len(kappa), dtype=float)
    num = np.maximum(kappa - lattice(n), 0.0)
    return num[1:] / n[1:] ** 2, float(num[0])


def check_summability_ii(S1, S2, sigma1: float, sigma2: float, b: float, a: float = 0.0) -> ConditionReport:
    """Partial sums of the two comparison series; ``a`` fixes gamma_n for S2."""
    if sigma1 < 0 or sigma2 < 0:
        raise ContractError("sigma_i must be non-negative")
    if abs(sigma1 + sigma2 - 2 * b) > 1e-12:
        raise ContractError("need sigma1 + sigma2 == 2b")
    k1, k2 = _values(S1), _values(S2)
    for s, k in ((sigma1, k1), (sigma2, k2)):
        if s == 0 and len(k):
            raise ContractError("sigma_i = 0 is reserved for an empty subset")
    if len(k1) == 0 and len(k2) == 0:
        return ConditionReport("summability-ii", FAIL, {}, 0, "no data")
    t1, z1 = _series_terms(k1, lambda n: (n * np.pi / sigma1) ** 2) if len(k1) else (np.zeros(0), 0.0)
    t2, z2 = _series_terms(k2, lambda n: (gamma(n.astype(int), a) / sigma2) ** 2) if len(k2) else (np.zeros(0), 0.0)
    return _summable([t1, t2], "summability-ii", max(len(k1), len(k2)) - 1, {"n0_terms": [z1, z2]})


def generate_regular_subset(spectrum: Spectrum, sigma: float, kind: str | None = None,
                            a: float | None = None) -> SpectralSubset:
    """Regularly spaced picks with density ``sigma``.

    Robin family: index round(n / sigma). Dirichlet family: the index m whose
    gamma_m is nearest to gamma_n / sigma.
    """
    if not (0 < sigma <= 1):
        raise ContractError("sigma must lie in (0, 1]")
    kind = kind or (DIRICHLET if spectrum.problem.dirichlet else ROBIN)
    top = len(spectrum) - 1
    picks, eps = [], []
    warnings: list[str] = []
    n = 0
    if kind == DIRICHLET:
        if a is None:
            from .asymptotics import constants

            a = constants(spectrum.problem).a
        gam = gamma(np.arange(top + 1), a)
        while True:
            target = float(gamma(n, a)) / sigma
            m = int(np.argmin(np.abs(gam - target)))
            if target > gam[-1] + np.pi / 2:
                if n < 3:
                    warnings.append("sigma too small for the available spectrum")
                break
            picks.append(m)
            eps.append(gam[m] * sigma / float(gamma(n, a)) - 1.0)
            n += 1
    else:
        while True:
            m = int(round(n / sigma))
            if m > top:
                if n < 3:
                    warnings.append("sigma too small for the available spectrum")
                break
            picks.append(m)
            eps.append(0.0 if n == 0 else m * sigma / n - 1.0)
            n += 1
    idx, first = np.unique(np.asarray(picks, dtype=np.int64), return_index=True)
    sub = SpectralSubset(idx, spectrum.values[idx], kind, spectrum,
                         np.asarray(eps)[first], tuple(warnings))
    return sub


def check_multi_N(subsets: Sequence, spectra: Sequence, mode: str, b: float,
                  sigma: float | None = None, sigmas: Sequence[float] | None = None,
                  kinds: Sequence[str] | None = None, Hs: Sequence | None = None,
                  a: float = 0.0, r_grid=None) -> ConditionReport:
    """Union checks over N >= 3 families; family 2 (position 1) is the Dirichlet one."""
    N = len(spectra)
    if N < 3 or len(subsets) != N:
        raise ContractError("need N >= 3 spectra and one subset per spectrum")
    kinds = list(kinds) if kinds is not None else [DIRICHLET if i == 1 else ROBIN for i in range(N)]
    if kinds[1] != DIRICHLET:
        raise ContractError("family 2 must be the Dirichlet family")
    if Hs is not None:
        finite = [h for h in Hs if h is not None]
        if len(set(finite)) != len(finite):
            raise ContractError("H_i must be pairwise distinct")
    S_vals = [_values(s) for s in subsets]
    L_vals = [_values(s) for s in spectra]
    if all(len(s) == 0 for s in S_vals):
        return ConditionReport(f"multi-N-{mode}", FAIL, {"N": N}, 0, "all subsets empty")
    if mode == "i":
        if sigma is None:
            raise ContractError("mode i needs sigma")
        r_grid = default_r_grid(*L_vals) if r_grid is None else r_grid
        rep = _density(S_vals, L_vals, sigma, r_grid, "multi-N-i")
        rep.margins.update(threshold=2 * b / N, threshold_met=bool(sigma > 2 * b / N), N=N)
        rep.truncation = max(len(v) for v in L_vals) - 1
        return rep
    if mode == "ii":
        if sigmas is None or len(sigmas) != N:
            raise ContractError("mode ii needs one sigma per family")
        if abs(sum(sigmas) - 2 * b) > 1e-12:
            raise ContractError("need sum(sigma_i) == 2b")
        terms, zero_terms = [], []
        for s_i, k, kind in zip(sigmas, S_vals, kinds):
            if s_i == 0:
                if len(k):
                    raise ContractError("sigma_i = 0 is reserved for an empty subset")
                terms.append(np.zeros(0))
                zero_terms.append(0.0)
                continue
            if kind == DIRICHLET:
                lat = lambda n, s_i=s_i: (gamma(n.astype(int), a) / s_i) ** 2
            else:
                lat = lambda n, s_i=s_i: (n * np.pi / s_i) ** 2
            t, z = _series_terms(k, lat)
            terms.append(t)
            zero_terms.append(z)
        rep = _summable(terms, "multi-N-ii", max(len(k) for k in S_vals) - 1,
                        {"n0_terms": zero_terms, "N": N})
        return rep
    raise ContractError(f"unknown mode {mode!r}")
