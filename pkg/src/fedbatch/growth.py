"""Growth kinetics: sums of Haldane terms, their analytic derivatives and
the location/classification of interior critical points.

A single Haldane term ``mu_bar * S / (K + S + S^2/L)`` vanishes at 0,
increases to a unique maximum at ``sqrt(K*L)`` and decreases beyond it;
sums of several terms model parallel metabolic pathways and may have
several local maxima.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class HaldaneTerm:
    """One substrate-inhibited pathway: rate mu_bar, affinity K, inhibition L."""

    mu_bar: float
    K: float
    L: float

    def __post_init__(self):
        for name in ("mu_bar", "K", "L"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v > 0):
                raise ConfigError(f"HaldaneTerm.{name} must be finite and > 0, got {v!r}")
        object.__setattr__(self, "mu_bar", float(self.mu_bar))
        object.__setattr__(self, "K", float(self.K))
        object.__setattr__(self, "L", float(self.L))

    @property
    def peak(self) -> float:
        """Location of the term's unique maximum."""
        return float(np.sqrt(self.K * self.L))


@dataclass(frozen=True)
class GrowthModel:
    """Ordered sum of Haldane terms; immutable and safe to share."""

    terms: tuple

    def __post_init__(self):
        if not self.terms:
            raise ConfigError("GrowthModel needs at least one Haldane term")
        terms = tuple(
            t if isinstance(t, HaldaneTerm) else HaldaneTerm(*t) for t in self.terms
        )
        object.__setattr__(self, "terms", terms)

    @cached_property
    def coeffs(self) -> np.ndarray:
        """(n, 3) float64 array of [mu_bar, K, L] rows, for the kernels."""
        a = np.array([[t.mu_bar, t.K, t.L] for t in self.terms], dtype=np.float64)
        a.setflags(write=False)
        return a

    @classmethod
    def from_dict(cls, d: dict) -> "GrowthModel":
        if not isinstance(d, dict) or set(d) != {"terms"}:
            raise ConfigError('growth model must be an object {"terms": [...]}')
        if not isinstance(d["terms"], list):
            raise ConfigError('"terms" must be a list')
        terms = []
        for i, row in enumerate(d["terms"]):
            if not isinstance(row, dict) or set(row) != {"mu_bar", "K", "L"}:
                raise ConfigError(
                    f"terms[{i}] must be an object with keys mu_bar, K, L"
                )
            terms.append(HaldaneTerm(row["mu_bar"], row["K"], row["L"]))
        return cls(tuple(terms))

    @classmethod
    def from_file(cls, path) -> "GrowthModel":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read growth model {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "terms": [{"mu_bar": t.mu_bar, "K": t.K, "L": t.L} for t in self.terms]
        }


def _check_S(S):
    arr = np.asarray(S, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError(f"substrate concentration must be >= 0, got {S!r}")
    return arr


def _eval(model: GrowthModel, S, scalar_kernel, array_kernel):
    arr = _check_S(S)
    if arr.ndim == 0:
        return float(scalar_kernel(model.coeffs, float(arr)))
    out = np.empty(arr.shape[0], dtype=np.float64)
    array_kernel(model.coeffs, np.ascontiguousarray(arr), out)
    return out


def eval_mu(model: GrowthModel, S):
    """Specific growth rate of the summed model; 0 exactly at S = 0."""
    return _eval(model, S, kernels.mu_scalar, kernels.mu_array)


def eval_mu_prime(model: GrowthModel, S):
    """Analytic first derivative (quotient rule, term by term)."""
    return _eval(model, S, kernels.mu_d1_scalar, kernels.mu_d1_array)


def eval_mu_second(model: GrowthModel, S):
    """Analytic second derivative."""
    return _eval(model, S, kernels.mu_d2_scalar, kernels.mu_d2_array)


@dataclass(frozen=True)
class CriticalPoint:
    S_bar: float
    mu_value: float
    mu_second: float


@dataclass(frozen=True)
class CriticalPointSet:
    """Interior critical points of mu, classified by curvature sign."""

    maxima: tuple
    minima: tuple
    degenerate: tuple

    @property
    def S_bars(self) -> tuple:
        return tuple(p.S_bar for p in self.maxima)


DEFAULT_SCAN_POINTS = 2048
DEGENERATE_CURVATURE_TOL = 1e-10


def find_local_maxima(model: GrowthModel, S_lo: float, S_hi: float,
                      scan_points: int = DEFAULT_SCAN_POINTS) -> CriticalPointSet:
    """Bracket every sign change of mu' on a uniform grid over [S_lo, S_hi]
    and refine each bracket by bisection to 1e-10 of the interval length.

    Roots with |mu''| below ``DEGENERATE_CURVATURE_TOL`` are reported in the
    ``degenerate`` list and excluded from maxima/minima.
    """
    if not (0 <= S_lo < S_hi):
        raise DomainError(f"need 0 <= S_lo < S_hi, got ({S_lo}, {S_hi})")
    if scan_points < 2:
        raise ConfigError("scan grid needs at least 2 points")

    grid = np.linspace(S_lo, S_hi, scan_points)
    d1 = eval_mu_prime(model, grid)
    tol = 1e-10 * (S_hi - S_lo)

    roots = []
    for k in range(scan_points - 1):
        a, b = grid[k], grid[k + 1]
        fa, fb = d1[k], d1[k + 1]
        if fa == 0.0:
            if k == 0 or d1[k - 1] != 0.0:
                roots.append(a)
            continue
        if fb == 0.0 or fa * fb > 0:
            continue
        while b - a > tol:
            m = 0.5 * (a + b)
            fm = eval_mu_prime(model, m)
            if fm == 0.0:
                a = b = m
                break
            if fa * fm < 0:
                b = m
            else:
                a, fa = m, fm
        roots.append(0.5 * (a + b))
    if d1[-1] == 0.0:
        roots.append(grid[-1])

    maxima, minima, degen = [], [], []
    for r in sorted(roots):
        p = CriticalPoint(float(r), eval_mu(model, r), eval_mu_second(model, r))
        if abs(p.mu_second) < DEGENERATE_CURVATURE_TOL:
            degen.append(p)
        elif p.mu_second < 0:
            maxima.append(p)
        else:
            minima.append(p)
    return CriticalPointSet(tuple(maxima), tuple(minima), tuple(degen))


@dataclass(frozen=True)
class Assumption2Report:
    holds: bool
    maxima: CriticalPointSet
    violations: tuple

    @property
    def ordering_ok(self) -> bool:
        return not any("order" in v for v in self.violations)


def check_assumption2(model: GrowthModel, params) -> Assumption2Report:
    """Diagnostic: more than one interior maximum on [0, S_in], all strictly
    between S_ref and S_in.  Never raises on violation."""
    cps = find_local_maxima(model, 0.0, params.S_in)
    violations = []
    if len(cps.maxima) <= 1:
        violations.append(f"cardinality: card M = {len(cps.maxima)}, need > 1")
    if cps.maxima:
        s_min = cps.maxima[0].S_bar
        s_max = cps.maxima[-1].S_bar
        if not (params.S_ref < s_min):
            violations.append(
                f"ordering: S_ref = {params.S_ref} not < min S_bar = {s_min}"
            )
        if not (s_max < params.S_in):
            violations.append(
                f"ordering: max S_bar = {s_max} not < S_in = {params.S_in}"
            )
    else:
        violations.append("ordering: no interior maximum found")
    return Assumption2Report(not violations, cps, tuple(violations))


def check_assumption1(model: GrowthModel, S_hi: float, grid_points: int = 512) -> dict:
    """Diagnostic for smoothness/positivity: mu(0) = 0 and mu > 0 on (0, S_hi]."""
    grid = np.linspace(0.0, S_hi, grid_points)
    mu = eval_mu(model, grid)
    finite = bool(
        np.all(np.isfinite(mu))
        and np.all(np.isfinite(eval_mu_prime(model, grid)))
        and np.all(np.isfinite(eval_mu_second(model, grid)))
    )
    zero_at_zero = mu[0] == 0.0
    positive = bool(np.all(mu[1:] > 0))
    return {
        "holds": bool(zero_at_zero and positive and finite),
        "zero_at_origin": bool(zero_at_zero),
        "positive_away_from_zero": positive,
        "derivatives_finite": finite,
    }
