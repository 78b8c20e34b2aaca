"""Regression and instrumental-variable estimators for unit average treatment effects."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import linalg, stats

from .dataset import CATEGORICAL, DataError, Dataset

CONFIDENCE = 0.95
NORMAL_975 = float(stats.norm.ppf(0.975))
RANK_TOL = 1e-10
COLLAPSE_TOL = 1e-12


class EstimationError(ValueError):
    pass


class InsufficientDataError(EstimationError):
    """Too few rows to estimate a standard error."""


class RankDeficientError(EstimationError):
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__("design matrix is rank deficient; collinear columns: " + ", ".join(self.columns))


class WeakInstrumentError(EstimationError):
    pass


# --- terms -----------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    @property
    def variables(self) -> tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Intercept(Term):
    def __str__(self):
        return "1"


@dataclass(frozen=True)
class Linear(Term):
    variable: str

    @property
    def variables(self):
        return (self.variable,)

    def __str__(self):
        return self.variable


@dataclass(frozen=True)
class Interaction(Term):
    left: str
    right: str

    def __post_init__(self):
        if self.left == self.right:
            raise ValueError("an interaction needs two distinct variables; use Power for squares")

    @property
    def variables(self):
        return (self.left, self.right)

    def __str__(self):
        return f"{self.left}*{self.right}"


@dataclass(frozen=True)
class Power(Term):
    variable: str
    exponent: int

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 2:
            raise ValueError("power exponents are integers >= 2")

    @property
    def variables(self):
        return (self.variable,)

    def __str__(self):
        return f"{self.variable}^{self.exponent}"


def parse_term(text: str) -> Term:
    """``1`` is the intercept, ``a*b`` an interaction, ``x^2`` a power, anything else a linear term."""
    s = text.strip()
    if s in ("1", "Intercept", "intercept"):
        return Intercept()
    if "*" in s:
        left, _, right = (part.strip() for part in s.partition("*"))
        if not left or not right or "*" in right:
            raise ValueError(f"malformed interaction {text!r}")
        return Interaction(left, right)
    m = re.fullmatch(r"(.+?)\s*\^\s*(\d+)", s)
    if m:
        return Power(m.group(1), int(m.group(2)))
    if not s or "^" in s:
        raise ValueError(f"malformed term {text!r}")
    return Linear(s)


# --- design matrices -------------------------------------------------------

class Design(NamedTuple):
    matrix: np.ndarray
    response: np.ndarray
    columns: list[str]
    term_columns: dict[Term, list[str]]


def _factor(d: Dataset, name: str, reference_levels: Mapping[str, str]) -> list[tuple[str, np.ndarray]]:
    """Expand one variable into named numeric columns (indicators for categorical)."""
    col = d[name]
    if col.kind != CATEGORICAL:
        return [(name, col.values.astype(float))]
    levels = col.levels
    reference = reference_levels.get(name, levels[0] if levels else None)
    if levels and reference not in levels:
        raise DataError(f"reference level {reference!r} not observed in {name!r}")
    values = col.values
    return [
        (f"{name}[{lv}]", np.array([v == lv for v in values], dtype=float))
        for lv in levels
        if lv != reference
    ]


def design_matrix(
    d: Dataset,
    outcome: str,
    terms: Sequence[Term],
    reference_levels: Mapping[str, str] | None = None,
) -> Design:
    """One block of columns per term, rows in dataset order.

    Categorical variables become indicators with the reference level
    dropped (lexicographically first unless overridden).
    """
    reference_levels = reference_levels or {}
    y_col = d[outcome]
    if y_col.kind == CATEGORICAL:
        raise DataError(f"outcome {outcome!r} must be numeric")
    blocks: list[tuple[str, np.ndarray]] = []
    term_columns: dict[Term, list[str]] = {}
    n = d.row_count
    for term in terms:
        if outcome in term.variables:
            raise DataError(f"term {term} references the outcome {outcome!r}")
        if isinstance(term, Intercept):
            made = [("Intercept", np.ones(n))]
        elif isinstance(term, Linear):
            made = _factor(d, term.variable, reference_levels)
        elif isinstance(term, Interaction):
            left = _factor(d, term.left, reference_levels)
            right = _factor(d, term.right, reference_levels)
            made = [(f"{ln}:{rn}", lv * rv) for ln, lv in left for rn, rv in right]
        elif isinstance(term, Power):
            if d[term.variable].kind == CATEGORICAL:
                raise DataError(f"cannot raise categorical {term.variable!r} to a power")
            made = [(str(term), d[term.variable].values.astype(float) ** term.exponent)]
        else:
            raise TypeError(f"not a term: {term!r}")
        term_columns[term] = [name for name, _ in made]
        blocks.extend(made)
    names = [name for name, _ in blocks]
    if len(set(names)) != len(names):
        raise DataError("duplicate design columns; a term is listed twice")
    matrix = np.column_stack([v for _, v in blocks]) if blocks else np.empty((n, 0))
    response = y_col.values.astype(float)
    if np.isnan(matrix).any() or np.isnan(response).any():
        raise DataError("design contains missing values; drop incomplete rows first")
    return Design(matrix, response, names, term_columns)


# --- least squares ---------------------------------------------------------

@dataclass(frozen=True)
class RegressionFit:
    columns: tuple[str, ...]
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    residual_variance: float
    degrees_of_freedom: int
    n: int

    def coefficient(self, column: str) -> float:
        return self.coefficients[column]


def aliased_columns(matrix: np.ndarray, columns: Sequence[str] | None = None) -> list[str]:
    """Columns lying in the span of the columns before them."""
    X = np.asarray(matrix, dtype=float)
    names = list(columns) if columns is not None else [f"x{j}" for j in range(X.shape[1])]
    norms = np.linalg.norm(X, axis=0)
    tol = RANK_TOL * (norms.max() if norms.size else 0.0)
    basis = np.empty((X.shape[0], 0))
    out = []
    for j in range(X.shape[1]):
        r = X[:, j].copy()
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            r -= basis @ (basis.T @ r)
        size = np.linalg.norm(r)
        if size <= tol:
            out.append(names[j])
        else:
            basis = np.column_stack([basis, r / size])
    return out


def ols_fit(matrix, response, columns: Sequence[str] | None = None) -> RegressionFit:
    """Least squares via Householder QR; classical homoskedastic standard errors.

    A fit whose residual variance is below ``1e-12`` times the response
    variance is treated as exact and gets zero standard errors.
    """
    X = np.asarray(matrix, dtype=float)
    y = np.asarray(response, dtype=float)
    n, k = X.shape
    names = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(k))
    dof = n - k
    if dof <= 0:
        raise InsufficientDataError(f"insufficient data: {n} rows for {k} coefficients")
    aliased = aliased_columns(X, names)
    if aliased:
        raise RankDeficientError(aliased)

    q, r = np.linalg.qr(X)
    beta = linalg.solve_triangular(r, q.T @ y)
    r_inv = linalg.solve_triangular(r, np.eye(k))
    unscaled = np.einsum("ij,ij->i", r_inv, r_inv)  # diag((X'X)^-1)
    resid = y - X @ beta
    s2 = float(resid @ resid) / dof
    scale = float(np.var(y, ddof=1)) if n > 1 else 0.0
    if scale == 0.0:
        scale = float(np.mean(y * y))
    if s2 <= COLLAPSE_TOL * scale:
        s2 = 0.0
    se = np.sqrt(s2 * unscaled)
    return RegressionFit(
        names,
        dict(zip(names, map(float, beta))),
        dict(zip(names, map(float, se))),
        s2,
        dof,
        n,
    )


def t_quantile(p: float, dof: float) -> float:
    return float(stats.t.ppf(p, dof))


# --- effects ---------------------------------------------------------------

@dataclass(frozen=True)
class EffectEstimate:
    point: float
    ci_low: float
    ci_high: float
    method: str
    dof: int
    standard_error: float
    level: float = CONFIDENCE
    components: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ci_low <= self.point <= self.ci_high:
            raise EstimationError(f"interval [{self.ci_low}, {self.ci_high}] excludes point {self.point}")

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "method": self.method,
            "dof": self.dof,
            "standard_error": self.standard_error,
            "components": dict(self.components),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EffectEstimate":
        return cls(
            point=data["point"],
            ci_low=data["ci_low"],
            ci_high=data["ci_high"],
            method=data["method"],
            dof=data["dof"],
            standard_error=data["standard_error"],
            level=data.get("level", CONFIDENCE),
            components=dict(data.get("components", {})),
        )

    def __str__(self):
        return f"{self.point:.6g} [{self.ci_low:.6g}, {self.ci_high:.6g}]"


def treatment_column(term: Term, level: str | None = None) -> str:
    """Design column name of a linear treatment term; ``level`` for categorical treatments."""
    if not isinstance(term, Linear):
        raise EstimationError(f"treatment term must be linear, got {term}")
    return term.variable if level is None else f"{term.variable}[{level}]"


def unit_ate(fit: RegressionFit, term: Term, level: str | None = None) -> EffectEstimate:
    """Coefficient of the treatment column with a two-sided t interval."""
    column = treatment_column(term, level)
    if column not in fit.coefficients:
        raise EstimationError(f"term {column!r} absent from fit (columns: {', '.join(fit.columns)})")
    point = fit.coefficients[column]
    se = fit.standard_errors[column]
    if se == 0.0:
        return EffectEstimate(point, point, point, "OLS", fit.degrees_of_freedom, 0.0)
    half = t_quantile(0.5 + CONFIDENCE / 2, fit.degrees_of_freedom) * se
    return EffectEstimate(point, point - half, point + half, "OLS", fit.degrees_of_freedom, se)


def _slope(d: Dataset, response: str, regressor: str) -> tuple[float, float, int]:
    design = design_matrix(d, response, [Intercept(), Linear(regressor)])
    if len(design.columns) != 2:
        raise EstimationError(f"instrument {regressor!r} must encode to a single column")
    fit = ols_fit(design.matrix, design.response, design.columns)
    col = design.columns[1]
    return fit.coefficients[col], fit.standard_errors[col], fit.degrees_of_freedom


def iv_estimate(d: Dataset, instrument: str, treatment: str, outcome: str) -> EffectEstimate:
    """Wald ratio: instrument's effect on the outcome over its effect on the treatment.

    Both first-stage regressions include an intercept. The interval uses the
    first-order delta method with a normal quantile, treating the two
    slopes as independent.
    """
    if len({instrument, treatment, outcome}) != 3:
        raise EstimationError("instrument, treatment and outcome must be distinct")
    d, _ = d.complete_rows([instrument, treatment, outcome])
    g_sys, se_sys, dof_sys = _slope(d, outcome, instrument)
    g_sim, se_sim, dof_sim = _slope(d, treatment, instrument)
    if abs(g_sim) <= 2 * se_sim or g_sim == 0.0:
        raise WeakInstrumentError(
            f"weak instrument: {instrument} -> {treatment} slope {g_sim:.6g} with SE {se_sim:.6g}"
        )
    ratio = g_sys / g_sim
    se = math.sqrt((se_sys / g_sim) ** 2 + (ratio * se_sim / g_sim) ** 2)
    half = NORMAL_975 * se
    components = {"total_effect": g_sys, "total_effect_se": se_sys, "first_stage": g_sim, "first_stage_se": se_sim}
    return EffectEstimate(ratio, ratio - half, ratio + half, "IV", min(dof_sys, dof_sim), se, components=components)
