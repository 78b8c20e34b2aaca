"""Causal test cases: identification, estimation and oracle comparison."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dataset import CATEGORICAL, Dataset, positivity_check, stratify
from .estimation import (
    Design,
    EffectEstimate,
    EstimationError,
    InsufficientDataError,
    Interaction,
    Linear,
    RankDeficientError,
    Term,
    WeakInstrumentError,
    design_matrix,
    iv_estimate,
    ols_fit,
    treatment_column,
    unit_ate,
)
from .graph import CausalDag, DagError, adjustment_set, validate_instrument


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"
    INFEASIBLE = "INFEASIBLE"


class OracleKind(str, Enum):
    NO_EFFECT = "no_effect"
    SOME_EFFECT = "some_effect"
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NOT_POSITIVE = "not_positive"
    EXACT = "exact"


@dataclass(frozen=True)
class Oracle:
    """Expected effect. ``exact`` passes when the point estimate is within
    ``tolerance`` times ``|value|`` of ``value``; that rule is not invariant
    to rescaling the outcome, unlike the interval-based kinds.
    """

    kind: OracleKind
    value: float | None = None
    tolerance: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", OracleKind(self.kind))
        if self.kind is OracleKind.EXACT:
            if self.value is None or not math.isfinite(self.value):
                raise ValueError("an exact oracle needs a finite value")
            if not 0 < self.tolerance < 1:
                raise ValueError("relative tolerance must lie in (0, 1)")

    def check(self, e: EffectEstimate) -> tuple[bool, str]:
        ci = f"[{e.ci_low:.6g}, {e.ci_high:.6g}]"
        zero_inside = e.ci_low <= 0 <= e.ci_high
        k = self.kind
        if k is OracleKind.NO_EFFECT:
            return zero_inside, f"0 {'inside' if zero_inside else 'outside'} {ci}"
        if k is OracleKind.SOME_EFFECT:
            return not zero_inside, f"0 {'inside' if zero_inside else 'outside'} {ci}"
        if k is OracleKind.POSITIVE:
            ok = e.ci_low > 0
            return ok, f"lower bound {e.ci_low:.6g} {'>' if ok else '<='} 0"
        if k is OracleKind.NEGATIVE:
            ok = e.ci_high < 0
            return ok, f"upper bound {e.ci_high:.6g} {'<' if ok else '>='} 0"
        if k is OracleKind.NOT_POSITIVE:
            ok = not e.ci_low > 0
            return ok, f"lower bound {e.ci_low:.6g} {'<=' if ok else '>'} 0"
        gap = abs(e.point - self.value)
        allowed = self.tolerance * abs(self.value)
        ok = gap <= allowed
        return ok, f"|{e.point:.6g} - {self.value:.6g}| = {gap:.6g} {'<=' if ok else '>'} {allowed:.6g}"

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.kind is OracleKind.EXACT:
            out.update(value=self.value, tolerance=self.tolerance)
        return out

    @classmethod
    def from_dict(cls, data) -> "Oracle":
        if isinstance(data, str):
            return cls(OracleKind(data))
        kind = OracleKind(data["kind"])
        if kind is OracleKind.EXACT:
            return cls(kind, float(data["value"]), float(data.get("tolerance", 0.05)))
        return cls(kind)


@dataclass(frozen=True)
class OLSConfig:
    terms: tuple[Term, ...]
    stratify_by: str | None = None
    stratum: str | None = None
    treatment_level: str | None = None
    reference_levels: Mapping[str, str] = field(default_factory=dict)
    allow_biased: bool = False

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if (self.stratify_by is None) != (self.stratum is None):
            raise ValueError("stratify_by and stratum go together")


@dataclass(frozen=True)
class IVConfig:
    instrument: str
    allow_biased: bool = False


@dataclass(frozen=True)
class CausalTestCase:
    __test__ = False

    id: str
    treatment: str
    outcome: str
    oracle: Oracle
    estimator: OLSConfig | IVConfig
    group_by: str | None = None

    def __post_init__(self):
        if self.treatment == self.outcome:
            raise ValueError(f"{self.id}: treatment and outcome must differ")
        if isinstance(self.estimator, OLSConfig):
            hits = sum(1 for t in self.estimator.terms if t == Linear(self.treatment))
            if hits != 1:
                raise ValueError(f"{self.id}: terms must contain the treatment {self.treatment!r} exactly once as a linear term")
        elif self.estimator.instrument in (self.treatment, self.outcome):
            raise ValueError(f"{self.id}: the instrument must differ from treatment and outcome")

    @property
    def treatment_term(self) -> Term:
        return Linear(self.treatment)


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    id: str
    verdict: Verdict
    estimate: EffectEstimate | None
    rationale: str
    diagnostics: Mapping = field(default_factory=dict)
    groups: Mapping[str, "TestOutcome"] | None = None
    overlaps: tuple["Overlap", ...] = ()

    def __post_init__(self):
        if self.verdict in (Verdict.PASS, Verdict.FAIL):
            grouped = self.groups is not None and all(o.estimate is not None for o in self.groups.values())
            if self.estimate is None and not grouped:
                raise ValueError("a PASS or FAIL outcome needs an estimate")

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "verdict": self.verdict.value,
            "estimate": None if self.estimate is None else self.estimate.to_dict(),
            "rationale": self.rationale,
            "diagnostics": _plain(self.diagnostics),
        }
        if self.groups is not None:
            out["groups"] = {k: v.to_dict() for k, v in self.groups.items()}
            out["overlaps"] = [o._asdict() for o in self.overlaps]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "TestOutcome":
        groups = data.get("groups")
        return cls(
            id=data["id"],
            verdict=Verdict(data["verdict"]),
            estimate=None if data.get("estimate") is None else EffectEstimate.from_dict(data["estimate"]),
            rationale=data["rationale"],
            diagnostics=data.get("diagnostics", {}),
            groups=None if groups is None else {k: cls.from_dict(v) for k, v in groups.items()},
            overlaps=tuple(Overlap(**o) for o in data.get("overlaps", ())),
        )


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = [_plain(v) for v in obj]
        return sorted(items, key=repr) if isinstance(obj, (set, frozenset)) else items
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class _Stop(Exception):
    def __init__(self, verdict: Verdict, rationale: str):
        self.verdict = verdict
        self.rationale = rationale


def _variables(terms: Sequence[Term]) -> set[str]:
    return {v for t in terms for v in t.variables}


def _check_coverage(g, d, tc, adj, strata: set[str], diag: dict) -> list[str]:
    """Names of identified biases the estimator leaves unhandled."""
    est = tc.estimator
    problems = []
    if isinstance(est, IVConfig):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            checks = validate_instrument(g, est.instrument, tc.treatment, tc.outcome)
        diag["instrument_conditions"] = [
            {"condition": c.condition, "passed": c.passed, "detail": c.detail} for c in checks
        ]
        if caught:
            diag.setdefault("notes", []).extend(str(w.message) for w in caught)
        problems += [f"instrument condition {c.condition} fails: {c.detail}" for c in checks if not c.passed]
        return problems

    covered = _variables(est.terms) | strata
    for node in sorted(adj.adjustment_set - covered):
        problems.append(f"confounder {node} not adjusted for")
    interaction_sets = {frozenset(t.variables) for t in est.terms if isinstance(t, Interaction)}
    for modifier, treatment in sorted(adj.required_interactions):
        if frozenset((modifier, treatment)) not in interaction_sets:
            problems.append(f"effect modifier {modifier} needs interaction term {treatment}*{modifier}")
    return problems


def _fit_ols(design: Design, column: str, diag: dict):
    try:
        return ols_fit(design.matrix, design.response, design.columns), design
    except RankDeficientError as exc:
        if column in exc.columns:
            raise _Stop(Verdict.INSUFFICIENT_DATA, f"treatment column {column} is collinear with other terms") from None
        keep = [j for j, c in enumerate(design.columns) if c not in exc.columns]
        diag.setdefault("notes", []).append("dropped aliased columns: " + ", ".join(exc.columns))
        reduced = Design(
            design.matrix[:, keep], design.response, [design.columns[j] for j in keep], design.term_columns
        )
        return ols_fit(reduced.matrix, reduced.response, reduced.columns), reduced


def _estimate(d: Dataset, tc: CausalTestCase, diag: dict) -> EffectEstimate:
    est = tc.estimator
    if isinstance(est, IVConfig):
        needed = [est.instrument, tc.treatment, tc.outcome]
    else:
        needed = sorted(_variables(est.terms) | {tc.outcome})
    absent = [c for c in needed if c not in d]
    if absent:
        raise _Stop(Verdict.INFEASIBLE, "columns missing from data: " + ", ".join(absent))
    d, dropped = d.complete_rows(needed)
    diag["rows_dropped"] = dropped
    diag["rows_used"] = d.row_count

    if isinstance(est, IVConfig):
        return iv_estimate(d, est.instrument, tc.treatment, tc.outcome)

    level = None
    reference_levels = dict(est.reference_levels)
    if d[tc.treatment].kind == CATEGORICAL:
        levels = d[tc.treatment].levels
        reference = reference_levels.get(tc.treatment, levels[0] if levels else None)
        level = est.treatment_level
        if level is None:
            others = [lv for lv in levels if lv != reference]
            if len(others) != 1:
                raise _Stop(Verdict.INFEASIBLE, f"treatment {tc.treatment} has levels {levels}; name treatment_level")
            level = others[0]
        report = positivity_check(d, tc.treatment, [reference, level])
        diag["positivity"] = report.to_dict()
        if not report.ok:
            raise _Stop(Verdict.INSUFFICIENT_DATA, f"no rows with {tc.treatment} = {report.missing_levels}")
        reference_levels[tc.treatment] = reference
    design = design_matrix(d, tc.outcome, est.terms, reference_levels)
    column = treatment_column(tc.treatment_term, level)
    fit, _ = _fit_ols(design, column, diag)
    return unit_ate(fit, tc.treatment_term, level)


def evaluate(g: CausalDag, d: Dataset, tc: CausalTestCase, strata: Sequence[str] = ()) -> TestOutcome:
    """Identify, estimate and compare; every failure becomes a verdict.

    ``strata`` names columns the data has already been restricted on
    (a group-by key), which count as adjusted for.
    """
    diag: dict = {}
    try:
        for node in (tc.treatment, tc.outcome):
            if node not in g.nodes:
                raise _Stop(Verdict.INFEASIBLE, f"{node} is not a node of the DAG")
        adj = adjustment_set(g, tc.treatment, tc.outcome)
        diag["adjustment_set"] = sorted(adj.adjustment_set)
        diag["required_interactions"] = sorted(list(p) for p in adj.required_interactions)
        diag["identifiable"] = adj.feasible

        keys = set(strata)
        est = tc.estimator
        if isinstance(est, OLSConfig) and est.stratify_by is not None:
            keys.add(est.stratify_by)
        problems = _check_coverage(g, d, tc, adj, keys, diag)
        if problems:
            if not est.allow_biased:
                raise _Stop(Verdict.INFEASIBLE, "; ".join(problems))
            diag["ignored_bias"] = problems
        elif isinstance(est, OLSConfig):
            hidden = sorted(n for n in adj.adjustment_set if n not in d)
            if hidden:
                raise _Stop(Verdict.INFEASIBLE, "adjustment requires unrecorded variables: " + ", ".join(hidden))

        if isinstance(est, OLSConfig) and est.stratify_by is not None:
            report = positivity_check(d, est.stratify_by, [est.stratum])
            diag["positivity"] = report.to_dict()
            if not report.ok:
                raise _Stop(Verdict.INSUFFICIENT_DATA, f"no rows in stratum {est.stratify_by} = {est.stratum}")
            d = stratify(d, est.stratify_by)[est.stratum]

        estimate = _estimate(d, tc, diag)
        passed, why = tc.oracle.check(estimate)
        verdict = Verdict.PASS if passed else Verdict.FAIL
        return TestOutcome(tc.id, verdict, estimate, f"{tc.oracle.kind.value}: {why}", diag)
    except _Stop as stop:
        return TestOutcome(tc.id, stop.verdict, None, stop.rationale, diag)
    except (InsufficientDataError, WeakInstrumentError) as exc:
        return TestOutcome(tc.id, Verdict.INSUFFICIENT_DATA, None, str(exc), diag)
    except (EstimationError, DagError, ValueError, KeyError) as exc:
        return TestOutcome(tc.id, Verdict.INFEASIBLE, None, f"{type(exc).__name__}: {exc}", diag)


# --- comparisons across groups --------------------------------------------

class Overlap(NamedTuple):
    first: str
    second: str
    overlap: bool
    regression: bool


def compare_estimates(estimates: Mapping[str, EffectEstimate], oracle: Oracle) -> tuple[Verdict, list[Overlap], str]:
    """Pairwise interval overlap between groups, in the mapping's order.

    A ``not_positive`` oracle fails only when a later group's interval lies
    entirely above an earlier one's; any other oracle fails on any disjoint pair.
    """
    levels = list(estimates)
    overlaps = []
    for i, a in enumerate(levels):
        for b in levels[i + 1:]:
            ea, eb = estimates[a], estimates[b]
            overlap = not (ea.ci_high < eb.ci_low or eb.ci_high < ea.ci_low)
            overlaps.append(Overlap(a, b, overlap, not overlap and eb.point > ea.point))
    if oracle.kind is OracleKind.NOT_POSITIVE:
        bad = [o for o in overlaps if o.regression]
        why = "; ".join(f"{o.second} exceeds {o.first}" for o in bad) or "no group exceeds an earlier one"
    else:
        bad = [o for o in overlaps if not o.overlap]
        why = "; ".join(f"{o.first} and {o.second} disjoint" for o in bad) or "all intervals overlap"
    return (Verdict.FAIL if bad else Verdict.PASS), overlaps, why


@dataclass(frozen=True)
class GroupComparison:
    outcomes: Mapping[str, TestOutcome]
    overlaps: list[Overlap]
    verdict: Verdict
    rationale: str


def compare_across_groups(g: CausalDag, d: Dataset, tc: CausalTestCase, group_by: str) -> GroupComparison:
    """Evaluate ``tc`` separately in each level of ``group_by`` and compare the intervals."""
    try:
        groups = stratify(d, group_by)
    except (KeyError, ValueError) as exc:
        return GroupComparison({}, [], Verdict.INFEASIBLE, str(exc))
    outcomes = {level: evaluate(g, part, tc, strata=[group_by]) for level, part in groups.items()}
    missing = {k: o for k, o in outcomes.items() if o.estimate is None}
    if missing:
        verdicts = {o.verdict for o in missing.values()}
        verdict = Verdict.INFEASIBLE if Verdict.INFEASIBLE in verdicts else Verdict.INSUFFICIENT_DATA
        why = "; ".join(f"{k}: {o.rationale}" for k, o in missing.items())
        return GroupComparison(outcomes, [], verdict, why)
    if len(outcomes) < 2:
        return GroupComparison(outcomes, [], Verdict.INSUFFICIENT_DATA, f"fewer than two levels of {group_by}")
    verdict, overlaps, why = compare_estimates({k: o.estimate for k, o in outcomes.items()}, tc.oracle)
    return GroupComparison(outcomes, overlaps, verdict, why)


# --- suites ----------------------------------------------------------------

def run_case(g: CausalDag, d: Dataset, tc: CausalTestCase) -> TestOutcome:
    if tc.group_by is None:
        return evaluate(g, d, tc)
    cmp = compare_across_groups(g, d, tc, tc.group_by)
    return TestOutcome(
        tc.id,
        cmp.verdict,
        None,
        f"compare across {tc.group_by}: {cmp.rationale}",
        {"group_by": tc.group_by},
        dict(cmp.outcomes),
        tuple(cmp.overlaps),
    )


def run_suite(g: CausalDag, d: Dataset, suite: Sequence[CausalTestCase], jobs: int = 1) -> list[TestOutcome]:
    """Evaluate every case against the same dataset, returning outcomes in suite order."""
    ids = [tc.id for tc in suite]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValueError("duplicate test ids: " + ", ".join(dupes))
    if jobs > 1 and len(suite) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda tc: run_case(g, d, tc), suite))
    return [run_case(g, d, tc) for tc in suite]


def summarize(outcomes: Sequence[TestOutcome]) -> dict[str, int]:
    counts = {v.value: 0 for v in Verdict}
    for o in outcomes:
        counts[o.verdict.value] += 1
    return counts
