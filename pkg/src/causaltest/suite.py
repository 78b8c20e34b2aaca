"""Test-suite documents (YAML; JSON is accepted as a subset).

Example::

    version: 1
    dag: carla.dot            # paths are relative to the suite file
    data: runs.csv
    schema: {Infraction: categorical}
    tests:
      - id: penalty-red-light
        treatment: CompletionScore
        outcome: DrivingScore
        oracle: {kind: exact, value: 0.7, tolerance: 0.05}
        estimator:
          type: ols
          terms: ["1", CompletionScore, CompletionScore*OutsideLane]
          stratify_by: Infraction
          stratum: red_light
      - id: version-slowdown
        treatment: SimulationTime
        outcome: SystemTime
        oracle: {kind: not_positive}
        estimator: {type: iv, instrument: RouteLength}
        group_by: CARLAversion

Terms: ``1`` is the intercept, ``a*b`` an interaction, ``x^2`` a power,
anything else a linear term.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping

import yaml

from .estimation import parse_term
from .testing import CausalTestCase, IVConfig, OLSConfig, Oracle

SUITE_VERSION = 1


class SuiteError(ValueError):
    pass


@dataclass(frozen=True)
class Suite:
    dag: str
    data: str
    tests: tuple[CausalTestCase, ...]
    schema: Mapping[str, str] = field(default_factory=dict)
    base_dir: str = "."

    def path(self, name: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, name))


def estimator_from_dict(data: Mapping):
    kind = data.get("type", "ols")
    if kind == "iv":
        if "instrument" not in data:
            raise SuiteError("iv estimator needs an instrument")
        return IVConfig(str(data["instrument"]), bool(data.get("allow_biased", False)))
    if kind != "ols":
        raise SuiteError(f"unknown estimator type {kind!r}")
    terms = data.get("terms")
    if not terms:
        raise SuiteError("ols estimator needs terms")
    return OLSConfig(
        terms=tuple(parse_term(str(t)) for t in terms),
        stratify_by=data.get("stratify_by"),
        stratum=None if data.get("stratum") is None else str(data["stratum"]),
        treatment_level=data.get("treatment_level"),
        reference_levels=dict(data.get("reference_levels") or {}),
        allow_biased=bool(data.get("allow_biased", False)),
    )


def estimator_to_dict(est) -> dict:
    if isinstance(est, IVConfig):
        out = {"type": "iv", "instrument": est.instrument}
    else:
        out = {"type": "ols", "terms": [str(t) for t in est.terms]}
        if est.stratify_by is not None:
            out.update(stratify_by=est.stratify_by, stratum=est.stratum)
        if est.treatment_level is not None:
            out["treatment_level"] = est.treatment_level
        if est.reference_levels:
            out["reference_levels"] = dict(est.reference_levels)
    if est.allow_biased:
        out["allow_biased"] = True
    return out


def case_from_dict(data: Mapping) -> CausalTestCase:
    try:
        return CausalTestCase(
            id=str(data["id"]),
            treatment=str(data["treatment"]),
            outcome=str(data["outcome"]),
            oracle=Oracle.from_dict(data["oracle"]),
            estimator=estimator_from_dict(data["estimator"]),
            group_by=data.get("group_by"),
        )
    except KeyError as exc:
        raise SuiteError(f"test case {data.get('id', '?')} is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise SuiteError(str(exc)) from None


def case_to_dict(tc: CausalTestCase) -> dict:
    out = {
        "id": tc.id,
        "treatment": tc.treatment,
        "outcome": tc.outcome,
        "oracle": tc.oracle.to_dict(),
        "estimator": estimator_to_dict(tc.estimator),
    }
    if tc.group_by is not None:
        out["group_by"] = tc.group_by
    return out


def load_suite(text: str, base_dir: str = ".") -> Suite:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SuiteError(f"malformed suite document: {exc}") from None
    if not isinstance(doc, Mapping):
        raise SuiteError("suite document must be a mapping")
    version = doc.get("version", SUITE_VERSION)
    if version != SUITE_VERSION:
        raise SuiteError(f"unsupported suite version {version!r}")
    for key in ("dag", "data"):
        if key not in doc:
            raise SuiteError(f"suite is missing {key!r}")
    tests = tuple(case_from_dict(t) for t in doc.get("tests") or ())
    ids = [t.id for t in tests]
    if len(set(ids)) != len(ids):
        raise SuiteError("duplicate test ids")
    return Suite(str(doc["dag"]), str(doc["data"]), tests, dict(doc.get("schema") or {}), base_dir)


def read_suite(path) -> Suite:
    with open(path, encoding="utf-8") as fh:
        return load_suite(fh.read(), os.path.dirname(os.path.abspath(path)))


def dump_suite(suite: Suite) -> str:
    doc = {"version": SUITE_VERSION, "dag": suite.dag, "data": suite.data}
    if suite.schema:
        doc["schema"] = dict(suite.schema)
    doc["tests"] = [case_to_dict(t) for t in suite.tests]
    return yaml.safe_dump(doc, sort_keys=False)
