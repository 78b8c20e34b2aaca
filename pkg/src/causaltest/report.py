"""Run reports: JSON for machines, aligned text for people."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

from . import __version__
from .testing import TestOutcome, Verdict, summarize

SCHEMA_VERSION = 1


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def exit_code(outcomes: Sequence[TestOutcome]) -> int:
    """0 all pass, 1 any failure, 3 indeterminate results without failures."""
    verdicts = {o.verdict for o in outcomes}
    if Verdict.FAIL in verdicts:
        return 1
    if verdicts & {Verdict.INFEASIBLE, Verdict.INSUFFICIENT_DATA}:
        return 3
    return 0


@dataclass(frozen=True)
class Report:
    outcomes: tuple[TestOutcome, ...]
    inputs: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    wall_time: float = 0.0
    tool_version: str = __version__

    @property
    def summary(self) -> dict[str, int]:
        return summarize(self.outcomes)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool": "causaltest",
            "tool_version": self.tool_version,
            "inputs": {k: dict(v) for k, v in sorted(self.inputs.items())},
            "summary": self.summary,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "wall_time_seconds": self.wall_time,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "Report":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        report = cls(
            tuple(TestOutcome.from_dict(o) for o in data["outcomes"]),
            {k: dict(v) for k, v in data["inputs"].items()},
            float(data["wall_time_seconds"]),
            data["tool_version"],
        )
        if report.summary != data["summary"]:
            raise ValueError("report summary disagrees with its outcomes")
        return report

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def json_schema() -> dict:
    return json.loads((resources.files("causaltest") / "fixtures" / "report.schema.json").read_text("utf-8"))


def format_outcome(o: TestOutcome, indent: str = "", width: int = 28) -> list[str]:
    est = "-" if o.estimate is None else str(o.estimate)
    lines = [f"{indent}{o.verdict.value:<17} {o.id:<{width}} {est}", f"{indent}    {o.rationale}"]
    for level, sub in (o.groups or {}).items():
        sub_est = "-" if sub.estimate is None else str(sub.estimate)
        lines.append(f"{indent}    [{level}] {sub_est}")
    return lines


def format_text(report: Report) -> str:
    lines = []
    width = max([28] + [len(o.id) for o in report.outcomes])
    for o in report.outcomes:
        lines.extend(format_outcome(o, width=width))
    s = report.summary
    total = len(report.outcomes)
    lines.append(
        f"{total} tests: {s['PASS']} passed, {s['FAIL']} failed, "
        f"{s['INSUFFICIENT_DATA']} insufficient data, {s['INFEASIBLE']} infeasible"
    )
    return "\n".join(lines) + "\n"
