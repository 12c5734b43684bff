"""Check results, experiment reports, and tabular emission helpers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

SEEDING_BIAS_NOTE = (
    "systematic-uncertainty: populations are seeded at a finite base level with a "
    "surrogate mean-one law; cross-seed comparisons bound the residual seeding bias "
    "but cannot eliminate it."
)

# Moment estimates whose standard error exceeds this fraction of the estimate
# are reported as MC-unreliable rather than pass/fail.
SE_RELIABILITY_RATIO = 0.10


@dataclass(frozen=True)
class CheckResult:
    name: str
    verdict: str  # 'pass' | 'fail' | 'flagged'
    target: "float | None" = None
    estimate: "float | None" = None
    se: "float | None" = None
    tolerance: str = ""
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "target": self.target,
            "estimate": self.estimate,
            "se": self.se,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def exact_check(name: str, deviation: float, tol: float, detail: str = "") -> CheckResult:
    verdict = "pass" if abs(deviation) <= tol else "fail"
    return CheckResult(
        name,
        verdict,
        target=0.0,
        estimate=deviation,
        tolerance=f"|dev| <= {tol:g}",
        detail=detail,
    )


def se_check(
    name: str,
    target: float,
    estimate: float,
    se: float,
    multiplier: float,
    detail: str = "",
) -> CheckResult:
    """Statistical check: pass within multiplier*SE, flagged when MC-unreliable."""
    within = abs(estimate - target) <= multiplier * se
    unreliable = (
        not math.isfinite(se)
        or estimate == 0
        or se / abs(estimate) > SE_RELIABILITY_RATIO
    )
    if within:
        verdict = "pass"
    elif unreliable:
        verdict = "flagged"
    else:
        verdict = "fail"
    extra = f"z = {abs(estimate - target) / se:.2f}" if se > 0 else "se = 0"
    if unreliable:
        extra += "; SE/estimate above reliability ratio"
    return CheckResult(
        name,
        verdict,
        target=target,
        estimate=estimate,
        se=se,
        tolerance=f"|est - target| <= {multiplier:g}*SE",
        detail=(detail + "; " if detail else "") + extra,
    )


def flagged_check(name: str, estimate: float, se: float, detail: str) -> CheckResult:
    return CheckResult(name, "flagged", estimate=estimate, se=se, detail=detail)


@dataclass
class ExperimentReport:
    name: str
    checks: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    # raw sample arrays for CSV emission; not serialized into the JSON report
    arrays: dict = field(default_factory=dict, repr=False)

    def add(self, check: CheckResult):
        self.checks.append(check)

    @property
    def failed(self) -> list:
        return [c for c in self.checks if c.verdict == "fail"]

    @property
    def flagged(self) -> list:
        return [c for c in self.checks if c.verdict == "flagged"]

    @property
    def all_passed(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "checks": [c.to_dict() for c in self.checks],
            "diagnostics": self.diagnostics,
            "notes": list(self.notes),
            "provenance": self.provenance,
        }

    def summary_lines(self):
        for c in self.checks:
            yield (
                f"[{c.verdict.upper():7s}] {self.name}/{c.name}: "
                f"target={_fmt(c.target)} estimate={_fmt(c.estimate)} "
                f"se={_fmt(c.se)} {c.tolerance} {c.detail}".rstrip()
            )


def _fmt(x) -> str:
    if x is None:
        return "-"
    return f"{x:.6g}"


def format_float(x: float) -> str:
    """CSV float format: '.'-decimal, 17 significant digits."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) else v for v in row]
            )


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
