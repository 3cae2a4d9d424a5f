"""Report containers for the verification suites.

Every statistical check records its Monte-Carlo error alongside the point
estimate, and every verdict names the bound or target it was tested
against.  Reports serialize to plain JSON.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


@dataclass
class CheckResult:
    """One verified statement: measurement vs bound/target."""

    name: str
    passed: bool | None  # None = inconclusive
    measured: float | None = None
    stderr: float | None = None
    bound: float | None = None
    relation: str = "<="  # "<=", ">=", "two-sided"
    note: str = ""

    @property
    def verdict(self):
        if self.passed is None:
            return "inconclusive"
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {"name": self.name, "verdict": self.verdict,
                "measured": _jsonable(self.measured),
                "stderr": _jsonable(self.stderr),
                "bound": _jsonable(self.bound),
                "relation": self.relation, "note": self.note}


@dataclass
class AnalysisReport:
    """Per-suite verdicts with measured statistics and tested bounds."""

    suite: str
    inputs_digest: str = ""
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, name, passed, measured=None, stderr=None, bound=None,
            relation="<=", note=""):
        self.checks.append(CheckResult(name=name, passed=passed,
                                       measured=measured, stderr=stderr,
                                       bound=bound, relation=relation,
                                       note=note))

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.passed is not None)

    @property
    def verdict(self):
        if not self.checks:
            return "inconclusive"
        if any(c.passed is False for c in self.checks):
            return "fail"
        if all(c.passed is None for c in self.checks):
            return "inconclusive"
        return "pass"

    def to_dict(self):
        return {"suite": self.suite, "verdict": self.verdict,
                "inputs_digest": self.inputs_digest,
                "checks": [c.to_dict() for c in self.checks],
                "notes": list(self.notes)}

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


@dataclass
class QuadratureReport:
    """Cutoff-ladder quadrature with a deterministic divergence verdict."""

    integrand: str
    domain: str
    cutoffs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    classification: str = ""  # converges | diverges-log | diverges-linear | inconclusive
    fitted: float | None = None  # limit (converges) or growth coefficient
    verdict: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"integrand": self.integrand, "domain": self.domain,
                "cutoffs": [float(c) for c in self.cutoffs],
                "values": [float(v) for v in self.values],
                "classification": self.classification,
                "fitted": _jsonable(self.fitted),
                "verdict": self.verdict, "notes": list(self.notes)}


def digest_inputs(**kwargs):
    """Stable short digest of suite inputs for report provenance."""
    blob = json.dumps(kwargs, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
