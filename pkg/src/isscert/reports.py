"""Shared report records and their structured-text (JSON) forms."""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    t: float
    value: float
    bound: float


@dataclass(frozen=True)
class DissipationReport:
    """Per-sample audit of a dissipation law along one trajectory."""

    samples: int
    checked: int
    violations: tuple
    worst_margin: float  # min over checked samples of (bound - observed)
    truncated: bool = False
    warning: str = ""

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "checked": self.checked,
            "violations": [[v.t, v.value, v.bound] for v in self.violations],
            "worst_margin": self.worst_margin,
            "truncated": self.truncated,
            "warning": self.warning,
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
