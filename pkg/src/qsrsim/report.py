"""Named residual checks collected into JSON-serializable reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tol: float
    # "le": residual must not exceed tol; "gt": residual must exceed tol
    # (negative controls that are supposed to fail an identity)
    mode: str = "le"
    note: str = ""

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.residual):
            return False
        if self.mode == "gt":
            return self.residual > self.tol
        return self.residual <= self.tol

    def to_dict(self) -> dict[str, Any]:
        out = {
            "name": self.name,
            "residual": self.residual,
            "tol": self.tol,
            "mode": self.mode,
            "pass": self.passed,
        }
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class Report:
    title: str
    checks: list[Check] = field(default_factory=list)
    info: dict[str, Any] = field(default_factory=dict)

    def add(self, name: str, residual: float, tol: float, mode: str = "le", note: str = "") -> Check:
        c = Check(name, float(residual), float(tol), mode, note)
        self.checks.append(c)
        return c

    def extend(self, other: "Report", prefix: str = "") -> None:
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.residual, c.tol, c.mode, c.note))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "pass": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            **({"info": self.info} if self.info else {}),
        }
