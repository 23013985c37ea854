"""Violation lists returned by the non-raising validators.

Validators (dataset, fold, plan) report problems as items instead of
raising, so callers can surface every issue at once. An empty report
means the checked object conforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    step_index: int | None = None  # set for per-step plan violations

    def __str__(self) -> str:
        if self.step_index is not None:
            return f"[{self.code}] step {self.step_index}: {self.message}"
        return f"[{self.code}] {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, message: str, step_index: int | None = None) -> None:
        self.violations.append(Violation(code, message, step_index))

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def summary(self) -> str:
        if self.ok:
            return "clean"
        return "\n".join(str(v) for v in self.violations)
