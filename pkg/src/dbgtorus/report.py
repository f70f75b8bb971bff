"""Pass/fail certificate containers."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Check:
    passed: bool
    residual: float = 0.0
    detail: str = ""


@dataclass
class CertificateReport:
    """Named checks; failures are recorded, never raised."""

    subject: str
    checks: dict[str, Check] = field(default_factory=dict)

    def add(self, name: str, passed: bool, residual: float = 0.0, detail: str = "") -> None:
        self.checks[name] = Check(bool(passed), float(residual), detail)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def __getitem__(self, name: str) -> Check:
        return self.checks[name]

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "passed": self.passed,
            "checks": {
                k: {"passed": c.passed, "residual": c.residual, "detail": c.detail}
                for k, c in self.checks.items()
            },
        }

    def summary(self) -> str:
        lines = [f"{self.subject}: {'PASS' if self.passed else 'FAIL'}"]
        for k, c in self.checks.items():
            lines.append(f"  [{'ok' if c.passed else 'XX'}] {k}: residual={c.residual:.3e} {c.detail}")
        return "\n".join(lines)
