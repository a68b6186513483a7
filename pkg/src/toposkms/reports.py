"""Deterministic result assembly: per-check entries, JSON/CSV/Markdown.

Every check run by the CLI reduces to a flat list of entries
{check, location, lhs, rhs, residual, verdict}; the report serializers
never touch wall-clock state, so two runs on the same scenario produce
byte-identical files.  Numbers are rendered with 17 significant digits
('.' decimal separator, no locale) so the CSV survives round-trips.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

PASS = "pass"
FAIL = "fail"
INFO = "info"
ERROR = "error"


def fmt17(x) -> str:
    """17-significant-digit rendering of real/complex scalars; '' for None."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, complex):
        if x.imag == 0.0:
            return "%.17g" % x.real
        return "%.17g%+.17gj" % (x.real, x.imag)
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int,)):
        return str(x)
    return "%.17g" % float(x)


@dataclass
class CheckEntry:
    check: str          # suite name, e.g. "external-c1"
    location: str       # where it was evaluated, e.g. "S1 @ Vex, t=0.5"
    lhs: object = None
    rhs: object = None
    residual: float | None = None
    verdict: str = INFO

    @property
    def failed(self) -> bool:
        return self.verdict in (FAIL, ERROR)

    def row(self) -> list:
        return [self.check, self.location, fmt17(self.lhs), fmt17(self.rhs),
                fmt17(self.residual), self.verdict]


@dataclass
class Report:
    scenario: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)

    def add(self, check: str, location: str, lhs=None, rhs=None,
            residual=None, verdict: str = INFO) -> CheckEntry:
        e = CheckEntry(check=check, location=location, lhs=lhs, rhs=rhs,
                       residual=residual, verdict=verdict)
        self.entries.append(e)
        return e

    def add_pass_fail(self, check: str, location: str, residual: float,
                      eps: float, lhs=None, rhs=None) -> CheckEntry:
        verdict = PASS if residual <= eps else FAIL
        return self.add(check, location, lhs=lhs, rhs=rhs,
                        residual=residual, verdict=verdict)

    def add_error(self, check: str, location: str, exc: Exception) -> CheckEntry:
        return self.add(check, f"{location}: {type(exc).__name__}: {exc}",
                        verdict=ERROR)

    @property
    def verdict(self) -> str:
        return FAIL if any(e.failed for e in self.entries) else PASS

    @property
    def exit_code(self) -> int:
        return 0 if self.verdict == PASS else 1

    def counts(self) -> dict:
        out = {PASS: 0, FAIL: 0, INFO: 0, ERROR: 0}
        for e in self.entries:
            out[e.verdict] = out.get(e.verdict, 0) + 1
        return out

    # -- serializers ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "meta": self.meta,
            "entries": [
                {
                    "check": e.check,
                    "location": e.location,
                    "lhs": fmt17(e.lhs),
                    "rhs": fmt17(e.rhs),
                    "residual": fmt17(e.residual),
                    "verdict": e.verdict,
                }
                for e in self.entries
            ],
            "summary": {"verdict": self.verdict, "counts": self.counts()},
        }

    def json_bytes(self) -> bytes:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True,
                          ensure_ascii=True)
        return (text + "\n").encode("ascii")

    def csv_bytes(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "location", "lhs", "rhs", "residual", "verdict"])
        for e in self.entries:
            w.writerow(e.row())
        return buf.getvalue().encode("utf-8")

    def markdown_bytes(self) -> bytes:
        lines = []
        name = self.scenario.get("name", "scenario")
        lines.append(f"# Verification summary: {name}")
        lines.append("")
        for key in sorted(self.meta):
            lines.append(f"- {key}: {self.meta[key]}")
        counts = self.counts()
        lines.append(
            f"- checks: {len(self.entries)} "
            f"(pass {counts[PASS]}, fail {counts[FAIL]}, "
            f"error {counts[ERROR]}, info {counts[INFO]})"
        )
        lines.append(f"- verdict: **{self.verdict.upper()}**")
        lines.append("")
        lines.append("| check | location | lhs | rhs | residual | verdict |")
        lines.append("| --- | --- | --- | --- | --- | --- |")
        for e in self.entries:
            cells = [c.replace("|", "\\|") for c in e.row()]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
        return "\n".join(lines).encode("utf-8")

    def write(self, out_dir) -> dict:
        """Write report.json / report.csv / summary.md; returns the paths."""
        import pathlib

        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out / "report.json",
            "csv": out / "report.csv",
            "md": out / "summary.md",
        }
        paths["json"].write_bytes(self.json_bytes())
        paths["csv"].write_bytes(self.csv_bytes())
        paths["md"].write_bytes(self.markdown_bytes())
        return {k: str(v) for k, v in paths.items()}
