#!/usr/bin/env python3
"""
Certification reports
Collects PASS / WARNING / FAIL checks for a run, captures the run's log lines
and renders the Markdown companion of report.json.
"""

import logging
from datetime import datetime
from typing import Dict, List

STATUS_ICONS = {"PASS": "✅", "WARNING": "⚠️", "FAIL": "❌"}


class CheckTable:
    """Ordered checks; a WARNING never fails the run."""

    def __init__(self):
        self.checks: List[Dict[str, str]] = []

    def add(self, check: str, passed: bool, details: str, diagnostic: bool = False):
        if passed:
            status = "PASS"
        else:
            status = "WARNING" if diagnostic else "FAIL"
        self.checks.append({"check": check, "status": status, "details": details})
        return passed

    @property
    def passed(self) -> bool:
        return all(c["status"] != "FAIL" for c in self.checks)

    @property
    def overall_status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def counts(self) -> Dict[str, int]:
        counts = {"PASS": 0, "WARNING": 0, "FAIL": 0}
        for check in self.checks:
            counts[check["status"]] += 1
        return counts


class LogCapture(logging.Handler):
    """Copies log records emitted during a run into a list for the JSON report."""

    def __init__(self, level=logging.INFO):
        super().__init__(level)
        self.lines: List[str] = []
        self.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))

    def emit(self, record):
        self.lines.append(self.format(record))

    def __enter__(self):
        root = logging.getLogger()
        self._previous_level = root.level
        root.setLevel(min(root.level, self.level))
        root.addHandler(self)
        return self

    def __exit__(self, *exc):
        root = logging.getLogger()
        root.removeHandler(self)
        root.setLevel(self._previous_level)
        return False


def render_markdown(title: str, table: CheckTable, summary: Dict[str, object], log_lines: List[str],
                    timestamp: bool = False) -> str:
    lines = [f"# {title}", ""]
    if timestamp:
        lines += [f"**Generated:** {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", ""]
    lines += [f"**Overall Status:** {table.overall_status}", "", "## Checks", "",
              "| Check | Status | Details |", "|-------|--------|---------|"]
    for check in table.checks:
        lines.append(f"| {check['check']} | {STATUS_ICONS[check['status']]} {check['status']} | {check['details']} |")
    counts = table.counts()
    lines += ["", "## Summary", ""]
    lines += [f"- **{status}:** {count} checks" for status, count in counts.items()]
    for key, value in summary.items():
        lines.append(f"- **{key}:** {value}")
    lines += ["", "## Run Log", "```"]
    lines.extend(log_lines)
    lines.append("```")
    return "\n".join(lines) + "\n"
