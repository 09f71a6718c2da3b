"""Shared fixtures and the acceptance-criterion summary printed after the run."""

from __future__ import annotations

import numpy as np
import pytest

CRITERIA = {
    1: "marginal coverage sandwich",
    2: "per-method pipelines",
    3: "RCPS risk over splits",
    4: "set constructors vs brute force",
    5: "conformal quantile vs brute force",
    6: "pinball regressor",
    7: "conditional-coverage diagnostics",
    8: "property suites",
}

_RESULTS: dict[int, list[tuple[bool, str]]] = {}


class Recorder:
    """Records one pass/fail entry per check; a criterion passes if all its checks do."""

    def __call__(self, criterion: int, ok: bool, detail: str) -> None:
        _RESULTS.setdefault(criterion, []).append((bool(ok), detail))
        assert ok, f"criterion {criterion} ({CRITERIA[criterion]}): {detail}"


@pytest.fixture
def criterion() -> Recorder:
    return Recorder()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, name in CRITERIA.items():
        entries = _RESULTS.get(k)
        if not entries:
            tr.write_line(f"[ NOT RUN ] {k}. {name}")
            continue
        ok = all(e[0] for e in entries)
        detail = "; ".join(d for _, d in entries)
        tr.write_line(f"[{'PASS' if ok else 'FAIL':^9}] {k}. {name}: {detail}")
