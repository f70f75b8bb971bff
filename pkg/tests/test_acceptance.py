"""Every acceptance criterion at its stated tolerance, one test each.

Each test prints a single PASS/FAIL line; the same lines are repeated in the
terminal summary so they show up without ``-s``.  The full run takes about
40 minutes on one core, dominated by the Lyapunov ensembles of criterion 8.
"""

import pytest

from dbgtorus import acceptance

LINES: list[str] = []


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    res = acceptance.CRITERIA[number]()
    line = res.line() + (f"  [{res.note}]" if res.note else "")
    LINES.append(line)
    print(line)
    assert res.passed, line
