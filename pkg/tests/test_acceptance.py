"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
with the measured values.  Run directly for a plain report:
``python tests/test_acceptance.py``."""

import pytest

from eoslab.harness.checks import CHECKS, SLOW, format_result, run_check


def _params():
    for cid in sorted(CHECKS):
        marks = [pytest.mark.slow] if cid in SLOW else []
        yield pytest.param(cid, marks=marks, id=f"criterion_{cid:02d}")


@pytest.mark.parametrize("cid", list(_params()))
def test_criterion(cid, capsys):
    r = run_check(cid)
    with capsys.disabled():
        print("\n" + format_result(r))
    assert r.passed, format_result(r)
    if r.budget is not None:
        assert r.seconds <= r.budget, f"criterion {cid} took {r.seconds:.1f}s, budget {r.budget:.0f}s"


if __name__ == "__main__":
    from eoslab.harness.checks import run_all

    run_all()
