import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from helpers import small_multiscale  # noqa: E402


@pytest.fixture(scope="session")
def small_leaf():
    """(SyntheticLeaf, MultiScaleField, PipelineConfig) for the reduced fixture."""
    return small_multiscale()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(results):
        ok, title, facts = results[n]
        tr.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}; " + "; ".join(facts))
