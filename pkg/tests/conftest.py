import numpy as np
import pytest

from opembed.featurize import build_schema
from opembed.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def corpus60():
    return generate(SynthConfig(n_queries=60, seed=3))


@pytest.fixture(scope="session")
def schema60(corpus60):
    return build_schema(corpus60)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One verdict line per acceptance criterion at the end of the run."""
    verdicts: dict[str, str] = {}
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            word = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
            if verdicts.get(name) != "FAIL":
                verdicts[name] = word
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(verdicts):
        number = int(name[6:8])
        label = name.split("_", 2)[2].replace("_", " ")
        terminalreporter.write_line(f"criterion {number:2d}: {label:<48} {verdicts[name]}")
