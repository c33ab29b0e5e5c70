import numpy as np
import pytest

from layerfusion.attention import AttnProbMap

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def rand_prob_map(rng: np.random.Generator, heads: int, queries: int, keys: int) -> AttnProbMap:
    """Row-stochastic map: softmax over random logits, float32."""
    logits = rng.normal(size=(heads, queries, keys)) * 2.0
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    probs = (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)
    return AttnProbMap(probs)


@pytest.hookimpl
def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome}")
