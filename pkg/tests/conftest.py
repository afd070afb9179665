import numpy as np
import pytest

from sqb.model import LogisticInstance, TabularModel


def random_tabular(rng, T, d, max_outcomes=8, lo=-3.0, hi=3.0, zero_measures=False):
    """Random finite-outcome model with entries in [lo, hi]."""
    feats, meas, labels = [], [], []
    for _ in range(T):
        n = int(rng.integers(1, max_outcomes + 1))
        feats.append(rng.uniform(lo, hi, size=(n, d)))
        h = rng.uniform(0.1, 2.0, size=n)
        if zero_measures and n > 1:
            h[rng.random(n) < 0.2] = 0.0
            if not np.any(h > 0):
                h[0] = 1.0
        labels.append(int(rng.choice(np.flatnonzero(h > 0))))
        meas.append(h)
    return TabularModel(feats, labels, meas)


def random_logistic(rng, T, d, scale=1.0):
    X = rng.standard_normal((T, d))
    theta = rng.standard_normal(d) * scale / np.sqrt(d)
    y = (rng.random(T) < 1.0 / (1.0 + np.exp(-X @ theta))).astype(int)
    return LogisticInstance(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def single():
    """One example x = [1, 0] with label 1."""
    return LogisticInstance(np.array([[1.0, 0.0]]), [1])


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    monkeypatch.setenv("SQB_CACHE_DIR", str(tmp_path_factory.mktemp("sqb-cache")))


# -- acceptance report --------------------------------------------------------

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, title, passed, detail=""):
        ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
        assert passed, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}: {detail}")
