import numpy as np
import pytest

from napping_lab import baseline as B

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        ok, detail = verdicts[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def verdict(pytestconfig):
    """Record a criterion outcome for the summary and fail the test if it missed."""
    def record(n, ok, detail):
        pytestconfig.stash[_VERDICTS][n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"
    return record


@pytest.fixture(scope="session")
def policies():
    """Default-config baselines for every domain, trained once per session."""
    out = {}
    for domain in ("cartpole", "mountaincar", "crossroad"):
        try:
            out[domain] = B.train(domain)
        except B.CompetenceError as exc:
            out[domain] = exc.policy
    return out


@pytest.fixture(scope="session")
def cartpole_policy(policies):
    return policies["cartpole"]


@pytest.fixture
def rng():
    return np.random.default_rng(7)
