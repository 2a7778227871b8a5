import functools

import numpy as np
import pytest

from morisita import estimation, selection
from morisita.dataset import ButterflyConfig, gen_butterfly, rescale_unit_interval

# Every IDEstimate built during the session is kept so the
# id = E - slope/(m-1) identity can be audited over all of them.
RECORDED_ESTIMATES = []

# acceptance criterion number -> (passed, detail)
ACCEPTANCE = {}


def _recording(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        est = fn(*args, **kwargs)
        RECORDED_ESTIMATES.append(est)
        return est

    return wrapper


_wrapped = _recording(estimation.estimate_from_curve)
estimation.estimate_from_curve = _wrapped
selection.estimate_from_curve = _wrapped


def identity_violations():
    return [
        e for e in RECORDED_ESTIMATES
        if e.id_value != e.dim - e.slope / (e.m_order - 1)
    ]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    terminalreporter.write_line(
        f"IDEstimate identity audited over {len(RECORDED_ESTIMATES)} estimates, "
        f"{len(identity_violations())} violations"
    )


@pytest.fixture(scope="session")
def butterfly_1k():
    return rescale_unit_interval(gen_butterfly(ButterflyConfig(1000, seed=11)))


@pytest.fixture(scope="session")
def butterfly_10k():
    return rescale_unit_interval(gen_butterfly(ButterflyConfig(10_000, seed=3)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
