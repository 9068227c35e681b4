import os
import sys

import numpy as np
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from vdrating.model import ParamSet  # noqa: E402

FULL = bool(os.environ.get("VDRATING_FULL"))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("criterion", report.nodeid.split("::")[-1])
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, "SKIP")
        _ACCEPTANCE[report.nodeid] = (verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for verdict, detail in sorted(_ACCEPTANCE.values(), key=lambda v: v[1]):
        terminalreporter.write_line(f"{verdict}  {detail}")


@st.composite
def thetas(draw, n_min=1, n_max=5, m_min=2, m_max=8, rep_sd_zero=False, crit_sd_zero=False):
    """Valid parameter sets with sorted, separated means and bounded SDs."""
    n = draw(st.integers(n_min, n_max))
    m = draw(st.integers(m_min, m_max))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    rep = np.sort(rng.normal(0, 1.5, n)) + 0.05 * np.arange(n)
    crit = np.sort(rng.normal(0, 1.5, m - 1)) + 0.05 * np.arange(m - 1)
    rs = np.zeros(n) if rep_sd_zero else rng.uniform(0.25, 1.5, n)
    cs = np.zeros(m - 1) if crit_sd_zero else rng.uniform(0.2, 1.5, m - 1)
    p = rng.dirichlet(np.ones(3))
    p[2] = 1.0 - p[0] - p[1]
    return ParamSet(rep, rs, crit, cs, p)
