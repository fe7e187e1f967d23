import math

import numpy as np
import pytest

from elsg.barrier import BarrierConfig, ConstraintSpec
from elsg.config import RunConfig
from elsg.dynamics import Planar2Dof
from elsg.runner import synthesize

S1_SPEC = ConstraintSpec([-math.pi / 2, math.pi / 2], [math.pi / 2, 5 * math.pi / 6], [1.5, 1.5], [18.0, 10.0])


@pytest.fixture
def unit_box():
    """One joint on [-1, 1] with atan alpha, gamma 1 and delta 0.2."""
    spec = ConstraintSpec([-1.0], [1.0], [10.0], [10.0])
    cfg = BarrierConfig("atan", "cubic", 1.0, 100.0, 0.2, 0.0)
    return spec, cfg


@pytest.fixture(scope="session")
def arm():
    return Planar2Dof()


@pytest.fixture(scope="session")
def s1_spec():
    return S1_SPEC


@pytest.fixture(scope="session")
def s1_continuous():
    rc = RunConfig.from_dict({"scenario": "s1-continuous"})
    rep, extra = synthesize(rc)
    return rc, rep, extra


@pytest.fixture(scope="session")
def s1_sampled():
    rc = RunConfig.from_dict({"scenario": "s1-sampled"})
    rep, extra = synthesize(rc)
    return rc, rep, extra


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
