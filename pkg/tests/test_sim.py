import csv
import io
import math
import os

import numpy as np
import pytest

from elsg.barrier import BarrierConfig
from elsg.config import RunConfig
from elsg.controller import SinusoidReference, computed_torque_nominal
from elsg.dynamics import Planar2Dof
from elsg.errors import ConfigurationError
from elsg.sim import FLAG_Q, FLAG_U, FLAG_V, atomic_write, monitor_safety, run_closed_loop, violation_magnitudes
from elsg.synthesis import SamplingBound

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden_trace.csv")
CFG = BarrierConfig("atan", "cubic", 0.52, 18407.1, 0.01, 7.0)
BOUND = SamplingBound(5.2, 3.28, 3.43, 18.0, 84.56)
REF = SinusoidReference((3.4708, 2.6236), (1.3, 1.3), (0.0, 2.0944))


def nominal(t, q, v):
    return computed_torque_nominal(Planar2Dof(), q, v, t, REF)


def short_run(spec, mode="zcbf-sampled", duration=0.01, substeps=10, **kw):
    x0 = (np.array([0.0, 2.0944]), np.zeros(2))
    return run_closed_loop(Planar2Dof(), spec, mode, 1e-3, duration, substeps, x0, nominal, cfg=CFG,
                           bound=BOUND, **kw)


def test_monitor_boundaries(s1_spec):
    q = s1_spec.q_max.copy()
    assert not monitor_safety(q, np.zeros(2), s1_spec.u_max, s1_spec).any
    f = monitor_safety(q, np.array([1.6, 0.0]), np.zeros(2), s1_spec)
    assert f.v == pytest.approx(0.1) and f.mask == FLAG_V
    f = monitor_safety(q + [0.0, 0.2], np.zeros(2), [-19.0, 0.0], s1_spec)
    assert f.mask == FLAG_Q | FLAG_U and f.q == pytest.approx(0.2) and f.u == pytest.approx(1.0)


def test_violation_magnitudes_batched(s1_spec):
    q = np.tile(s1_spec.q_min, (4, 1)) - np.array([[0.0], [0.1], [0.2], [0.3]])
    viol = violation_magnitudes(q, np.zeros((4, 2)), np.zeros((4, 2)), s1_spec)
    np.testing.assert_allclose(viol[:, 0], [0.0, 0.1, 0.2, 0.3])


def test_zero_duration(s1_spec):
    tr = short_run(s1_spec, duration=0.0)
    assert len(tr.t) == 1
    np.testing.assert_array_equal(tr.q[0], [0.0, 2.0944])
    np.testing.assert_array_equal(tr.v[0], [0.0, 0.0])


def test_deterministic(s1_spec):
    a = short_run(s1_spec, duration=0.05).csv_text()
    b = short_run(s1_spec, duration=0.05).csv_text()
    assert a == b


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_csv_golden(s1_spec):
    rows = _rows(short_run(s1_spec).csv_text())
    with open(GOLDEN) as fh:
        gold = _rows(fh.read())
    assert rows[0] == gold[0]
    assert rows[0] == ["t", "q1", "q2", "v1", "v2", "u1", "u2", "bup1", "bup2", "blow1", "blow2", "region1",
                       "region2", "qp_status", "flags"]
    assert len(rows) == len(gold)
    for r, g in zip(rows[1:], gold[1:]):
        np.testing.assert_allclose([float(x) for x in r[:11]], [float(x) for x in g[:11]], rtol=1e-12, atol=1e-12)
        assert r[11:] == g[11:]


def test_trace_states_are_in_H_and_flags_clear(s1_spec):
    tr = short_run(s1_spec, duration=0.5)
    assert not tr.failed and tr.substep_exits == 0
    assert np.all(tr.flags == 0)
    assert set(tr.qp_status) == {"optimal"}


def test_nominal_run_is_never_failed(s1_spec):
    tr = short_run(s1_spec, mode="nominal-only", duration=3.0)
    assert tr.worst().max() > 0
    assert not tr.failed


def test_continuous_mode_updates_each_substep(s1_spec):
    tr = short_run(s1_spec, mode="zcbf-continuous", duration=0.2)
    assert tr.meta["margin"] == 0.0 and not tr.failed


def test_rk4_convergence_order():
    arm = Planar2Dof()
    spec_free = RunConfig.from_dict({"scenario": "s1-sampled"}).spec()
    x0 = (np.array([0.2, 2.0]), np.array([0.3, -0.2]))
    u = lambda t, q, v: np.array([1.0, -0.5])

    def end(substeps):
        tr = run_closed_loop(arm, spec_free, "nominal-only", 0.1, 1.0, substeps, x0, u)
        return np.concatenate([tr.q[-1], tr.v[-1]])

    ref = end(400)
    e1, e2 = np.abs(end(2) - ref).max(), np.abs(end(4) - ref).max()
    assert math.log2(e1 / e2) >= 3.5


def test_perturbation_hook(s1_spec):
    x0 = (np.array([0.0, 2.0944]), np.zeros(2))
    u0 = lambda t, q, v: np.zeros(2)
    push = lambda t, q, v: np.array([1.0, 0.0])
    tr = run_closed_loop(Planar2Dof(), s1_spec, "nominal-only", 0.01, 0.1, 4, x0, u0, perturbation=push)
    # unit push for 0.1 s, up to Coriolis and damping coupling
    assert tr.v[-1, 0] == pytest.approx(0.1, rel=1e-3)
    rest = run_closed_loop(Planar2Dof(), s1_spec, "nominal-only", 0.01, 0.1, 4, x0, u0)
    assert np.all(rest.v == 0.0)


def test_rejects_bad_inputs(s1_spec):
    with pytest.raises(ConfigurationError):
        short_run(s1_spec, mode="zcbf")
    with pytest.raises(ConfigurationError):
        run_closed_loop(Planar2Dof(), s1_spec, "zcbf-sampled", 1e-3, 1.0, 1, (np.zeros(2), np.zeros(2)), nominal,
                        cfg=CFG)
    with pytest.raises(ConfigurationError, match="inside"):
        run_closed_loop(Planar2Dof(), s1_spec, "zcbf-sampled", 1e-3, 1.0, 1,
                        (np.array([0.0, 0.5]), np.zeros(2)), nominal, cfg=CFG, bound=BOUND)


def test_atomic_write(tmp_path):
    p = tmp_path / "sub" / "x.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [f.name for f in p.parent.iterdir()] == ["x.txt"]
