import math

import numpy as np
import pytest
import yaml

from elsg.config import SCENARIOS, RunConfig
from elsg.dynamics import Planar2Dof, TransformedSystem
from elsg.errors import ConfigurationError


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_roundtrip(name):
    rc = RunConfig.from_dict({"scenario": name})
    again = RunConfig.from_dict(yaml.safe_load(rc.dump()))
    assert again.to_dict() == rc.to_dict()


def test_s1_values():
    for name in ("s1-continuous", "s1-sampled"):
        spec = RunConfig.from_dict({"scenario": name}).spec()
        np.testing.assert_allclose(spec.u_max, [18, 10])
        np.testing.assert_allclose(spec.q_min, [-math.pi / 2, math.pi / 2])
        np.testing.assert_allclose(spec.q_max, [math.pi / 2, 5 * math.pi / 6])
        np.testing.assert_allclose(spec.v_max, [1.5, 1.5])
    rc = RunConfig.from_dict({"scenario": "s1-sampled"})
    assert rc["simulation"]["T"] == 0.001 and rc["simulation"]["mode"] == "zcbf-sampled"
    assert isinstance(rc.model(), Planar2Dof)


def test_s2_values():
    rc = RunConfig.from_dict({"scenario": "s2-nonlinear"})
    spec = rc.spec()
    np.testing.assert_allclose(spec.q_min, [8, 1.7])
    np.testing.assert_allclose(spec.q_max, [12, 2.5])
    model = rc.model()
    assert isinstance(model, TransformedSystem)
    np.testing.assert_allclose(model.cmap.r2, [0.1, 1.0])


def test_overrides_merge():
    rc = RunConfig.from_dict({"scenario": "s1-sampled", "simulation": {"duration": 2.0}})
    assert rc["simulation"]["duration"] == 2.0 and rc["simulation"]["T"] == 0.001


@pytest.mark.parametrize("data,match", [
    ({"scenario": "s9"}, "unknown scenario"),
    ({"scenario": "s1-sampled", "barier": {}}, "unknown top-level"),
    ({"scenario": "s1-sampled", "barrier": {"alpa": "atan"}}, "alpa"),
    ({"constraints": {"q_min": [0.0]}}, "missing"),
    ({"scenario": "s1-sampled", "simulation": {"mode": "fast"}}, "mode"),
    ({"scenario": "s1-sampled", "simulation": {"T": 0}}, "T > 0"),
    ({"scenario": "s1-sampled", "barrier": {"beta": "sigmoid"}}, "sigmoid"),
    ({"scenario": "s1-sampled", "barrier": {"eta0": -1}}, "eta0"),
    ([1, 2], "mapping"),
])
def test_rejects(data, match):
    with pytest.raises(ConfigurationError, match=match):
        RunConfig.from_dict(data)


def test_yaml_error_has_location(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("scenario: s1-sampled\nbarrier:\n  alpha: [atan\n")
    with pytest.raises(ConfigurationError, match=r"line \d+, column \d+"):
        RunConfig.load(p)


def test_missing_file():
    with pytest.raises(ConfigurationError, match="cannot read"):
        RunConfig.load("/nonexistent/cfg.yaml")


def test_params_sources(tmp_path):
    rc = RunConfig.from_dict({"scenario": "s1-sampled",
                              "params": {"gamma": 0.5, "nu": 10.0, "delta": 0.01, "eta_bar": 1.0}})
    assert rc.barrier_params().gamma == 0.5
    rep = tmp_path / "r.yaml"
    rep.write_text(yaml.safe_dump({"params": {"alpha": "atan", "beta": "cubic", "gamma": 0.4, "nu": 9.0,
                                              "delta": 0.01, "eta_bar": 2.0}}))
    rc = RunConfig.from_dict({"scenario": "s1-sampled", "output": {"report": "r.yaml"}})
    assert rc.barrier_params(str(tmp_path)).nu == 9.0
    assert RunConfig.from_dict({"scenario": "s1-sampled", "output": {"report": "none.yaml"}}).barrier_params(
        str(tmp_path)) is None


def test_x0_defaults_to_reference():
    rc = RunConfig.from_dict({"scenario": "s1-sampled", "simulation": {"q0": None}})
    q0, v0 = rc.x0()
    np.testing.assert_allclose(q0, [0.0, 2.0944])
    np.testing.assert_array_equal(v0, [0.0, 0.0])
