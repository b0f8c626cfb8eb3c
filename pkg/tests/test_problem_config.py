import numpy as np
import pytest
from numpy.testing import assert_allclose

from crobstacle.config import ConfigError, RunConfig
from crobstacle.mesh import build_structured_triangulation
from crobstacle.problem import (FIELD_PRESETS, REACTION_PRESETS, TENSOR_PRESETS, Reaction,
                                clamped_monod_reactions, linear_reactions, parse_preset,
                                smooth_isotropic)

GOOD = """
[mesh]
n = 4
levels = 3
[time]
T = 0.5
steps = 8
[problem]
reactions = linear:1,1,1,1
obstacle = const:0.5
a_ini = sine:0.25
b_ini = bump:1
"""


def test_parse_presets():
    F, G = parse_preset("linear:2,1,0,3", REACTION_PRESETS, "reactions")
    assert_allclose(F(np.array([1.0]), np.array([2.0])), [3.0])
    assert_allclose(G(np.array([1.0]), np.array([2.0])), [-6.0])
    assert parse_preset("smooth:2", TENSOR_PRESETS, "tensor").d2 == 3.0
    assert_allclose(parse_preset("const:0.1", FIELD_PRESETS, "field")(0.3, 0.3), 0.1)
    with pytest.raises(ValueError, match="unknown"):
        parse_preset("cubic:1", REACTION_PRESETS, "reactions")
    with pytest.raises(ValueError, match="parameter"):
        parse_preset("linear:1,2", REACTION_PRESETS, "reactions")


@pytest.mark.parametrize("pair", [linear_reactions(10, 1, 0, 1), linear_reactions(1, -2, 3, 0.5),
                                  clamped_monod_reactions(1, 1, 1, 0.2, 0.1, 1),
                                  clamped_monod_reactions(2, 0.5, 0.3, 0, 1, 2)])
def test_declared_lipschitz_dominates_sampled(pair):
    rng = np.random.default_rng(0)
    for r in pair:
        p, q = rng.uniform(-5, 5, size=(2, 20000, 2))
        est = np.abs(r(p[:, 0], p[:, 1]) - r(q[:, 0], q[:, 1])) / np.linalg.norm(p - q, axis=1)
        assert est.max() <= r.lipschitz * (1 + 1e-12)


def test_smooth_tensor_bounds():
    t = smooth_isotropic(2.0)
    pts = np.random.default_rng(1).uniform(0, 1, size=(500, 2))
    t.check(pts)


def test_spec_validation_catches_lying_lipschitz():
    cfg = RunConfig.from_string(GOOD)
    spec = cfg.problem()
    object.__setattr__(spec, "reaction_f", Reaction(lambda a, b: 5 * a, 1.0, "liar"))
    with pytest.raises(ValueError, match="Lipschitz"):
        spec.validate()


def test_spec_validation_catches_initial_above_obstacle():
    cfg = RunConfig.from_string(GOOD.replace("sine:0.25", "sine:1"))
    with pytest.raises(ValueError, match="obstacle"):
        cfg.problem().validate(build_structured_triangulation(4))


def test_config_roundtrip():
    cfg = RunConfig.from_string(GOOD, source="good.ini")
    assert cfg.n == 4 and cfg.steps == 8 and cfg.T == 0.5
    res = cfg.resolved()
    assert res["reactions"] == "linear:1,1,1,1" and res["steps"] == 8
    assert cfg.problem().M == pytest.approx(np.sqrt(2))


def test_config_dt_key():
    cfg = RunConfig.from_string(GOOD.replace("steps = 8", "dt = 0.0625"))
    assert cfg.base_steps() == 8
    with pytest.raises(ConfigError, match="divide"):
        RunConfig.from_string(GOOD.replace("steps = 8", "dt = 0.07"))


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"x.ini:7: unknown key 'stepz'"):
        RunConfig.from_string(GOOD.replace("steps = 8", "stepz = 8"), source="x.ini")


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        RunConfig.from_string(GOOD + "\n[extra]\na = 1\n")


def test_bad_values():
    with pytest.raises(ConfigError, match="bad value"):
        RunConfig.from_string(GOOD.replace("n = 4", "n = four"))
    with pytest.raises(ConfigError, match="tolerance"):
        RunConfig.from_string(GOOD + "[solver]\npicard_tol = 0\n")
    with pytest.raises(ConfigError, match="preset"):
        RunConfig.from_string(GOOD.replace("bump:1", "wave:1"))


def test_time_step_restriction_message():
    text = GOOD.replace("linear:1,1,1,1", "linear:10,1,0,1")
    with pytest.raises(ConfigError, match=r"energy-estimate restriction dt < 1/\(2M\)"):
        RunConfig.from_string(text)
