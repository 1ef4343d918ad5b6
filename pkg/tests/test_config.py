"""Config schema: defaults, aggregated violations, YAML loading."""

from __future__ import annotations

import pytest

from strategicmdp import ParseError, ValidationError
from strategicmdp.config import config_from_dict, load_config


def minimal(**env_extra):
    return {"environment": {"generator": "recsys-small", **env_extra}}


def test_minimal_config_fills_defaults():
    cfg = config_from_dict(minimal())
    assert cfg.generator == "recsys-small"
    assert cfg.generator_seed == 0
    assert cfg.generator_params == {}
    assert cfg.per_step_cap == 8
    assert cfg.joint_cap == 1_000_000
    assert cfg.episodes == 100
    assert cfg.delta == 0.1
    assert cfg.beta_scale == 1.0
    assert cfg.optimism == "exact"
    assert cfg.seeds == [0]
    assert cfg.evaluation_cadence == 50
    assert cfg.recompute_every == 1
    assert cfg.strict_realizability is False
    assert cfg.selector_cap == 1_000_000
    assert cfg.diagnostics.regret is True
    assert cfg.diagnostics.ill_posedness is False
    assert cfg.diagnostics.policy_budget == 4096
    assert cfg.output.root == "runs"
    assert cfg.output.label is None
    assert cfg.workers == 1
    assert cfg.raw == minimal()


def test_full_config_round_trips():
    data = {
        "environment": {"generator": "dyn-1d", "seed": 5, "params": {"noiseless": True}, "mode": "dynamical"},
        "classes": {"per_step_cap": 12, "joint_cap": 500},
        "run": {
            "episodes": 250,
            "delta": 0.05,
            "beta_scale": 0.1,
            "optimism": "pointwise",
            "seeds": [3, 4, 5],
            "evaluation_cadence": 10,
            "recompute_every": 25,
            "strict_realizability": True,
            "selector_cap": 4000,
        },
        "diagnostics": {"ill_posedness": True, "transfer": True, "policy_budget": 64},
        "output": {"root": "out", "label": "trial"},
        "workers": 2,
    }
    cfg = config_from_dict(data)
    assert cfg.generator == "dyn-1d"
    assert cfg.generator_params == {"noiseless": True}
    assert cfg.episodes == 250
    assert cfg.optimism == "pointwise"
    assert cfg.seeds == [3, 4, 5]
    assert cfg.recompute_every == 25
    assert cfg.strict_realizability is True
    assert cfg.diagnostics.transfer is True
    assert cfg.output.label == "trial"
    assert cfg.workers == 2


def violations_of(data):
    with pytest.raises(ValidationError) as err:
        config_from_dict(data)
    return str(err.value)


def test_all_violations_reported_at_once():
    data = {
        "environment": {"generator": "nope", "bogus": 1},
        "run": {"episodes": 0, "delta": 1.5, "seeds": [1, 1]},
        "mystery": {},
    }
    msg = violations_of(data)
    assert "invalid config (6 issue(s))" in msg
    assert "environment.generator" in msg
    assert "environment.bogus: unknown key" in msg
    assert "run.episodes" in msg
    assert "run.delta" in msg
    assert "run.seeds: duplicate seeds [1]" in msg
    assert "mystery: unknown section" in msg or "mystery" in msg


def test_missing_generator_is_required():
    msg = violations_of({"environment": {}})
    assert "environment.generator: required" in msg


def test_delta_bounds():
    for bad in (0, 1, -0.1, 2, "x", True):
        msg = violations_of({**minimal(), "run": {"delta": bad}})
        assert "run.delta" in msg
    config_from_dict({**minimal(), "run": {"delta": 0.5}})


def test_episodes_must_be_positive_int():
    for bad in (0, -3, 1.5, "many", True):
        msg = violations_of({**minimal(), "run": {"episodes": bad}})
        assert "run.episodes" in msg


def test_beta_scale_positive():
    msg = violations_of({**minimal(), "run": {"beta_scale": 0.0}})
    assert "run.beta_scale" in msg


def test_optimism_enum():
    msg = violations_of({**minimal(), "run": {"optimism": "greedy"}})
    assert "run.optimism" in msg


def test_seeds_shape_errors():
    for bad in ([], [1.5], "0", [True]):
        msg = violations_of({**minimal(), "run": {"seeds": bad}})
        assert "run.seeds" in msg


def test_mode_mismatch_rejected():
    msg = violations_of(minimal(mode="dynamical"))
    assert "conflicts with scenario" in msg
    config_from_dict(minimal(mode="general"))
    cfg = config_from_dict({"environment": {"generator": "dyn-1d", "mode": "dynamical"}})
    assert cfg.generator == "dyn-1d"


def test_bool_fields_reject_nonbool():
    msg = violations_of({**minimal(), "run": {"strict_realizability": 1}})
    assert "run.strict_realizability" in msg
    msg = violations_of({**minimal(), "diagnostics": {"regret": "yes"}})
    assert "diagnostics.regret" in msg


def test_section_must_be_mapping_but_null_is_empty():
    msg = violations_of({**minimal(), "run": [1, 2]})
    assert "run: must be a mapping" in msg
    cfg = config_from_dict({**minimal(), "run": None})
    assert cfg.episodes == 100


def test_workers_positive():
    msg = violations_of({**minimal(), "workers": 0})
    assert "workers" in msg


def test_load_config_reads_yaml(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(
        "environment:\n  generator: contract-small\nrun:\n  episodes: 7\n  seeds: [2]\n"
    )
    cfg = load_config(p)
    assert cfg.generator == "contract-small"
    assert cfg.episodes == 7
    assert cfg.seeds == [2]


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ParseError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


def test_load_config_bad_yaml(tmp_path):
    p = tmp_path / "broken.yaml"
    p.write_text("environment: [unclosed\n")
    with pytest.raises(ParseError, match="cannot parse"):
        load_config(p)


def test_load_config_non_mapping(tmp_path):
    p = tmp_path / "list.yaml"
    p.write_text("- a\n- b\n")
    with pytest.raises(ParseError, match="mapping at the top level"):
        load_config(p)


def test_load_config_empty_file_means_empty_mapping(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    with pytest.raises(ValidationError, match="environment.generator"):
        load_config(p)
