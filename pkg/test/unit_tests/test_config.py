import json

import pytest
from scipy import special

from vlsero.config import (
    AssayConstants,
    ChainConfig,
    CovariateSelection,
    ModelConfig,
    RunConfig,
    StudyDesign,
    load_config,
)
from vlsero.errors import ConfigError


def test_defaults():
    c = AssayConstants()
    assert (c.lod_diag, c.lod_sg, c.loq_diag) == (2.4, 2.4, 4.9)
    assert c.false_pos_center_diag == pytest.approx(2.9)
    assert ModelConfig().td_sd == 2.0
    assert ChainConfig(n_samples=2000, thin=3).n_retained == 666


def test_seroconversion_intercept_prior_default():
    priors = ModelConfig().priors
    assert priors.beta_C0 == (0.0, 1.5)
    mean, sd = priors.beta_C0
    assert special.expit(mean + 1.96 * sd) == pytest.approx(0.95, abs=0.005)


def test_unknown_and_missing_keys_reported_together():
    doc = {
        "model": {"assay": {"lod_diag": 2.4, "lod_dg": 1.0}, "covariates": {"vp": ["peak_vp"]}},
        "chain": {"n_chains": 2},
        "colour": 1,
    }
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(doc, required=("chain", "design"))
    text = "\n".join(info.value.problems)
    assert "model.assay.lod_dg: unknown key" in text
    assert "peak_vp" in text
    assert "chain.n_warmup: missing required key" in text
    assert "chain.n_samples: missing required key" in text
    assert "colour: unknown section" in text
    assert "design: missing required section" in text


def test_invalid_values():
    with pytest.raises(ConfigError):
        AssayConstants(lod_diag=5.0, loq_diag=4.9)
    with pytest.raises(ConfigError):
        ChainConfig(target_accept_block=1.5)
    with pytest.raises(ConfigError):
        StudyDesign(n_participants=3, swab_days=(1, 3, 2))
    with pytest.raises(ConfigError):
        CovariateSelection(vp=("age", "age"))


def test_design_covariates_parse():
    design = StudyDesign.from_dict({
        "n_participants": 5,
        "covariates": {"male": {"dist": "bernoulli", "params": [0.5]}, "age": {"params": [40, 10]}},
    })
    specs = design.covariate_specs()
    assert specs["male"].dist == "bernoulli"
    assert specs["age"].params == (40, 10)
    assert design.to_dict()["covariates"]["male"]["params"] == [0.5]


def test_bad_covariate_generator():
    with pytest.raises(ConfigError) as info:
        StudyDesign.from_dict({"n_participants": 5, "covariates": {"x": {"dist": "poisson"}}})
    assert "design.covariates.x" in info.value.problems[0]


def test_data_columns_skip_peak():
    cov = CovariateSelection(vp=("age",), wb=("age", "male"), sero=("peak_vp", "male"))
    assert cov.data_columns() == ["age", "male"]


def test_load_config_round_trip(tmp_path):
    doc = {
        "model": {"covariates": {"sero": ["peak_vp"]}},
        "chain": {"n_chains": 2, "n_warmup": 10, "n_samples": 20, "seed": 7},
        "design": {"n_participants": 4},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    config = load_config(path, required=("chain",))
    assert config.source == str(path)
    assert config.chain.seed == 7
    assert config.model.covariates.sero == ("peak_vp",)
    again = RunConfig.from_dict(config.to_dict())
    assert again.to_dict() == config.to_dict()
    assert config.with_seed(11).chain.seed == 11
    assert config.with_seed(None) is config


def test_load_config_invalid_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
