import numpy as np
import pandas as pd
import pytest

from vlsero import simulator
from vlsero.config import CovariateSelection, ModelConfig
from vlsero.data import Dataset
from vlsero.distributions import make_rng
from vlsero.model import ParameterState
from vlsero.posterior import (
    Draws,
    impute_sg,
    summarize_draws,
    summarize_estimands,
    trajectory_bands,
)

SWABS = [
    ("A", 3, 2.4, np.nan), ("A", 5, 7.1, 5.2), ("A", 7, 4.0, 2.4),
    ("B", 1, 3.0, np.nan), ("B", 3, 6.0, np.nan), ("B", 5, 5.0, np.nan), ("B", 9, 2.4, np.nan),
]


def make_arrays(model, with_sg=True):
    swabs = pd.DataFrame(SWABS, columns=["person_id", "day", "y_diag", "y_sg"])
    if not with_sg:
        swabs["y_sg"] = np.nan
    dbs = pd.DataFrame([("A", 1, 0), ("A", 14, 1), ("B", 14, 0)], columns=["person_id", "day", "igg_positive"])
    return Dataset(swabs, dbs, pd.DataFrame({"person_id": ["A", "B"]})).arrays(model)


def random_states(pop, n, seed, ids=("A", "B")):
    rng = make_rng(seed)
    states = []
    for _ in range(n):
        k = len(ids)
        state = ParameterState(
            pop.copy(), v_p=rng.uniform(4, 6, k), w_a=rng.uniform(2, 4, k), w_b=rng.uniform(7, 10, k),
            t_p=rng.uniform(-0.5, 0.5, k), t_d=rng.uniform(0, 1, k), w_d=rng.uniform(1, 3, k),
            q=rng.uniform(0.3, 0.8, k), person_ids=ids,
        )
        state.pop.alpha0 = pop.alpha0 + rng.normal(0, 0.1)
        state.pop.kappa1 = pop.kappa1 + rng.uniform(0, 1)
        states.append(state)
    return states


def test_percentiles_of_three_draws():
    mean, lo, hi = summarize_draws([1.0, 2.0, 4.0])
    assert mean == pytest.approx(7.0 / 3.0)
    assert lo == pytest.approx(1.05)
    assert hi == pytest.approx(3.9)


def test_identical_draws_collapse(reference_truth, make_outputs, model_config):
    state = random_states(reference_truth, 1, 0)[0]
    outputs = make_outputs([[state] * 6, [state] * 6])
    summary = summarize_estimands(outputs, make_arrays(model_config), model_config)
    for row in summary.estimands.itertuples():
        assert row.lo == pytest.approx(row.mean) and row.hi == pytest.approx(row.mean)
    assert summary.value("diag_peak_load")[0] == pytest.approx(state.v_p.mean() + 2.4)
    assert summary.value("tpr_diag")[0] == pytest.approx(state.pop.tpr())


def test_estimand_names_and_order(reference_truth, make_outputs, model_config):
    outputs = make_outputs([random_states(reference_truth, 20, 1)])
    summary = summarize_estimands(outputs, make_arrays(model_config), model_config)
    names = summary.estimands["estimand"].tolist()
    assert names[:3] == ["diag_onset_to_peak", "diag_peak_to_clearance", "diag_peak_load"]
    assert "corr[vp,wa]" in names and "mean_time_to_seroconversion" in names
    assert not summary.estimands["absent"].any()
    lo, mean, hi = (summary.value("sero_rate")[i] for i in (1, 0, 2))
    assert lo <= mean <= hi
    assert summary.sero_probabilities["person_id"].tolist() == ["A", "B"]
    assert (summary.sero_probabilities["mean"].iloc[0]) == pytest.approx(1.0)


def test_sg_estimands_absent_without_sg(reference_truth, make_outputs, model_config):
    outputs = make_outputs([random_states(reference_truth, 10, 2)])
    summary = summarize_estimands(outputs, make_arrays(model_config, with_sg=False), model_config)
    absent = summary.estimands.set_index("estimand")["absent"]
    assert absent["sg_peak_load"] and absent["tpr_sg"] and absent["infectious_period"]
    assert not absent["diag_peak_load"]
    assert summary.to_dict()["estimands"]["sg_peak_load"]["mean"] is None


def test_covariate_estimands(reference_truth, make_outputs):
    cov = CovariateSelection(vp=("age",), sero=("peak_vp",))
    model = ModelConfig(covariates=cov)
    pop = reference_truth.copy()
    pop.beta_vp = np.array([0.1])
    pop.beta_C = np.array([np.log(2.0)])
    outputs = make_outputs([random_states(pop, 5, 3)], covariates=cov)
    swabs = pd.DataFrame(SWABS, columns=["person_id", "day", "y_diag", "y_sg"])
    arrays = Dataset(swabs, pd.DataFrame(columns=["person_id", "day", "igg_positive"]),
                     pd.DataFrame({"person_id": ["A", "B"], "age": [30.0, 50.0]})).arrays(model)
    summary = summarize_estimands(outputs, arrays, model)
    assert summary.value("sero_odds_ratio[per_10fold_peak_load]")[0] == pytest.approx(2.0)
    assert summary.value("vp_factor[age]")[0] == pytest.approx(np.exp(0.1))


def test_correlation_estimand(reference_truth, make_outputs, model_config):
    outputs = make_outputs([random_states(reference_truth, 4, 4)])
    summary = summarize_estimands(outputs, make_arrays(model_config), model_config)
    sigma = reference_truth.Sigma_log
    assert summary.value("corr[vp,wa]")[0] == pytest.approx(sigma[0, 1] / np.sqrt(sigma[0, 0] * sigma[1, 1]))


def test_population_band_at_peak_equals_peak_estimand(reference_truth, make_outputs, model_config):
    outputs = make_outputs([random_states(reference_truth, 30, 5)])
    summary = summarize_estimands(outputs, make_arrays(model_config), model_config)
    bands = trajectory_bands(outputs, np.array([-20.0, 0.0, 3.0]), model_config)
    diag = bands[bands["series"] == "diag"].set_index("time")
    assert diag.loc[0.0, "mean"] == pytest.approx(summary.value("diag_peak_load")[0])
    assert diag.loc[-20.0, "mean"] == pytest.approx(2.4)
    assert set(bands["series"]) == {"diag", "sg"}
    assert list(bands.columns) == ["time", "mean", "lo", "hi", "series"]


def test_person_band_on_study_days(reference_truth, make_outputs, model_config):
    state = random_states(reference_truth, 1, 6)[0]
    arrays = make_arrays(model_config)
    outputs = make_outputs([[state] * 4])
    peak_day = arrays.ref_day[1] + state.t_p[1]
    bands = trajectory_bands(outputs, [peak_day], model_config, arrays, person="B", series=("diag",),
                             axis="study_day")
    assert bands["mean"].iloc[0] == pytest.approx(2.4 + state.v_p[1])


def test_unknown_person(reference_truth, make_outputs, model_config):
    outputs = make_outputs([random_states(reference_truth, 4, 7)])
    with pytest.raises(KeyError):
        trajectory_bands(outputs, [0.0], model_config, person="nobody")
    with pytest.raises(KeyError):
        Draws(outputs).person_index("nobody")


def test_impute_refuses_person_with_sg(reference_truth, make_outputs, model_config):
    outputs = make_outputs([random_states(reference_truth, 4, 8)])
    with pytest.raises(ValueError):
        impute_sg(outputs, make_arrays(model_config), model_config, ["A"])


def test_impute_person_without_sg(reference_truth, make_outputs, model_config):
    states = random_states(reference_truth, 40, 9)
    outputs = make_outputs([states])
    arrays = make_arrays(model_config)
    imputed = impute_sg(outputs, arrays, model_config, ["B"], seed=3)
    assert imputed.geometry["quantity"].tolist() == ["w_a_sg", "w_b_sg", "v_p_sg"]
    expected = np.mean([s.q[1] * s.v_p[1] for s in states])
    assert imputed.geometry.set_index("quantity").loc["v_p_sg", "mean"] == pytest.approx(expected)
    assert imputed.predictive["day"].tolist() == [1, 3, 5, 9]
    assert (imputed.predictive["lo"] >= 2.4).all()
    assert set(imputed.bands["person_id"]) == {"B"}
    again = impute_sg(outputs, arrays, model_config, ["B"], seed=3)
    pd.testing.assert_frame_equal(imputed.predictive, again.predictive)


def test_imputed_sg_band_is_not_narrower_than_diag_band(reference_truth, make_outputs, model_config):
    # diagnostic trajectory pinned down by data, sgRNA offsets and ratio left at their population law
    pop = reference_truth
    rng = make_rng(12)
    states = []
    for _ in range(400):
        v_p, w_a, w_b = rng.normal([5.5, 3.6, 10.0], [0.1, 0.1, 0.15], size=(2, 3)).T
        offsets = [simulator._sg_offsets(pop, model_config, w_a[k], w_b[k], rng) for k in range(2)]
        states.append(ParameterState(
            pop.copy(), v_p=v_p, w_a=w_a, w_b=w_b, t_p=rng.normal(0.0, 0.05, 2),
            t_d=[o[0] for o in offsets], w_d=[o[1] for o in offsets], q=rng.beta(pop.gamma1, pop.gamma2, 2),
            person_ids=("A", "B"),
        ))
    imputed = impute_sg(make_outputs([states]), make_arrays(model_config), model_config, ["B"])
    bands = imputed.bands.assign(width=imputed.bands["hi"] - imputed.bands["lo"])
    width = bands.pivot(index="time", columns="series", values="width")
    assert width.index.tolist() == [1.0, 3.0, 5.0, 9.0]
    assert (width["sg"] >= width["diag"]).all(), width
