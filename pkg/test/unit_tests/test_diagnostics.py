import arviz as az
import numpy as np
import pandas as pd
import pytest

from vlsero.config import CovariateSelection
from vlsero.diagnostics import diagnostics, ess_bulk, max_rhat, rhat, stack_chains, to_inference_data
from vlsero.distributions import make_rng
from vlsero.sampler import ChainOutput


def chains_from(array, names=("x",)):
    outputs = []
    for chain_id, values in enumerate(np.asarray(array)):
        frame = pd.DataFrame({"iteration": np.arange(values.shape[0]), "logposterior": 0.0})
        for k, name in enumerate(names):
            frame[name] = values if len(names) == 1 else values[:, k]
        outputs.append(ChainOutput(chain_id, 0, frame, (), CovariateSelection()))
    return outputs


def ar1(rng, n_chain, n_draw, rho):
    out = np.empty((n_chain, n_draw))
    out[:, 0] = rng.standard_normal(n_chain)
    noise = rng.standard_normal((n_chain, n_draw)) * np.sqrt(1 - rho ** 2)
    for t in range(1, n_draw):
        out[:, t] = rho * out[:, t - 1] + noise[:, t]
    return out


def test_mixed_chains_have_rhat_near_one():
    draws = make_rng(0).standard_normal((4, 2000))
    assert rhat(draws) == pytest.approx(1.0, abs=0.01)
    assert rhat(draws, rank_normalized=False) == pytest.approx(1.0, abs=0.01)


def test_separated_chains_are_flagged():
    rng = make_rng(1)
    draws = np.vstack([rng.standard_normal(500), 10.0 + rng.standard_normal(500)])
    assert rhat(draws, rank_normalized=False) > 3.0
    assert rhat(draws) > 1.5


def test_white_noise_ess_is_draw_count():
    draws = make_rng(2).standard_normal((4, 1000))
    assert ess_bulk(draws) == pytest.approx(4000, rel=0.15)


def test_autocorrelated_ess():
    rho = 0.9
    draws = ar1(make_rng(3), 4, 5000, rho)
    expected = draws.size * (1 - rho) / (1 + rho)
    assert ess_bulk(draws) == pytest.approx(expected, rel=0.3)


def test_constant_parameter():
    draws = np.full((3, 50), 2.5)
    assert rhat(draws) == 1.0
    assert ess_bulk(draws) == 150.0


def test_too_few_draws():
    with pytest.raises(ValueError):
        rhat(np.zeros((2, 3)))


def test_diagnostics_table():
    rng = make_rng(4)
    values = np.stack([np.column_stack([rng.standard_normal(200), np.full(200, 1.0)]) for _ in range(2)])
    table = diagnostics(chains_from(values, names=("mu", "fixed[A]")))
    assert list(table.columns) == ["rhat", "rhat_classic", "ess_bulk", "degenerate"]
    assert bool(table.loc["fixed[A]", "degenerate"])
    assert not bool(table.loc["mu", "degenerate"])
    assert table.loc["fixed[A]", "rhat"] == 1.0
    assert max_rhat(table) == pytest.approx(table.loc["mu", "rhat"])
    assert max_rhat(table, prefix="fixed") == 1.0


def test_stack_chains_needs_equal_lengths():
    outputs = chains_from([np.zeros(10)]) + chains_from([np.zeros(12)])
    with pytest.raises(ValueError):
        stack_chains(outputs, "x")


def test_table_matches_arviz():
    rng = make_rng(5)
    values = np.stack([np.column_stack([rng.standard_normal(300), ar1(rng, 1, 300, 0.7)[0]]) for _ in range(3)])
    outputs = chains_from(values, names=("mu", "tau"))
    table = diagnostics(outputs)
    idata = to_inference_data(outputs)
    assert set(idata.posterior.data_vars) == {"mu", "tau"}
    assert idata.posterior["mu"].shape == (3, 300)
    for name in ("mu", "tau"):
        draws = values[:, :, 0 if name == "mu" else 1]
        assert table.loc[name, "rhat"] == pytest.approx(float(az.rhat(draws, method="rank")))
        assert table.loc[name, "rhat_classic"] == pytest.approx(float(az.rhat(draws, method="split")))
        assert table.loc[name, "ess_bulk"] == pytest.approx(float(az.ess(draws, method="bulk")))
        assert rhat(draws) == pytest.approx(table.loc[name, "rhat"])
        assert ess_bulk(draws) == pytest.approx(table.loc[name, "ess_bulk"])
