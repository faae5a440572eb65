"""Convergence diagnostics: split R-hat and bulk effective sample size, computed by arviz."""

from __future__ import annotations

import logging

import arviz as az
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MIN_DRAWS = 4


def _as_chains(ary, name):
    ary = np.atleast_2d(np.asarray(ary, dtype=float))
    if ary.shape[1] < MIN_DRAWS:
        raise ValueError(f"{name} needs at least {MIN_DRAWS} draws per chain, got {ary.shape[1]}")
    return ary


def _is_constant(ary):
    return bool(np.all(ary == ary.flat[0]))


def rhat(ary, rank_normalized=True):
    """Split R-hat of a (chain, draw) array; rank-normalized bulk/tail maximum by default."""
    ary = _as_chains(ary, "R-hat")
    if _is_constant(ary):
        return 1.0
    return float(az.rhat(ary, method="rank" if rank_normalized else "split"))


def ess_bulk(ary):
    """Bulk effective sample size of rank-normalized split chains."""
    ary = _as_chains(ary, "Effective sample size")
    if _is_constant(ary):
        return float(ary.size)
    return float(az.ess(ary, method="bulk"))


def stack_chains(outputs, column):
    """(chain, draw) array of one parameter column across chain outputs."""
    lengths = {out.n_draws for out in outputs}
    if len(lengths) != 1:
        raise ValueError(f"chains hold different numbers of draws: {sorted(lengths)}")
    return np.vstack([out.draws[column].to_numpy(dtype=float) for out in outputs])


def to_inference_data(outputs, columns=None) -> az.InferenceData:
    """Posterior group with one variable per parameter column, dims (chain, draw)."""
    if columns is None:
        columns = outputs[0].parameter_columns
    return az.convert_to_inference_data({column: stack_chains(outputs, column) for column in columns})


def diagnostics(outputs, columns=None) -> pd.DataFrame:
    """Per-parameter split R-hat (rank-normalized and classical), bulk ESS and a degenerate flag."""
    if not outputs:
        raise ValueError("no chain outputs")
    if columns is None:
        columns = outputs[0].parameter_columns
    columns = list(columns)
    if outputs[0].n_draws < MIN_DRAWS:
        raise ValueError(f"diagnostics need at least {MIN_DRAWS} draws per chain, got {outputs[0].n_draws}")
    posterior = to_inference_data(outputs, columns).posterior
    degenerate = {column: _is_constant(posterior[column].values) for column in columns}
    live = [column for column in columns if not degenerate[column]]
    rank = az.rhat(posterior, var_names=live, method="rank") if live else {}
    split = az.rhat(posterior, var_names=live, method="split") if live else {}
    bulk = az.ess(posterior, var_names=live, method="bulk") if live else {}

    rows = []
    for column in columns:
        if degenerate[column]:
            row = (1.0, 1.0, float(posterior[column].size))
        else:
            row = (float(rank[column]), float(split[column]), float(bulk[column]))
        rows.append((column, *row, degenerate[column]))
    table = pd.DataFrame(rows, columns=["parameter", "rhat", "rhat_classic", "ess_bulk", "degenerate"])
    table = table.set_index("parameter")
    n_degenerate = int(table["degenerate"].sum())
    if n_degenerate:
        logger.warning("%d parameters have zero posterior variance across draws", n_degenerate)
    return table


def max_rhat(table, prefix=None):
    """Largest R-hat, optionally restricted to columns starting with ``prefix``."""
    values = table["rhat"]
    if prefix is not None:
        values = values[[name.startswith(prefix) for name in values.index]]
    values = values[~table.loc[values.index, "degenerate"]]
    return float(values.max()) if len(values) else 1.0
