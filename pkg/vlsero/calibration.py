"""Coverage calibration: repeated simulate-then-fit at a reduced scale.

For every replicate the truth is fixed (the config ``truth`` section), the
dataset is simulated from its own seed, and each designated population
parameter is scored by whether its equal-tailed credible interval covers the
truth and by the rank of the truth among the posterior draws.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from vlsero import sampler
from vlsero.config import CalibrationConfig, ChainConfig, ModelConfig, StudyDesign
from vlsero.cv import fold_seed
from vlsero.errors import ConfigError
from vlsero.model import ParameterState, PopulationParams
from vlsero.posterior import Draws, summarize_draws
from vlsero.simulator import simulate_dataset

logger = logging.getLogger(__name__)

REPLICATE_COLUMNS = ["replicate", "parameter", "truth", "mean", "lo", "hi", "covered", "rank", "n_draws"]


def truth_columns(pop: PopulationParams, model: ModelConfig):
    """Population values keyed by their draw-column names."""
    state = ParameterState(pop, *([np.zeros(0)] * 7), person_ids=())
    names = ParameterState.column_names(model.covariates, ())
    return dict(zip(names, state.flatten().tolist()))


def check_parameters(calibration: CalibrationConfig, pop: PopulationParams, model: ModelConfig):
    known = truth_columns(pop, model)
    unknown = [name for name in calibration.parameters if name not in known]
    if unknown:
        raise ConfigError([f"calibration.parameters: unknown parameter {name!r}" for name in unknown])


def run_replicate(replicate, truth: PopulationParams, design: StudyDesign, model: ModelConfig,
                  chain: ChainConfig, calibration: CalibrationConfig):
    seed = fold_seed(chain.seed, replicate)
    dataset, _ = simulate_dataset(truth, design, seed, model)
    arrays = dataset.arrays(model)
    outputs = sampler.run(arrays, model, dataclasses.replace(chain, seed=seed))
    draws = Draws(outputs)
    values = truth_columns(truth, model)
    rows = []
    for name in calibration.parameters:
        samples = draws.scalar(name)
        mean, lo, hi = summarize_draws(samples, calibration.level)
        rows.append({
            "replicate": replicate, "parameter": name, "truth": values[name], "mean": mean, "lo": lo, "hi": hi,
            "covered": bool(lo <= values[name] <= hi), "rank": int(np.sum(samples < values[name])),
            "n_draws": len(samples),
        })
    logger.info("Calibration replicate %d done (%d of %d parameters covered)", replicate,
                sum(r["covered"] for r in rows), len(rows))
    return rows


def _run_replicate(args):
    return run_replicate(*args)


@dataclass
class CalibrationReport:
    replicates: pd.DataFrame
    level: float

    def coverage(self):
        """Per-parameter coverage with the 99% binomial band expected under correct calibration."""
        rows = []
        for name, group in self.replicates.groupby("parameter", sort=False):
            n = len(group)
            lo, hi = stats.binom.interval(0.99, n, self.level)
            rows.append({
                "parameter": name, "n_replicates": n, "coverage": float(group["covered"].mean()),
                "band_lo": lo / n, "band_hi": hi / n,
                "within_band": bool(lo / n <= group["covered"].mean() <= hi / n),
            })
        return pd.DataFrame(rows, columns=["parameter", "n_replicates", "coverage", "band_lo", "band_hi",
                                           "within_band"])


def run_calibration(truth: PopulationParams, design: StudyDesign, model: ModelConfig, chain: ChainConfig,
                    calibration: CalibrationConfig, threads=1) -> CalibrationReport:
    check_parameters(calibration, truth, model)
    design = dataclasses.replace(design, n_participants=calibration.n_participants)
    jobs = [(r, truth, design, model, chain, calibration) for r in range(calibration.n_replicates)]
    threads = max(1, min(int(threads or 1), len(jobs) or 1, os.cpu_count() or 1))
    if threads == 1:
        results = [_run_replicate(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_replicate, jobs))
    rows = [row for rep in results for row in rep]
    return CalibrationReport(pd.DataFrame(rows, columns=REPLICATE_COLUMNS), calibration.level)
