"""K-fold cross-validation of the sgRNA imputation and seroconversion estimates.

Each fold hides the sgRNA and antibody data of its persons, refits the model,
and scores the held-out persons' predictive sgRNA loads against the hidden
positive measurements.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from vlsero import distributions as dist
from vlsero import sampler
from vlsero.config import ChainConfig, CvConfig, ModelConfig
from vlsero.data import Dataset
from vlsero.diagnostics import diagnostics, max_rhat
from vlsero.errors import ConfigError
from vlsero.posterior import Draws, impute_sg, sero_probability_draws, summarize_draws

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["fold", "n_persons", "n_scored", "mae", "coverage", "max_rhat", "flagged"]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict
    seed: int

    def members(self, fold):
        return tuple(sorted(pid for pid, f in self.assignment.items() if f == fold))

    def sizes(self):
        return [len(self.members(f)) for f in range(self.k)]

    def to_dict(self):
        return {"k": self.k, "seed": self.seed, "assignment": dict(sorted(self.assignment.items()))}


def make_folds(dataset: Dataset, k, seed) -> FoldPlan:
    """Seeded partition of the persons into ``k`` folds whose sizes differ by at most one."""
    ids = dataset.person_ids
    if k < 1 or k > len(ids):
        raise ConfigError(f"cv.k = {k} must lie in [1, {len(ids)}] (number of persons)")
    order = dist.make_rng(seed).permutation(len(ids))
    assignment = {ids[idx]: position % k for position, idx in enumerate(order)}
    return FoldPlan(k=int(k), assignment=assignment, seed=int(seed))


def fold_seed(seed, fold):
    return int(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(fold),)).generate_state(1)[0])


@dataclass
class FoldReport:
    fold: int
    person_ids: tuple
    seed: int
    term_counts: dict
    max_rhat: float
    flagged: bool
    predictions: pd.DataFrame
    sero: pd.DataFrame
    acceptance: dict = field(default_factory=dict)

    @property
    def n_scored(self):
        return len(self.predictions)

    @property
    def mae(self):
        if not self.n_scored:
            return None
        return float(np.mean(np.abs(self.predictions["mean"] - self.predictions["y_true"])))

    @property
    def coverage(self):
        if not self.n_scored:
            return None
        return float(np.mean(self.predictions["covered"]))

    def score_row(self):
        return {"fold": self.fold, "n_persons": len(self.person_ids), "n_scored": self.n_scored,
                "mae": self.mae, "coverage": self.coverage, "max_rhat": self.max_rhat, "flagged": self.flagged}

    def to_dict(self):
        return {
            **self.score_row(),
            "person_ids": list(self.person_ids),
            "seed": self.seed,
            "term_counts": self.term_counts,
            "acceptance": self.acceptance,
            "predictions": self.predictions.to_dict(orient="records"),
            "sero_probabilities": self.sero.to_dict(orient="records"),
        }


@dataclass
class CvReport:
    plan: FoldPlan
    folds: list

    def scores(self):
        return pd.DataFrame([f.score_row() for f in self.folds], columns=SCORE_COLUMNS)

    def aggregate(self):
        """Pooled scores over folds that passed the convergence check; flagged folds are listed apart."""
        kept = [f for f in self.folds if not f.flagged]
        preds = [f.predictions for f in kept if f.n_scored]
        pooled = pd.concat(preds, ignore_index=True) if preds else None
        sero = pd.concat([f.sero for f in kept], ignore_index=True) if kept else None
        return {
            "n_folds": len(self.folds),
            "flagged_folds": [f.fold for f in self.folds if f.flagged],
            "n_scored": 0 if pooled is None else len(pooled),
            "mae": None if pooled is None else float(np.mean(np.abs(pooled["mean"] - pooled["y_true"]))),
            "coverage": None if pooled is None else float(np.mean(pooled["covered"])),
            "sero_probability_range": None if sero is None or sero.empty
            else [float(sero["mean"].min()), float(sero["mean"].max())],
        }


def run_fold(dataset: Dataset, plan: FoldPlan, fold, model: ModelConfig, chain: ChainConfig,
             cv: CvConfig) -> FoldReport:
    held = plan.members(fold)
    masked = dataset.mask(held)
    arrays = masked.arrays(model)
    held_index = [arrays.person_ids.index(pid) for pid in held]
    counts = arrays.term_counts()
    if arrays.sg_obs[held_index].any() or (arrays.sero_kind[held_index] != 0).any():
        raise AssertionError(f"fold {fold}: masked persons still contribute sgRNA or antibody terms")

    seed = fold_seed(chain.seed, fold)
    fold_chain = dataclasses.replace(chain, seed=seed)
    logger.info("Fold %d: fitting with %d of %d persons held out", fold, len(held), arrays.n_persons)
    outputs = sampler.run(arrays, model, fold_chain)

    worst = 1.0
    if outputs[0].n_draws >= 4:
        worst = max_rhat(diagnostics(outputs))
    flagged = bool(worst > cv.rhat_threshold)
    if flagged:
        logger.warning("Fold %d flagged: max R-hat %.3f exceeds %.3f", fold, worst, cv.rhat_threshold)

    draws = Draws(outputs)
    truth = masked.masked_positive_sg()
    scored_ids = tuple(sorted(truth["person_id"].unique()))
    days = {pid: truth.loc[truth["person_id"] == pid, "day"].to_numpy() for pid in scored_ids}
    imputed = impute_sg(draws, arrays, model, scored_ids, seed=seed, days=days)
    preds = imputed.predictive.merge(
        truth.rename(columns={"y_sg": "y_true"})[["person_id", "day", "y_true"]], on=["person_id", "day"])
    preds["covered"] = (preds["lo"] <= preds["y_true"]) & (preds["y_true"] <= preds["hi"])

    probs = sero_probability_draws(draws, arrays, model)
    sero_rows = []
    for pid, i in zip(held, held_index):
        mean, lo, hi = summarize_draws(probs[:, i])
        sero_rows.append({"person_id": pid, "mean": mean, "lo": lo, "hi": hi})
    report = FoldReport(
        fold=fold, person_ids=held, seed=seed, term_counts=counts, max_rhat=worst, flagged=flagged,
        predictions=preds, sero=pd.DataFrame(sero_rows, columns=["person_id", "mean", "lo", "hi"]),
        acceptance=outputs[0].acceptance,
    )
    logger.info("Fold %d done: %d swabs scored, MAE %s, coverage %s", fold, report.n_scored,
                "n/a" if report.mae is None else f"{report.mae:.3f}",
                "n/a" if report.coverage is None else f"{report.coverage:.3f}")
    return report


def _run_fold(args):
    return run_fold(*args)


def run_cv(dataset: Dataset, plan: FoldPlan, model: ModelConfig, chain: ChainConfig, cv: CvConfig = None,
           threads=1) -> CvReport:
    """Fit every fold; reports come back in fold order whatever order they ran in."""
    cv = cv or CvConfig(k=plan.k, seed=plan.seed)
    jobs = [(dataset.unmask(), plan, fold, model, chain, cv) for fold in range(plan.k)]
    threads = max(1, min(int(threads or 1), plan.k, os.cpu_count() or 1))
    if threads == 1:
        folds = [_run_fold(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            folds = list(pool.map(_run_fold, jobs))
    return CvReport(plan=plan, folds=folds)
