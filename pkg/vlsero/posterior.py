"""Posterior estimands, trajectory bands and sgRNA imputation from chain draws.

Every estimand is evaluated draw by draw and only then summarized by its mean
and equal-tailed interval, so nonlinear quantities (expit rates, ratios,
exponentiated coefficients) are summarized exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from vlsero import distributions as dist
from vlsero.config import PEAK_COVARIATE, ModelConfig
from vlsero.data import ModelArrays
from vlsero.likelihood import sero_posterior
from vlsero.model import EFFECT_LABELS, PopulationParams, expit, tent

logger = logging.getLogger(__name__)

BAND_COLUMNS = ["time", "mean", "lo", "hi", "series"]
SUMMARY_COLUMNS = ["estimand", "mean", "lo", "hi", "absent"]


class Draws:
    """All retained draws of a fit, pooled across chains, with named accessors."""

    def __init__(self, outputs):
        outputs = list(outputs) if isinstance(outputs, (list, tuple)) else [outputs]
        if not outputs:
            raise ValueError("no chain outputs")
        self.frame = pd.concat([out.draws for out in outputs], ignore_index=True)
        self.person_ids = tuple(outputs[0].person_ids)
        self.covariates = outputs[0].covariates

    def __len__(self):
        return len(self.frame)

    def scalar(self, name):
        return self.frame[name].to_numpy(dtype=float)

    def vector(self, name):
        group = PopulationParams.VECTORS[name]
        names = getattr(self.covariates, group)
        return np.column_stack([self.scalar(f"{name}[{c}]") for c in names]) if names else np.zeros((len(self), 0))

    def person(self, field_name, person_ids=None):
        ids = self.person_ids if person_ids is None else person_ids
        if not ids:
            return np.zeros((len(self), 0))
        return np.column_stack([self.scalar(f"{field_name}[{pid}]") for pid in ids])

    def person_index(self, person_id):
        if person_id not in self.person_ids:
            raise KeyError(f"person {person_id!r} is not part of this fit")
        return self.person_ids.index(person_id)

    def sg_geometry(self, person_ids=None):
        v_p, w_a, w_b = (self.person(n, person_ids) for n in ("v_p", "w_a", "w_b"))
        t_d, w_d, q = (self.person(n, person_ids) for n in ("t_d", "w_d", "q"))
        return w_a + t_d, w_b - t_d - w_d, q * v_p

    def sigma_log(self):
        out = np.empty((len(self), 3, 3))
        for i in range(3):
            for j in range(i, 3):
                col = self.scalar(f"Sigma_log[{EFFECT_LABELS[i]},{EFFECT_LABELS[j]}]")
                out[:, i, j] = out[:, j, i] = col
        return out


def summarize_draws(values, level=0.95):
    """(mean, lower, upper) of per-draw values with equal-tailed percentiles."""
    values = np.asarray(values, dtype=float)
    tail = 50.0 * (1.0 - level)
    return float(np.mean(values)), float(np.percentile(values, tail)), float(np.percentile(values, 100.0 - tail))


@dataclass
class PosteriorSummary:
    estimands: pd.DataFrame
    sero_probabilities: pd.DataFrame
    bands: dict = field(default_factory=dict)
    level: float = 0.95

    def value(self, name):
        row = self.estimands.set_index("estimand").loc[name]
        return float(row["mean"]), float(row["lo"]), float(row["hi"])

    def to_dict(self):
        rows = self.estimands.to_dict(orient="records")
        return {
            "level": self.level,
            "estimands": {r["estimand"]: {k: r[k] for k in ("mean", "lo", "hi", "absent")} for r in rows},
            "sero_probabilities": self.sero_probabilities.to_dict(orient="records"),
        }


def sero_probability_draws(draws: Draws, arrays: ModelArrays, model: ModelConfig):
    """(draw, person) posterior probability of ever seroconverting."""
    beta_c = draws.vector("beta_C")
    v_p = draws.person("v_p")
    eta = draws.scalar("beta_C0")[:, None] + np.zeros_like(v_p)
    for k, name in enumerate(model.covariates.sero):
        x = v_p - model.peak_vp_center if name == PEAK_COVARIATE else arrays.X_C[None, :, k]
        eta = eta + beta_c[:, k, None] * x
    onset = arrays.ref_day[None, :] + draws.person("t_p") - draws.person("w_a")
    return sero_posterior(arrays.sero_kind, arrays.sero_lo, onset, eta,
                          draws.scalar("kappa1")[:, None], draws.scalar("kappa2")[:, None])


def estimand_draws(draws: Draws, arrays: ModelArrays, model: ModelConfig):
    """Ordered mapping estimand name -> per-draw values (``None`` when the data cannot inform it)."""
    c = model.assay
    v_p, w_a, w_b = (draws.person(n) for n in ("v_p", "w_a", "w_b"))
    wa_sg, wb_sg, vp_sg = draws.sg_geometry()
    has_sg = bool(arrays.sg_obs.any())
    out = {
        "diag_onset_to_peak": w_a.mean(axis=1),
        "diag_peak_to_clearance": w_b.mean(axis=1),
        "diag_peak_load": v_p.mean(axis=1) + c.lod_diag,
        "sg_onset_to_peak": wa_sg.mean(axis=1),
        "sg_peak_to_clearance": wb_sg.mean(axis=1),
        "sg_peak_load": vp_sg.mean(axis=1) + c.lod_sg,
        "sg_peak_delay": draws.person("t_d").mean(axis=1),
        "sg_clearance_lead": draws.person("w_d").mean(axis=1),
        "infectious_period": (wa_sg + wb_sg).mean(axis=1),
        "tpr_diag": expit(draws.scalar("alpha0") + draws.scalar("alpha1")),
        "tnr_diag": 1.0 - expit(draws.scalar("alpha0")),
        "tpr_sg": expit(draws.scalar("alpha0_sg") + draws.scalar("alpha1_sg")),
        "tnr_sg": 1.0 - expit(draws.scalar("alpha0_sg")),
        "loq_variance_inflation": draws.scalar("delta_Q"),
        "sero_rate": sero_probability_draws(draws, arrays, model).mean(axis=1),
        "mean_time_to_seroconversion": draws.scalar("kappa1") / draws.scalar("kappa2"),
    }
    if not has_sg:
        for name in ("sg_onset_to_peak", "sg_peak_to_clearance", "sg_peak_load", "sg_peak_delay",
                     "sg_clearance_lead", "infectious_period", "tpr_sg", "tnr_sg"):
            out[name] = None
    if arrays.n_persons == 0:
        for name in list(out)[:9] + ["sero_rate"]:
            out[name] = None
    beta_c = draws.vector("beta_C")
    for k, name in enumerate(model.covariates.sero):
        label = "per_10fold_peak_load" if name == PEAK_COVARIATE else name
        out[f"sero_odds_ratio[{label}]"] = np.exp(beta_c[:, k])
    for vector, group in (("beta_vp", "vp"), ("beta_wa", "wa"), ("beta_wb", "wb")):
        values = draws.vector(vector)
        for k, name in enumerate(getattr(model.covariates, group)):
            out[f"{group}_factor[{name}]"] = np.exp(values[:, k])
    sigma = draws.sigma_log()
    sd = np.sqrt(np.einsum("dii->di", sigma))
    for i in range(3):
        for j in range(i + 1, 3):
            out[f"corr[{EFFECT_LABELS[i]},{EFFECT_LABELS[j]}]"] = sigma[:, i, j] / (sd[:, i] * sd[:, j])
    return out


def summarize_estimands(outputs, arrays: ModelArrays, model: ModelConfig, level=0.95) -> PosteriorSummary:
    draws = outputs if isinstance(outputs, Draws) else Draws(outputs)
    if len(draws) == 0:
        raise ValueError("cannot summarize an empty set of draws")
    rows = []
    for name, values in estimand_draws(draws, arrays, model).items():
        if values is None:
            rows.append({"estimand": name, "mean": None, "lo": None, "hi": None, "absent": True})
            logger.info("Estimand %s is absent: no data informs it", name)
            continue
        mean, lo, hi = summarize_draws(values, level)
        rows.append({"estimand": name, "mean": mean, "lo": lo, "hi": hi, "absent": False})
    probs = sero_probability_draws(draws, arrays, model)
    sero_rows = []
    for i, pid in enumerate(draws.person_ids):
        mean, lo, hi = summarize_draws(probs[:, i], level)
        sero_rows.append({"person_id": pid, "mean": mean, "lo": lo, "hi": hi})
    return PosteriorSummary(
        estimands=pd.DataFrame(rows, columns=SUMMARY_COLUMNS),
        sero_probabilities=pd.DataFrame(sero_rows, columns=["person_id", "mean", "lo", "hi"]),
        level=level,
    )


def _band(curves, grid, series, level):
    tail = 50.0 * (1.0 - level)
    return pd.DataFrame({
        "time": np.asarray(grid, dtype=float),
        "mean": curves.mean(axis=0),
        "lo": np.percentile(curves, tail, axis=0),
        "hi": np.percentile(curves, 100.0 - tail, axis=0),
        "series": series,
    }, columns=BAND_COLUMNS)


def trajectory_bands(outputs, grid, model: ModelConfig, arrays: ModelArrays = None, person=None,
                     series=("diag", "sg"), axis="latent", level=0.95) -> pd.DataFrame:
    """Pointwise posterior bands of the latent trajectories, clamped at LoD.

    The population band averages person parameters within each draw. A person
    band uses that person's draws; with ``axis="study_day"`` the grid is read
    as study days and shifted by the person's observed peak and t_p.
    """
    draws = outputs if isinstance(outputs, Draws) else Draws(outputs)
    grid = np.asarray(grid, dtype=float)
    c = model.assay
    if person is None:
        ids = None
        shift = np.zeros((len(draws), 1))
    else:
        draws.person_index(person)
        ids = (person,)
        if axis == "study_day":
            if arrays is None:
                raise ValueError("study-day bands need the model arrays for the observed peak day")
            ref = arrays.ref_day[arrays.person_ids.index(person)]
            shift = ref + draws.person("t_p", ids)
        else:
            shift = np.zeros((len(draws), 1))
    v_p, w_a, w_b = (draws.person(n, ids).mean(axis=1) for n in ("v_p", "w_a", "w_b"))
    s = grid[None, :] - shift
    frames = []
    if "diag" in series:
        curves = tent(s, c.lod_diag, v_p[:, None], w_a[:, None], w_b[:, None])
        frames.append(_band(np.maximum(curves, c.lod_diag), grid, "diag", level))
    if "sg" in series:
        wa_sg, wb_sg, vp_sg = (g.mean(axis=1) for g in draws.sg_geometry(ids))
        s_sg = s - draws.person("t_d", ids).mean(axis=1)[:, None]
        curves = tent(s_sg, c.lod_sg, vp_sg[:, None], wa_sg[:, None], wb_sg[:, None])
        frames.append(_band(np.maximum(curves, c.lod_sg), grid, "sg", level))
    return pd.concat(frames, ignore_index=True)


@dataclass
class ImputedSg:
    geometry: pd.DataFrame
    bands: pd.DataFrame
    predictive: pd.DataFrame


def predictive_sg_draws(draws: Draws, arrays: ModelArrays, model: ModelConfig, person_id, days, rng):
    """(draw, day) predictive sgRNA loads given that the swab tested sgRNA-positive."""
    c = model.assay
    ids = (person_id,)
    i = arrays.person_ids.index(person_id)
    wa_sg, wb_sg, vp_sg = draws.sg_geometry(ids)
    s_sg = (np.asarray(days, dtype=float)[None, :] - arrays.ref_day[i]
            - draws.person("t_p", ids) - draws.person("t_d", ids))
    shedding = (s_sg >= -wa_sg) & (s_sg <= wb_sg)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = tent(s_sg, c.lod_sg, vp_sg, wa_sg, wb_sg)
    center = np.where(shedding, mu, c.false_pos_center_sg)
    sd = np.where(shedding, draws.scalar("sigma_y_sg")[:, None], c.false_pos_sd)
    return dist.truncnorm_sample(rng, center, sd, c.lod_sg, np.inf)


def impute_sg(outputs, arrays: ModelArrays, model: ModelConfig, person_ids, grid=None, seed=0, level=0.95,
              days=None) -> ImputedSg:
    """Posterior sgRNA geometry, bands and predictive loads for persons fitted without sgRNA data.

    ``days`` maps person id to the study days to predict (defaults to the
    person's swab days).
    """
    draws = outputs if isinstance(outputs, Draws) else Draws(outputs)
    geometry_rows, band_frames, predictive_rows = [], [], []
    for pid in person_ids:
        draws.person_index(pid)
        i = arrays.person_ids.index(pid)
        if arrays.sg_obs[i].any():
            raise ValueError(f"person {pid} has observed sgRNA data; nothing to impute")
        wa_sg, wb_sg, vp_sg = draws.sg_geometry((pid,))
        for name, values in (("w_a_sg", wa_sg), ("w_b_sg", wb_sg), ("v_p_sg", vp_sg)):
            mean, lo, hi = summarize_draws(values[:, 0], level)
            geometry_rows.append({"person_id": pid, "quantity": name, "mean": mean, "lo": lo, "hi": hi})

        person_days = arrays.day[i][arrays.present[i]] if days is None else np.asarray(days[pid], dtype=float)
        person_grid = person_days if grid is None else np.asarray(grid, dtype=float)
        band = trajectory_bands(draws, person_grid, model, arrays, person=pid, axis="study_day", level=level)
        band.insert(0, "person_id", pid)
        band_frames.append(band)

        rng = dist.make_rng(seed, i)
        pred = predictive_sg_draws(draws, arrays, model, pid, person_days, rng)
        for j, day in enumerate(person_days):
            mean, lo, hi = summarize_draws(pred[:, j], level)
            predictive_rows.append({"person_id": pid, "day": int(day), "mean": mean, "lo": lo, "hi": hi})
    logger.info("Imputed sgRNA trajectories for %d persons", len(person_ids))
    return ImputedSg(
        geometry=pd.DataFrame(geometry_rows, columns=["person_id", "quantity", "mean", "lo", "hi"]),
        bands=pd.concat(band_frames, ignore_index=True) if band_frames else pd.DataFrame(
            columns=["person_id", *BAND_COLUMNS]),
        predictive=pd.DataFrame(predictive_rows, columns=["person_id", "day", "mean", "lo", "hi"]),
    )
