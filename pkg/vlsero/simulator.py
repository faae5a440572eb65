"""Forward simulation of complete synthetic studies from known population values.

Each person draws from its own generator ``make_rng(seed, person_index)``, so
a dataset is reproducible person by person whatever order persons are
simulated in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from vlsero import distributions as dist
from vlsero.config import PEAK_COVARIATE, ModelConfig, StudyDesign
from vlsero.data import (
    Dataset,
    SeroRecord,
    SwabRecord,
    observed_peak_day,
    peak_regime,
    sero_record_from_dbs,
)
from vlsero.errors import ConfigError, TruncationError
from vlsero.model import REGIME_LEFT, REGIME_NAMES, REGIME_RIGHT, PopulationParams, expit, sg_geometry

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 10_000


@dataclass
class SimulatedPerson:
    person_id: str
    truth: dict
    swabs: list = field(default_factory=list)
    sero: SeroRecord | None = None
    dbs: list = field(default_factory=list)


def person_id_for(index):
    return f"P{index + 1:04d}"


def draw_covariates(design: StudyDesign, rng):
    values = {}
    for name, spec in design.covariates:
        if spec.dist == "bernoulli":
            values[name] = float(dist.Bernoulli(spec.params[0]).sample(rng))
        else:
            values[name] = float(dist.Normal(*spec.params).sample(rng))
    return values


def _sg_offsets(pop: PopulationParams, model: ModelConfig, w_a, w_b, rng):
    """Joint rejection draw of (t_d, w_d) under their coupled truncation."""
    t_d_law = dist.Normal(pop.mu_td, model.td_sd)
    lwd_law = dist.Normal(pop.mu_lwd, pop.sigma_lwd)
    for attempt in range(MAX_ATTEMPTS):
        t_d = float(t_d_law.sample(rng))
        log_wd = float(lwd_law.sample(rng))
        room = w_b - t_d
        if -w_a <= t_d <= w_b and room > 1.0 and 0.0 <= log_wd < np.log(room):
            if attempt:
                logger.debug("sgRNA offsets accepted after %d rejections", attempt)
            return t_d, float(np.exp(log_wd))
    raise TruncationError("t_d in [-w_a, w_b] and log w_d in [0, log(w_b - t_d))", MAX_ATTEMPTS)


def _detected_load(rng, center, sd, floor):
    return float(dist.TruncatedNormal(center, sd, floor, np.inf).sample(rng))


def _diag_load(rng, S, mu, pop, model):
    c = model.assay
    if not S:
        return _detected_load(rng, c.false_pos_center_diag, c.false_pos_sd, c.lod_diag)
    y = _detected_load(rng, mu, np.sqrt(pop.sigma_yy2), c.lod_diag)
    if y < c.loq_diag:
        y = _detected_load(rng, mu, np.sqrt(pop.sigma_yy2 * (1.0 + pop.delta_Q)), c.lod_diag)
    return y


def _sg_load(rng, S, mu, pop, model):
    c = model.assay
    if not S:
        return _detected_load(rng, c.false_pos_center_sg, c.false_pos_sd, c.lod_sg)
    return _detected_load(rng, mu, pop.sigma_y_sg, c.lod_sg)


def _sero_logit(pop, model, covariates, v_p):
    eta = pop.beta_C0
    for beta, name in zip(pop.beta_C, model.covariates.sero):
        x = v_p - model.peak_vp_center if name == PEAK_COVARIATE else covariates[name]
        eta += beta * x
    return eta


def _effect_means(pop, model, covariates):
    cov = model.covariates
    shift = [
        sum(b * covariates[n] for b, n in zip(pop.beta_vp, cov.vp)),
        sum(b * covariates[n] for b, n in zip(pop.beta_wa, cov.wa)),
        sum(b * covariates[n] for b, n in zip(pop.beta_wb, cov.wb)),
    ]
    return np.array([pop.mu_lvp, pop.mu_lwa, pop.mu_lwb]) + np.array(shift)


def _eligible(t_p, regime, n_pos_diag, n_pos_sg, design: StudyDesign, model: ModelConfig):
    if n_pos_diag < design.min_positive_diag or n_pos_sg < design.min_positive_sg:
        return False
    align = model.alignment
    if regime == REGIME_LEFT and t_p > align.LEFT_UPPER:
        return False
    if regime == REGIME_RIGHT and t_p < align.RIGHT_LOWER:
        return False
    return True


def simulate_person(pop: PopulationParams, design: StudyDesign, covariates, rng, model: ModelConfig = None,
                    person_id="P0001") -> SimulatedPerson:
    """Draw one person's latent course, swab results and antibody data.

    Latent quantities are redrawn until the person satisfies the design's
    eligibility rules and the t_p regime implied by the realized observed peak.
    """
    model = model or ModelConfig()
    c = model.assay
    days = np.asarray(design.swab_days, dtype=float)
    effects = dist.MultivariateNormal3(_effect_means(pop, model, covariates), pop.Sigma_log)
    q_law = dist.Beta(pop.gamma1, pop.gamma2)
    has_dbs = bool(rng.uniform() < design.fraction_with_dbs)
    sg_assayed = bool(rng.uniform() < design.fraction_sg_assayed)

    for attempt in range(MAX_ATTEMPTS):
        v_p, w_a, w_b = np.exp(effects.sample(rng))
        peak_day = float(rng.uniform(*design.peak_window))
        t_d, w_d = _sg_offsets(pop, model, w_a, w_b, rng)
        q = float(q_law.sample(rng))
        wa_sg, wb_sg, vp_sg = sg_geometry(w_a, w_b, v_p, t_d, w_d, q)

        s = days - peak_day
        shedding = (s >= -w_a) & (s <= w_b)
        mu = np.where(s <= 0, c.lod_diag + v_p + v_p / w_a * s, c.lod_diag + v_p - v_p / w_b * s)
        detected = rng.uniform(size=days.size) < expit(pop.alpha0 + pop.alpha1 * shedding)
        y = np.full(days.size, c.lod_diag)
        for j in np.flatnonzero(detected):
            y[j] = _diag_load(rng, shedding[j], mu[j], pop, model)

        s_sg = s - t_d
        shedding_sg = (s_sg >= -wa_sg) & (s_sg <= wb_sg)
        mu_sg = np.where(s_sg <= 0, c.lod_sg + vp_sg + vp_sg / wa_sg * s_sg,
                         c.lod_sg + vp_sg - vp_sg / wb_sg * s_sg)
        y_sg = np.full(days.size, np.nan)
        if sg_assayed:
            for j in np.flatnonzero(detected):
                if rng.uniform() < expit(pop.alpha0_sg + pop.alpha1_sg * shedding_sg[j]):
                    y_sg[j] = _sg_load(rng, shedding_sg[j], mu_sg[j], pop, model)
                else:
                    y_sg[j] = c.lod_sg

        obs_peak = observed_peak_day(days, y)
        t_p = peak_day - obs_peak
        regime = peak_regime(obs_peak, days.min(), days.max(), model.alignment.edge_window)
        n_pos_sg = int(np.sum(np.nan_to_num(y_sg, nan=-np.inf) > c.lod_sg))
        if _eligible(t_p, regime, int(detected.sum()), n_pos_sg, design, model):
            break
    else:
        raise TruncationError("person eligibility (positive swab counts and t_p regime)", MAX_ATTEMPTS)
    if attempt:
        logger.debug("%s eligible after %d redraws", person_id, attempt)

    eta = _sero_logit(pop, model, covariates, v_p)
    converts = bool(rng.uniform() < expit(eta))
    w_s = float(dist.Gamma(pop.kappa1, pop.kappa2).sample(rng))
    onset = peak_day - w_a
    sero_day = onset + w_s if converts else np.inf

    dbs = [(int(d), int(d >= sero_day)) for d in design.dbs_days] if has_dbs else []
    sero = sero_record_from_dbs(person_id, [d for d, _ in dbs], [p for _, p in dbs])

    b_diag = y > c.lod_diag
    swabs = []
    for j, day in enumerate(days):
        assayed = not np.isnan(y_sg[j])
        swabs.append(SwabRecord(
            person_id=person_id, day=int(day), y_diag=float(y[j]), b_diag=bool(b_diag[j]),
            q_flag=bool(b_diag[j] and y[j] < c.loq_diag),
            y_sg=float(y_sg[j]) if assayed else None,
            b_sg=bool(y_sg[j] > c.lod_sg) if assayed else None,
            sg_missing=not assayed,
        ))
    truth = {
        "v_p": float(v_p), "w_a": float(w_a), "w_b": float(w_b), "t_p": float(t_p),
        "t_d": float(t_d), "w_d": float(w_d), "q": float(q),
        "w_a_sg": float(wa_sg), "w_b_sg": float(wb_sg), "v_p_sg": float(vp_sg),
        "latent_peak_day": peak_day, "observed_peak_day": int(obs_peak), "regime": REGIME_NAMES[regime],
        "seroconverts": converts, "w_s": w_s, "seroconversion_day": None if not converts else float(sero_day),
        "sero_probability": float(expit(eta)), "has_dbs": has_dbs, "sg_assayed": sg_assayed,
        "covariates": dict(covariates), "redraws": attempt,
    }
    return SimulatedPerson(person_id, truth, swabs, sero, dbs)


def _check_design(design: StudyDesign, model: ModelConfig):
    specs = design.covariate_specs()
    missing = [name for name in model.covariates.data_columns() if name not in specs]
    if missing:
        raise ConfigError([f"design.covariates: no generator for model covariate {name!r}" for name in missing])


def simulate_dataset(truth: PopulationParams, design: StudyDesign, seed, model: ModelConfig = None):
    """Simulate ``design.n_participants`` persons; returns the Dataset and the latent-truth sidecar."""
    model = model or ModelConfig()
    _check_design(design, model)
    swab_rows, dbs_rows, cov_rows, persons = [], [], [], {}
    for index in range(design.n_participants):
        rng = dist.make_rng(seed, index)
        pid = person_id_for(index)
        covariates = draw_covariates(design, rng)
        person = simulate_person(truth, design, covariates, rng, model, pid)
        persons[pid] = person.truth
        for rec in person.swabs:
            swab_rows.append((pid, rec.day, rec.y_diag, np.nan if rec.y_sg is None else rec.y_sg))
        for day, positive in person.dbs:
            dbs_rows.append((pid, day, positive))
        cov_rows.append({"person_id": pid, **covariates})

    names = [name for name, _ in design.covariates]
    empty = Dataset.empty(model.assay, names)
    swabs = pd.DataFrame(swab_rows, columns=list(empty.swabs.columns)) if swab_rows else empty.swabs
    dbs = pd.DataFrame(dbs_rows, columns=list(empty.dbs.columns)) if dbs_rows else empty.dbs
    covs = pd.DataFrame(cov_rows, columns=["person_id", *names]) if cov_rows else empty.covariates
    dataset = Dataset(swabs.astype({"day": int, "y_diag": float, "y_sg": float}),
                      dbs.astype({"day": int, "igg_positive": int}), covs, model.assay)
    sidecar = {
        "seed": int(seed),
        "population": truth.to_dict(model.covariates),
        "persons": persons,
    }
    logger.info("Simulated %d persons (%d swabs, %d DBS tests)", design.n_participants, len(swabs), len(dbs))
    return dataset, sidecar
