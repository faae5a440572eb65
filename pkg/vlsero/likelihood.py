"""Joint log-posterior: swab mixtures, sgRNA coupling, censored seroconversion and priors.

The density is taken with respect to the natural parameters (v_p, w_a, w_b,
w_d on their own scale), so the log-normal random effects carry their
Jacobians here; samplers working on transformed scales add their own.

All person-level terms are evaluated for every person at once on
:class:`~vlsero.data.ModelArrays`; sums run over fixed, sorted axes so the
result does not depend on input row order.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import special

from vlsero import distributions as dist
from vlsero.config import AssayConstants, ModelConfig, PeakAlignmentConfig, PriorConfig
from vlsero.data import CENSOR_CODES, CENSOR_INTERVAL, CENSOR_LEFT, CENSOR_NONE, CENSOR_RIGHT, ModelArrays
from vlsero.errors import DataValidationError, SupportError
from vlsero.model import (
    REGIME_LEFT,
    REGIME_RIGHT,
    ParameterState,
    PersonDiagParams,
    PersonSgParams,
    PopulationParams,
    sg_geometry,
    tent,
)

logger = logging.getLogger(__name__)

_RIGHT = CENSOR_CODES[CENSOR_RIGHT]
_LEFT = CENSOR_CODES[CENSOR_LEFT]
_INTERVAL = CENSOR_CODES[CENSOR_INTERVAL]
_NONE = CENSOR_CODES[CENSOR_NONE]


# ---------------------------------------------------------------------------
# broadcastable term kernels


def _observation_terms(s, onset, clearance, height, lod, y, b, alpha0, alpha1, sd_true, fp_center, fp_sd):
    """Detection Bernoulli plus the density of a detected load, elementwise.

    A detected load lies above ``lod``, so both the trajectory and the
    false-positive laws are normals renormalized to (lod, inf).
    """
    shedding = (s >= -onset) & (s <= clearance)
    out = dist.bernoulli_logit_logpmf(b, alpha0 + alpha1 * shedding)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = tent(s, lod, height, onset, clearance)
        true_pos = dist.truncnorm_logpdf(y, mu, sd_true, lod, np.inf)
    false_pos = dist.truncnorm_logpdf(y, fp_center, fp_sd, lod, np.inf)
    return out + np.where(b, np.where(shedding, true_pos, false_pos), 0.0)


def _diag_terms(s, v_p, w_a, w_b, y, b, q_flag, pop: PopulationParams, c: AssayConstants):
    sd = np.sqrt(pop.sigma_yy2 * (1.0 + q_flag * pop.delta_Q))
    return _observation_terms(s, w_a, w_b, v_p, c.lod_diag, y, b, pop.alpha0, pop.alpha1, sd,
                              c.false_pos_center_diag, c.false_pos_sd)


def _sg_terms(s_prime, wa_sg, wb_sg, vp_sg, y_sg, b_sg, pop: PopulationParams, c: AssayConstants):
    return _observation_terms(s_prime, wa_sg, wb_sg, vp_sg, c.lod_sg, y_sg, b_sg, pop.alpha0_sg, pop.alpha1_sg,
                              pop.sigma_y_sg, c.false_pos_center_sg, c.false_pos_sd)


def sero_logit(pop: PopulationParams, x_c):
    x_c = np.asarray(x_c, dtype=float)
    if x_c.shape[-1] == 0:
        return pop.beta_C0 + np.zeros(x_c.shape[:-1])
    return pop.beta_C0 + x_c @ pop.beta_C


def _sero_terms(kind, lo, hi, onset, eta, kappa1, kappa2):
    """Marginal log-probability of the censored antibody data given onset and the logit of p."""
    log_p = special.log_expit(eta)
    log_not_p = special.log_expit(-eta)
    lo = np.nan_to_num(lo)
    hi = np.nan_to_num(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        right = np.logaddexp(log_not_p, log_p + np.log(dist.gamma_sf(lo - onset, kappa1, kappa2)))
        left = log_p + np.log(dist.gamma_cdf(hi - onset, kappa1, kappa2))
        mass = dist.gamma_cdf(hi - onset, kappa1, kappa2) - dist.gamma_cdf(lo - onset, kappa1, kappa2)
        interval = np.where(mass > 0, log_p + np.log(np.where(mass > 0, mass, 1.0)), -np.inf)
    return np.select([kind == _RIGHT, kind == _LEFT, kind == _INTERVAL], [right, left, interval], 0.0)


def sero_design(arrays: ModelArrays, v_p, model: ModelConfig):
    """X_C with the latent-peak column filled from the current v_p."""
    x_c = arrays.X_C.copy()
    if arrays.peak_index >= 0:
        x_c[:, arrays.peak_index] = np.asarray(v_p) - model.peak_vp_center
    return x_c


# ---------------------------------------------------------------------------
# record-level operations


def loglik_diag_swab(swab, person: PersonDiagParams, ref_peak_day, pop: PopulationParams, c: AssayConstants):
    s = swab.day - ref_peak_day - person.t_p
    return float(_diag_terms(s, person.v_p, person.w_a, person.w_b, swab.y_diag, swab.b_diag,
                             swab.q_flag, pop, c))


def loglik_sg_swab(swab, person: PersonDiagParams, sg: PersonSgParams, ref_peak_day,
                   pop: PopulationParams, c: AssayConstants):
    """sgRNA contribution of one swab; zero when not assayed or when the diagnostic was negative."""
    if swab.b_sg and not swab.b_diag:
        raise DataValidationError([(None, None, f"person {swab.person_id} day {swab.day}: "
                                                "sgRNA detected without detectable diagnostic RNA")])
    if swab.sg_missing or swab.y_sg is None or not swab.b_diag:
        return 0.0
    wa_sg, wb_sg, vp_sg = sg_geometry(person.w_a, person.w_b, person.v_p, sg.t_d, sg.w_d, sg.q)
    if not (wa_sg > 0 and wb_sg > 0):
        return -np.inf
    s_prime = swab.day - ref_peak_day - person.t_p - sg.t_d
    return float(_sg_terms(s_prime, wa_sg, wb_sg, vp_sg, swab.y_sg, bool(swab.b_sg), pop, c))


def loglik_sero_person(sero, person: PersonDiagParams, ref_peak_day, pop: PopulationParams, x_c=()):
    """Seroconversion data of one person with C and the waiting time integrated out.

    ``x_c`` are the person's X_C values in covariate order, latent peak already filled in.
    """
    kind = CENSOR_CODES[sero.censor_kind]
    if kind == _NONE:
        return 0.0
    onset = ref_peak_day + person.t_p - person.w_a
    eta = sero_logit(pop, np.asarray(x_c, dtype=float).reshape(-1))
    lo = np.nan if sero.bound_lo is None else sero.bound_lo
    hi = np.nan if sero.bound_hi is None else sero.bound_hi
    return float(_sero_terms(np.asarray(kind), lo, hi, onset, eta, pop.kappa1, pop.kappa2))


# ---------------------------------------------------------------------------
# vectorized person-level terms


def _check_dimensions(state: ParameterState, arrays: ModelArrays):
    if state.n_persons != arrays.n_persons or tuple(state.person_ids) != tuple(arrays.person_ids):
        raise ValueError(f"state holds {state.n_persons} persons, data {arrays.n_persons}")


def loglik_terms(state: ParameterState, arrays: ModelArrays, model: ModelConfig):
    """Per-person log-likelihood split into ``diag``, ``sg`` and ``sero`` arrays."""
    _check_dimensions(state, arrays)
    c = model.assay
    pop = state.pop
    if arrays.n_persons == 0:
        empty = np.zeros(0)
        return {"diag": empty, "sg": empty, "sero": empty}
    col = (slice(None), None)
    s = arrays.day - arrays.ref_day[col] - state.t_p[col]
    diag = _diag_terms(s, state.v_p[col], state.w_a[col], state.w_b[col], arrays.y, arrays.b,
                       arrays.q_flag, pop, c)
    diag = np.where(arrays.present, diag, 0.0).sum(axis=1)

    wa_sg, wb_sg, vp_sg = state.sg_geometry()
    s_prime = s - state.t_d[col]
    sg = _sg_terms(s_prime, wa_sg[col], wb_sg[col], vp_sg[col], arrays.y_sg, arrays.b_sg, pop, c)
    sg = np.where(arrays.sg_obs, sg, 0.0).sum(axis=1)

    onset = arrays.ref_day + state.t_p - state.w_a
    eta = sero_logit(pop, sero_design(arrays, state.v_p, model))
    sero = _sero_terms(arrays.sero_kind, arrays.sero_lo, arrays.sero_hi, onset, eta, pop.kappa1, pop.kappa2)
    return {"diag": diag, "sg": sg, "sero": sero}


def _t_p_logprior(t_p, regime, align: PeakAlignmentConfig):
    left = dist.truncnorm_logpdf(t_p, align.mu_tpL, align.sigma_tpL, -np.inf, align.LEFT_UPPER)
    right = dist.truncnorm_logpdf(t_p, align.mu_tpR, align.sigma_tpR, align.RIGHT_LOWER, np.inf)
    center = dist.normal_logpdf(t_p, 0.0, align.sigma_tp)
    return np.select([regime == REGIME_LEFT, regime == REGIME_RIGHT], [left, right], center)


def effect_means(pop: PopulationParams, arrays: ModelArrays):
    """Covariate-shifted means of (log v_p, log w_a, log w_b), shape (n, 3)."""
    means = np.empty((arrays.n_persons, 3))
    means[:, 0] = pop.mu_lvp + arrays.X_vp @ pop.beta_vp
    means[:, 1] = pop.mu_lwa + arrays.X_wa @ pop.beta_wa
    means[:, 2] = pop.mu_lwb + arrays.X_wb @ pop.beta_wb
    return means


def log_effects(state: ParameterState):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.column_stack([state.v_p, state.w_a, state.w_b]))


def person_logprior(state: ParameterState, arrays: ModelArrays, model: ModelConfig):
    """Per-person prior terms: random effects, t_p regime, and the sgRNA coupling block."""
    _check_dimensions(state, arrays)
    pop = state.pop
    n = arrays.n_persons
    if n == 0:
        return np.zeros(0)
    positive = (state.v_p > 0) & (state.w_a > 0) & (state.w_b > 0)
    logs = log_effects(state)
    safe_logs = np.where(positive[:, None], logs, 0.0)
    try:
        mvn = dist.mvnormal3_logpdf(safe_logs, effect_means(pop, arrays), pop.Sigma_log)
    except SupportError:
        return np.full(n, -np.inf)
    out = mvn - safe_logs.sum(axis=1)
    out += _t_p_logprior(state.t_p, arrays.regime, model.alignment)
    out += dist.truncnorm_logpdf(state.t_d, pop.mu_td, model.td_sd, -state.w_a, state.w_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_wd = np.log(state.w_d)
        log_room = np.log(state.w_b - state.t_d)
    out += np.where(state.w_d > 0, dist.truncnorm_logpdf(log_wd, pop.mu_lwd, pop.sigma_lwd, 0.0, log_room) - log_wd,
                    -np.inf)
    out += dist.beta_logpdf(state.q, pop.gamma1, pop.gamma2)
    wa_sg, wb_sg, _ = state.sg_geometry()
    ok = positive & (wa_sg > 0) & (wb_sg > 0)
    return np.where(ok & ~np.isnan(out), out, -np.inf)


def person_logdensity(state: ParameterState, arrays: ModelArrays, model: ModelConfig):
    """Unnormalized conditional log-density of each person's block given the population values."""
    prior = person_logprior(state, arrays, model)
    terms = loglik_terms(state, arrays, model)
    lik = terms["diag"] + terms["sg"] + terms["sero"]
    with np.errstate(invalid="ignore"):
        total = prior + lik
    return np.where(np.isfinite(prior) & ~np.isnan(total), total, -np.inf)


def population_logprior(pop: PopulationParams, priors: PriorConfig):
    out = 0.0
    for name in PriorConfig.NORMAL:
        mean, sd = getattr(priors, name)
        out += float(dist.normal_logpdf(getattr(pop, name), mean, sd))
    if not pop.sigma_yy2 > 0:
        return -np.inf
    sigma_yy = np.sqrt(pop.sigma_yy2)
    out += float(dist.half_cauchy_logpdf(sigma_yy, priors.sigma_yy_scale)) - np.log(2.0 * sigma_yy)
    out += float(dist.half_cauchy_logpdf(pop.sigma_y_sg, priors.sigma_y_sg_scale))
    out += float(dist.half_cauchy_logpdf(pop.sigma_lwd, priors.sigma_lwd_scale))
    out += float(dist.beta_logpdf(pop.delta_Q, *priors.delta_Q))
    for name in ("gamma1", "gamma2", "kappa1", "kappa2"):
        shape, rate = getattr(priors, name)
        out += float(dist.gamma_logpdf(getattr(pop, name), shape, rate))
    for name in PopulationParams.VECTORS:
        out += float(np.sum(dist.normal_logpdf(getattr(pop, name), 0.0, priors.beta_sd)))
    if not np.isfinite(out):
        return -np.inf
    try:
        iw = dist.InverseWishart(priors.sigma_log_nu, np.asarray(priors.sigma_log_scale, dtype=float))
    except SupportError:
        return -np.inf
    sigma = pop.Sigma_log
    if not np.allclose(sigma, sigma.T):
        return -np.inf
    return out + iw.logpdf(sigma)


def logprior(state: ParameterState, arrays: ModelArrays, model: ModelConfig):
    pop_part = population_logprior(state.pop, model.priors)
    if not np.isfinite(pop_part):
        return -np.inf
    person = person_logprior(state, arrays, model)
    total = pop_part + float(np.sum(person))
    return total if not np.isnan(total) else -np.inf


def logposterior(state: ParameterState, arrays: ModelArrays, model: ModelConfig):
    """logprior plus every likelihood term; -inf when any component is -inf."""
    pop_part = population_logprior(state.pop, model.priors)
    if not np.isfinite(pop_part):
        return -np.inf
    person = person_logdensity(state, arrays, model)
    total = pop_part + float(np.sum(person))
    return total if not np.isnan(total) else -np.inf


def sero_probabilities(state: ParameterState, arrays: ModelArrays, model: ModelConfig):
    """Posterior probability that each person ever seroconverts, given the antibody data.

    Right-censored persons: p(1 - F) / ((1 - p) + p(1 - F)); left or interval: 1;
    no antibody data: p itself.
    """
    _check_dimensions(state, arrays)
    pop = state.pop
    eta = sero_logit(pop, sero_design(arrays, state.v_p, model))
    onset = arrays.ref_day + state.t_p - state.w_a
    return sero_posterior(arrays.sero_kind, arrays.sero_lo, onset, eta, pop.kappa1, pop.kappa2)


def sero_posterior(kind, lo, onset, eta, kappa1, kappa2):
    """Elementwise P(C = 1 | antibody data); broadcasts over draws and persons."""
    p = special.expit(eta)
    sf = dist.gamma_sf(np.nan_to_num(lo) - onset, kappa1, kappa2)
    with np.errstate(invalid="ignore", divide="ignore"):
        right = p * sf / ((1.0 - p) + p * sf)
    return np.select(
        [kind == _RIGHT, (kind == _LEFT) | (kind == _INTERVAL)],
        [np.nan_to_num(right), np.ones_like(p)],
        p,
    )
