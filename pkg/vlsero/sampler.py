"""Adaptive Metropolis-within-Gibbs over the joint posterior.

One sweep updates, in a fixed order:

1. the person blocks ``v_p``, ``w_a``, ``w_b``, ``t_p``, ``(t_d, w_d)`` and ``q``.
   Persons are conditionally independent given the population values, so every
   person is proposed at once and accepted individually;
2. ``Sigma_log`` by its conjugate inverse-Wishart draw;
3. each population scalar and each covariate coefficient.

Random-walk steps run on transformed scales (log for positive parameters,
logit for unit-interval ones) and their log step sizes are tuned by a
Robbins-Monro rule at the end of every adaptation window during warmup only.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import special

from vlsero import distributions as dist
from vlsero import likelihood as lik
from vlsero.config import ChainConfig, CovariateSelection, ModelConfig, PriorConfig
from vlsero.data import CENSOR_CODES, CENSOR_INTERVAL, CENSOR_LEFT, ModelArrays
from vlsero.errors import IneligibleDataError, NumericalError
from vlsero.model import REGIME_LEFT, REGIME_RIGHT, ParameterState, PopulationParams

logger = logging.getLogger(__name__)


class Transform:
    """Map between a parameter and its unconstrained sampling scale."""

    name = "identity"

    def forward(self, x):
        return np.asarray(x, dtype=float)

    def inverse(self, z):
        return np.asarray(z, dtype=float)

    def log_jacobian(self, z):
        """log |dx/dz|"""
        return np.zeros_like(np.asarray(z, dtype=float))


class LogTransform(Transform):
    name = "log"

    def forward(self, x):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(x, dtype=float))

    def inverse(self, z):
        return np.exp(z)

    def log_jacobian(self, z):
        return np.asarray(z, dtype=float)


class LogitTransform(Transform):
    name = "logit"

    def forward(self, x):
        return special.logit(np.asarray(x, dtype=float))

    def inverse(self, z):
        return special.expit(z)

    def log_jacobian(self, z):
        return special.log_expit(z) + special.log_expit(-np.asarray(z))


IDENTITY = Transform()
LOG = LogTransform()
LOGIT = LogitTransform()

PERSON_TRANSFORMS = {"v_p": LOG, "w_a": LOG, "w_b": LOG, "t_p": IDENTITY, "q": LOGIT}
OFFSET_BLOCK = "t_d,w_d"


def transform_for(name) -> Transform:
    if name in PopulationParams.POSITIVE:
        return LOG
    if name == "delta_Q":
        return LOGIT
    return IDENTITY


@dataclass
class StepSize:
    """Random-walk scale on the transformed axis with diminishing Robbins-Monro adaptation."""

    log_step: np.ndarray
    target: float
    accepted: np.ndarray = None
    proposed: int = 0
    windows: int = 0
    frozen: bool = False
    total_accepted: np.ndarray = None
    total_proposed: int = 0

    def __post_init__(self):
        self.log_step = np.array(self.log_step, dtype=float)
        self.accepted = np.zeros_like(self.log_step)
        self.total_accepted = np.zeros_like(self.log_step)

    @property
    def scale(self):
        return np.exp(self.log_step)

    def record(self, accept):
        self.accepted += accept
        self.proposed += 1
        self.total_accepted += accept
        self.total_proposed += 1

    def adapt(self):
        """Close a window: nudge log steps toward the target rate, then reset the counters."""
        if self.proposed == 0:
            return None
        rate = self.accepted / self.proposed
        if not self.frozen:
            self.windows += 1
            gain = min(1.0, self.windows ** -0.5)
            self.log_step = self.log_step + gain * (rate - self.target) / (self.target * (1.0 - self.target))
        self.accepted = np.zeros_like(self.log_step)
        self.proposed = 0
        return rate

    def freeze(self):
        self.frozen = True
        self.total_accepted = np.zeros_like(self.log_step)
        self.total_proposed = 0

    def acceptance_rate(self):
        if self.total_proposed == 0:
            return None
        return float(np.mean(self.total_accepted / self.total_proposed))


def metropolis_step(z, log_target, target_fn, scale, rng):
    """Elementwise random-walk Metropolis on ``z``.

    ``target_fn`` maps a proposal of the same shape to its log density (already
    including any Jacobian). Returns the new values, their log densities and the
    acceptance mask.
    """
    z = np.asarray(z, dtype=float)
    proposal = z + scale * rng.standard_normal(z.shape)
    return metropolis_accept(z, log_target, proposal, target_fn(proposal), rng)


def metropolis_accept(z, log_target, proposal, log_target_new, rng):
    with np.errstate(divide="ignore", invalid="ignore"):
        log_u = np.log(rng.uniform(size=np.shape(log_target)))
        accept = log_u < (log_target_new - log_target)
    accept = np.asarray(accept & ~np.isnan(log_target_new))
    mask = accept if np.ndim(z) == np.ndim(accept) else accept[..., None]
    return np.where(mask, proposal, z), np.where(accept, log_target_new, log_target), accept


def _prior_centers(priors: PriorConfig, covariates: CovariateSelection) -> PopulationParams:
    scale = np.asarray(priors.sigma_log_scale, dtype=float)
    return PopulationParams(
        mu_lvp=priors.mu_lvp[0], mu_lwa=priors.mu_lwa[0], mu_lwb=priors.mu_lwb[0],
        Sigma_log=scale / (priors.sigma_log_nu - 4.0),
        beta_vp=np.zeros(len(covariates.vp)), beta_wa=np.zeros(len(covariates.wa)),
        beta_wb=np.zeros(len(covariates.wb)),
        alpha0=priors.alpha0[0], alpha1=priors.alpha1[0],
        alpha0_sg=priors.alpha0_sg[0], alpha1_sg=priors.alpha1_sg[0],
        sigma_yy2=priors.sigma_yy_scale ** 2, delta_Q=priors.delta_Q[0] / sum(priors.delta_Q),
        sigma_y_sg=priors.sigma_y_sg_scale, mu_td=priors.mu_td[0], mu_lwd=priors.mu_lwd[0],
        sigma_lwd=priors.sigma_lwd_scale, gamma1=priors.gamma1[0] / priors.gamma1[1],
        gamma2=priors.gamma2[0] / priors.gamma2[1], beta_C0=priors.beta_C0[0],
        beta_C=np.zeros(len(covariates.sero)),
        kappa1=priors.kappa1[0] / priors.kappa1[1], kappa2=priors.kappa2[0] / priors.kappa2[1],
    )


def init_state(arrays: ModelArrays, model: ModelConfig, chain: ChainConfig, rng) -> ParameterState:
    """Starting point read off each person's observed positive-swab profile.

    w_a and w_b span the observed peak to the first and last positive swab
    (at least half a day) plus a jittered buffer; v_p is the observed peak
    height above LoD.
    """
    n = arrays.n_persons
    has_positive = arrays.b.any(axis=1)
    if not has_positive.all():
        bad = [pid for pid, ok in zip(arrays.person_ids, has_positive) if not ok]
        raise IneligibleDataError([(None, None, f"person {pid} has no positive diagnostic swab") for pid in bad])
    pos_day = np.where(arrays.b, arrays.day, np.nan)
    first_pos = np.nanmin(pos_day, axis=1) if n else np.zeros(0)
    last_pos = np.nanmax(pos_day, axis=1) if n else np.zeros(0)
    jitter = rng.uniform(0.0, chain.init_step, size=(2, n))
    buffer = chain.init_buffer

    t_p = np.select([arrays.regime == REGIME_LEFT, arrays.regime == REGIME_RIGHT], [-0.5, 0.5], 0.0)
    w_a = np.maximum(arrays.ref_day - first_pos, 0.5) + buffer + jitter[0]
    w_b = np.maximum(last_pos - arrays.ref_day, 0.5) + buffer + jitter[1]
    y_max = np.where(arrays.present, arrays.y, -np.inf).max(axis=1) if n else np.zeros(0)
    v_p = y_max - model.assay.lod_diag

    # onset must precede the first positive antibody test
    first_igg = np.where(
        np.isin(arrays.sero_kind, [CENSOR_CODES[CENSOR_LEFT], CENSOR_CODES[CENSOR_INTERVAL]]),
        arrays.sero_hi, np.inf,
    )
    onset = arrays.ref_day + t_p - w_a
    w_a = np.where(onset >= first_igg - 1.0, arrays.ref_day + t_p - first_igg + 1.0 + jitter[0], w_a)

    t_d = np.clip(0.5, -w_a + 0.1, w_b - 1.1)
    w_d = np.clip(2.0, 1.0, np.maximum(w_b - t_d - 0.1, 1.0))
    q = np.full(n, 0.6)
    state = ParameterState(_prior_centers(model.priors, model.covariates), v_p, w_a, w_b, t_p, t_d, w_d, q,
                           person_ids=arrays.person_ids)
    value = lik.logposterior(state, arrays, model)
    if not np.isfinite(value):
        raise NumericalError("log-posterior is not finite at the initial state", dump=_dump(state, arrays, model))
    return state


def _dump(state, arrays, model):
    terms = lik.loglik_terms(state, arrays, model)
    prior = lik.person_logprior(state, arrays, model)
    bad = ~np.isfinite(prior + terms["diag"] + terms["sg"] + terms["sero"])
    return {
        "population_logprior": float(lik.population_logprior(state.pop, model.priors)),
        "persons": {
            pid: {"prior": float(prior[i]), "diag": float(terms["diag"][i]),
                  "sg": float(terms["sg"][i]), "sero": float(terms["sero"][i])}
            for i, pid in enumerate(arrays.person_ids) if bad[i]
        },
    }


def step_sigma_log(state: ParameterState, arrays: ModelArrays, model: ModelConfig, rng) -> ParameterState:
    """Conjugate draw Sigma_log ~ IW(nu + n, scale + R'R) from the random-effect residuals."""
    priors = model.priors
    residuals = lik.log_effects(state) - lik.effect_means(state.pop, arrays)
    scale = np.asarray(priors.sigma_log_scale, dtype=float) + residuals.T @ residuals
    law = dist.InverseWishart(priors.sigma_log_nu + arrays.n_persons, scale)
    new = state.copy()
    new.pop.Sigma_log = law.sample(rng)
    return new


def _global_params(covariates: CovariateSelection):
    params = [(name, None) for name in PopulationParams.SCALARS]
    for name, group in PopulationParams.VECTORS.items():
        params += [(name, k) for k in range(len(getattr(covariates, group)))]
    return params


def _get(pop, param):
    name, k = param
    value = getattr(pop, name)
    return float(value if k is None else value[k])


def _set(pop, param, value):
    name, k = param
    if k is None:
        setattr(pop, name, float(value))
    else:
        getattr(pop, name)[k] = float(value)


def param_label(param):
    name, k = param
    return name if k is None else f"{name}[{k}]"


def step_scalar(state: ParameterState, param, arrays: ModelArrays, model: ModelConfig, rng, scale=0.1,
                current=None):
    """One random-walk update of a population scalar; ``param`` is ``name`` or ``(name, index)``.

    Returns ``(state, accepted)``.
    """
    param = (param, None) if isinstance(param, str) else tuple(param)
    transform = transform_for(param[0])
    z = transform.forward(_get(state.pop, param))
    if current is None:
        current = lik.logposterior(state, arrays, model)
    proposal = z + scale * rng.standard_normal()
    candidate = state.copy()
    _set(candidate.pop, param, transform.inverse(proposal))
    new_value = lik.logposterior(candidate, arrays, model)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_u = np.log(rng.uniform())
        accept = bool(log_u < new_value + transform.log_jacobian(proposal) - current - transform.log_jacobian(z))
    return (candidate, True) if accept else (state, False)


class GibbsSampler:
    """Runs one chain; holds the state, the cached per-person densities and the step sizes."""

    def __init__(self, arrays: ModelArrays, model: ModelConfig, chain: ChainConfig, rng, state=None):
        self.arrays = arrays
        self.model = model
        self.chain = chain
        self.rng = rng
        self.state = state if state is not None else init_state(arrays, model, chain, rng)
        n = arrays.n_persons
        init = np.log(chain.init_step)
        self.person_steps = {name: StepSize(np.full(n, init), chain.target_accept_scalar)
                             for name in PERSON_TRANSFORMS}
        self.offset_step = StepSize(np.full((n, 2), init), chain.target_accept_block)
        self.globals = _global_params(model.covariates)
        self.global_steps = {p: StepSize(init, chain.target_accept_scalar) for p in self.globals}
        self.adaptation = []

    def person_density(self, state):
        return lik.person_logdensity(state, self.arrays, self.model)

    def step_person(self, name, current):
        transform = PERSON_TRANSFORMS[name]
        step = self.person_steps[name]
        z = transform.forward(getattr(self.state, name))
        log_target = current + transform.log_jacobian(z)

        def target(proposal):
            candidate = self.state.copy()
            setattr(candidate, name, transform.inverse(proposal))
            self._candidate = candidate
            self._candidate_density = self.person_density(candidate)
            return self._candidate_density + transform.log_jacobian(proposal)

        _, _, accept = metropolis_step(z, log_target, target, step.scale, self.rng)
        setattr(self.state, name, np.where(accept, getattr(self._candidate, name), getattr(self.state, name)))
        step.record(accept)
        return np.where(accept, self._candidate_density, current)

    def step_offsets(self, current):
        """Joint update of (t_d, log w_d), whose truncations are coupled."""
        step = self.offset_step
        z = np.column_stack([self.state.t_d, np.log(self.state.w_d)])
        proposal = z + step.scale * self.rng.standard_normal(z.shape)
        candidate = self.state.copy()
        candidate.t_d = proposal[:, 0]
        candidate.w_d = np.exp(proposal[:, 1])
        density = self.person_density(candidate)
        _, _, accept = metropolis_accept(z, current + z[:, 1], proposal, density + proposal[:, 1], self.rng)
        self.state.t_d = np.where(accept, candidate.t_d, self.state.t_d)
        self.state.w_d = np.where(accept, candidate.w_d, self.state.w_d)
        step.record(accept[:, None].astype(float) * np.ones((1, 2)))
        return np.where(accept, density, current)

    def step_globals(self):
        value = lik.logposterior(self.state, self.arrays, self.model)
        for param in self.globals:
            step = self.global_steps[param]
            before = self.state
            self.state, accepted = step_scalar(before, param, self.arrays, self.model, self.rng,
                                               scale=float(step.scale), current=value)
            if accepted:
                value = lik.logposterior(self.state, self.arrays, self.model)
            step.record(float(accepted))
        return value

    def sweep(self):
        if self.arrays.n_persons:
            current = self.person_density(self.state)
            for name in ("v_p", "w_a", "w_b", "t_p"):
                current = self.step_person(name, current)
            current = self.step_offsets(current)
            current = self.step_person("q", current)
        self.state = step_sigma_log(self.state, self.arrays, self.model, self.rng)
        return self.step_globals()

    def _all_steps(self):
        items = [(name, s) for name, s in self.person_steps.items()]
        items.append((OFFSET_BLOCK, self.offset_step))
        items += [(param_label(p), s) for p, s in self.global_steps.items()]
        return items

    def end_window(self, iteration):
        for label, step in self._all_steps():
            rate = step.adapt()
            if rate is None:
                continue
            self.adaptation.append({
                "iteration": iteration, "block": label,
                "accept_rate": float(np.mean(rate)), "log_step": float(np.mean(step.log_step)),
            })
        logger.debug("Adaptation window closed at iteration %d", iteration)

    def freeze(self):
        for _, step in self._all_steps():
            step.freeze()

    def acceptance_report(self):
        return {label: step.acceptance_rate() for label, step in self._all_steps()}

    def step_sizes(self):
        return {label: float(np.mean(np.exp(step.log_step))) for label, step in self._all_steps()}


@dataclass
class ChainOutput:
    chain_id: int
    seed: int
    draws: pd.DataFrame
    person_ids: tuple
    covariates: CovariateSelection
    acceptance: dict = field(default_factory=dict)
    adaptation: pd.DataFrame = None
    step_sizes: dict = field(default_factory=dict)

    @property
    def parameter_columns(self):
        return [c for c in self.draws.columns if c not in ("iteration", "logposterior")]

    @property
    def n_draws(self):
        return len(self.draws)

    def values(self):
        return self.draws[self.parameter_columns].to_numpy(dtype=float)

    def states(self):
        for row in self.values():
            yield ParameterState.from_flat(row, self.covariates, self.person_ids)

    def metadata(self):
        return {
            "chain_id": self.chain_id,
            "seed": self.seed,
            "n_draws": self.n_draws,
            "acceptance": self.acceptance,
            "step_sizes": self.step_sizes,
        }


def run_chain(arrays: ModelArrays, model: ModelConfig, chain: ChainConfig, chain_id=0) -> ChainOutput:
    """Warmup with adaptation, then record every ``thin``-th of ``n_samples`` iterations."""
    rng = dist.make_rng(chain.seed, chain_id)
    sampler = GibbsSampler(arrays, model, chain, rng)
    columns = ParameterState.column_names(model.covariates, arrays.person_ids)
    logger.info("Chain %d: %d warmup + %d sampling iterations over %d persons",
                chain_id, chain.n_warmup, chain.n_samples, arrays.n_persons)

    for it in range(1, chain.n_warmup + 1):
        sampler.sweep()
        if it % chain.adapt_window == 0:
            sampler.end_window(it)
    sampler.freeze()

    values = np.empty((chain.n_retained, len(columns)))
    logpost = np.empty(chain.n_retained)
    iterations = np.empty(chain.n_retained, dtype=int)
    k = 0
    for it in range(1, chain.n_samples + 1):
        value = sampler.sweep()
        if it % chain.thin == 0 and k < chain.n_retained:
            if not np.isfinite(value):
                raise NumericalError(f"chain {chain_id}: log-posterior became non-finite at iteration {it}",
                                     dump=_dump(sampler.state, arrays, model))
            values[k] = sampler.state.flatten()
            logpost[k] = value
            iterations[k] = it
            k += 1

    draws = pd.DataFrame(values, columns=columns)
    draws.insert(0, "logposterior", logpost)
    draws.insert(0, "iteration", iterations)
    acceptance = sampler.acceptance_report()
    rates = [r for r in acceptance.values() if r is not None]
    logger.info("Chain %d finished: %d draws, mean acceptance %s", chain_id, chain.n_retained,
                f"{np.mean(rates):.3f}" if rates else "n/a")
    return ChainOutput(
        chain_id=chain_id, seed=chain.seed, draws=draws, person_ids=arrays.person_ids,
        covariates=model.covariates, acceptance=acceptance,
        adaptation=pd.DataFrame(sampler.adaptation, columns=["iteration", "block", "accept_rate", "log_step"]),
        step_sizes=sampler.step_sizes(),
    )


def _run_one(args):
    return run_chain(*args)


def run(arrays: ModelArrays, model: ModelConfig, chain: ChainConfig, threads=1) -> list[ChainOutput]:
    """All chains; identical results whatever the number of worker processes."""
    jobs = [(arrays, model, chain, chain_id) for chain_id in range(chain.n_chains)]
    threads = max(1, min(int(threads or 1), chain.n_chains, os.cpu_count() or 1))
    if threads == 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_one, jobs))
