"""Model symbols as typed values, and the pure trajectory and detection functions.

Time conventions: ``s`` is days since a person's latent diagnostic peak,
``s'`` days since the latent sgRNA peak. Loads are log10 copies/ml.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from vlsero.config import PEAK_COVARIATE, AssayConstants, CovariateSelection
from vlsero.errors import ConfigError, SupportError

REGIME_CENTER = 0
REGIME_LEFT = 1
REGIME_RIGHT = 2
REGIME_NAMES = {REGIME_CENTER: "center", REGIME_LEFT: "left", REGIME_RIGHT: "right"}

PERSON_FIELDS = ("v_p", "w_a", "w_b", "t_p", "t_d", "w_d", "q")
EFFECT_LABELS = ("vp", "wa", "wb")


def expit(x):
    return special.expit(x)


@dataclass(frozen=True)
class PersonDiagParams:
    v_p: float
    w_a: float
    w_b: float
    t_p: float = 0.0

    def problems(self, regime=REGIME_CENTER):
        out = []
        for name in ("v_p", "w_a", "w_b"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if regime == REGIME_LEFT and self.t_p > 1.0:
            out.append("t_p must be <= 1 for an early observed peak")
        if regime == REGIME_RIGHT and self.t_p < -1.0:
            out.append("t_p must be >= -1 for a late observed peak")
        return out


@dataclass(frozen=True)
class PersonSgParams:
    t_d: float
    w_d: float
    q: float

    def problems(self, diag: PersonDiagParams):
        out = []
        if not -diag.w_a <= self.t_d <= diag.w_b:
            out.append("t_d must lie in [-w_a, w_b]")
        if not 1.0 <= self.w_d <= diag.w_b - self.t_d:
            out.append("w_d must lie in [1, w_b - t_d]")
        if not 0 < self.q < 1:
            out.append("q must lie in (0, 1)")
        wa_sg, wb_sg, _ = sg_geometry(diag.w_a, diag.w_b, diag.v_p, self.t_d, self.w_d, self.q)
        if not (wa_sg > 0 and wb_sg > 0):
            out.append("derived sgRNA durations must be positive")
        return out


def tent(s, lod, height, rise, fall):
    """Piecewise-linear log10 trajectory peaking at ``lod + height`` when s = 0."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = lod + height + (height / rise) * s
        down = lod + height - (height / fall) * s
    return np.where(s <= 0, up, down)


def latent_mean_diag(p: PersonDiagParams, s, c: AssayConstants):
    """Latent diagnostic load at ``s``; may drop below LoD outside [-w_a, w_b]."""
    return tent(s, c.lod_diag, p.v_p, p.w_a, p.w_b)


def sg_geometry(w_a, w_b, v_p, t_d, w_d, q):
    """(w'_a, w'_b, v'_p) without support checks, vectorized."""
    return w_a + t_d, w_b - t_d - w_d, q * v_p


def derive_sg_geometry(p: PersonDiagParams, g: PersonSgParams):
    """Return (w'_a, w'_b, v'_p); raises :class:`SupportError` for a rejected state."""
    problems = g.problems(p)
    if problems:
        raise SupportError("; ".join(problems))
    return sg_geometry(p.w_a, p.w_b, p.v_p, g.t_d, g.w_d, g.q)


def recover_sg_offsets(p: PersonDiagParams, wa_sg, wb_sg):
    """Inverse of :func:`derive_sg_geometry` for the durations: returns (t_d, w_d)."""
    t_d = wa_sg - p.w_a
    return t_d, p.w_b - t_d - wb_sg


def latent_mean_sg(p: PersonDiagParams, g: PersonSgParams, s_prime, c: AssayConstants):
    """Latent sgRNA load at ``s_prime``; q = 0 gives a trajectory flat at the sgRNA LoD."""
    wa_sg, wb_sg, vp_sg = sg_geometry(p.w_a, p.w_b, p.v_p, g.t_d, g.w_d, g.q)
    if not (wa_sg > 0 and wb_sg > 0):
        raise SupportError("derived sgRNA durations must be positive")
    return tent(s_prime, c.lod_sg, vp_sg, wa_sg, wb_sg)


def shedding_indicator(onset, clearance, s):
    """1 while shedding: -onset <= s <= clearance (closed interval)."""
    s = np.asarray(s, dtype=float)
    return ((s >= -np.asarray(onset)) & (s <= np.asarray(clearance))).astype(int)


def detection_prob(alpha0, alpha1, S):
    return expit(alpha0 + alpha1 * np.asarray(S))


def swab_time_offset(swab_day, ref_peak_day, t_p):
    return np.asarray(swab_day, dtype=float) - ref_peak_day - t_p


def sg_time_offset(s, t_d):
    return np.asarray(s, dtype=float) - t_d


@dataclass(eq=False)
class PopulationParams:
    """Population-level parameters. Beta vectors follow the order in :class:`CovariateSelection`."""

    mu_lvp: float
    mu_lwa: float
    mu_lwb: float
    Sigma_log: np.ndarray
    beta_vp: np.ndarray
    beta_wa: np.ndarray
    beta_wb: np.ndarray
    alpha0: float
    alpha1: float
    alpha0_sg: float
    alpha1_sg: float
    sigma_yy2: float
    delta_Q: float
    sigma_y_sg: float
    mu_td: float
    mu_lwd: float
    sigma_lwd: float
    gamma1: float
    gamma2: float
    beta_C0: float
    beta_C: np.ndarray
    kappa1: float
    kappa2: float

    POSITIVE = ("sigma_yy2", "sigma_y_sg", "sigma_lwd", "gamma1", "gamma2", "kappa1", "kappa2")
    SCALARS = (
        "mu_lvp", "mu_lwa", "mu_lwb", "alpha0", "alpha1", "alpha0_sg", "alpha1_sg",
        "sigma_yy2", "delta_Q", "sigma_y_sg", "mu_td", "mu_lwd", "sigma_lwd",
        "gamma1", "gamma2", "beta_C0", "kappa1", "kappa2",
    )
    VECTORS = {"beta_vp": "vp", "beta_wa": "wa", "beta_wb": "wb", "beta_C": "sero"}

    def __post_init__(self):
        self.Sigma_log = np.asarray(self.Sigma_log, dtype=float).reshape(3, 3)
        for name in self.VECTORS:
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    def problems(self):
        out = []
        if not np.allclose(self.Sigma_log, self.Sigma_log.T):
            out.append("Sigma_log must be symmetric")
        elif np.any(np.linalg.eigvalsh(self.Sigma_log) <= 0):
            out.append("Sigma_log must be positive-definite")
        for name in self.POSITIVE:
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if not 0 < self.delta_Q < 1:
            out.append("delta_Q must lie in (0, 1)")
        return out

    def copy(self):
        return dataclasses.replace(
            self,
            Sigma_log=self.Sigma_log.copy(),
            **{name: getattr(self, name).copy() for name in self.VECTORS},
        )

    def tpr(self):
        return float(expit(self.alpha0 + self.alpha1))

    def tnr(self):
        return float(1.0 - expit(self.alpha0))

    def tpr_sg(self):
        return float(expit(self.alpha0_sg + self.alpha1_sg))

    def tnr_sg(self):
        return float(1.0 - expit(self.alpha0_sg))

    @classmethod
    def from_dict(cls, mapping, covariates: CovariateSelection):
        """Build from a flat mapping; beta vectors are ``{covariate: value}`` objects."""
        problems = []
        kwargs = {}
        mapping = dict(mapping)
        for name in cls.SCALARS:
            if name not in mapping:
                problems.append(f"truth.{name}: missing required key")
            else:
                kwargs[name] = float(mapping.pop(name))
        if "Sigma_log" not in mapping:
            problems.append("truth.Sigma_log: missing required key")
        else:
            kwargs["Sigma_log"] = np.asarray(mapping.pop("Sigma_log"), dtype=float)
        for name, group in cls.VECTORS.items():
            values = dict(mapping.pop(name, {}) or {})
            names = getattr(covariates, group)
            for key in values:
                if key not in names:
                    problems.append(f"truth.{name}.{key}: covariate not selected in model.covariates.{group}")
            kwargs[name] = np.array([float(values.get(key, 0.0)) for key in names])
        for key in mapping:
            problems.append(f"truth.{key}: unknown key")
        if problems:
            raise ConfigError(problems)
        pop = cls(**kwargs)
        bad = pop.problems()
        if bad:
            raise ConfigError([f"truth: {p}" for p in bad])
        return pop

    def to_dict(self, covariates: CovariateSelection):
        out = {name: float(getattr(self, name)) for name in self.SCALARS}
        out["Sigma_log"] = self.Sigma_log.tolist()
        for name, group in self.VECTORS.items():
            out[name] = {key: float(v) for key, v in zip(getattr(covariates, group), getattr(self, name))}
        return out


def _global_columns(covariates: CovariateSelection):
    cols = ["mu_lvp", "mu_lwa", "mu_lwb"]
    for i in range(3):
        for j in range(i, 3):
            cols.append(f"Sigma_log[{EFFECT_LABELS[i]},{EFFECT_LABELS[j]}]")
    cols += [f"beta_vp[{c}]" for c in covariates.vp]
    cols += [f"beta_wa[{c}]" for c in covariates.wa]
    cols += [f"beta_wb[{c}]" for c in covariates.wb]
    cols += ["alpha0", "alpha1", "alpha0_sg", "alpha1_sg", "sigma_yy2", "delta_Q", "sigma_y_sg",
             "mu_td", "mu_lwd", "sigma_lwd", "gamma1", "gamma2", "beta_C0"]
    cols += [f"beta_C[{c}]" for c in covariates.sero]
    cols += ["kappa1", "kappa2"]
    return cols


@dataclass(eq=False)
class ParameterState:
    """One point of the joint parameter space: population values plus per-person arrays."""

    pop: PopulationParams
    v_p: np.ndarray
    w_a: np.ndarray
    w_b: np.ndarray
    t_p: np.ndarray
    t_d: np.ndarray
    w_d: np.ndarray
    q: np.ndarray
    person_ids: tuple = field(default=())

    def __post_init__(self):
        for name in PERSON_FIELDS:
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        sizes = {getattr(self, name).shape for name in PERSON_FIELDS}
        if len(sizes) != 1:
            raise ValueError("per-person arrays must share one length")
        self.person_ids = tuple(self.person_ids) or tuple(str(i) for i in range(self.n_persons))
        if len(self.person_ids) != self.n_persons:
            raise ValueError("person_ids does not match the per-person arrays")

    @property
    def n_persons(self):
        return self.v_p.shape[0]

    def copy(self):
        return ParameterState(self.pop.copy(), *(getattr(self, n).copy() for n in PERSON_FIELDS),
                              person_ids=self.person_ids)

    def person_diag(self, i) -> PersonDiagParams:
        return PersonDiagParams(float(self.v_p[i]), float(self.w_a[i]), float(self.w_b[i]), float(self.t_p[i]))

    def person_sg(self, i) -> PersonSgParams:
        return PersonSgParams(float(self.t_d[i]), float(self.w_d[i]), float(self.q[i]))

    def sg_geometry(self):
        return sg_geometry(self.w_a, self.w_b, self.v_p, self.t_d, self.w_d, self.q)

    @staticmethod
    def column_names(covariates: CovariateSelection, person_ids):
        cols = _global_columns(covariates)
        for name in PERSON_FIELDS:
            cols += [f"{name}[{pid}]" for pid in person_ids]
        return cols

    def flatten(self):
        pop = self.pop
        values = [pop.mu_lvp, pop.mu_lwa, pop.mu_lwb]
        values += [pop.Sigma_log[i, j] for i in range(3) for j in range(i, 3)]
        values += list(pop.beta_vp) + list(pop.beta_wa) + list(pop.beta_wb)
        values += [pop.alpha0, pop.alpha1, pop.alpha0_sg, pop.alpha1_sg, pop.sigma_yy2, pop.delta_Q,
                   pop.sigma_y_sg, pop.mu_td, pop.mu_lwd, pop.sigma_lwd, pop.gamma1, pop.gamma2, pop.beta_C0]
        values += list(pop.beta_C) + [pop.kappa1, pop.kappa2]
        parts = [np.asarray(values, dtype=float)] + [getattr(self, name) for name in PERSON_FIELDS]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, values, covariates: CovariateSelection, person_ids):
        values = np.asarray(values, dtype=float)
        n = len(person_ids)
        expected = len(_global_columns(covariates)) + n * len(PERSON_FIELDS)
        if values.shape != (expected,):
            raise ValueError(f"expected {expected} values, got {values.shape}")
        it = iter(values.tolist())

        def take(k):
            return np.array([next(it) for _ in range(k)])

        mu_lvp, mu_lwa, mu_lwb = take(3)
        upper = take(6)
        sigma = np.empty((3, 3))
        k = 0
        for i in range(3):
            for j in range(i, 3):
                sigma[i, j] = sigma[j, i] = upper[k]
                k += 1
        beta_vp, beta_wa, beta_wb = take(len(covariates.vp)), take(len(covariates.wa)), take(len(covariates.wb))
        (alpha0, alpha1, alpha0_sg, alpha1_sg, sigma_yy2, delta_Q, sigma_y_sg,
         mu_td, mu_lwd, sigma_lwd, gamma1, gamma2, beta_C0) = take(13)
        beta_C = take(len(covariates.sero))
        kappa1, kappa2 = take(2)
        pop = PopulationParams(
            mu_lvp=mu_lvp, mu_lwa=mu_lwa, mu_lwb=mu_lwb, Sigma_log=sigma,
            beta_vp=beta_vp, beta_wa=beta_wa, beta_wb=beta_wb,
            alpha0=alpha0, alpha1=alpha1, alpha0_sg=alpha0_sg, alpha1_sg=alpha1_sg,
            sigma_yy2=sigma_yy2, delta_Q=delta_Q, sigma_y_sg=sigma_y_sg, mu_td=mu_td,
            mu_lwd=mu_lwd, sigma_lwd=sigma_lwd, gamma1=gamma1, gamma2=gamma2,
            beta_C0=beta_C0, beta_C=beta_C, kappa1=kappa1, kappa2=kappa2,
        )
        persons = {name: take(n) for name in PERSON_FIELDS}
        return cls(pop, person_ids=tuple(person_ids), **persons)


def uses_peak_covariate(covariates: CovariateSelection) -> bool:
    return PEAK_COVARIATE in covariates.sero
