"""Configuration dataclasses and the JSON config loader.

Every section of the config file maps to a frozen dataclass. ``from_dict``
collects all missing, unknown and invalid keys of a document before raising,
so one :class:`~vlsero.errors.ConfigError` lists every problem at once.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from vlsero.errors import ConfigError

logger = logging.getLogger(__name__)

PEAK_COVARIATE = "peak_vp"


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_as_tuple(v) for v in value)
    return value


def _build(cls, mapping, section, problems, required=()):
    """Instantiate ``cls`` from ``mapping``, appending problems instead of raising."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, Mapping):
        problems.append(f"{section}: expected an object, got {type(mapping).__name__}")
        return None
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in mapping:
        if key not in names:
            problems.append(f"{section}.{key}: unknown key")
    kwargs = {}
    missing = False
    for name, spec in names.items():
        no_default = spec.default is dataclasses.MISSING and spec.default_factory is dataclasses.MISSING
        if name in mapping:
            kwargs[name] = _as_tuple(mapping[name])
        elif no_default or name in required:
            problems.append(f"{section}.{name}: missing required key")
            missing = True
    if missing:
        return None
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        problems.extend(f"{section}: {p}" for p in exc.problems)
    except (TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
    return None


class _Validated:
    def validate(self) -> list[str]:
        return []

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))


@dataclass(frozen=True)
class AssayConstants(_Validated):
    """Detection and quantification limits, all in log10 copies/ml."""

    lod_diag: float = 2.4
    lod_sg: float = 2.4
    loq_diag: float = 4.9
    false_pos_center_offset: float = 0.5
    false_pos_sd: float = 0.5

    def validate(self):
        problems = []
        if not self.lod_diag < self.loq_diag:
            problems.append("lod_diag must be below loq_diag")
        if not self.false_pos_sd > 0:
            problems.append("false_pos_sd must be positive")
        if not self.false_pos_center_offset > 0:
            problems.append("false_pos_center_offset must be positive")
        return problems

    @property
    def false_pos_center_diag(self) -> float:
        return self.lod_diag + self.false_pos_center_offset

    @property
    def false_pos_center_sg(self) -> float:
        return self.lod_sg + self.false_pos_center_offset


@dataclass(frozen=True)
class PeakAlignmentConfig(_Validated):
    """Priors for the observed-peak to latent-peak offset t_p, in days."""

    mu_tpL: float = -0.5
    sigma_tpL: float = 1.0
    mu_tpR: float = 0.5
    sigma_tpR: float = 1.0
    sigma_tp: float = 1.0
    edge_window: int = 2

    # t_p <= LEFT_UPPER for early-peak persons, t_p >= RIGHT_LOWER for late-peak persons
    LEFT_UPPER = 1.0
    RIGHT_LOWER = -1.0

    def validate(self):
        problems = []
        if not self.mu_tpL < 0 < self.mu_tpR:
            problems.append("need mu_tpL < 0 < mu_tpR")
        for name in ("sigma_tpL", "sigma_tpR", "sigma_tp"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if int(self.edge_window) != self.edge_window or self.edge_window < 1:
            problems.append("edge_window must be an integer >= 1")
        return problems


@dataclass(frozen=True)
class CovariateSelection(_Validated):
    """Covariate names for X_vp, X_wa, X_wb and X_C."""

    vp: tuple = ()
    wa: tuple = ()
    wb: tuple = ()
    sero: tuple = ()

    def validate(self):
        problems = []
        for name in ("vp", "wa", "wb", "sero"):
            names = getattr(self, name)
            if len(set(names)) != len(names):
                problems.append(f"covariates.{name} lists a covariate twice")
            if name != "sero" and PEAK_COVARIATE in names:
                problems.append(f"'{PEAK_COVARIATE}' may only be used as a seroconversion covariate")
        return problems

    def data_columns(self) -> list[str]:
        """Covariate columns that must exist in covariates.csv."""
        seen = []
        for group in (self.vp, self.wa, self.wb, self.sero):
            for name in group:
                if name != PEAK_COVARIATE and name not in seen:
                    seen.append(name)
        return seen


@dataclass(frozen=True)
class PriorConfig(_Validated):
    """Prior hyperparameters. Normal priors are (mean, sd), beta/gamma priors (a, b).

    The seroconversion intercept beta_C0 defaults to N(0, 1.5) on the logit scale,
    which keeps about 95% of prior mass for expit(beta_C0) between 0.05 and 0.95.
    Covariate coefficients share the N(0, beta_sd) prior.
    """

    mu_lvp: tuple = (math.log(5.5), 0.5)
    mu_lwa: tuple = (math.log(4.0), 0.5)
    mu_lwb: tuple = (math.log(10.0), 0.5)
    mu_lwd: tuple = (math.log(4.0), 0.5)
    mu_td: tuple = (0.5, 1.0)
    sigma_yy_scale: float = 1.0
    sigma_y_sg_scale: float = 1.0
    sigma_lwd_scale: float = 0.5
    sigma_log_nu: float = 5.0
    sigma_log_scale: tuple = ((0.1, 0.0, 0.0), (0.0, 0.1, 0.0), (0.0, 0.0, 0.1))
    beta_sd: float = 1.0
    beta_C0: tuple = (0.0, 1.5)
    alpha0: tuple = (-5.3, 0.5)
    alpha1: tuple = (7.7, 1.0)
    alpha0_sg: tuple = (-5.3, 0.5)
    alpha1_sg: tuple = (7.7, 1.0)
    delta_Q: tuple = (2.0, 6.0)
    gamma1: tuple = (2.0, 1.0)
    gamma2: tuple = (2.0, 1.0)
    kappa1: tuple = (4.0, 1.0)
    kappa2: tuple = (4.0, 10.0)

    NORMAL = ("mu_lvp", "mu_lwa", "mu_lwb", "mu_lwd", "mu_td", "beta_C0", "alpha0", "alpha1", "alpha0_sg", "alpha1_sg")
    POSITIVE_PAIRS = ("delta_Q", "gamma1", "gamma2", "kappa1", "kappa2")

    def validate(self):
        problems = []
        for name in self.NORMAL:
            pair = getattr(self, name)
            if len(pair) != 2 or not pair[1] > 0:
                problems.append(f"priors.{name} must be [mean, sd] with sd > 0")
        for name in self.POSITIVE_PAIRS:
            pair = getattr(self, name)
            if len(pair) != 2 or not (pair[0] > 0 and pair[1] > 0):
                problems.append(f"priors.{name} must be two positive numbers")
        for name in ("sigma_yy_scale", "sigma_y_sg_scale", "sigma_lwd_scale", "beta_sd"):
            if not getattr(self, name) > 0:
                problems.append(f"priors.{name} must be positive")
        if not self.sigma_log_nu > 4:
            problems.append("priors.sigma_log_nu must exceed 4")
        scale = self.sigma_log_scale
        if isinstance(scale, (int, float)):
            problems.append("priors.sigma_log_scale must be a 3x3 matrix")
        elif len(scale) != 3 or any(len(row) != 3 for row in scale):
            problems.append("priors.sigma_log_scale must be a 3x3 matrix")
        return problems


@dataclass(frozen=True)
class ModelConfig(_Validated):
    assay: AssayConstants = field(default_factory=AssayConstants)
    alignment: PeakAlignmentConfig = field(default_factory=PeakAlignmentConfig)
    covariates: CovariateSelection = field(default_factory=CovariateSelection)
    priors: PriorConfig = field(default_factory=PriorConfig)
    # the latent peak enters X_C as (v_p - peak_vp_center)
    peak_vp_center: float = 5.6
    td_sd: float = 2.0

    def validate(self):
        if not self.td_sd > 0:
            return ["td_sd must be positive"]
        return []

    @classmethod
    def from_dict(cls, mapping, problems=None):
        own = problems if problems is not None else []
        mapping = dict(mapping or {})
        parts = {
            "assay": _build(AssayConstants, mapping.pop("assay", None), "model.assay", own),
            "alignment": _build(PeakAlignmentConfig, mapping.pop("alignment", None), "model.alignment", own),
            "covariates": _build(CovariateSelection, mapping.pop("covariates", None), "model.covariates", own),
            "priors": _build(PriorConfig, mapping.pop("priors", None), "model.priors", own),
        }
        flat = _build(_ModelScalars, mapping, "model", own)
        result = None
        if all(v is not None for v in parts.values()) and flat is not None:
            result = cls(**parts, peak_vp_center=flat.peak_vp_center, td_sd=flat.td_sd)
        if problems is None and own:
            raise ConfigError(own)
        return result


@dataclass(frozen=True)
class _ModelScalars(_Validated):
    peak_vp_center: float = 5.6
    td_sd: float = 2.0


@dataclass(frozen=True)
class ChainConfig(_Validated):
    n_chains: int = 4
    n_warmup: int = 2000
    n_samples: int = 2000
    thin: int = 1
    seed: int = 0
    adapt_window: int = 50
    target_accept_scalar: float = 0.44
    target_accept_block: float = 0.23
    init_step: float = 0.1
    init_buffer: float = 0.5

    def validate(self):
        problems = []
        if self.n_chains < 1:
            problems.append("n_chains must be positive")
        if self.n_warmup < 0 or self.n_samples < 0:
            problems.append("n_warmup and n_samples must be non-negative")
        if self.thin < 1 or self.adapt_window < 1:
            problems.append("thin and adapt_window must be positive")
        for name in ("target_accept_scalar", "target_accept_block"):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name} must lie in (0, 1)")
        if not self.init_step > 0 or not self.init_buffer > 0:
            problems.append("init_step and init_buffer must be positive")
        return problems

    @property
    def n_retained(self) -> int:
        return self.n_samples // self.thin


@dataclass(frozen=True)
class CovariateSpec(_Validated):
    """Generator for one simulated covariate: ``bernoulli`` (p) or ``normal`` (m, s)."""

    dist: str = "normal"
    params: tuple = (0.0, 1.0)

    def validate(self):
        if self.dist == "bernoulli":
            if len(self.params) != 1 or not 0 <= self.params[0] <= 1:
                return ["bernoulli covariates take one probability in [0, 1]"]
        elif self.dist == "normal":
            if len(self.params) != 2 or not self.params[1] > 0:
                return ["normal covariates take (mean, sd) with sd > 0"]
        else:
            return [f"unknown covariate distribution {self.dist!r}"]
        return []


@dataclass(frozen=True)
class StudyDesign(_Validated):
    n_participants: int
    swab_days: tuple = tuple(range(1, 15))
    dbs_days: tuple = (1, 14, 28)
    fraction_with_dbs: float = 0.4
    fraction_sg_assayed: float = 1.0
    covariates: tuple = ()
    # calendar window for the simulated latent diagnostic peak
    peak_window: tuple = (1.0, 10.0)
    min_positive_diag: int = 2
    min_positive_sg: int = 0

    def validate(self):
        problems = []
        if self.n_participants < 0:
            problems.append("n_participants must be non-negative")
        for name in ("swab_days", "dbs_days"):
            days = getattr(self, name)
            if any(b <= a for a, b in zip(days, days[1:])):
                problems.append(f"{name} must be strictly increasing")
        if not self.swab_days:
            problems.append("swab_days must not be empty")
        for name in ("fraction_with_dbs", "fraction_sg_assayed"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if len(self.peak_window) != 2 or not self.peak_window[0] <= self.peak_window[1]:
            problems.append("peak_window must be [lo, hi] with lo <= hi")
        return problems

    def covariate_specs(self) -> dict[str, CovariateSpec]:
        return dict(self.covariates)

    @classmethod
    def from_dict(cls, mapping, problems=None):
        own = problems if problems is not None else []
        mapping = dict(mapping or {})
        specs = []
        for name, spec in dict(mapping.pop("covariates", {}) or {}).items():
            built = _build(CovariateSpec, spec, f"design.covariates.{name}", own)
            if built is not None:
                specs.append((name, built))
        mapping["covariates"] = tuple(specs)
        design = _build(cls, mapping, "design", own)
        if problems is None and own:
            raise ConfigError(own)
        return design

    def to_dict(self):
        out = super().to_dict()
        out["covariates"] = {name: spec.to_dict() for name, spec in self.covariates}
        return out


@dataclass(frozen=True)
class DataFilter(_Validated):
    min_positive_diag: int = 1
    min_positive_sg: int = 0


@dataclass(frozen=True)
class CvConfig(_Validated):
    k: int = 10
    seed: int = 0
    rhat_threshold: float = 1.1

    def validate(self):
        return [] if self.k >= 1 else ["cv.k must be positive"]


@dataclass(frozen=True)
class CalibrationConfig(_Validated):
    n_replicates: int = 50
    n_participants: int = 20
    parameters: tuple = (
        "mu_lvp", "mu_lwa", "mu_lwb", "alpha0", "alpha1",
        "sigma_yy2", "mu_td", "mu_lwd", "beta_C0", "kappa1",
    )
    level: float = 0.95

    def validate(self):
        return [] if 0 < self.level < 1 else ["calibration.level must lie in (0, 1)"]


@dataclass(frozen=True)
class RunConfig:
    """The parsed config file. Sections a command does not need may be ``None``."""

    model: ModelConfig = field(default_factory=ModelConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    design: StudyDesign | None = None
    truth: dict | None = None
    data: DataFilter = field(default_factory=DataFilter)
    cv: CvConfig = field(default_factory=CvConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    source: str | None = None

    SECTIONS = ("model", "chain", "design", "truth", "data", "cv", "calibration")

    @classmethod
    def from_dict(cls, mapping, required=(), source=None):
        """Parse a whole config document; ``required`` names sections a command needs."""
        problems = []
        mapping = dict(mapping or {})
        for key in mapping:
            if key not in cls.SECTIONS:
                problems.append(f"{key}: unknown section")
        for key in required:
            if key not in mapping:
                problems.append(f"{key}: missing required section")
        model = ModelConfig.from_dict(mapping.get("model"), problems)
        chain = _build(ChainConfig, mapping.get("chain"), "chain", problems,
                       required=("n_chains", "n_warmup", "n_samples") if "chain" in required else ())
        design = StudyDesign.from_dict(mapping["design"], problems) if "design" in mapping else None
        truth = mapping.get("truth")
        if truth is not None and not isinstance(truth, Mapping):
            problems.append("truth: expected an object")
        data = _build(DataFilter, mapping.get("data"), "data", problems)
        cv = _build(CvConfig, mapping.get("cv"), "cv", problems)
        calibration = _build(CalibrationConfig, mapping.get("calibration"), "calibration", problems)
        if problems:
            raise ConfigError(problems)
        return cls(model=model, chain=chain, design=design, truth=dict(truth) if truth else None,
                   data=data, cv=cv, calibration=calibration, source=source)

    def to_dict(self):
        out = {
            "model": self.model.to_dict(),
            "chain": self.chain.to_dict(),
            "data": self.data.to_dict(),
            "cv": self.cv.to_dict(),
            "calibration": self.calibration.to_dict(),
        }
        if self.design is not None:
            out["design"] = self.design.to_dict()
        if self.truth is not None:
            out["truth"] = self.truth
        return out

    def with_seed(self, seed):
        """Copy with the chain seed replaced (the CLI ``--seed`` flag)."""
        if seed is None:
            return self
        return dataclasses.replace(self, chain=dataclasses.replace(self.chain, seed=int(seed)))


def load_config(path, required=()) -> RunConfig:
    with open(path, "r") as f:
        try:
            mapping = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    logger.debug("Loaded config from %s", path)
    return RunConfig.from_dict(mapping, required=required, source=str(path))
