"""Study data: record types, CSV ingestion with row-level validation, and model arrays.

CSV schemas (exact headers):

* ``swabs.csv``: ``person_id,day,y_diag,y_sg``; an empty ``y_sg`` means the swab
  was not assayed for sgRNA; a load equal to the LoD is a negative result.
* ``dbs.csv``: ``person_id,day,igg_positive`` with ``igg_positive`` in {0, 1}.
* ``covariates.csv``: ``person_id`` followed by one column per covariate.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from vlsero.config import PEAK_COVARIATE, AssayConstants, CovariateSelection, DataFilter, ModelConfig
from vlsero.errors import DataValidationError
from vlsero.model import REGIME_CENTER, REGIME_LEFT, REGIME_RIGHT

logger = logging.getLogger(__name__)

SWAB_COLUMNS = ["person_id", "day", "y_diag", "y_sg"]
DBS_COLUMNS = ["person_id", "day", "igg_positive"]

CENSOR_NONE = "none"
CENSOR_RIGHT = "right"
CENSOR_LEFT = "left"
CENSOR_INTERVAL = "interval"
CENSOR_CODES = {CENSOR_NONE: 0, CENSOR_RIGHT: 1, CENSOR_LEFT: 2, CENSOR_INTERVAL: 3}


@dataclass(frozen=True)
class SwabRecord:
    person_id: str
    day: int
    y_diag: float
    b_diag: bool
    q_flag: bool
    y_sg: float | None = None
    b_sg: bool | None = None
    sg_missing: bool = True

    def problems(self, assay: AssayConstants):
        out = []
        if self.b_diag != (self.y_diag > assay.lod_diag):
            out.append("b_diag must equal y_diag > LoD")
        if self.q_flag and not self.b_diag:
            out.append("q_flag requires a detected swab")
        if not self.b_diag and self.y_diag != assay.lod_diag:
            out.append("negative swabs must be recorded at the LoD")
        if self.b_sg and not self.b_diag:
            out.append("sgRNA detected on a swab without detectable diagnostic RNA")
        return out


@dataclass(frozen=True)
class SeroRecord:
    person_id: str
    censor_kind: str = CENSOR_NONE
    bound_lo: float | None = None
    bound_hi: float | None = None

    def __post_init__(self):
        if self.censor_kind not in CENSOR_CODES:
            raise ValueError(f"unknown censor kind {self.censor_kind!r}")
        if self.censor_kind == CENSOR_INTERVAL and not self.bound_lo < self.bound_hi:
            raise ValueError("interval censoring needs bound_lo < bound_hi")


def sero_record_from_dbs(person_id, days, positives) -> SeroRecord:
    """Censoring from a person's DBS results: last negative before the first positive."""
    days = np.asarray(days, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    if days.size == 0:
        return SeroRecord(person_id)
    if not positives.any():
        return SeroRecord(person_id, CENSOR_RIGHT, bound_lo=float(days.max()))
    first_pos = float(days[positives].min())
    earlier_neg = days[~positives & (days < first_pos)]
    if earlier_neg.size == 0:
        return SeroRecord(person_id, CENSOR_LEFT, bound_hi=first_pos)
    return SeroRecord(person_id, CENSOR_INTERVAL, bound_lo=float(earlier_neg.max()), bound_hi=first_pos)


def observed_peak_day(days, y_diag):
    """Day of maximal y_diag; the earliest such day on ties."""
    days = np.asarray(days)
    order = np.argsort(days, kind="stable")
    return int(days[order][int(np.argmax(np.asarray(y_diag)[order]))])


def peak_regime(peak_day, first_day, last_day, edge_window):
    """Early peaks take precedence when follow-up is too short to tell."""
    if peak_day - first_day < edge_window:
        return REGIME_LEFT
    if last_day - peak_day < edge_window:
        return REGIME_RIGHT
    return REGIME_CENTER


def swab_flags(y_diag, y_sg, assay: AssayConstants):
    """(b_diag, q_flag, b_sg) arrays; b_sg is False where sgRNA was not assayed."""
    y_diag = np.asarray(y_diag, dtype=float)
    y_sg = np.asarray(y_sg, dtype=float)
    b_diag = y_diag > assay.lod_diag
    q_flag = b_diag & (y_diag < assay.loq_diag)
    with np.errstate(invalid="ignore"):
        b_sg = np.nan_to_num(y_sg, nan=-np.inf) > assay.lod_sg
    return b_diag, q_flag, b_sg


@dataclass(eq=False)
class ModelArrays:
    """Padded per-person arrays; persons sorted by id, swabs by day."""

    person_ids: tuple
    day: np.ndarray
    present: np.ndarray
    y: np.ndarray
    b: np.ndarray
    q_flag: np.ndarray
    sg_obs: np.ndarray
    y_sg: np.ndarray
    b_sg: np.ndarray
    ref_day: np.ndarray
    regime: np.ndarray
    X_vp: np.ndarray
    X_wa: np.ndarray
    X_wb: np.ndarray
    X_C: np.ndarray
    peak_index: int
    sero_kind: np.ndarray
    sero_lo: np.ndarray
    sero_hi: np.ndarray

    @property
    def n_persons(self):
        return len(self.person_ids)

    def term_counts(self):
        """Number of likelihood terms of each kind that the data contributes."""
        return {
            "diag": int(self.present.sum()),
            "sg": int(self.sg_obs.sum()),
            "sero": int((self.sero_kind != CENSOR_CODES[CENSOR_NONE]).sum()),
        }


@dataclass(eq=False)
class Dataset:
    swabs: pd.DataFrame
    dbs: pd.DataFrame
    covariates: pd.DataFrame
    assay: AssayConstants = field(default_factory=AssayConstants)
    masked: frozenset = frozenset()

    def __post_init__(self):
        self.swabs = self.swabs.sort_values(["person_id", "day"], kind="mergesort").reset_index(drop=True)
        self.dbs = self.dbs.sort_values(["person_id", "day"], kind="mergesort").reset_index(drop=True)
        self.covariates = self.covariates.sort_values("person_id", kind="mergesort").reset_index(drop=True)
        self.masked = frozenset(self.masked)

    @classmethod
    def empty(cls, assay=None, covariate_names=()):
        return cls(
            pd.DataFrame({"person_id": pd.Series(dtype=str), "day": pd.Series(dtype=int),
                          "y_diag": pd.Series(dtype=float), "y_sg": pd.Series(dtype=float)}),
            pd.DataFrame({"person_id": pd.Series(dtype=str), "day": pd.Series(dtype=int),
                          "igg_positive": pd.Series(dtype=int)}),
            pd.DataFrame({"person_id": pd.Series(dtype=str),
                          **{c: pd.Series(dtype=float) for c in covariate_names}}),
            assay or AssayConstants(),
        )

    @property
    def person_ids(self):
        return tuple(sorted(self.swabs["person_id"].unique()))

    @property
    def n_persons(self):
        return len(self.person_ids)

    def mask(self, person_ids):
        """Hide sgRNA and antibody data of ``person_ids``; the tables themselves are untouched."""
        unknown = set(person_ids) - set(self.person_ids)
        if unknown:
            raise KeyError(f"unknown person ids: {sorted(unknown)}")
        return dataclasses.replace(self, masked=self.masked | frozenset(person_ids))

    def unmask(self):
        return dataclasses.replace(self, masked=frozenset())

    def equals(self, other):
        return (
            self.swabs.equals(other.swabs)
            and self.dbs.equals(other.dbs)
            and self.covariates.equals(other.covariates)
            and self.assay == other.assay
            and self.masked == other.masked
        )

    def swab_records(self):
        b_diag, q_flag, b_sg = swab_flags(self.swabs["y_diag"], self.swabs["y_sg"], self.assay)
        records = []
        for i, row in enumerate(self.swabs.itertuples(index=False)):
            assayed = not np.isnan(row.y_sg) and row.person_id not in self.masked
            records.append(SwabRecord(
                person_id=row.person_id, day=int(row.day), y_diag=float(row.y_diag),
                b_diag=bool(b_diag[i]), q_flag=bool(q_flag[i]),
                y_sg=float(row.y_sg) if assayed else None,
                b_sg=bool(b_sg[i]) if assayed else None,
                sg_missing=not assayed,
            ))
        return records

    def sero_records(self):
        out = {}
        grouped = {pid: g for pid, g in self.dbs.groupby("person_id", sort=True)}
        for pid in self.person_ids:
            if pid in self.masked or pid not in grouped:
                out[pid] = SeroRecord(pid)
            else:
                g = grouped[pid]
                out[pid] = sero_record_from_dbs(pid, g["day"].to_numpy(), g["igg_positive"].to_numpy())
        return out

    def observed_peaks(self):
        """Per person: (observed-peak day, first swab day, last swab day).

        The observed peak is the day of maximal y_diag, ties broken by the earliest day.
        """
        out = {}
        for pid, g in self.swabs.groupby("person_id", sort=True):
            days = g["day"].to_numpy()
            out[pid] = (observed_peak_day(days, g["y_diag"].to_numpy()), int(days.min()), int(days.max()))
        return out

    def regimes(self, edge_window):
        return {pid: peak_regime(peak, first, last, edge_window)
                for pid, (peak, first, last) in self.observed_peaks().items()}

    def covariate_matrix(self, names):
        table = self.covariates.set_index("person_id")
        if not names:
            return np.zeros((self.n_persons, 0))
        return table.loc[list(self.person_ids), list(names)].to_numpy(dtype=float)

    def masked_positive_sg(self):
        """Rows of persons under mask with a positive sgRNA measurement (the held-out truth)."""
        rows = self.swabs[self.swabs["person_id"].isin(self.masked)]
        return rows[rows["y_sg"] > self.assay.lod_sg]

    def arrays(self, model: ModelConfig) -> ModelArrays:
        ids = self.person_ids
        n = len(ids)
        groups = {pid: g for pid, g in self.swabs.groupby("person_id", sort=True)}
        J = max((len(g) for g in groups.values()), default=0)
        day = np.zeros((n, J))
        present = np.zeros((n, J), dtype=bool)
        y = np.full((n, J), self.assay.lod_diag)
        y_sg = np.full((n, J), self.assay.lod_sg)
        assayed = np.zeros((n, J), dtype=bool)
        for i, pid in enumerate(ids):
            g = groups[pid]
            k = len(g)
            day[i, :k] = g["day"].to_numpy(dtype=float)
            present[i, :k] = True
            y[i, :k] = g["y_diag"].to_numpy(dtype=float)
            raw_sg = g["y_sg"].to_numpy(dtype=float)
            if pid not in self.masked:
                assayed[i, :k] = ~np.isnan(raw_sg)
            y_sg[i, :k] = np.where(np.isnan(raw_sg), self.assay.lod_sg, raw_sg)
        b, q_flag, b_sg = swab_flags(y, y_sg, self.assay)
        b &= present
        q_flag &= present
        sg_obs = assayed & b
        b_sg &= sg_obs

        peaks = self.observed_peaks()
        regimes = self.regimes(model.alignment.edge_window)
        ref_day = np.array([peaks[pid][0] for pid in ids], dtype=float)
        regime = np.array([regimes[pid] for pid in ids], dtype=int)

        cov = model.covariates
        static_sero = [c if c != PEAK_COVARIATE else None for c in cov.sero]
        X_C = np.zeros((n, len(static_sero)))
        for k, name in enumerate(static_sero):
            if name is not None:
                X_C[:, k] = self.covariate_matrix([name])[:, 0]
        peak_index = static_sero.index(None) if None in static_sero else -1

        sero = self.sero_records()
        kind = np.array([CENSOR_CODES[sero[pid].censor_kind] for pid in ids], dtype=int)
        lo = np.array([sero[pid].bound_lo if sero[pid].bound_lo is not None else np.nan for pid in ids])
        hi = np.array([sero[pid].bound_hi if sero[pid].bound_hi is not None else np.nan for pid in ids])

        return ModelArrays(
            person_ids=ids, day=day, present=present, y=y, b=b, q_flag=q_flag,
            sg_obs=sg_obs, y_sg=y_sg, b_sg=b_sg, ref_day=ref_day, regime=regime,
            X_vp=self.covariate_matrix(cov.vp), X_wa=self.covariate_matrix(cov.wa),
            X_wb=self.covariate_matrix(cov.wb), X_C=X_C, peak_index=peak_index,
            sero_kind=kind, sero_lo=lo, sero_hi=hi,
        )

    def to_csv(self, directory):
        """Write the three CSV files; floats are written at round-trip precision."""
        os.makedirs(directory, exist_ok=True)
        self.swabs[SWAB_COLUMNS].to_csv(os.path.join(directory, "swabs.csv"), index=False)
        self.dbs[DBS_COLUMNS].to_csv(os.path.join(directory, "dbs.csv"), index=False)
        self.covariates.to_csv(os.path.join(directory, "covariates.csv"), index=False)
        return [os.path.join(directory, name) for name in ("swabs.csv", "dbs.csv", "covariates.csv")]


def _read(path, expected, file_name, violations):
    if not os.path.exists(path):
        violations.append((file_name, None, f"file not found: {path}"))
        return None
    try:
        frame = pd.read_csv(path, dtype={"person_id": str}, float_precision="round_trip", keep_default_na=True)
    except pd.errors.EmptyDataError:
        violations.append((file_name, 1, "file is empty"))
        return None
    if expected is not None and list(frame.columns) != expected:
        violations.append((file_name, 1, f"header must be {','.join(expected)}, got {','.join(frame.columns)}"))
        return None
    return frame


def _duplicates(frame, file_name, violations):
    dup = frame.duplicated(["person_id", "day"], keep=False)
    for pid, g in frame[dup].groupby(["person_id", "day"]):
        lines = ", ".join(str(i + 2) for i in g.index)
        violations.append((file_name, int(g.index[0]) + 2, f"duplicate (person, day) {pid} on lines {lines}"))


def _check_swabs(swabs, assay, violations):
    name = "swabs.csv"
    for col in ("day", "y_diag"):
        bad = pd.to_numeric(swabs[col], errors="coerce").isna()
        for i in swabs.index[bad]:
            violations.append((name, i + 2, f"{col} must be numeric"))
    days = pd.to_numeric(swabs["day"], errors="coerce")
    for i in swabs.index[days.notna() & (days != days.round())]:
        violations.append((name, i + 2, "day must be an integer study day"))
    y = pd.to_numeric(swabs["y_diag"], errors="coerce")
    y_sg = pd.to_numeric(swabs["y_sg"], errors="coerce")
    for i in swabs.index[y < assay.lod_diag]:
        violations.append((name, i + 2, f"y_diag below LoD {assay.lod_diag}; record negatives at the LoD"))
    for i in swabs.index[(y <= assay.lod_diag) & y_sg.notna()]:
        violations.append((name, i + 2, "sgRNA value on a swab without detectable diagnostic RNA"))
    for i in swabs.index[y_sg < assay.lod_sg]:
        violations.append((name, i + 2, f"y_sg below LoD {assay.lod_sg}"))
    for i in swabs.index[swabs["y_sg"].notna() & y_sg.isna()]:
        violations.append((name, i + 2, "y_sg must be numeric or empty"))
    _duplicates(swabs, name, violations)


def _check_dbs(dbs, person_ids, violations):
    name = "dbs.csv"
    ok = dbs["igg_positive"].isin([0, 1])
    for i in dbs.index[~ok]:
        violations.append((name, i + 2, "igg_positive must be 0 or 1"))
    for i in dbs.index[~dbs["person_id"].isin(person_ids)]:
        violations.append((name, i + 2, f"person {dbs.at[i, 'person_id']} has no swabs"))
    _duplicates(dbs, name, violations)


def _check_covariates(covariates, person_ids, selection, violations):
    name = "covariates.csv"
    if covariates.columns[0] != "person_id":
        violations.append((name, 1, "first column must be person_id"))
        return
    for column in selection.data_columns():
        if column not in covariates.columns:
            violations.append((name, 1, f"unknown covariate column {column!r} referenced by config"))
    missing = sorted(set(person_ids) - set(covariates["person_id"]))
    if missing and selection.data_columns():
        violations.append((name, None, f"no covariate row for persons {missing}"))
    for column in selection.data_columns():
        if column in covariates.columns:
            values = pd.to_numeric(covariates[column], errors="coerce")
            for i in covariates.index[values.isna()]:
                violations.append((name, i + 2, f"{column} must be numeric"))
    dup = covariates["person_id"].duplicated(keep=False)
    for i in covariates.index[dup]:
        violations.append((name, i + 2, f"duplicate covariate row for {covariates.at[i, 'person_id']}"))


def apply_filter(dataset: Dataset, data_filter: DataFilter) -> Dataset:
    """Drop persons with too few positive diagnostic or sgRNA swabs."""
    swabs = dataset.swabs
    pos_diag = (swabs["y_diag"] > dataset.assay.lod_diag).groupby(swabs["person_id"]).sum()
    pos_sg = (swabs["y_sg"] > dataset.assay.lod_sg).groupby(swabs["person_id"]).sum()
    keep = pos_diag.index[(pos_diag >= data_filter.min_positive_diag) & (pos_sg >= data_filter.min_positive_sg)]
    dropped = sorted(set(pos_diag.index) - set(keep))
    if dropped:
        logger.warning("Dropping %d ineligible persons: %s", len(dropped), ", ".join(dropped))
    keep = set(keep)
    return dataclasses.replace(
        dataset,
        swabs=swabs[swabs["person_id"].isin(keep)],
        dbs=dataset.dbs[dataset.dbs["person_id"].isin(keep)],
        covariates=dataset.covariates[dataset.covariates["person_id"].isin(keep)],
        masked=dataset.masked & keep,
    )


def ingest(swabs_path, dbs_path=None, covariates_path=None, assay=None,
           covariates: CovariateSelection | None = None, data_filter: DataFilter | None = None) -> Dataset:
    """Read and validate the three CSV files; raises :class:`DataValidationError` listing every violation."""
    assay = assay or AssayConstants()
    covariates = covariates or CovariateSelection()
    violations = []
    swabs = _read(swabs_path, SWAB_COLUMNS, "swabs.csv", violations)
    dbs = _read(dbs_path, DBS_COLUMNS, "dbs.csv", violations) if dbs_path and os.path.exists(dbs_path) else None
    cov = (_read(covariates_path, None, "covariates.csv", violations)
           if covariates_path and os.path.exists(covariates_path) else None)
    if violations:
        raise DataValidationError(violations)
    empty = Dataset.empty(assay)
    if dbs is None:
        dbs = empty.dbs
    if cov is None:
        cov = pd.DataFrame({"person_id": sorted(swabs["person_id"].unique())})

    _check_swabs(swabs, assay, violations)
    person_ids = set(swabs["person_id"])
    _check_dbs(dbs, person_ids, violations)
    _check_covariates(cov, person_ids, covariates, violations)
    if violations:
        raise DataValidationError(violations)

    swabs = swabs.astype({"day": int, "y_diag": float, "y_sg": float})
    dbs = dbs.astype({"day": int, "igg_positive": int})
    dataset = Dataset(swabs, dbs, cov, assay)
    logger.info("Ingested %d swabs, %d DBS rows for %d persons", len(swabs), len(dbs), dataset.n_persons)
    if data_filter is not None:
        dataset = apply_filter(dataset, data_filter)
    return dataset


def ingest_directory(directory, model: ModelConfig, data_filter=None) -> Dataset:
    return ingest(
        os.path.join(directory, "swabs.csv"),
        os.path.join(directory, "dbs.csv"),
        os.path.join(directory, "covariates.csv"),
        assay=model.assay,
        covariates=model.covariates,
        data_filter=data_filter,
    )
