import numpy as np
import pandas as pd
import pytest

from vlsero.config import AssayConstants, CovariateSelection, DataFilter, ModelConfig
from vlsero.data import (
    CENSOR_CODES,
    CENSOR_INTERVAL,
    CENSOR_LEFT,
    CENSOR_NONE,
    CENSOR_RIGHT,
    Dataset,
    SeroRecord,
    SwabRecord,
    ingest,
    ingest_directory,
    observed_peak_day,
    peak_regime,
    sero_record_from_dbs,
    swab_flags,
)
from vlsero.errors import DataValidationError
from vlsero.model import REGIME_CENTER, REGIME_LEFT, REGIME_RIGHT

SWABS = """person_id,day,y_diag,y_sg
A,3,2.4,
A,5,7.1,5.2
A,7,4.0,2.4
B,1,3.0,
B,2,6.5,
B,4,5.5,
B,9,2.4,
"""

DBS = """person_id,day,igg_positive
A,1,0
A,14,1
B,14,0
"""

COVARIATES = """person_id,age,male
A,34,1
B,51,0
"""


def write(tmp_path, swabs=SWABS, dbs=DBS, covariates=COVARIATES):
    (tmp_path / "swabs.csv").write_text(swabs)
    if dbs is not None:
        (tmp_path / "dbs.csv").write_text(dbs)
    if covariates is not None:
        (tmp_path / "covariates.csv").write_text(covariates)
    return tmp_path


@pytest.fixture
def dataset(tmp_path):
    return ingest_directory(write(tmp_path), ModelConfig())


@pytest.mark.parametrize(
    "days, positives, kind, lo, hi",
    [
        ([1, 14], [0, 1], CENSOR_INTERVAL, 1.0, 14.0),
        ([1, 14, 28], [0, 0, 0], CENSOR_RIGHT, 28.0, None),
        ([1, 14], [1, 1], CENSOR_LEFT, None, 1.0),
        ([1, 7, 14, 28], [0, 0, 1, 1], CENSOR_INTERVAL, 7.0, 14.0),
        ([], [], CENSOR_NONE, None, None),
    ],
)
def test_sero_censoring(days, positives, kind, lo, hi):
    record = sero_record_from_dbs("X", days, positives)
    assert record.censor_kind == kind
    assert record.bound_lo == lo
    assert record.bound_hi == hi


def test_sero_record_validation():
    with pytest.raises(ValueError):
        SeroRecord("X", "sideways")
    with pytest.raises(ValueError):
        SeroRecord("X", CENSOR_INTERVAL, 5.0, 5.0)


def test_swab_flags_at_lod_and_loq():
    assay = AssayConstants()
    b, q, b_sg = swab_flags([2.4, 2.41, 4.9, 4.89], [np.nan, 2.4, 3.0, np.nan], assay)
    assert b.tolist() == [False, True, True, True]
    assert q.tolist() == [False, True, False, True]
    assert b_sg.tolist() == [False, False, True, False]


def test_swab_record_problems():
    assay = AssayConstants()
    assert not SwabRecord("A", 3, 2.4, False, False).problems(assay)
    assert SwabRecord("A", 3, 2.4, True, False).problems(assay)
    assert SwabRecord("A", 3, 2.4, False, False, y_sg=3.0, b_sg=True, sg_missing=False).problems(assay)


def test_observed_peak_ties_take_earliest_day():
    assert observed_peak_day([5, 3, 7], [6.0, 6.0, 2.0]) == 3


def test_peak_regimes():
    assert peak_regime(3, 1, 14, 2) == REGIME_CENTER
    assert peak_regime(2, 1, 14, 2) == REGIME_LEFT
    assert peak_regime(13, 1, 14, 2) == REGIME_RIGHT
    assert peak_regime(2, 1, 3, 2) == REGIME_LEFT


def test_ingest_builds_records(dataset):
    assert dataset.person_ids == ("A", "B")
    records = dataset.swab_records()
    first = records[0]
    assert (first.person_id, first.day, first.b_diag, first.sg_missing) == ("A", 3, False, True)
    assert records[1].b_sg is True
    assert records[2].b_sg is False and records[2].sg_missing is False
    sero = dataset.sero_records()
    assert sero["A"].censor_kind == CENSOR_INTERVAL
    assert sero["B"].censor_kind == CENSOR_RIGHT
    assert dataset.observed_peaks() == {"A": (5, 3, 7), "B": (2, 1, 9)}


def test_arrays_layout(dataset):
    model = ModelConfig(covariates=CovariateSelection(vp=("age",), sero=("peak_vp", "male")))
    arrays = dataset.arrays(model)
    assert arrays.day.shape == (2, 4)
    assert arrays.present.tolist() == [[True, True, True, False], [True, True, True, True]]
    assert arrays.sg_obs.tolist() == [[False, True, True, False], [False, False, False, False]]
    assert arrays.b_sg.tolist() == [[False, True, False, False], [False] * 4]
    assert arrays.ref_day.tolist() == [5.0, 2.0]
    assert arrays.regime.tolist() == [REGIME_CENTER, REGIME_LEFT]
    assert arrays.X_vp[:, 0].tolist() == [34.0, 51.0]
    assert arrays.peak_index == 0
    assert arrays.X_C[:, 1].tolist() == [1.0, 0.0]
    assert arrays.sero_kind.tolist() == [CENSOR_CODES[CENSOR_INTERVAL], CENSOR_CODES[CENSOR_RIGHT]]
    assert arrays.term_counts() == {"diag": 7, "sg": 2, "sero": 2}


def test_mask_hides_sg_and_sero_and_unmask_restores(dataset):
    masked = dataset.mask(["A"])
    arrays = masked.arrays(ModelConfig())
    assert arrays.term_counts() == {"diag": 7, "sg": 0, "sero": 1}
    assert masked.sero_records()["A"].censor_kind == CENSOR_NONE
    assert masked.masked_positive_sg()["day"].tolist() == [5]
    assert masked.unmask().equals(dataset)
    assert dataset.masked == frozenset()
    with pytest.raises(KeyError):
        dataset.mask(["Z"])


def test_row_order_does_not_matter(tmp_path, dataset):
    lines = SWABS.strip().split("\n")
    shuffled = "\n".join([lines[0]] + lines[:0:-1]) + "\n"
    (tmp_path / "shuffled").mkdir()
    other = ingest_directory(write(tmp_path / "shuffled", swabs=shuffled), ModelConfig())
    assert other.equals(dataset)
    a, b = other.arrays(ModelConfig()), dataset.arrays(ModelConfig())
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.day, b.day)


def test_lod_value_is_negative(tmp_path):
    data = ingest_directory(write(tmp_path, swabs="person_id,day,y_diag,y_sg\nA,1,2.4,\nA,2,5.0,\n"), ModelConfig())
    assert [r.b_diag for r in data.swab_records()] == [False, True]


def test_every_violation_reported(tmp_path):
    swabs = "person_id,day,y_diag,y_sg\nA,1,2.0,\nA,2,2.4,3.1\nA,2,5.0,\nA,3.5,5.0,\n"
    write(tmp_path, swabs=swabs, dbs="person_id,day,igg_positive\nA,1,2\nQ,3,0\n", covariates=None)
    with pytest.raises(DataValidationError) as info:
        ingest_directory(tmp_path, ModelConfig())
    found = {(f, line) for f, line, _ in info.value.violations}
    assert ("swabs.csv", 2) in found
    assert ("swabs.csv", 3) in found
    assert ("swabs.csv", 5) in found
    assert ("dbs.csv", 2) in found
    assert ("dbs.csv", 3) in found
    messages = " ".join(m for _, _, m in info.value.violations)
    assert "duplicate" in messages
    assert "sgRNA value" in messages


def test_bad_header(tmp_path):
    write(tmp_path, swabs="pid,day,y_diag,y_sg\nA,1,3.0,\n")
    with pytest.raises(DataValidationError) as info:
        ingest_directory(tmp_path, ModelConfig())
    assert info.value.violations[0][:2] == ("swabs.csv", 1)


def test_unknown_covariate_column(tmp_path):
    write(tmp_path)
    model = ModelConfig(covariates=CovariateSelection(wa=("bmi",)))
    with pytest.raises(DataValidationError) as info:
        ingest_directory(tmp_path, model)
    assert "bmi" in str(info.value)


def test_optional_files_may_be_absent(tmp_path):
    write(tmp_path, dbs=None, covariates=None)
    data = ingest(tmp_path / "swabs.csv", tmp_path / "dbs.csv", tmp_path / "covariates.csv")
    assert len(data.dbs) == 0
    assert data.arrays(ModelConfig()).term_counts()["sero"] == 0


def test_filter_drops_ineligible_persons(tmp_path):
    swabs = SWABS + "C,1,2.4,\nC,2,2.4,\n"
    data = ingest_directory(write(tmp_path, swabs=swabs), ModelConfig(), DataFilter(min_positive_diag=1))
    assert data.person_ids == ("A", "B")
    strict = ingest_directory(tmp_path, ModelConfig(), DataFilter(min_positive_diag=1, min_positive_sg=1))
    assert strict.person_ids == ("A",)


def test_empty_dataset():
    data = Dataset.empty()
    arrays = data.arrays(ModelConfig())
    assert arrays.n_persons == 0
    assert arrays.term_counts() == {"diag": 0, "sg": 0, "sero": 0}


def test_to_csv_round_trip(tmp_path, dataset):
    dataset.to_csv(tmp_path / "out")
    again = ingest_directory(tmp_path / "out", ModelConfig())
    assert again.equals(dataset)
    assert pd.read_csv(tmp_path / "out" / "swabs.csv").columns.tolist() == ["person_id", "day", "y_diag", "y_sg"]
