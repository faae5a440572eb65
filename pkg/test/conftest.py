import json
import os

import numpy as np
import pandas as pd
import pytest

from vlsero.config import CovariateSelection, ModelConfig, StudyDesign
from vlsero.model import ParameterState, PopulationParams
from vlsero.sampler import ChainOutput

DEFAULT_DATA = os.path.join(os.path.dirname(__file__), "default_data")


def read_file(name, file_path=None):
    if file_path:
        json_path = os.path.join(os.path.dirname(file_path), name)
    else:
        json_path = os.path.join(DEFAULT_DATA, name)
    with open(json_path, "r") as file:
        return file.read()


def pytest_addoption(parser):
    parser.addoption(
        '--run-level', action='store', default='QUICK',
        help='QUICK=unit and smoke tests, FULL=also study-scale recovery, calibration and cross-validation'
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "full: long-running check, only runs with --run-level=FULL")


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-level').upper() == 'FULL':
        return
    skip = pytest.mark.skip(reason="needs --run-level=FULL")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def run_level(request):
    return request.config.getoption('--run-level').upper()


@pytest.fixture
def model_config():
    return ModelConfig()


@pytest.fixture
def reference_truth_dict():
    return json.loads(read_file("reference_truth.json"))


@pytest.fixture
def reference_truth(reference_truth_dict, model_config):
    return PopulationParams.from_dict(reference_truth_dict, model_config.covariates)


@pytest.fixture
def golden_instance():
    return json.loads(read_file("golden_instance.json"))


@pytest.fixture
def small_design():
    return StudyDesign(n_participants=6, fraction_with_dbs=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_outputs():
    """Build chain outputs whose draws are the given parameter states."""
    def build(chains, covariates=None):
        covariates = covariates or CovariateSelection()
        outputs = []
        for chain_id, states in enumerate(chains):
            ids = states[0].person_ids
            frame = pd.DataFrame([s.flatten() for s in states],
                                 columns=ParameterState.column_names(covariates, ids))
            frame.insert(0, "logposterior", 0.0)
            frame.insert(0, "iteration", np.arange(1, len(states) + 1))
            outputs.append(ChainOutput(chain_id, 0, frame, ids, covariates))
        return outputs

    return build
