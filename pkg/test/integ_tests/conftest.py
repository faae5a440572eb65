import json
import os

import pytest

from vlsero.cli import main

DEFAULT_DATA = os.path.join(os.path.dirname(__file__), "default_data")


@pytest.fixture
def smoke_config():
    return os.path.join(DEFAULT_DATA, "smoke_config.json")


@pytest.fixture
def write_config(tmp_path, smoke_config):
    """Copy of the smoke config with sections updated from ``overrides``."""

    def write(name="config.json", **overrides):
        with open(smoke_config) as f:
            config = json.load(f)
        for section, values in overrides.items():
            if values is None:
                config.pop(section, None)
            elif isinstance(values, dict):
                config.setdefault(section, {}).update(values)
            else:
                config[section] = values
        path = tmp_path / name
        path.write_text(json.dumps(config))
        return str(path)

    return write


@pytest.fixture
def simulated(tmp_path, smoke_config):
    out = tmp_path / "data"
    assert main(["simulate", "--config", smoke_config, "--out", str(out)]) == 0
    return out
