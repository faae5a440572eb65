"""Output files: run manifests, chain draws and JSON/CSV reports."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from vlsero import __version__
from vlsero.config import CovariateSelection
from vlsero.sampler import ChainOutput

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RUN_METADATA = "run_metadata.json"
DATA_FILES = ("swabs.csv", "dbs.csv", "covariates.csv")


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    logger.info("Wrote %s", path)
    return path


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def write_csv(path, frame: pd.DataFrame):
    frame.to_csv(path, index=False)
    logger.info("Wrote %s", path)
    return path


def dataset_checksum(directory):
    """sha256 over the data files present in ``directory``, in a fixed order."""
    digest = hashlib.sha256()
    for name in DATA_FILES:
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            continue
        digest.update(name.encode())
        with open(path, "rb") as f:
            digest.update(f.read())
    return digest.hexdigest()


def now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    argv: list
    config_path: str | None = None
    config: dict | None = None
    dataset_checksum: str | None = None
    seeds: dict = field(default_factory=dict)
    version: str = __version__
    started: str = field(default_factory=now)
    finished: str | None = None

    def write(self, out_dir):
        self.finished = now()
        os.makedirs(out_dir, exist_ok=True)
        return write_json(os.path.join(out_dir, MANIFEST), asdict(self))

    @classmethod
    def read(cls, out_dir):
        return cls(**read_json(os.path.join(out_dir, MANIFEST)))


def chain_file(chain_id):
    return f"draws_chain{chain_id}.csv"


def write_fit(outputs, out_dir, config_echo=None, diagnostics_table=None):
    """Draw CSVs per chain plus ``run_metadata.json``."""
    os.makedirs(out_dir, exist_ok=True)
    for out in outputs:
        write_csv(os.path.join(out_dir, chain_file(out.chain_id)), out.draws)
    metadata = {
        "person_ids": list(outputs[0].person_ids) if outputs else [],
        "covariates": outputs[0].covariates.to_dict() if outputs else CovariateSelection().to_dict(),
        "chains": [out.metadata() for out in outputs],
        "adaptation": {str(out.chain_id): out.adaptation.to_dict(orient="records") for out in outputs},
        "config": config_echo,
    }
    if diagnostics_table is not None:
        metadata["diagnostics"] = diagnostics_table.reset_index().to_dict(orient="records")
    write_json(os.path.join(out_dir, RUN_METADATA), metadata)
    return metadata


def read_fit(fit_dir):
    """Chain outputs back from a ``fit`` directory; returns ``(outputs, metadata)``."""
    metadata = read_json(os.path.join(fit_dir, RUN_METADATA))
    covariates = CovariateSelection(**{k: tuple(v) for k, v in metadata["covariates"].items()})
    person_ids = tuple(metadata["person_ids"])
    outputs = []
    for chain in metadata["chains"]:
        draws = pd.read_csv(os.path.join(fit_dir, chain_file(chain["chain_id"])), float_precision="round_trip")
        adaptation = pd.DataFrame(metadata.get("adaptation", {}).get(str(chain["chain_id"]), []))
        outputs.append(ChainOutput(
            chain_id=chain["chain_id"], seed=chain["seed"], draws=draws, person_ids=person_ids,
            covariates=covariates, acceptance=chain.get("acceptance", {}), adaptation=adaptation,
            step_sizes=chain.get("step_sizes", {}),
        ))
    return outputs, metadata
