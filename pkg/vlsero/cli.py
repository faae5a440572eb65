"""Command-line entry point: ``vlsero <command> [options]``.

Exit codes: 0 success, 2 invalid configuration or data, 3 numerical failure.
The log level is read from the ``VLSERO_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from vlsero import __version__
from vlsero import io as vio
from vlsero import sampler
from vlsero.calibration import run_calibration
from vlsero.config import RunConfig, load_config
from vlsero.cv import make_folds, run_cv
from vlsero.data import ingest_directory
from vlsero.diagnostics import diagnostics
from vlsero.errors import (
    ConfigError,
    DataValidationError,
    NumericalError,
    TruncationError,
    VlseroError,
)
from vlsero.model import PopulationParams
from vlsero.posterior import impute_sg, summarize_estimands, trajectory_bands
from vlsero.simulator import simulate_dataset

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "VLSERO_LOG_LEVEL"
EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

POPULATION_GRID = np.arange(-10.0, 25.0 + 0.5, 0.5)


def configure_logging():
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = logging.getLevelName(name)
    logging.basicConfig(level=level if isinstance(level, int) else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if not isinstance(level, int):
        logger.warning("Unknown log level %r in %s, using INFO", name, LOG_LEVEL_ENV)


def _config(args, required=()):
    if getattr(args, "config", None) is None:
        if required:
            raise ConfigError([f"{section}: missing required section (no --config given)" for section in required])
        return RunConfig()
    config = load_config(args.config, required=required)
    return config.with_seed(getattr(args, "seed", None))


def _manifest(args, config, data_dir=None):
    seeds = {"chain": config.chain.seed, "cv": config.cv.seed}
    return vio.RunManifest(
        command=args.command,
        argv=list(args.argv),
        config_path=config.source,
        config=config.to_dict(),
        dataset_checksum=vio.dataset_checksum(data_dir) if data_dir else None,
        seeds=seeds,
    )


def _load_data(args, config):
    return ingest_directory(args.data, config.model, config.data)


def cmd_simulate(args):
    config = _config(args, required=("design", "truth"))
    truth = PopulationParams.from_dict(config.truth, config.model.covariates)
    manifest = _manifest(args, config)
    dataset, sidecar = simulate_dataset(truth, config.design, config.chain.seed, config.model)
    dataset.to_csv(args.out)
    vio.write_json(os.path.join(args.out, "truth.json"), sidecar)
    manifest.dataset_checksum = vio.dataset_checksum(args.out)
    manifest.write(args.out)


def cmd_fit(args):
    config = _config(args, required=("chain",))
    manifest = _manifest(args, config, args.data)
    arrays = _load_data(args, config).arrays(config.model)
    logger.info("Data contributes %s likelihood terms", arrays.term_counts())
    outputs = sampler.run(arrays, config.model, config.chain, threads=args.threads)
    table = diagnostics(outputs) if outputs and outputs[0].n_draws >= 4 else None
    vio.write_fit(outputs, args.out, config.to_dict(), table)
    manifest.write(args.out)


def _fit_for_data(args, config):
    dataset = _load_data(args, config)
    outputs, _ = vio.read_fit(args.fit)
    if tuple(outputs[0].person_ids) != dataset.person_ids:
        raise DataValidationError([(None, None, "persons in the fit directory do not match the dataset")])
    return dataset, outputs


def cmd_summarize(args):
    config = _config(args)
    manifest = _manifest(args, config, args.data)
    dataset, outputs = _fit_for_data(args, config)
    arrays = dataset.arrays(config.model)
    summary = summarize_estimands(outputs, arrays, config.model)
    os.makedirs(args.out, exist_ok=True)
    vio.write_json(os.path.join(args.out, "summary.json"), summary.to_dict())
    vio.write_csv(os.path.join(args.out, "summary.csv"), summary.estimands)
    vio.write_csv(os.path.join(args.out, "sero_probabilities.csv"), summary.sero_probabilities)
    bands = trajectory_bands(outputs, POPULATION_GRID, config.model, arrays)
    vio.write_csv(os.path.join(args.out, "bands_population.csv"), bands)
    manifest.write(args.out)


def cmd_impute(args):
    config = _config(args)
    manifest = _manifest(args, config, args.data)
    dataset, outputs = _fit_for_data(args, config)
    arrays = dataset.arrays(config.model)
    persons = args.persons or [pid for i, pid in enumerate(arrays.person_ids) if not arrays.sg_obs[i].any()]
    if not persons:
        raise ConfigError("impute: every person has sgRNA data; nothing to impute")
    try:
        imputed = impute_sg(outputs, arrays, config.model, persons, seed=config.chain.seed)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"impute: {exc}") from exc
    os.makedirs(args.out, exist_ok=True)
    vio.write_csv(os.path.join(args.out, "imputed_sg.csv"), imputed.geometry)
    vio.write_csv(os.path.join(args.out, "imputed_sg_bands.csv"), imputed.bands)
    vio.write_csv(os.path.join(args.out, "imputed_sg_predictive.csv"), imputed.predictive)
    manifest.write(args.out)


def cmd_cv(args):
    config = _config(args, required=("chain",))
    manifest = _manifest(args, config, args.data)
    dataset = _load_data(args, config)
    k = args.folds if args.folds is not None else config.cv.k
    plan = make_folds(dataset, k, config.cv.seed)
    report = run_cv(dataset, plan, config.model, config.chain, config.cv, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    for fold in report.folds:
        vio.write_json(os.path.join(args.out, f"fold_{fold.fold}.json"), fold.to_dict())
    vio.write_csv(os.path.join(args.out, "cv_scores.csv"), report.scores())
    vio.write_json(os.path.join(args.out, "cv_aggregate.json"), {"plan": plan.to_dict(), **report.aggregate()})
    manifest.write(args.out)


def cmd_calibrate(args):
    config = _config(args, required=("design", "truth", "chain"))
    truth = PopulationParams.from_dict(config.truth, config.model.covariates)
    manifest = _manifest(args, config)
    report = run_calibration(truth, config.design, config.model, config.chain, config.calibration,
                             threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    vio.write_csv(os.path.join(args.out, "replicates.csv"), report.replicates)
    vio.write_csv(os.path.join(args.out, "coverage.csv"), report.coverage())
    manifest.write(args.out)


def cmd_validate(args):
    config = _config(args)
    dataset = _load_data(args, config)
    logger.info("%s is valid: %d persons, %d swabs, %d DBS tests", args.data, dataset.n_persons,
                len(dataset.swabs), len(dataset.dbs))


COMMANDS = {
    "simulate": (cmd_simulate, "simulate a dataset and its latent truth from a known population"),
    "fit": (cmd_fit, "run the MCMC chains on a dataset"),
    "summarize": (cmd_summarize, "posterior estimands, seroconversion probabilities and population bands"),
    "impute": (cmd_impute, "impute sgRNA trajectories of persons fitted without sgRNA data"),
    "cv": (cmd_cv, "k-fold cross-validation of sgRNA imputation and seroconversion"),
    "calibrate": (cmd_calibrate, "credible-interval coverage over repeated simulate-and-fit replicates"),
    "validate": (cmd_validate, "check a dataset against the CSV schemas"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="vlsero", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        if name != "validate":
            p.add_argument("--out", required=True, help="output directory")
        if name not in ("simulate", "calibrate"):
            p.add_argument("--data", required=True, help="directory holding swabs.csv, dbs.csv, covariates.csv")
        if name in ("summarize", "impute"):
            p.add_argument("--fit", required=True, help="output directory of a previous fit")
        if name in ("simulate", "fit", "cv", "calibrate", "impute"):
            p.add_argument("--seed", type=int, help="override chain.seed")
        if name in ("fit", "cv", "calibrate"):
            p.add_argument("--threads", type=int, default=1, help="worker processes")
        if name == "cv":
            p.add_argument("--folds", type=int, help="override cv.k")
        if name == "impute":
            p.add_argument("--persons", nargs="*", help="person ids (default: every person without sgRNA data)")
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    configure_logging()
    handler, _ = COMMANDS[args.command]
    logger.info("vlsero %s %s", __version__, args.command)
    try:
        handler(args)
    except (ConfigError, DataValidationError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except (NumericalError, TruncationError) as exc:
        logger.error("%s", exc)
        dump = getattr(exc, "dump", None)
        if dump and getattr(args, "out", None):
            os.makedirs(args.out, exist_ok=True)
            vio.write_json(os.path.join(args.out, "numerical_failure.json"), dump)
        return EXIT_NUMERICAL
    except (VlseroError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    logger.info("%s finished", args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
