"""
Command-line entry point.

    python app.py gen-noise config.ini
    python app.py estimate-sd noise/*.csv --temperature-K 300
    python app.py superres-fit autocorrelation.csv --temperature-K 300
    python app.py resample noise.csv --dt-fs 1
    python app.py propagate config.ini
    python app.py absorption config.ini --normalize --align-to reference.csv
    python app.py equilibrium config.ini
    python app.py demo -o demo
    python app.py runs output --command propagate

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np
import pandas as pd

from nise import __version__, bath, io, seed, services
from nise.config import RunConfig
from nise.errors import ConfigError, NumericalError
from nise.models import DampingKind, RunRecord, SuperResGrid
from nise.repository import Repository

logger = logging.getLogger("nise")


class Outcome(NamedTuple):
    command: str
    config_hash: str
    seed: Optional[int]
    directory: Path
    outputs: List[Path]


def _arguments_hash(args: argparse.Namespace) -> str:
    values = {k: v for k, v in vars(args).items() if k not in ("handler", "verbose")}
    payload = json.dumps(values, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _load(args) -> RunConfig:
    return RunConfig.from_file(args.config)


def _directory(args, config: Optional[RunConfig] = None) -> Path:
    if args.output is not None:
        return Path(args.output)
    if config is not None:
        return config.resolve(config.output.directory)
    return Path("output")


def _configured(command: str, config: RunConfig, directory: Path, outputs) -> Outcome:
    return Outcome(command, config.config_hash(), config.run.seed, directory, outputs)


def _service(args, config: RunConfig) -> services.NiseService:
    runner = services.EnsembleRunner(
        workers=args.workers or config.run.workers, chunk_size=config.run.chunk_size
    )
    return services.NiseService(config, runner)


# Commands


def gen_noise(args) -> Outcome:
    config = _load(args)
    directory = _directory(args, config)
    outputs, digest = [], None
    for trajectory in _service(args, config).generate_noise():
        if digest is None:
            models = services.site_models(config, trajectory.n_sites)
            digest = services.model_hash(models)
        path = directory / "noise" / f"noise_r{trajectory.realization:05d}.csv"
        outputs.append(io.write_noise(path, trajectory, digest))
    return _configured("gen-noise", config, directory, outputs)


def estimate_sd(args) -> Outcome:
    directory = _directory(args)
    estimate = services.estimate_sd(
        io.read_noise_files(args.trajectories),
        args.temperature_K,
        damping=DampingKind(args.damping),
        cutoff_fs=args.cutoff_fs,
        exponent=args.exponent,
        cutoff_window_fs=args.cutoff_window_fs,
        pad_to_fs=args.pad_to_fs,
        site=args.site - 1,
    )
    metadata = {
        "damping": estimate.damping.kind.value,
        "cutoff_fs": repr(estimate.damping.cutoff_fs),
        "cutoff_found": str(estimate.cutoff_found).lower(),
    }
    outputs = [
        io.write_autocorrelation(
            directory / "autocorrelation.csv", estimate.autocorrelation
        ),
        io.write_autocorrelation(
            directory / "autocorrelation_damped.csv", estimate.damped, metadata
        ),
        io.write_sd(directory / "spectral_density.csv", estimate.model, metadata),
    ]
    omega, signed = bath.signed_sd_from_autocorrelation(
        estimate.damped, args.temperature_K
    )
    outputs.append(
        io.write_table(
            directory / "spectral_density_signed.csv",
            pd.DataFrame({"omega_cm1": omega, "J_cm1": signed}),
            metadata,
        )
    )
    return Outcome("estimate-sd", _arguments_hash(args), None, directory, outputs)


def superres_fit(args) -> Outcome:
    directory = _directory(args)
    grid = SuperResGrid(
        gammas_cm1=np.arange(args.gamma_min, args.gamma_max + 1e-9, args.gamma_step),
        omegas_cm1=np.arange(0.0, args.omega_max + 1e-9, args.omega_step),
    )
    solution, model = services.superres_fit(
        io.read_autocorrelation(args.autocorrelation),
        args.temperature_K,
        grid=grid,
        a=args.a,
        b=args.b,
        c=args.c,
        cutoff_fs=args.cutoff_fs,
        threshold=args.threshold,
        restarts=args.restarts,
        seed=args.seed,
    )
    outputs = [
        io.write_superres(directory / "superres.csv", solution),
        io.write_sd(directory / "spectral_density.csv", model),
    ]
    return Outcome("superres-fit", _arguments_hash(args), args.seed, directory, outputs)


def resample(args) -> Outcome:
    directory = _directory(args)
    outputs = []
    for source in args.trajectories:
        trajectory = services.resample_trajectory(
            io.read_noise(source), args.dt_fs, taper=args.taper
        )
        metadata = io.read_metadata(source)
        path = directory / Path(source).name
        digest = metadata.get("model_hash", "")
        outputs.append(io.write_noise(path, trajectory, digest))
    return Outcome("resample", _arguments_hash(args), None, directory, outputs)


def propagate(args) -> Outcome:
    config = _load(args)
    directory = _directory(args, config)
    result = _service(args, config).propagate()
    outputs = []
    for kind, series in result.series.items():
        path = directory / f"populations_{kind.value}.csv"
        outputs.append(io.write_populations(path, series))
    if result.lifetimes is not None:
        path = directory / "lifetimes.csv"
        outputs.append(io.write_lifetimes(path, result.lifetimes))
    if config.propagation.write_density:
        for kind, series in result.series.items():
            path = directory / f"density_{kind.value}.csv"
            outputs.append(io.write_density(path, series))
    return _configured("propagate", config, directory, outputs)


def absorption(args) -> Outcome:
    config = _load(args)
    directory = _directory(args, config)
    align_to = args.align_to
    if align_to is not None:
        align_to = str(Path(align_to).resolve())
    result = _service(args, config).absorption(
        normalize=True if args.normalize else None, align_to=align_to
    )
    times = np.arange(len(result.sigma)) * result.dt_fs
    response = pd.DataFrame(
        {"t_fs": times, "sigma_re": result.sigma.real, "sigma_im": result.sigma.imag}
    )
    outputs = [
        io.write_spectrum(directory / "absorption.csv", result.spectrum),
        io.write_table(directory / "response.csv", response),
    ]
    return _configured("absorption", config, directory, outputs)


def equilibrium(args) -> Outcome:
    config = _load(args)
    directory = _directory(args, config)
    result = _service(args, config).equilibrium()
    frame = pd.DataFrame(services.equilibrium_table(result))
    path = io.write_table(
        directory / "equilibrium.csv",
        frame,
        {"temperature_K": repr(result.temperature)},
    )
    return _configured("equilibrium", config, directory, [path])


def demo(args) -> Outcome:
    directory = _directory(args)
    outputs = seed.write_demo(directory)
    return Outcome("demo", _arguments_hash(args), None, directory, outputs)


# Bookkeeping


def record(outcome: Outcome) -> Path:
    """manifest.json next to the outputs plus a row in the run database."""
    outputs = [str(path.relative_to(outcome.directory)) for path in outcome.outputs]
    content = io.manifest(outcome.command, outcome.config_hash, outcome.seed, outputs)
    manifest_path = io.write_manifest(outcome.directory / "manifest.json", content)

    repository = Repository(f"sqlite:///{outcome.directory / 'runs.db'}")
    earlier = repository.get_runs_by_config(outcome.config_hash, outcome.command)
    if earlier:
        logger.info(
            "%s repeats %d earlier run(s) of configuration %s, first at %s",
            outcome.command,
            len(earlier),
            outcome.config_hash[:12],
            earlier[0].captured_at.isoformat(),
        )
    repository.add_run(
        RunRecord(
            command=outcome.command,
            config_hash=outcome.config_hash,
            seed=outcome.seed,
            versions_json=json.dumps(content["versions"], sort_keys=True),
            outputs_json=json.dumps(content["outputs"]),
            algo_version=__version__,
        )
    )
    return manifest_path


def run_table(records) -> pd.DataFrame:
    columns = ["captured_at", "command", "config_hash", "seed", "outputs"]
    rows = [
        {
            "captured_at": r.captured_at.isoformat(timespec="seconds"),
            "command": r.command,
            "config_hash": r.config_hash,
            "seed": r.seed,
            "outputs": len(json.loads(r.outputs_json)),
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=columns)


def runs(args) -> None:
    database = Path(args.directory) / "runs.db"
    if not database.exists():
        raise ConfigError(f"No run database in {args.directory}")
    repository = Repository(f"sqlite:///{database}")
    if args.config_hash is not None:
        records = repository.get_runs_by_config(args.config_hash, args.run_command)
    elif args.run_command is not None:
        records = repository.get_runs_by_command(args.run_command)
    else:
        records = repository.get_all_runs()
    table = run_table(records)
    print("no runs recorded" if table.empty else table.to_string(index=False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nise", description="Bath noise, spectral densities and NISE propagation"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text, config=True):
        command = commands.add_parser(name, help=help_text)
        if config:
            command.add_argument("config", help="run configuration file")
            command.add_argument("--workers", type=int, default=None)
        command.add_argument("-o", "--output", default=None, help="output directory")
        command.set_defaults(handler=handler)
        return command

    add("gen-noise", gen_noise, "generate noise trajectories")

    command = add("estimate-sd", estimate_sd, "spectral density from noise", False)
    command.add_argument("trajectories", nargs="+")
    command.add_argument(
        "--temperature-K", dest="temperature_K", type=float, required=True
    )
    command.add_argument(
        "--damping", choices=[kind.value for kind in DampingKind], default="gaussian"
    )
    command.add_argument("--cutoff-fs", type=float, default=None)
    command.add_argument("--exponent", type=float, default=None)
    command.add_argument("--cutoff-window-fs", type=float, default=500.0)
    command.add_argument("--pad-to-fs", type=float, default=None)
    command.add_argument("--site", type=int, default=1)

    command = add("superres-fit", superres_fit, "sparse damped-cosine fit", False)
    command.add_argument("autocorrelation")
    command.add_argument(
        "--temperature-K", dest="temperature_K", type=float, required=True
    )
    command.add_argument("--cutoff-fs", type=float, default=None)
    command.add_argument("--a", type=float, default=1e4)
    command.add_argument("--b", type=float, default=1.0)
    command.add_argument("--c", type=float, default=0.1)
    command.add_argument("--threshold", type=float, default=5e-8)
    command.add_argument("--restarts", type=int, default=3)
    command.add_argument("--seed", type=int, default=0)
    command.add_argument("--gamma-min", type=float, default=5.0)
    command.add_argument("--gamma-max", type=float, default=200.0)
    command.add_argument("--gamma-step", type=float, default=5.0)
    command.add_argument("--omega-max", type=float, default=1613.0)
    command.add_argument("--omega-step", type=float, default=2.0)

    command = add("resample", resample, "band-limited upsampling of noise", False)
    command.add_argument("trajectories", nargs="+")
    command.add_argument("--dt-fs", type=float, required=True)
    command.add_argument("--taper", action="store_true")

    add("propagate", propagate, "ensemble populations")

    command = add("absorption", absorption, "linear absorption spectrum")
    command.add_argument("--normalize", action="store_true")
    command.add_argument("--align-to", default=None, help="reference spectrum CSV")

    add("equilibrium", equilibrium, "Boltzmann populations of the mean Hamiltonian")
    add("demo", demo, "reference systems and example configurations", False)

    command = commands.add_parser("runs", help="list recorded runs of a directory")
    command.add_argument("directory")
    command.add_argument("--command", dest="run_command", default=None)
    command.add_argument("--config-hash", default=None)
    command.set_defaults(handler=runs)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)

    try:
        outcome = args.handler(args)
        if outcome is None:
            return 0
        record(outcome)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except ValueError as exc:
        # ConfigError and pydantic's ValidationError are both ValueErrors
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code

    count = len(outcome.outputs)
    print(f"{outcome.command}: wrote {count} files to {outcome.directory}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
