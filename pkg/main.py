"""
EKLF command-line entry point

Commands:
- generate: synthetic incomplete matrix sequence plus its ground-truth factors
- split:    train / validation / test partition of a sequence file
- train:    EKLF training (optionally over a lambda grid), model file and report
- evaluate: RMSE / MAE of a saved model on a test file
- inspect:  dataset statistics
- compare:  EKLF against the static pooled-ALS baseline on the same splits
"""

import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click

from config_manager import ConfigManager, RunConfig
from dataseq import MatrixSequence, generate_synthetic, read_sequence, split, write_sequence
from errors import ConfigError, EKLFError
from model_store import load_model, save_factor_set, save_model
from reporting import ModelSummary, RunReport, write_history_csv, write_report
from trainer import EKLF, evaluate, grid_search, train, train_static_baseline

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
# Execution-only settings; they never change results and stay out of reports
EXECUTION_KEYS = ("workers", "log_level")


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _parse_dims(ctx, param, value) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        m, t = (int(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter("expected 'M,T', e.g. --dims 499,1148") from None
    return [m, t]


def _parse_floats(ctx, param, value) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated numbers") from None


def _resolve(ctx: click.Context, command: str, **flags: Any) -> RunConfig:
    manager = ConfigManager(ctx.obj.get("config_file"))
    overrides = dict(flags, command=command, log_level=ctx.obj.get("log_level"))
    config = manager.load_config(overrides)
    _setup_logging(config.log_level)
    logger.debug(f"Resolved configuration for {command}: {config.to_dict()}")
    return config


def _report_config(config: RunConfig) -> Dict[str, Any]:
    return _without_execution_keys(config.to_dict())


def _without_execution_keys(data: Dict[str, Any]) -> Dict[str, Any]:
    data = dict(data)
    for key in EXECUTION_KEYS:
        data.pop(key, None)
    return data


def _dims(config: RunConfig):
    return tuple(config.dims) if config.dims else None


def hyper_options(func):
    """Model flags shared by train and compare"""
    options = [
        click.option("--rank", type=int, help="Latent dimension f (default 20)"),
        click.option("--lambda", "lam", type=float, help="Regularization coefficient (default 0.01)"),
        click.option("--alpha", type=float, help="LeakyReLU negative slope (default 0.01)"),
        click.option("--activation", type=click.Choice(["leaky_relu", "identity"]), help="Activation"),
        click.option("--w-var", type=float, help="State-transition noise variance (default 0.01)"),
        click.option("--r-var", type=float, help="Observation noise variance (default 0.1)"),
        click.option("--p0", type=float, help="Initial covariance scale (default 1)"),
        click.option("--max-iters", type=int, help="Iteration cap (default 500)"),
        click.option("--err-threshold", type=float, help="Validation RMSE change threshold (default 1e-5)"),
        click.option("--seed", type=int, help="Random seed"),
        click.option("--workers", type=int, help="Threads for node and column solves"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def report_options(func):
    func = click.option("--no-timing", is_flag=True, help="Write wall-time fields as 0.0")(func)
    func = click.option("--history-csv", type=click.Path(dir_okay=False), help="Per-iteration history CSV")(func)
    return func


@click.group()
@click.option("--config", "config_file", type=click.Path(dir_okay=False), help="JSON or YAML config file")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[str], log_level: Optional[str]):
    """EKLF: Kalman-filtered latent factors for dynamic weighted directed graphs"""
    ctx.ensure_object(dict)
    ctx.obj["config_file"] = config_file
    ctx.obj["log_level"] = log_level


@cli.command()
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Sequence file to write")
@click.option("--truth", type=click.Path(dir_okay=False), help="Ground-truth factors (default <output>.truth.json)")
@click.option("--nodes", type=int)
@click.option("--slots", type=int)
@click.option("--rank", type=int)
@click.option("--density", type=float)
@click.option("--drift", type=float)
@click.option("--noise", type=float)
@click.option("--alpha", type=float)
@click.option("--seed", type=int)
@click.pass_context
def generate(ctx, output, truth, **flags):
    """Generate a synthetic sequence from a LeakyReLU-warped latent random walk"""
    config = _resolve(ctx, "generate", output=output, **flags)
    seq, factors = generate_synthetic(config.synthetic_config())
    write_sequence(seq, output)
    save_factor_set(factors, truth or f"{output}.truth.json")


@cli.command(name="split")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", required=True, type=click.Path(file_okay=False), help="Directory for train/val/test")
@click.option("--dims", callback=_parse_dims, help="M,T (overrides the file header)")
@click.option("--train-frac", type=float)
@click.option("--val-frac", type=float)
@click.option("--test-frac", type=float)
@click.option("--case", type=click.IntRange(1, 3), help="Preset 1: 10/10/80, 2: 20/10/70, 3: 30/10/60")
@click.option("--seed", type=int)
@click.pass_context
def split_command(ctx, input_path, output, **flags):
    """Partition a sequence file into train, validation and test files"""
    config = _resolve(ctx, "split", input=input_path, output=output, **flags)
    seq = read_sequence(input_path, _dims(config))
    parts = split(seq, config.split_spec())

    out_dir = Path(output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), parts):
        write_sequence(part, out_dir / f"{name}.txt")


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dims", callback=_parse_dims, help="M,T (overrides the file header)")
@click.pass_context
def inspect(ctx, input_path, dims):
    """Print dataset statistics as JSON"""
    config = _resolve(ctx, "inspect", input=input_path, dims=dims)
    seq = read_sequence(input_path, _dims(config))
    click.echo(json.dumps(seq.stats().to_dict(), indent=2))


def _read_optional(path: Optional[str], reference: MatrixSequence) -> MatrixSequence:
    if path is None:
        return MatrixSequence(reference.nodes, reference.slots)
    return read_sequence(path, reference.dims)


@cli.command(name="train")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Training file")
@click.option("--val", "val_path", type=click.Path(exists=True, dir_okay=False), help="Validation file")
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Model file to write")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), help="Report file to write")
@click.option("--dims", callback=_parse_dims)
@click.option("--lambda-grid", callback=_parse_floats, help="Comma-separated lambdas to search")
@hyper_options
@report_options
@click.pass_context
def train_command(ctx, input_path, val_path, output, report_path, history_csv, no_timing, **flags):
    """Train EKLF; the best-validation snapshot is saved"""
    started = time.perf_counter()
    config = _resolve(ctx, "train", input=input_path, output=output, **flags)
    train_seq = read_sequence(input_path, _dims(config))
    val_seq = _read_optional(val_path, train_seq)
    hyper = config.hyper_params()

    grid: List[Dict[str, float]] = []
    if config.lambda_grid:
        model, grid = grid_search(train_seq, val_seq, hyper, config.lambdas())
    else:
        model = train(train_seq, val_seq, hyper)
    save_model(model, output)

    evaluation = evaluate(model, val_seq) if len(val_seq) else None
    if history_csv:
        write_history_csv(model.history, history_csv, include_timing=not no_timing)
    if report_path:
        report = RunReport(
            command="train",
            config=_report_config(config),
            seed=config.seed,
            stats=train_seq.stats(),
            models=[ModelSummary.from_model(model, evaluation)],
            grid=grid,
            total_seconds=time.perf_counter() - started,
        )
        write_report(report, report_path, include_timing=not no_timing)


@cli.command(name="evaluate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Test file")
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Report file to write")
@click.option("--no-timing", is_flag=True, help="Write wall-time fields as 0.0")
@click.pass_context
def evaluate_command(ctx, model_path, input_path, output, no_timing):
    """Compute RMSE and MAE of a saved model on a test file"""
    started = time.perf_counter()
    config = _resolve(ctx, "evaluate", input=input_path, output=output)
    model = load_model(model_path)
    test_seq = read_sequence(input_path, model.dims)
    summary = ModelSummary.from_model(model, evaluate(model, test_seq))

    report = RunReport(
        command="evaluate",
        config={**_report_config(config), "model_hyper": _without_execution_keys(model.hyper.to_dict())},
        seed=model.hyper.seed,
        stats=test_seq.stats(),
        models=[summary],
        total_seconds=time.perf_counter() - started,
    )
    write_report(report, output, include_timing=not no_timing)


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Training file")
@click.option("--val", "val_path", type=click.Path(exists=True, dir_okay=False), help="Validation file")
@click.option("--test", "test_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Test file")
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Report file to write")
@click.option("--dims", callback=_parse_dims)
@hyper_options
@report_options
@click.pass_context
def compare(ctx, input_path, val_path, test_path, output, history_csv, no_timing, **flags):
    """Train EKLF and the static pooled-ALS baseline on the same splits and report both"""
    started = time.perf_counter()
    config = _resolve(ctx, "compare", input=input_path, output=output, **flags)
    train_seq = read_sequence(input_path, _dims(config))
    val_seq = _read_optional(val_path, train_seq)
    test_seq = read_sequence(test_path, train_seq.dims)
    hyper = config.hyper_params()

    summaries = []
    for fit in (train, train_static_baseline):
        model = fit(train_seq, val_seq, hyper)
        summaries.append(ModelSummary.from_model(model, evaluate(model, test_seq)))
        if history_csv:
            path = Path(history_csv)
            target = path if model.kind == EKLF else path.with_name(f"{path.stem}.{model.kind}{path.suffix}")
            write_history_csv(model.history, target, include_timing=not no_timing)

    eklf, static = summaries
    logger.info(
        f"EKLF test RMSE {eklf.evaluation.rmse:.6f} vs static baseline {static.evaluation.rmse:.6f}"
    )
    report = RunReport(
        command="compare",
        config=_report_config(config),
        seed=config.seed,
        stats=train_seq.stats(),
        models=summaries,
        total_seconds=time.perf_counter() - started,
    )
    write_report(report, output, include_timing=not no_timing)


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit status: 0 ok, 2 usage/config error, 1 anything else"""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="eklf", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        click.echo(f"Error: {e}", err=True)
        return 2
    except EKLFError as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"Error: {type(e).__name__}: {e}", err=True)
        return 1
    except OSError as e:
        logger.error(f"I/O error: {e}")
        click.echo(f"Error: {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run_command())
