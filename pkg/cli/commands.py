"""Command implementations for the knowledge tracing CLI.

Every handler returns a process exit code: 0 success, 1 verification or metric
failure, 2 input error.
"""

import sys
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from core import __version__
from core.cache import read_cache, write_cache
from core.checkpoint import build_model, load_checkpoint, save_checkpoint
from core.config import RunConfig, apply_variant, load_config, save_config, update_config
from core.console import set_verbose
from core.data import ingest_interactions
from core.dataset import build_dataset
from core.errors import CacheMismatchError, ConfigError, DataError, SfktError, VocabMismatchError
from core.evaluator import average_reports, evaluate_split, practice_number_similarity, write_similarity_csv
from core.trainer import fit, init_model
from core.verify import run_verification

from .display import (
    console,
    display_dataset_summary,
    display_report,
    display_similarity,
    display_training_log,
    display_verification,
    print_error,
    print_info,
    print_success,
    print_warning,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2

RUN_CONFIG_FILE = "run_config.json"

# CLI flag -> dotted config key
FLAG_KEYS = {
    "data": "data_csv",
    "cache_dir": "cache_dir",
    "checkpoint_dir": "checkpoint_dir",
    "report_dir": "report_dir",
    "max_len": "train.max_len",
    "epochs": "train.max_epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "seed": "train.seed",
    "patience": "train.patience",
    "lambda_cl": "train.loss.lambda_cl",
    "lambda_pert": "train.loss.lambda_pert",
    "tau": "train.loss.tau",
    "dropout": "train.loss.dropout",
    "buckets": "train.model.buckets",
    "meta_numbers": "train.model.meta_numbers",
}

DIM_KEYS = ("d", "d_u", "d_q", "d_c", "d_a")


def parse_seeds(text):
    """'1,2,3' -> [1, 2, 3]."""
    if not text:
        return []
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {text!r}") from e


def resolve_config(args, prefer_cache_config=False):
    """
    File values first, flags on top.

    With no --config, train/evaluate pick up the configuration saved next to
    the prepared cache so their data settings match it.
    """
    config_path = getattr(args, "config", None)
    if config_path is None and prefer_cache_config:
        cache_dir = getattr(args, "cache_dir", None) or load_config().cache_dir
        candidate = Path(cache_dir) / RUN_CONFIG_FILE
        if candidate.exists():
            config_path = candidate
    if config_path is not None and not Path(config_path).exists():
        raise FileNotFoundError(f"config file not found: {config_path}")
    config = load_config(config_path)

    overrides = {key: getattr(args, flag, None) for flag, key in FLAG_KEYS.items()}
    dim = getattr(args, "dim", None)
    if dim is not None:
        overrides.update({f"train.model.{k}": dim for k in DIM_KEYS})
    seeds = parse_seeds(getattr(args, "seeds", None))
    if seeds:
        overrides["seeds"] = seeds
    elif getattr(args, "seed", None) is not None:
        overrides["seeds"] = []
    update_config(config, overrides)
    return apply_variant(config, getattr(args, "variant", None))


def version_info(cache_hash=None):
    return {"package": __version__, "cache_hash": cache_hash}


def run_seeds(config):
    return list(config.seeds) or [config.train.seed]


def checkpoint_file(config, seed):
    return Path(config.checkpoint_dir) / f"sfkt_seed{seed}.npz"


def _input_error(message):
    print_error(message)
    return EXIT_INPUT


def cmd_prepare(args):
    """Ingest a CSV, split, window and cache it."""
    try:
        config = resolve_config(args)
    except (SfktError, FileNotFoundError) as e:
        return _input_error(str(e))

    if not config.data_csv:
        return _input_error("No interaction CSV given (use --data or SFKT_DATA_CSV)")
    csv_path = Path(config.data_csv)
    if not csv_path.exists():
        return _input_error(f"Interaction CSV not found: {csv_path}")

    print_info(f"Reading {csv_path}...")
    try:
        log = ingest_interactions(csv_path)
    except ConfigError as e:
        return _input_error(str(e))

    if log.skipped:
        print_warning(f"Skipped {log.skipped} malformed row(s):")
        for line in log.diagnostics:
            console.print(f"  [dim]{line}[/dim]")
    if len(log) == 0:
        return _input_error("No valid interactions in the CSV")

    try:
        dataset = build_dataset(log, config)
    except DataError as e:
        return _input_error(str(e))

    source = {"csv": str(csv_path), "rows_skipped": log.skipped, "diagnostics": log.diagnostics}
    path, digest = write_cache(dataset, config.cache_dir, config, source)
    save_config(config, Path(config.cache_dir) / RUN_CONFIG_FILE)

    display_dataset_summary(dataset.counts(), dataset.students, len(dataset.windows), digest)
    print_success(f"Cache written to {path}")
    return EXIT_OK


def cmd_train(args):
    """Train one checkpoint per seed from the prepared cache."""
    try:
        config = resolve_config(args, prefer_cache_config=True)
        dataset, header = read_cache(config.cache_dir, config)
    except CacheMismatchError as e:
        return _input_error(f"Refusing to train: {e}")
    except (SfktError, FileNotFoundError) as e:
        return _input_error(str(e))

    version = version_info(header["content_hash"])
    checkpoint_dir = Path(config.checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for seed in run_seeds(config):
        run_config = RunConfig.from_dict(config.to_dict())
        run_config.train.seed = seed
        print_info(f"Training seed {seed} on {dataset.counts()['train']:,} records...")

        model = init_model(build_model(run_config.train.model, dataset_sizes(dataset), dataset.stats), seed)
        try:
            result = fit(model, dataset, run_config, header={"config": run_config.to_dict(), "version": version})
        except DataError as e:
            return _input_error(str(e))

        log_path = result.log.write(checkpoint_dir / f"train_seed{seed}.jsonl")
        ckpt_path = save_checkpoint(
            checkpoint_file(run_config, seed),
            model,
            run_config,
            dataset.vocab.fingerprint(),
            extra={"version": version, "best_epoch": result.best_epoch, "seed": seed},
        )
        display_training_log(result.log, title=f"Training (seed {seed})")
        print_success(f"Checkpoint: {ckpt_path}")
        print_info(f"Training log: {log_path}")

    save_config(config, checkpoint_dir / RUN_CONFIG_FILE)
    return EXIT_OK


def dataset_sizes(dataset):
    vocab = dataset.vocab
    return {"students": vocab.n_students, "questions": vocab.n_questions, "concepts": vocab.n_concepts}


def cmd_evaluate(args):
    """Evaluate checkpoints on a split and write JSON reports."""
    try:
        config = resolve_config(args, prefer_cache_config=True)
        dataset, header = read_cache(config.cache_dir)
    except (SfktError, FileNotFoundError) as e:
        return _input_error(str(e))

    if getattr(args, "checkpoint", None):
        checkpoints = [(None, Path(args.checkpoint))]
    else:
        checkpoints = [(seed, checkpoint_file(config, seed)) for seed in run_seeds(config)]

    split = getattr(args, "split", None) or "test"
    report_dir = Path(config.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed, path in checkpoints:
        try:
            model, meta = load_checkpoint(path, expected_vocab=dataset.vocab.fingerprint())
        except VocabMismatchError as e:
            return _input_error(f"Refusing to evaluate: {e}")
        except (SfktError, FileNotFoundError) as e:
            return _input_error(str(e))

        version = dict(meta.get("version") or version_info(header["content_hash"]))
        try:
            report = evaluate_split(model, dataset, split, config.bucket_edges, config=meta["config"], version=version)
        except DataError as e:
            return _input_error(str(e))

        label = f"seed{seed}" if seed is not None else path.stem
        out = report_dir / f"report_{split}_{label}.json"
        out.write_text(report.model_dump_json(indent=2))
        display_report(report, title=f"Evaluation ({split}, {label})")
        print_success(f"Report: {out}")
        reports.append(report)

    if len(reports) > 1:
        mean = average_reports(reports)
        out = report_dir / f"report_{split}_mean.json"
        out.write_text(mean.model_dump_json(indent=2))
        display_report(mean, title=f"Mean over {len(reports)} seeds ({split})")
        print_success(f"Mean report: {out}")
    return EXIT_OK


def cmd_export_similarity(args):
    """Write the practice-number cosine similarity matrix of a trained model."""
    try:
        config = resolve_config(args)
        model, _ = load_checkpoint(Path(args.checkpoint))
        result = practice_number_similarity(model, args.side, args.max_count)
    except (SfktError, FileNotFoundError) as e:
        return _input_error(str(e))

    out = Path(args.out) if args.out else Path(config.report_dir) / f"similarity_{args.side}.csv"
    write_similarity_csv(result, out)
    display_similarity(result, args.side, out)
    return EXIT_OK


def cmd_verify(args):
    """Run the self-check suite; exit 1 on any failure."""
    set_verbose(False)
    try:
        report = run_verification(quick=getattr(args, "quick", False))
    finally:
        set_verbose(True)
    display_verification(report)
    if report.passed:
        print_success("All checks passed")
        return EXIT_OK
    failed = [c.name for c in report.checks if not c.passed]
    print_error(f"Failed: {', '.join(failed)}")
    return EXIT_FAILURE
