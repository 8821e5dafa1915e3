# pyright: strict
"""Command-line driver: preprocess, build-vocab, train, translate, evaluate, report, experiment."""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from . import __version__
from .bleu import bleu_corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ConfigurationError,
    RunManifest,
    load_config_file,
    resolve_manifest,
    with_vocab_sizes,
)
from .decode import DEFAULT_CONCURRENCY, translate_file
from .experiment import experiment_grid, run_experiment
from .model import TransformerModel
from .preprocess import (
    MisalignedCorpusError,
    Origin,
    SplitSpec,
    load_tokenized,
    mix,
    normalize_punctuation,
    read_lines,
    read_parallel,
    run_pipeline,
    split,
    tokenize,
    write_corpus,
    write_stats,
)
from .training import (
    ProbeTranslations,
    Trainer,
    TrainingDivergedError,
    merge_train_logs,
    read_train_log,
    random_streams,
    write_records,
)
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1

STATS_FILE = "stats.tsv"


def _check_inputs(*paths: Path) -> None:
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        msg = f"Input file not found: {', '.join(missing)}"
        raise ConfigurationError(msg)


def _check_outputs(*paths: Path, force: bool) -> None:
    if force:
        return
    existing = [str(p) for p in paths if p.exists()]
    if existing:
        msg = f"Refusing to overwrite {', '.join(existing)} without --force"
        raise ConfigurationError(msg)


def _manifest(args: argparse.Namespace, overrides: dict[str, str]) -> RunManifest:
    config_path: Path | None = args.config
    values: dict[str, str] = {}
    if config_path is not None:
        _check_inputs(config_path)
        values = load_config_file(config_path)
    return resolve_manifest(values, overrides, config_path=config_path)


def _override(overrides: dict[str, str], key: str, value: object) -> None:
    if value is not None:
        overrides[key] = str(value)


def cmd_preprocess(args: argparse.Namespace) -> int:
    """Clean, deduplicate and split a raw parallel corpus."""
    overrides: dict[str, str] = {}
    for key in ("valid_size", "test_size", "seed", "min_len", "max_len", "max_ratio"):
        _override(overrides, key, getattr(args, key))
    manifest = _manifest(args, overrides)
    out_dir: Path = args.out_dir
    outputs = [out_dir / f"{part}.{side}" for part in ("train", "valid", "test") for side in ("src", "tgt")]
    outputs.append(out_dir / STATS_FILE)
    _check_inputs(args.src_file, args.tgt_file)
    _check_outputs(*outputs, force=args.force)

    source_lines, target_lines = read_parallel(args.src_file, args.tgt_file)
    corpus = run_pipeline(source_lines, target_lines, manifest.pipeline, Origin(args.origin))
    pipeline = manifest.pipeline
    train_set, valid_set, test_set = split(
        corpus, SplitSpec(pipeline.valid_size, pipeline.test_size, pipeline.seed)
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train_set), ("valid", valid_set), ("test", test_set)):
        write_corpus(part, out_dir / f"{name}.src", out_dir / f"{name}.tgt")
    rows = [
        *corpus.stats.rows(),
        ("train", len(train_set)),
        ("valid", len(valid_set)),
        ("test", len(test_set)),
    ]
    write_stats(out_dir / STATS_FILE, rows)
    logger.info(
        "Wrote splits - out_dir: %s, train: %d, valid: %d, test: %d",
        out_dir,
        len(train_set),
        len(valid_set),
        len(test_set),
    )
    return EXIT_OK


def cmd_build_vocab(args: argparse.Namespace) -> int:
    """Build a vocabulary from one tokenized side of a training corpus."""
    _check_inputs(args.corpus)
    _check_outputs(args.output, force=args.force)
    sentences = [line.split() for line in read_lines(args.corpus)]
    vocab = Vocabulary.build(sentences, args.min_freq)
    vocab.save(args.output)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train a model as configured and write its checkpoint and loss log."""
    overrides: dict[str, str] = {}
    _override(overrides, "epochs", args.epochs)
    _override(overrides, "seed", args.seed)
    _override(overrides, "run_label", args.run_label)
    if args.mix is not None:
        overrides["mix_src"], overrides["mix_tgt"] = args.mix
    manifest = _manifest(args, overrides)
    inputs = manifest.require(
        "train_src", "train_tgt", "valid_src", "valid_tgt", "src_vocab", "tgt_vocab"
    )
    mixing = "mix_src" in manifest.paths or "mix_tgt" in manifest.paths
    if mixing:
        inputs.extend(manifest.require("mix_src", "mix_tgt"))
    checkpoint_path, log_path = manifest.require("checkpoint", "log")
    _check_inputs(*inputs)
    _check_outputs(checkpoint_path, log_path, force=args.force)

    paths = manifest.paths
    train_set = load_tokenized(paths["train_src"], paths["train_tgt"])
    if mixing:
        general = load_tokenized(paths["mix_src"], paths["mix_tgt"], Origin.GENERAL_DOMAIN)
        train_set = mix(train_set, general, seed=manifest.seed)
    valid_set = load_tokenized(paths["valid_src"], paths["valid_tgt"])
    src_vocab = Vocabulary.load(paths["src_vocab"])
    tgt_vocab = Vocabulary.load(paths["tgt_vocab"])

    config = with_vocab_sizes(manifest.model, len(src_vocab), len(tgt_vocab))
    model = TransformerModel(config, rng=random_streams(manifest.seed).init)
    trainer = Trainer(model, manifest.train, src_vocab, tgt_vocab)
    if args.probe:
        probe = ProbeTranslations(
            model, src_vocab, tgt_vocab, [tokenize(normalize_punctuation(s)) for s in args.probe]
        )
        trainer.subscribe(probe)

    try:
        log = trainer.fit(train_set, valid_set)
    except TrainingDivergedError as err:
        if err.log is not None:
            err.log.write_csv(log_path)
        save_checkpoint(
            checkpoint_path,
            model,
            train_config=manifest.train,
            epoch=err.epoch - 1,
            src_vocab=src_vocab,
            tgt_vocab=tgt_vocab,
            optimizer=trainer.optimizer,
        )
        raise

    log.write_csv(log_path)
    save_checkpoint(
        checkpoint_path,
        model,
        train_config=manifest.train,
        epoch=len(log),
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        optimizer=trainer.optimizer,
    )
    logger.info(
        "Training finished - epochs: %d, best_epoch: %d, stop_reason: %s",
        len(log),
        log.best_epoch,
        log.stop_reason,
    )
    return EXIT_OK


def cmd_translate(args: argparse.Namespace) -> int:
    """Translate a raw text file with a trained checkpoint."""
    inputs = [args.checkpoint, args.input]
    inputs.extend(p for p in (args.src_vocab, args.tgt_vocab) if p is not None)
    _check_inputs(*inputs)
    _check_outputs(args.output, force=args.force)

    checkpoint = load_checkpoint(args.checkpoint)
    src_vocab = Vocabulary.load(args.src_vocab) if args.src_vocab else checkpoint.src_vocab
    tgt_vocab = Vocabulary.load(args.tgt_vocab) if args.tgt_vocab else checkpoint.tgt_vocab
    checkpoint.check_vocabularies(src_vocab, tgt_vocab)
    model = checkpoint.build_model()
    translate_file(
        model, src_vocab, tgt_vocab, args.input, args.output, concurrency=args.concurrency
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Print the BLEU report of a candidate file against a reference file."""
    _check_inputs(args.candidate, args.reference)
    candidates = read_lines(args.candidate)
    references = read_lines(args.reference)
    if len(candidates) != len(references):
        msg = f"{len(candidates)} candidate lines but {len(references)} reference lines"
        raise MisalignedCorpusError(msg)
    report = bleu_corpus(
        [tokenize(normalize_punctuation(line)) for line in candidates],
        [tokenize(normalize_punctuation(line)) for line in references],
        max_order=args.max_order,
        smooth=args.smooth,
    )
    print(report.format())
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Merge loss logs of several runs into one plottable CSV."""
    _check_inputs(*args.logs)
    _check_outputs(args.output, force=args.force)
    merged = merge_train_logs(read_train_log(path) for path in args.logs)
    write_records(args.output, merged)
    labels = sorted({record.run_label for record in merged})
    logger.info(
        "Merged loss logs - rows: %d, runs: %d, labels: %s",
        len(merged),
        len(labels),
        ",".join(labels),
    )
    return EXIT_OK


def _epoch_list(raw: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as err:
        msg = f"Expected comma-separated epoch counts, got {raw!r}"
        raise argparse.ArgumentTypeError(msg) from err
    if not values or any(v < 1 for v in values):
        msg = f"Epoch counts must be positive, got {raw!r}"
        raise argparse.ArgumentTypeError(msg)
    return values


def cmd_experiment(args: argparse.Namespace) -> int:
    """Compare base-only and augmented training across epoch settings."""
    overrides: dict[str, str] = {}
    _override(overrides, "seed", args.seed)
    manifest = _manifest(args, overrides)
    inputs = manifest.require(
        "train_src", "train_tgt", "mix_src", "mix_tgt", "valid_src", "valid_tgt", "test_src", "test_tgt"
    )
    _check_inputs(*inputs)
    outputs = [args.output] + ([args.logs] if args.logs is not None else [])
    _check_outputs(*outputs, force=args.force)

    paths = manifest.paths
    report = run_experiment(
        load_tokenized(paths["train_src"], paths["train_tgt"]),
        load_tokenized(paths["mix_src"], paths["mix_tgt"], Origin.GENERAL_DOMAIN),
        load_tokenized(paths["valid_src"], paths["valid_tgt"]),
        load_tokenized(paths["test_src"], paths["test_tgt"]),
        experiment_grid(args.epochs_list),
        model_config=manifest.model,
        train_config=manifest.train,
        min_freq=manifest.pipeline.min_freq,
    )
    report.write_csv(args.output)
    if args.logs is not None:
        write_records(args.logs, report.merged_records())
    print(report.format_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        prog="nmt-transformer", description="Transformer machine translation toolkit"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_force(p: argparse.ArgumentParser) -> None:
        p.add_argument("--force", action="store_true", help="Overwrite existing outputs")

    def add_config(p: argparse.ArgumentParser, *, required: bool = False) -> None:
        p.add_argument(
            "--config", type=Path, required=required, help="Flat 'key = value' config file"
        )

    p = sub.add_parser("preprocess", help="Normalize, tokenize, clean, dedup and split a corpus")
    p.add_argument("src_file", type=Path, help="Raw source-language file")
    p.add_argument("tgt_file", type=Path, help="Raw target-language file, line-aligned")
    p.add_argument("out_dir", type=Path, help="Directory for split files and stats")
    add_config(p)
    p.add_argument("--valid", dest="valid_size", type=int, help="Validation pairs held out")
    p.add_argument("--test", dest="test_size", type=int, help="Test pairs held out")
    p.add_argument("--seed", type=int, help="Split shuffle seed")
    p.add_argument("--min-len", dest="min_len", type=int, help="Shortest sentence kept")
    p.add_argument("--max-len", dest="max_len", type=int, help="Longest sentence kept")
    p.add_argument("--max-ratio", dest="max_ratio", type=float, help="Largest length ratio kept")
    p.add_argument(
        "--origin", choices=[o.value for o in Origin], default=Origin.IN_DOMAIN.value
    )
    add_force(p)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("build-vocab", help="Build a vocabulary from a tokenized corpus side")
    p.add_argument("corpus", type=Path, help="Tokenized training file (one side)")
    p.add_argument("output", type=Path, help="Vocabulary file to write")
    p.add_argument("--min-freq", dest="min_freq", type=int, default=1)
    add_force(p)
    p.set_defaults(handler=cmd_build_vocab)

    p = sub.add_parser("train", help="Train a model")
    add_config(p, required=True)
    p.add_argument("--epochs", type=int, help="Override the epoch cap")
    p.add_argument("--seed", type=int, help="Override the run seed")
    p.add_argument("--run-label", dest="run_label", help="Label written to the loss log")
    p.add_argument(
        "--mix",
        nargs=2,
        type=str,
        metavar=("SRC", "TGT"),
        help="Tokenized general-domain corpus mixed into training",
    )
    p.add_argument(
        "--probe",
        action="append",
        default=[],
        help="Source sentence translated after every epoch (repeatable)",
    )
    add_force(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("translate", help="Translate a text file")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--src-vocab", dest="src_vocab", type=Path)
    p.add_argument("--tgt-vocab", dest="tgt_vocab", type=Path)
    p.add_argument("--concurrency", type=int, default=DEFAULT_CONCURRENCY)
    add_force(p)
    p.set_defaults(handler=cmd_translate)

    p = sub.add_parser("evaluate", help="Corpus BLEU of candidates against references")
    p.add_argument("candidate", type=Path)
    p.add_argument("reference", type=Path)
    p.add_argument("--max-order", dest="max_order", type=int, default=4)
    p.add_argument("--smooth", action="store_true", help="Add-one smoothing for n > 1")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", help="Merge loss logs into one CSV")
    p.add_argument("logs", type=Path, nargs="+")
    p.add_argument("--output", type=Path, required=True)
    add_force(p)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("experiment", help="Base versus augmented training comparison")
    add_config(p, required=True)
    p.add_argument(
        "--epochs-list", dest="epochs_list", type=_epoch_list, default=[5], help="e.g. 5,20,50"
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--output", type=Path, required=True, help="Report CSV")
    p.add_argument("--logs", type=Path, help="Merged loss-log CSV of every run")
    add_force(p)
    p.set_defaults(handler=cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command-line interface.

    Returns:
        0 on success, 1 if the command failed

    """
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (OSError, ValueError, RuntimeError) as e:
        logger.error("Command failed - command: %s, error: %s", args.command, str(e))  # noqa: TRY400
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
