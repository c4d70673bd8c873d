import argparse
from contextlib import nullcontext

from rich.console import Console
from rich.table import Table
from threadpoolctl import threadpool_limits

from engine import __version__
from engine.core.commons import *
from engine.core.ArtifactManager import ArtifactManager
from embeddingCorpus.pemb_io import write_corpus
from embeddingCorpus.sampling import split_indices
from embeddingCorpus.synthetic import SyntheticConfig, generate_synthetic
from harness.arms import ArmConfig, build_arm
from harness.bench import bench
from harness.experiment import epsilon_sweep, run_experiment
from harness.report import REPORT_FORMATS, emit_report, render_report, report_table
from privacyTransformer import checkpoint
from privacyTransformer.managers.trainManager import OPTIMIZERS, SCHEDULES, TrainConfig, train_from_config
from probes.model import ProbeConfig
from probes.probe import run_task, sid_attack


logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """Raises on usage errors so the caller maps them to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_probe_flags(parser):
    parser.add_argument("--hidden", type=int, nargs="+", default=list(PROBE_HIDDEN))
    parser.add_argument("--epochs", type=int, default=PROBE_EPOCHS)
    parser.add_argument("--patience", type=int, default=PROBE_PATIENCE)
    parser.add_argument("--lr", type=float, default=PROBE_LR)
    parser.add_argument("--batch", type=int, default=PROBE_BATCH)
    parser.add_argument("--featurizer", choices=("softmax", "raw"), default="softmax")
    parser.add_argument("--average", choices=("macro", "micro"), default="macro")
    parser.add_argument("--split-seed", type=int, default=0)


def _probe_config(args) -> ProbeConfig:
    return ProbeConfig(hidden=tuple(args.hidden), lr=args.lr, epochs=args.epochs, patience=args.patience,
                       batch=args.batch, seed=args.seed, featurizer=args.featurizer, average=args.average)


def build_parser() -> CliParser:
    parser = CliParser(prog="anonymizer", description="Layer-wise speaker anonymization of speech embeddings")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="seed for every random draw of the command")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS threads")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    gen = commands.add_parser("gen", help="generate a synthetic corpus")
    gen.add_argument("--speakers", type=int, default=40)
    gen.add_argument("--contents", type=int, default=200)
    gen.add_argument("--layers", type=int, default=4)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--speaker-latent", type=int, default=8)
    gen.add_argument("--content-latent", type=int, default=8)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--styles", type=int, default=0)
    gen.add_argument("--out", required=True)

    train = commands.add_parser("train", help="fit a Privacy Transformer on a corpus")
    train.add_argument("--in", dest="input", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--epochs", type=int, default=TRANSFORMER_EPOCHS)
    train.add_argument("--lr", type=float, default=TRANSFORMER_LR)
    train.add_argument("--batch", type=int, default=TRANSFORMER_BATCH)
    train.add_argument("--optimizer", choices=OPTIMIZERS, default="sgd")
    train.add_argument("--schedule", choices=SCHEDULES, default="constant", help="learning-rate schedule")
    train.add_argument("--val-fraction", type=float, default=VAL_FRACTION)
    train.add_argument("--d-spk", type=int, default=SPEAKER_EMBED_DIM)
    train.add_argument("--d-layer", type=int, default=LAYER_EMBED_DIM)
    train.add_argument("--depth", type=int, default=ENCODER_DEPTH)
    train.add_argument("--heads", type=int, default=ATTENTION_HEADS)
    train.add_argument("--d-ff", type=int, default=FFN_DIM)
    train.add_argument("--dropout", type=float, default=DROPOUT)
    train.add_argument("--report", help="write the training report JSON here")
    train.add_argument("--progress", action="store_true")

    anonymize = commands.add_parser("anonymize", help="anonymize a .pemb corpus")
    anonymize.add_argument("--in", dest="input", required=True)
    anonymize.add_argument("--out", required=True)
    method = anonymize.add_mutually_exclusive_group(required=True)
    method.add_argument("--checkpoint")
    method.add_argument("--laplace", type=float, metavar="EPSILON")
    anonymize.add_argument("--clip-lo", type=float, default=CLIP_LO)
    anonymize.add_argument("--clip-hi", type=float, default=CLIP_HI)
    anonymize.add_argument("--pool", type=int, nargs="+", help="target speaker ids (default: all trained)")

    probe = commands.add_parser("probe", help="train and score one probe task")
    probe.add_argument("--in", dest="input", required=True)
    probe.add_argument("--task", default=SID_TASK)
    probe.add_argument("--out", help="write the metrics JSON here")
    _add_probe_flags(probe)

    evaluate = commands.add_parser("eval", help="run a full experiment from a TOML/JSON config")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--out-dir", help="overrides the config's output_dir")
    evaluate.add_argument("--formats", nargs="+", choices=REPORT_FORMATS, default=["json", "markdown"])

    bench_cmd = commands.add_parser("bench", help="time the anonymization pass of one arm")
    bench_cmd.add_argument("--in", dest="input", required=True)
    bench_cmd.add_argument("--arm", choices=("original", "laplace", "privacy_transformer"), default="laplace")
    bench_cmd.add_argument("--checkpoint")
    bench_cmd.add_argument("--epsilon", type=float, default=LAPLACE_EPSILON)
    bench_cmd.add_argument("-n", type=int, default=BENCH_UTTERANCES)
    bench_cmd.add_argument("--batch", type=int, default=BENCH_BATCH)

    report = commands.add_parser("report", help="re-render a saved JSON report")
    report.add_argument("--in", dest="input", required=True)
    report.add_argument("--format", choices=REPORT_FORMATS, default="markdown")
    report.add_argument("--out", help="file to write (default: stdout)")

    sweep = commands.add_parser("sweep", help="SID accuracy of the Laplace mechanism across epsilons")
    sweep.add_argument("--in", dest="input", required=True)
    sweep.add_argument("--epsilons", type=float, nargs="+", required=True)
    sweep.add_argument("--seeds", type=int, nargs="+", default=[0])
    sweep.add_argument("--out", help="write the sweep JSON here")
    _add_probe_flags(sweep)
    return parser


def cmd_gen(args, artifacts: ArtifactManager) -> int:
    cfg = SyntheticConfig(n_speakers=args.speakers, n_contents=args.contents, L=args.layers, d=args.dim,
                          p=args.speaker_latent, q=args.content_latent, noise_sigma=args.noise,
                          seed=args.seed, n_styles=args.styles)
    corpus = generate_synthetic(cfg)
    write_corpus(corpus, args.out)
    console.print(f"wrote {corpus!r} to {args.out}")
    return EXIT_OK


def cmd_train(args, artifacts: ArtifactManager) -> int:
    corpus = artifacts.load_path(args.input, "corpus")
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch=args.batch, val_fraction=args.val_fraction, seed=args.seed,
                      optimizer=args.optimizer, schedule=args.schedule,
                      model={"d_spk": args.d_spk, "d_L": args.d_layer, "n_layers": args.depth,
                             "n_heads": args.heads, "d_ff": args.d_ff, "dropout": args.dropout})
    model, report = train_from_config(corpus, cfg, progress=args.progress)
    checkpoint.save(model, args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_json(), indent=2))
    console.print(f"trained {model.num_parameters()} parameters; best epoch {report.best_epoch + 1}, "
                  f"val loss {report.best_val_loss}")
    return EXIT_OK


def cmd_anonymize(args, artifacts: ArtifactManager) -> int:
    corpus = artifacts.load_path(args.input, "corpus")
    if args.laplace is not None:
        arm_cfg = ArmConfig("laplace", kind="laplace", epsilon=args.laplace, clip_lo=args.clip_lo,
                            clip_hi=args.clip_hi, seed=args.seed)
    else:
        arm_cfg = ArmConfig("privacy_transformer", kind="privacy_transformer", checkpoint=args.checkpoint,
                            pool=args.pool, seed=args.seed)
    arm, _ = build_arm(arm_cfg)
    anonymized = arm.anonymize(corpus, seed=args.seed)
    write_corpus(anonymized, args.out)
    console.print(f"wrote {anonymized!r} to {args.out}")
    return EXIT_OK


def _metrics_table(title: str, metrics) -> Table:
    table = Table(title=title, show_header=True, header_style="bold cyan")
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    table.add_row("accuracy", f"{metrics.accuracy:.4f}")
    table.add_row("macro F1", f"{metrics.macro_f1:.4f}")
    table.add_row("micro F1", f"{metrics.micro_f1:.4f}")
    table.add_row("classes", str(len(metrics.classes)))
    return table


def cmd_probe(args, artifacts: ArtifactManager) -> int:
    corpus = artifacts.load_path(args.input, "corpus")
    cfg = _probe_config(args)
    if args.task == SID_TASK:
        metrics = sid_attack(corpus, cfg=cfg, split_seed=args.split_seed)
    else:
        parts = split_indices(corpus, unit="stratified", seed=args.split_seed)
        metrics = run_task(corpus, corpus.labels(args.task), parts, cfg)
    console.print(_metrics_table(f"{args.task} probe", metrics))
    if args.out:
        Path(args.out).write_text(json.dumps(metrics.to_json(), indent=2))
    return EXIT_OK


def cmd_eval(args, artifacts: ArtifactManager) -> int:
    cfg = artifacts.load_path(args.config, "config")
    report = run_experiment(cfg)
    out_dir = Path(args.out_dir or cfg.output_dir or Path(args.config).parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = {"json": ".json", "markdown": ".md", "csv": ".csv"}
    for fmt in args.formats:
        path = emit_report(report, fmt, out_dir / f"report{suffix[fmt]}")
        logger.info("wrote %s", path)
    console.print(report_table(report))
    return EXIT_OK if not report.errors else EXIT_RUNTIME


def cmd_bench(args, artifacts: ArtifactManager) -> int:
    corpus = artifacts.load_path(args.input, "corpus")
    arm_cfg = ArmConfig(args.arm, kind=args.arm, epsilon=args.epsilon, seed=args.seed,
                        checkpoint=args.checkpoint if args.arm == "privacy_transformer" else None)
    arm, _ = build_arm(arm_cfg)
    result = bench(arm, corpus, n=args.n, batch=args.batch, threads=args.threads or BENCH_THREADS, seed=args.seed)
    table = Table(title="anonymization cost", show_header=True, header_style="bold cyan")
    for column in ("Arm", "Utterances", "Time (s)", "ms/utt", "Peak RSS (MB)"):
        table.add_column(column, justify="right")
    table.add_row(result.arm, str(result.n), f"{result.seconds:.3f}", f"{1e3 * result.per_utterance:.2f}",
                  f"{result.peak_rss_bytes / 2 ** 20:.1f}")
    console.print(table)
    return EXIT_OK


def cmd_report(args, artifacts: ArtifactManager) -> int:
    report = artifacts.load_path(args.input, "report")
    if args.out:
        emit_report(report, args.format, args.out)
    else:
        sys.stdout.write(render_report(report, args.format))
    return EXIT_OK


def cmd_sweep(args, artifacts: ArtifactManager) -> int:
    corpus = artifacts.load_path(args.input, "corpus")
    points = epsilon_sweep(corpus, args.epsilons, args.seeds, _probe_config(args), split_seed=args.split_seed)
    table = Table(title="Laplace epsilon sweep", show_header=True, header_style="bold cyan")
    table.add_column("epsilon", justify="right")
    table.add_column("SID Acc. ↓", justify="right")
    for point in points:
        table.add_row(f"{point.epsilon:g}", f"{100.0 * point.mean_accuracy:.2f}")
    console.print(table)
    if args.out:
        Path(args.out).write_text(json.dumps([p.to_json() for p in points], indent=2))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "anonymize": cmd_anonymize,
    "probe": cmd_probe,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command. Returns 0 ok, 1 usage, 2 data/format error, 3 runtime error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)

    setup_logging(args.log_level)
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_USAGE

    limits = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    try:
        with limits:
            return COMMANDS[args.command](args, ArtifactManager())
    except (FormatError, DataError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
