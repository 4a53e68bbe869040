"""Command-line entry point: ``acoustic-screen <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path


from . import __version__
from .audio import TARGET_RATE, TASKS, DatasetManifest, ManifestEntry, preprocess, read_wav, write_wav
from .classifier import (
    ModelSignature,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    supervised_pretrain,
    train_model,
    train_task_models,
    write_training_log,
)
from .config import CONFIG_ENV, ConfigError, PipelineConfig, load_config
from .errors import PipelineError
from .evaluation import (
    EnsembleWeights,
    FusionWeights,
    classifier_cv,
    ensemble_scores,
    fuse_scores,
    roc_auc,
    roc_curve,
    write_roc_svg_multi,
)
from .features import export_spectrogram_image, power_spectrogram, save_features
from .pipeline import CachedFeaturizer, MfccFeaturizer
from .scores import read_scores, write_scores
from .synth import synth_data

log = logging.getLogger("acoustic_screen")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    """Bad command line; reported with help text and exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_usage()}")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _manifest(path: str, task: str | None = None) -> DatasetManifest:
    m = DatasetManifest.from_csv(path)
    if task:
        m = m.by_task(task)
        if not len(m):
            raise PipelineError(f"{path}: no entries for task {task!r}")
    return m


def _featurizer(args, cfg: PipelineConfig):
    if getattr(args, "features", None):
        return CachedFeaturizer(args.features)
    return MfccFeaturizer(cfg.frame, cfg.sad)


def _seed(args, cfg: PipelineConfig) -> int:
    return cfg.train.seed if args.seed is None else args.seed


def _train_cfg(args, cfg: PipelineConfig):
    overrides = {"seed": _seed(args, cfg)}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return cfg.train_config(**overrides)


def _signature(cfg: PipelineConfig, featurizer) -> ModelSignature:
    return replace(cfg.model, input_dim=featurizer.dim)


def _report_skipped(scores) -> None:
    for i, why in sorted(scores.skipped.items()):
        log.warning("skipped %s: %s", i, why)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_preprocess(args, cfg):
    m = _manifest(args.manifest, args.task)
    out = _out_dir(args.out)
    (out / "wav").mkdir(exist_ok=True)
    kept, failed = [], 0
    for e in m:
        try:
            clip = preprocess(read_wav(e.path), None if args.no_sad else cfg.sad, TARGET_RATE)
        except PipelineError as exc:
            log.warning("skipped %s: %s", e.id, exc)
            failed += 1
            continue
        path = out / "wav" / f"{e.id}.wav"
        write_wav(path, clip, float32=True)
        kept.append(ManifestEntry(e.id, path, e.label, e.task))
    DatasetManifest(kept).to_csv(out / "manifest.csv")
    print(f"preprocessed {len(kept)} recordings ({failed} skipped) -> {out / 'manifest.csv'}")
    return EXIT_OK if kept else EXIT_DATA


def cmd_featurize(args, cfg):
    m = _manifest(args.manifest, args.task)
    out = _out_dir(args.out)
    feat = MfccFeaturizer(cfg.frame, cfg.sad)
    done = 0
    for e in m:
        try:
            if args.kind == "spectrogram":
                fm = power_spectrogram(preprocess(read_wav(e.path), cfg.sad, TARGET_RATE), cfg.frame)
            else:
                fm = feat(e)
        except PipelineError as exc:
            log.warning("skipped %s: %s", e.id, exc)
            continue
        save_features(fm, out / f"{e.id}.feat")
        done += 1
    print(f"wrote {done} feature files to {out}")
    return EXIT_OK if done else EXIT_DATA


def cmd_train(args, cfg):
    m = _manifest(args.manifest, args.task)
    featurizer = _featurizer(args, cfg)
    init = load_checkpoint(args.init) if args.init else None
    val = _manifest(args.val, args.task) if args.val else None
    params, history = train_model(m, init, _train_cfg(args, cfg), featurizer, val, _signature(cfg, featurizer))
    save_checkpoint(params, args.out)
    if args.log:
        write_training_log(history, args.log)
    print(f"trained {len(history)} epochs on {len(m)} recordings -> {args.out}")
    return EXIT_OK


def cmd_pretrain_avg(args, cfg):
    m = _manifest(args.manifest)
    manifests = {t: m.by_task(t) for t in TASKS}
    featurizer = _featurizer(args, cfg)
    tcfg = _train_cfg(args, cfg)
    sig = _signature(cfg, featurizer)
    shared = not args.independent_init
    if args.task_models:
        out = _out_dir(args.task_models)
        models = train_task_models(manifests, tcfg, featurizer, sig, shared, args.jobs)
        for t, p in models.items():
            save_checkpoint(p, out / f"{t}.ckpt")
        from .classifier import average_params

        avg = average_params([models[t] for t in TASKS])
    else:
        avg = supervised_pretrain(manifests, tcfg, featurizer, sig, shared, args.jobs)
    save_checkpoint(avg, args.out)
    print(f"averaged {len(TASKS)} task models -> {args.out}")
    return EXIT_OK


def cmd_pretrain_ssl(args, cfg):
    from .ssl import preset, save_ssl_checkpoint, ssl_pretrain

    scfg = preset(args.preset) if args.preset else cfg.ssl
    m = _manifest(args.manifest, args.task)
    params, history = ssl_pretrain(m, scfg, _seed(args, cfg), args.steps)
    save_ssl_checkpoint(params, args.out)
    if args.log:
        with open(args.log, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "tau", "loss", "contrastive", "diversity", "penalty"])
            for r in history:
                w.writerow([r.step, f"{r.tau:.9f}", f"{r.loss:.6f}", f"{r.contrastive:.6f}", f"{r.diversity:.6f}", f"{r.penalty:.6f}"])
    print(f"{len(history)} SSL steps, final loss {history[-1].loss:.4f} -> {args.out}")
    return EXIT_OK


def cmd_extract_ssl(args, cfg):
    from .ssl import SSLFeaturizer, load_ssl_checkpoint

    feat = SSLFeaturizer(load_ssl_checkpoint(args.ckpt), cfg.sad)
    m = _manifest(args.manifest, args.task)
    out = _out_dir(args.out)
    done = 0
    for e in m:
        try:
            save_features(feat(e), out / f"{e.id}.feat")
            done += 1
        except PipelineError as exc:
            log.warning("skipped %s: %s", e.id, exc)
    print(f"wrote {done} SSL feature files to {out}")
    return EXIT_OK if done else EXIT_DATA


def cmd_predict(args, cfg):
    params = load_checkpoint(args.model)
    scores = predict_scores(params, _manifest(args.manifest, args.task), _featurizer(args, cfg), args.task or "")
    _report_skipped(scores)
    if not len(scores):
        raise PipelineError("no recording could be scored")
    write_scores(scores, args.out)
    print(f"scored {len(scores)} recordings -> {args.out}")
    return EXIT_OK


def cmd_ensemble(args, cfg):
    mu = cfg.scoring.mu if args.mu is None else args.mu
    out = ensemble_scores(read_scores(args.sup), read_scores(args.ssl), EnsembleWeights(mu))
    write_scores(out, args.out)
    print(f"ensembled {len(out)} recordings (mu={mu}) -> {args.out}")
    return EXIT_OK


def cmd_fuse(args, cfg):
    weights = FusionWeights.parse(args.weights) if args.weights else FusionWeights(*cfg.scoring.fusion_weights)
    paths = [p.strip() for p in args.inputs.split(",")]
    if len(paths) != 3:
        raise UsageError("--in needs three comma-separated score files: breath,cough,speech")
    b, c, s = (read_scores(p, t) for p, t in zip(paths, TASKS))
    out = fuse_scores(b, c, s, weights)
    write_scores(out, args.out)
    print(f"fused {len(out)} recordings -> {args.out}")
    return EXIT_OK


def cmd_cv(args, cfg):
    m = _manifest(args.manifest, args.task)
    featurizer = _featurizer(args, cfg)
    init = load_checkpoint(args.init) if args.init else None
    test = _manifest(args.test, args.task) if args.test else None
    k = args.k or cfg.folds.k
    seed = cfg.folds.seed if args.seed is None else args.seed
    report = classifier_cv(
        m, _train_cfg(args, cfg), featurizer, k, seed, init, test, args.out, args.jobs, _signature(cfg, featurizer)
    )
    for j, a in enumerate(report.per_fold_auc):
        print(f"fold {j}: AUC {a:.6f}")
    print(f"pooled validation AUC {report.pooled_auc:.6f}")
    if report.mean_test_auc is not None:
        print(f"test AUC (fold-averaged probabilities) {report.mean_test_auc:.6f}")
    return EXIT_OK


def cmd_auc(args, cfg):
    print(f"{roc_auc(read_scores(args.scores), _manifest(args.labels).labels()):.6f}")
    return EXIT_OK


def cmd_plot_roc(args, cfg):
    labels = _manifest(args.labels).labels()
    curves = {}
    for path in args.scores.split(","):
        s = read_scores(path.strip())
        ids = sorted(s.scores)
        fpr, tpr = roc_curve(s.array(ids), [labels[i] for i in ids])
        curves[f"{Path(path).stem} (AUC {roc_auc(s, labels):.4f})"] = (fpr, tpr)
    write_roc_svg_multi(args.out, curves, args.title or "")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_plot_spec(args, cfg):
    clip = read_wav(args.wav)
    clip = preprocess(clip, None if args.no_sad else cfg.sad, TARGET_RATE)
    pixels = export_spectrogram_image(power_spectrogram(clip, cfg.frame), args.out, svg=args.svg)
    print(f"wrote {args.out} ({pixels.shape[1]}x{pixels.shape[0]})")
    return EXIT_OK


def cmd_synth_data(args, cfg):
    m = synth_data(args.n, 0 if args.seed is None else args.seed, args.out)
    neg, pos = m.class_counts()
    print(f"wrote {len(m)} clips ({pos} positive, {neg} negative) -> {Path(args.out) / 'manifest.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"YAML pipeline config (default: ${CONFIG_ENV}, else built-in defaults)")
    common.add_argument("--seed", type=int, help="seed for every random choice (default: from config)")
    common.add_argument("--jobs", type=int, default=1, help="parallel fold/task workers (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = _Parser(prog="acoustic-screen", description="Respiratory-sound screening pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    def manifest_args(p, required=True):
        p.add_argument("--manifest", required=required, help="CSV with columns id,path,label,task")
        p.add_argument("--task", choices=TASKS, help="restrict to one task")

    p = add("preprocess", cmd_preprocess, "Normalize, resample to 16 kHz and remove silence; writes WAVs + manifest.")
    manifest_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-sad", action="store_true", help="skip silence removal")

    p = add("featurize", cmd_featurize, "Write MFCC+delta-delta (or spectrogram) feature files, one per recording.")
    manifest_args(p)
    p.add_argument("--out", required=True, help="output directory for <id>.feat files")
    p.add_argument("--kind", choices=["mfcc_dd", "spectrogram"], default="mfcc_dd", help="feature type")

    def train_args(p):
        p.add_argument("--features", help="directory of <id>.feat files (default: MFCC computed on the fly)")
        p.add_argument("--epochs", type=int, help="training epochs (default: from config)")

    p = add("train", cmd_train, "Train the BiLSTM classifier; optionally finetune from --init.")
    manifest_args(p)
    train_args(p)
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--init", help="start from this checkpoint (finetuning)")
    p.add_argument("--val", help="validation manifest, evaluated every epoch")
    p.add_argument("--log", help="write per-epoch CSV training log here")

    p = add("pretrain-avg", cmd_pretrain_avg, "Train breath, cough and speech models and average their parameters.")
    p.add_argument("--manifest", required=True, help="manifest covering all three tasks")
    train_args(p)
    p.add_argument("--out", required=True, help="output checkpoint of the averaged model")
    p.add_argument("--task-models", help="also save the three task checkpoints in this directory")
    p.add_argument("--independent-init", action="store_true", help="initialize each task model from its own seed")

    p = add("pretrain-ssl", cmd_pretrain_ssl, "Self-supervised contrastive pre-training on raw waveforms.")
    manifest_args(p)
    p.add_argument("--out", required=True, help="output SSL checkpoint")
    p.add_argument("--preset", choices=["mini", "paper"], help="model size (default: from config)")
    p.add_argument("--steps", type=int, help="optimizer steps (default: pretrain_epochs passes over the data)")
    p.add_argument("--log", help="write per-step CSV loss log here")

    p = add("extract-ssl", cmd_extract_ssl, "Write frozen SSL features, one <id>.feat per recording.")
    manifest_args(p)
    p.add_argument("--ckpt", required=True, help="SSL checkpoint")
    p.add_argument("--out", required=True, help="output directory")

    p = add("predict", cmd_predict, "Score recordings with a trained classifier.")
    manifest_args(p)
    p.add_argument("--model", required=True, help="classifier checkpoint")
    p.add_argument("--features", help="directory of <id>.feat files (default: MFCC computed on the fly)")
    p.add_argument("--out", required=True, help="output score file")

    p = add("ensemble", cmd_ensemble, "mu * supervised + (1 - mu) * SSL scores.")
    p.add_argument("--sup", required=True, help="supervised-model score file")
    p.add_argument("--ssl", required=True, help="SSL-feature-model score file")
    p.add_argument("--mu", type=float, help="weight of the supervised scores (default: from config)")
    p.add_argument("--out", required=True, help="output score file")

    p = add("fuse", cmd_fuse, "Weighted fusion of breath, cough and speech scores.")
    p.add_argument("--weights", help="theta,gamma,phi summing to 1, e.g. 0.4,0.2,0.4 (default: from config)")
    p.add_argument("--in", dest="inputs", required=True, help="breath,cough,speech score files")
    p.add_argument("--out", required=True, help="output score file")

    p = add("cv", cmd_cv, "Stratified k-fold cross-validation with JSON/CSV report and ROC plot.")
    manifest_args(p)
    train_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, help="number of folds (default: from config)")
    p.add_argument("--init", help="finetune every fold from this checkpoint")
    p.add_argument("--test", help="extra manifest scored by every fold model (probabilities averaged)")

    p = add("auc", cmd_auc, "Print the ROC AUC of a score file.")
    p.add_argument("--scores", required=True, help="score file")
    p.add_argument("--labels", required=True, help="manifest providing labels")

    p = add("plot-roc", cmd_plot_roc, "Plot ROC curves of one or more score files as SVG.")
    p.add_argument("--scores", required=True, help="comma-separated score files")
    p.add_argument("--labels", required=True, help="manifest providing labels")
    p.add_argument("--out", required=True, help="output SVG")
    p.add_argument("--title", help="plot title")

    p = add("plot-spec", cmd_plot_spec, "Export a power spectrogram as PGM (and optionally SVG).")
    p.add_argument("--wav", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output .pgm path")
    p.add_argument("--svg", action="store_true", help="also write an SVG next to the PGM")
    p.add_argument("--no-sad", action="store_true", help="skip silence removal")

    p = add("synth-data", cmd_synth_data, "Generate a synthetic labelled dataset (WAVs + manifest).")
    p.add_argument("--n", type=int, required=True, help="number of clips (>= 10)")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
