"""Command-line interface.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 model-format failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .audio import WavFormatError, UnsupportedWavError, load_wav
from .bins import DEFAULT_GRID
from .data import AnnotationError, SynthSpec, load_annotations, read_corpus, synth_corpus, write_corpus
from .decode import read_track, search_threshold, f1_at_thresholds, COARSE_THRESHOLDS, voicing, write_track
from .dsp_baseline import dsp_estimate
from .evaluation import benchmark_rtf, evaluate, markdown_table
from .inference import DECODERS, PERIODICITY, Estimator, all_cores, predict_corpus
from .network import CONFIGS, ModelFormatError, init_params, load_params, save_params
from .network.io import load_meta, sidecar_path
from .training import FrameDataset, TrainConfig, train, write_loss_log

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MODEL = 0, 2, 3, 4
DEFAULT_THRESHOLD = 0.5

log = logging.getLogger("pitchnet")


class UsageError(Exception):
    pass


def _unit_interval(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} not in [0, 1]")
    return value


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{value} must be positive")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def _add_decoding(p):
    p.add_argument("--hop", type=_positive, default=10.0, help="hop size in milliseconds")
    p.add_argument("--decoder", choices=DECODERS, default="weighted",
                   help="argmax or local expected value ('weighted') pitch decoding")
    p.add_argument("--window-bins", type=_positive_int, default=19, help="window for weighted decoding (odd)")
    p.add_argument("--periodicity", choices=PERIODICITY, default="entropy", help="periodicity measure")
    p.add_argument("--threshold", type=_unit_interval, default=None,
                   help="voicing threshold; defaults to the model's stored value, else 0.5")
    p.add_argument("--threads", type=_positive_int, default=1, help="frame-parallel worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pitchnet", description="Neural pitch and periodicity estimation",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("infer", help="estimate pitch for WAV files", formatter_class=fmt)
    p.add_argument("--model", required=True, help="weights file (.pnpe) with JSON sidecar")
    p.add_argument("--input", required=True, nargs="+", help="WAV file(s)")
    p.add_argument("--output", default=None, help="CSV path (single input) or directory")
    _add_decoding(p)

    p = sub.add_parser("train", help="train a model on a corpus directory", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--output", required=True, help="weights path to write")
    p.add_argument("--config", choices=sorted(CONFIGS), default="desk", help="architecture")
    p.add_argument("--steps", type=int, default=3000, help="optimizer steps (no early stopping)")
    p.add_argument("--batch-size", type=_positive_int, default=128, help="frames per batch")
    p.add_argument("--lr", type=_positive, default=2e-4, help="Adam learning rate")
    p.add_argument("--blur-cents", type=float, default=25.0, help="target blur std in cents")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--voiced-only", action="store_true", help="drop unvoiced frames (ablation)")
    p.add_argument("--loss-log", default=None, help="CSV of step,loss (default: <output>.loss.csv)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="steps between checkpoints (0 = none)")
    p.add_argument("--checkpoint-dir", default=None, help="checkpoint directory")
    p.add_argument("--threads", type=_positive_int, default=1, help="ignored; training is single-threaded")

    p = sub.add_parser("evaluate", help="score predictions against references", formatter_class=fmt)
    p.add_argument("--reference", help="annotation CSV (time_sec,f0_hz,voiced)")
    p.add_argument("--predicted", help="pitch track CSV")
    p.add_argument("--alignment", choices=["center_at_zero", "center_at_half_window"], default="center_at_zero",
                   help="frame convention of the reference annotations")
    p.add_argument("--model", default=None, help="evaluate a model on a corpus split instead")
    p.add_argument("--corpus", default=None, help="corpus directory (with --model)")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"], help="corpus split")
    p.add_argument("--epsilon", type=_positive, default=50.0, help="pitch tolerance in cents")
    _add_decoding(p)

    p = sub.add_parser("benchmark", help="accuracy and real-time factor table", formatter_class=fmt)
    p.add_argument("--model", required=True, help="weights file (.pnpe) with JSON sidecar")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"], help="corpus split")
    p.add_argument("--output-dir", default=None, help="where per-file CSVs go (default: temp dir)")
    p.add_argument("--all-threads", type=_positive_int, default=all_cores(), help="threads for the all-core run")
    p.add_argument("--decoder", choices=DECODERS, default="weighted", help="pitch decoder")
    p.add_argument("--hop", type=_positive, default=10.0, help="hop size in milliseconds")

    p = sub.add_parser("search-threshold", help="tune the voicing threshold on a split", formatter_class=fmt)
    p.add_argument("--model", required=True, help="weights file (.pnpe) with JSON sidecar")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--split", default="valid", choices=["train", "valid", "test"], help="corpus split")
    p.add_argument("--periodicity", choices=PERIODICITY, default="entropy", help="periodicity measure")
    p.add_argument("--write", action="store_true", help="store the threshold in the model sidecar")

    p = sub.add_parser("synth", help="generate a synthetic annotated corpus", formatter_class=fmt)
    p.add_argument("--output", required=True, help="corpus directory to create")
    p.add_argument("--clips", type=_positive_int, default=50, help="number of clips")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--duration", type=_positive, default=4.0, help="seconds per clip")
    p.add_argument("--unvoiced-fraction", type=float, default=0.3, help="expected unvoiced share of time")
    p.add_argument("--snr", type=float, default=20.0, help="dB; 'inf' for noiseless")
    p.add_argument("--harmonics", type=_positive_int, default=3, help="harmonics per tone")
    p.add_argument("--fmin", type=_positive, default=80.0, help="lowest f0 in Hz")
    p.add_argument("--fmax", type=_positive, default=800.0, help="highest f0 in Hz")
    return parser


def _estimator(args, model_path, threads=None) -> Estimator:
    params, grid = load_params(model_path)
    threshold = args.threshold
    if threshold is None:
        threshold = load_meta(model_path).get(f"threshold_{args.periodicity}", DEFAULT_THRESHOLD)
    if args.window_bins % 2 == 0:
        raise UsageError("--window-bins must be odd")
    return Estimator(params, grid, decoder=args.decoder, periodicity=args.periodicity, threshold=threshold,
                     hop_ms=args.hop, window_bins=args.window_bins, threads=threads or args.threads)


def cmd_infer(args) -> int:
    est = _estimator(args, args.model)
    inputs = [Path(p) for p in args.input]
    if len(inputs) == 1 and args.output and not Path(args.output).is_dir():
        outputs = [Path(args.output)]
    else:
        out_dir = Path(args.output) if args.output else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        outputs = [(out_dir or p.parent) / (p.stem + ".csv") for p in inputs]
    pairs = dict(zip(inputs, outputs))
    report = benchmark_rtf(lambda p: est.process_file(p, pairs[p]), inputs, est.threads)
    print(f"processed {report.audio_seconds:.2f} s of audio in {report.wall_seconds:.3f} s "
          f"(RTF {report.rtf:.4f}, {report.thread_count} thread(s))")
    return EXIT_OK


def cmd_train(args) -> int:
    corpus = read_corpus(args.corpus)
    grid = DEFAULT_GRID
    config = CONFIGS[args.config](num_bins=grid.num_bins)
    dataset = FrameDataset.from_clips(corpus.split("train"), grid, voiced_only=args.voiced_only)
    train_config = TrainConfig(batch_size=args.batch_size, total_steps=args.steps, learning_rate=args.lr,
                               seed=args.seed, blur_std_cents=args.blur_cents,
                               checkpoint_every=args.checkpoint_every)

    def progress(step, loss):
        if step % 100 == 0:
            log.info("step %d loss %.4f", step, loss)

    params, losses = train(train_config, dataset, init_params(config, seed=args.seed), grid,
                           checkpoint_dir=args.checkpoint_dir, progress=progress)
    save_params(args.output, params, grid, {"voiced_only": args.voiced_only})
    write_loss_log(args.loss_log or f"{args.output}.loss.csv", losses)
    if losses:
        print(f"trained {args.steps} steps, final loss {losses[-1]:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.model and args.corpus:
        est = _estimator(args, args.model)
        preds = predict_corpus(est, read_corpus(args.corpus).split(args.split))
        h = preds.entropy if args.periodicity == "entropy" else preds.max
        report = evaluate(preds.ref_f0, preds.ref_voiced, preds.f0, voicing(h, est.threshold), args.epsilon)
    elif args.reference and args.predicted:
        _, ref_f0, ref_voiced = load_annotations(args.reference, args.alignment)
        track = read_track(args.predicted)
        if len(track) != len(ref_f0):
            raise UsageError(f"reference has {len(ref_f0)} frames, prediction {len(track)}")
        report = evaluate(ref_f0, ref_voiced, track.f0, track.voiced, args.epsilon)
    else:
        raise UsageError("give --reference and --predicted, or --model and --corpus")
    print(report.to_json())
    return EXIT_OK


def cmd_search_threshold(args) -> int:
    params, grid = load_params(args.model)
    preds = predict_corpus(Estimator(params, grid), read_corpus(args.corpus).split(args.split))
    h = preds.entropy if args.periodicity == "entropy" else preds.max
    alpha, f1 = search_threshold(h, preds.ref_voiced)
    coarse = float(f1_at_thresholds(h, preds.ref_voiced, COARSE_THRESHOLDS).max())
    print(json.dumps({"threshold": alpha, "f1": f1, "coarse_f1": coarse, "periodicity": args.periodicity}))
    if args.write:
        side = sidecar_path(args.model)
        meta = json.loads(side.read_text())
        meta[f"threshold_{args.periodicity}"] = alpha
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    params, grid = load_params(args.model)
    corpus = read_corpus(args.corpus)
    clips = corpus.split(args.split)
    wavs = [Path(args.corpus) / "clips" / f"{c.name}.wav" for c in clips]

    rows = []
    valid = predict_corpus(Estimator(params, grid, decoder=args.decoder, hop_ms=args.hop), corpus.split("valid"))
    test = predict_corpus(Estimator(params, grid, decoder=args.decoder, hop_ms=args.hop), clips)
    row = {"model": f"neural ({params.config.blocks[0].out_channels}-ch first block)"}
    for kind in ("entropy", "max"):
        alpha, _ = search_threshold(getattr(valid, kind), valid.ref_voiced)
        rep = evaluate(test.ref_f0, test.ref_voiced, test.f0, voicing(getattr(test, kind), alpha))
        row[f"f1_{kind}"] = rep.f1
        if kind == "entropy":
            row.update(delta_cents=rep.delta_cents, rpa=rep.rpa, rca=rep.rca)

    with tempfile.TemporaryDirectory() as tmp:
        out_dir = Path(args.output_dir or tmp)
        out_dir.mkdir(parents=True, exist_ok=True)
        for key, threads in (("rtf_single", 1), ("rtf_all", args.all_threads)):
            est = Estimator(params, grid, decoder=args.decoder, hop_ms=args.hop, threads=threads)
            row[key] = benchmark_rtf(lambda p: est.process_file(p, out_dir / (p.stem + ".csv")), wavs, threads).rtf
        rows.append(row)

        dsp = {"model": "CMND baseline"}
        valid_tracks = [dsp_estimate(c.audio, c.frames) for c in corpus.split("valid")]
        h_valid = np.concatenate([t.periodicity[: len(c.pitch)] for t, c in zip(valid_tracks, corpus.split("valid"))])
        v_valid = np.concatenate([c.voiced[: len(t.f0)] for t, c in zip(valid_tracks, corpus.split("valid"))])
        alpha, _ = search_threshold(h_valid, v_valid)
        tracks = [dsp_estimate(c.audio, c.frames, threshold=alpha) for c in clips]
        n = [min(len(t.f0), len(c.pitch)) for t, c in zip(tracks, clips)]
        rep = evaluate(
            np.concatenate([c.pitch[:k] for c, k in zip(clips, n)]),
            np.concatenate([c.voiced[:k] for c, k in zip(clips, n)]),
            np.concatenate([t.f0[:k] for t, k in zip(tracks, n)]),
            np.concatenate([t.voiced[:k] for t, k in zip(tracks, n)]),
        )
        dsp.update(delta_cents=rep.delta_cents, rpa=rep.rpa, rca=rep.rca, f1_max=rep.f1)

        def run_dsp(p):
            buf = load_wav(p)
            write_track(out_dir / (p.stem + ".dsp.csv"), dsp_estimate(buf, threshold=alpha))
            return buf.duration

        dsp["rtf_single"] = benchmark_rtf(run_dsp, wavs).rtf
        rows.append(dsp)
    print(markdown_table(rows))
    print("\nCMND baseline periodicity is 1 - min CMND; its F1 is listed under F1 (Max).")
    return EXIT_OK


def cmd_synth(args) -> int:
    if not 0.0 <= args.unvoiced_fraction < 1.0:
        raise UsageError("--unvoiced-fraction must be in [0, 1)")
    if args.fmin > args.fmax:
        raise UsageError("--fmin must not exceed --fmax")
    overrides = dict(duration=args.duration, unvoiced_fraction=args.unvoiced_fraction, snr_db=args.snr,
                     harmonics=args.harmonics, f0_range=(args.fmin, args.fmax))
    clips = synth_corpus(args.clips, seed=args.seed, **overrides)
    write_corpus(args.output, clips, seed=args.seed)
    print(f"wrote {len(clips)} clips to {args.output}")
    return EXIT_OK


COMMANDS = {
    "infer": cmd_infer,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "search-threshold": cmd_search_threshold,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, WavFormatError, UnsupportedWavError, AnnotationError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
