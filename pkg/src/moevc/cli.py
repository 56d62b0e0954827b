"""Command-line surface: corpus generation, training, conversion, FLOP
analysis, sparsity sweeps, and the gradient-check developer gate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, DataError, MoevcError, NumericFailureError

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_manifest(corpus):
    from .features import read_manifest

    path = Path(corpus)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    return read_manifest(path)


def cmd_gen_corpus(args):
    from .synthetic import gen_synthetic_corpus

    manifest = gen_synthetic_corpus(
        args.out, args.speakers, args.utts, args.frames, args.dim, args.seed
    )
    n_train = len(manifest.select(split="train"))
    n_eval = len(manifest.select(split="eval"))
    print(
        f"wrote {len(manifest.entries)} utterances for {args.speakers} speakers "
        f"({n_train} train / {n_eval} eval) under {args.out}"
    )
    return 0


def cmd_train(args):
    from .config import load_config
    from .modelio import load_model
    from .train import Trainer

    cfg = load_config(args.config)
    manifest = _load_manifest(args.corpus)
    resume = None
    if args.resume:
        model, cfg_stored, adam, epoch = load_model(args.resume)
        resume = (model, cfg_stored, adam, epoch)
        print(f"resuming from {args.resume} at epoch {epoch}")
    trainer = Trainer(manifest, cfg, args.out_model, resume=resume)
    trainer.run(log_path=cfg.log_path or None)
    last = trainer.log_rows[-1] if trainer.log_rows else None
    if last:
        print(
            f"trained {trainer.epoch_done} epochs; final total {last[1]:.4f} "
            f"(recon {last[2]:.4f}, zero-gate {last[8]:.3f}); model -> {args.out_model}"
        )
    else:
        print(f"no epochs to run; model -> {args.out_model}")
    return 0


def _print_report(report):
    print(f"utterance: {report.utterance_id or '-'}")
    print(f"dense base flops:   {report.dense_flops}")
    print(f"actual flops:       {report.actual_flops}")
    print(f"overhead flops:     {report.overhead_flops}")
    print(f"frr:                {report.frr:.4f}")
    if report.layer_reductions:
        parts = ", ".join(f"{k}={v:.3f}" for k, v in report.layer_reductions.items())
        print(f"per-layer reduction: {parts}")
    if report.gate_sparsity:
        parts = ", ".join(f"{k}={v:.3f}" for k, v in report.gate_sparsity.items())
        print(f"gate sparsity:       {parts}")


def cmd_convert(args):
    from .convert import convert_utterance
    from .features import read_f0_stats_file, read_feature_file, write_feature_file
    from .modelio import load_model

    model, _, _, _ = load_model(args.model)
    seq = read_feature_file(args.input)
    f0_stats = None
    if args.f0_stats:
        f0_stats = (
            read_f0_stats_file(args.f0_stats[0]),
            read_f0_stats_file(args.f0_stats[1]),
        )
    out_seq, report = convert_utterance(
        model,
        seq,
        args.source_speaker,
        args.target_speaker,
        dense=args.dense,
        f0_stats=f0_stats,
    )
    write_feature_file(out_seq, args.out)
    _print_report(report)
    print(f"wrote {args.out}")
    return 0


def cmd_flops(args):
    import numpy as np

    from .features import read_feature_file, standardize
    from .modelio import load_model
    from .sparse import FRR_CSV_HEADER, sparse_forward
    from .convert import _pad_frames

    model, _, _, _ = load_model(args.model)
    if args.input:
        seq = read_feature_file(args.input)
        frames = standardize(seq.frames, model.stats).astype(model.dtype)
        uid = seq.utterance_id
    else:
        probe_rng = np.random.default_rng(0xF10B5)
        frames = probe_rng.standard_normal(
            (args.frames, model.cfg.feature_dim)
        ).astype(model.dtype)
        uid = "probe"
    frames, _ = _pad_frames(frames, model.base.stride_factor)
    x = frames.T[None, None]
    src = model.speaker_index(args.source_speaker or model.speaker_ids[0])
    tgt = model.speaker_index(args.target_speaker or model.speaker_ids[-1])
    _, ledger, report = sparse_forward(model, x, src, tgt, utterance_id=uid)
    if args.csv:
        print(FRR_CSV_HEADER)
        print(report.csv_row())
    else:
        print("layer        dense_macs    actual_macs   reduction")
        for l in ledger.layers:
            print(f"{l.name:<12} {l.dense_macs:>12} {l.actual_macs:>14}   {l.reduction:.3f}")
        print(f"overhead macs: {ledger.overhead_macs}")
        _print_report(report)
    return 0


def cmd_sweep(args):
    from .config import load_config
    from .sweep import run_sweep

    cfg = load_config(args.config)
    manifest = _load_manifest(args.corpus)
    betas = [float(b) for b in args.betas.split(",")] if args.betas else None
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None

    def progress(row):
        print(
            f"beta={row.beta} seed={row.seed}: frr={row.mean_frr:.3f} "
            f"mcd={row.mean_mcd_convert:.3f} zero-gates={row.zero_gate_frac:.3f}"
        )

    rows, csv_text, summary = run_sweep(
        manifest, cfg, betas=betas, seeds=seeds, model_dir=args.model_dir,
        progress=progress,
    )
    Path(args.out).write_text(csv_text)
    print(f"frr trend over beta: {summary['frr_trend']}")
    print(f"mcd trend over beta: {summary['mcd_trend']}")
    print(f"report -> {args.out}")
    return 0


def cmd_gradcheck(args):
    from .config import load_config
    from .gradcheck import run_full_suite

    cfg = load_config(args.config)
    ok, lines = run_full_suite(cfg, corrupt=args.corrupt)
    for line in lines:
        print(line)
    if not ok:
        raise NumericFailureError("gradient check failed")
    return 0


def build_parser():
    parser = _Parser(prog="moevc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic multi-speaker corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--utts", type=int, default=6)
    p.add_argument("--frames", type=int, default=256)
    p.add_argument("--dim", type=int, default=36)
    p.add_argument("--seed", type=int, default=20202)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert one utterance between speakers")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--source-speaker", required=True)
    p.add_argument("--target-speaker", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dense", action="store_true", help="run the dense gated path")
    p.add_argument("--f0-stats", nargs=2, metavar=("SRC", "TGT"),
                   help="paths to 'log_mean log_std' stats files")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("flops", help="FLOP analysis of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", type=int, default=128)
    p.add_argument("--input", default=None, help="mfcb file to derive gates from")
    p.add_argument("--source-speaker", default=None)
    p.add_argument("--target-speaker", default=None)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("sweep", help="train/evaluate a beta x seed grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--betas", default=None, help="comma-separated betas")
    p.add_argument("--seeds", default=None, help="comma-separated seeds")
    p.add_argument("--out", required=True, help="sweep report csv")
    p.add_argument("--model-dir", default=None, help="keep trained models here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient gate")
    p.add_argument("--config", required=True)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailureError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except MoevcError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
