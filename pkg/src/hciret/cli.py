"""Command-line entry point.

Subcommands: synth, train, eval, score, grad-check, inspect. Results go
to standard output as JSON; progress and diagnostics go to standard
error. Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .caption import FusionConfig
from .checks import TARGETS, gradient_suite
from .data import SynthConfig, generate_synthetic, read_bundle, write_bundle
from .errors import DataError, UsageError
from .model import AC_MODES, ACFI_KV, ACFI_SCOPES, INITS, LOSS_KINDS, LR_SCHEDULES, HciRetriever
from .similarity import EVAL_MODES, ScoreConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hciret", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic embedding bundle")
    synth.add_argument("--out", required=True, help="destination directory")
    synth.add_argument("--items", type=int, default=64)
    synth.add_argument("--classes", type=int, default=8)
    synth.add_argument("--dim", type=int, default=16)
    synth.add_argument("--frames", type=int, default=20)
    synth.add_argument("--words", type=int, default=12)
    synth.add_argument("--caption-tokens", type=int, default=8)
    synth.add_argument("--captions", action=argparse.BooleanOptionalAction, default=True)
    synth.add_argument("--sigma", type=float, default=0.05)
    synth.add_argument("--audio-sigma", type=float, default=None)
    synth.add_argument("--aspects", type=int, default=0)
    synth.add_argument("--aspect-scale", type=float, default=0.5)
    synth.add_argument("--within-scale", type=float, default=0.3)
    synth.add_argument("--orthogonal", action="store_true")
    synth.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train", help="train a retriever on a bundle")
    train.add_argument("--data", required=True, help="bundle directory")
    train.add_argument("--out", required=True, help="checkpoint path")
    train.add_argument("--loss", choices=LOSS_KINDS, default="hci")
    train.add_argument("--alpha", type=float, default=0.5)
    train.add_argument("--beta", type=float, default=0.1)
    train.add_argument("--tau", type=float, default=0.07)
    train.add_argument("--enable-fw", action=argparse.BooleanOptionalAction, default=True)
    train.add_argument("--enable-sp", action=argparse.BooleanOptionalAction, default=True)
    train.add_argument("--sentence-mode", choices=("cls", "aggregated"), default="cls")
    train.add_argument("--ns", type=int, default=10, help="segment count")
    train.add_argument("--np", type=int, default=10, help="phrase count")
    train.add_argument("--projection", action=argparse.BooleanOptionalAction, default=True)
    train.add_argument("--softmax-axis", choices=("rows", "slots"), default="rows")
    train.add_argument("--shared-mlp", action="store_true")
    train.add_argument("--init", choices=INITS, default="random")
    train.add_argument("--ac", choices=AC_MODES, default="off")
    train.add_argument("--fusion-lambda", type=float, default=1.0)
    train.add_argument("--heads", type=int, default=4)
    train.add_argument("--acfi-kv", choices=ACFI_KV, default="cls")
    train.add_argument("--acfi-scope", choices=ACFI_SCOPES, default="all")
    train.add_argument("--tc-weight", type=float, default=1.0)
    train.add_argument("--epochs", type=int, default=50)
    train.add_argument("--batch", type=int, default=16)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--lr-schedule", choices=LR_SCHEDULES, default="constant")
    train.add_argument("--grad-clip", type=float, default=None)
    train.add_argument("--eval-mode", choices=EVAL_MODES, default="hci_combined")
    train.add_argument("--seed", type=int, default=0)

    evl = sub.add_parser("eval", help="evaluate a checkpoint on a bundle split")
    evl.add_argument("--data", required=True)
    evl.add_argument("--ckpt", required=True)
    evl.add_argument("--split", choices=("train", "val", "test"), default="test")
    evl.add_argument("--ks", default="1,5,10", help="comma-separated k values")
    evl.add_argument("--score-mode", choices=EVAL_MODES, default=None)
    evl.add_argument("--fusion", action=argparse.BooleanOptionalAction, default=None,
                     help="override the checkpoint's fusion setting")
    evl.add_argument("--fusion-lambda", type=float, default=None)

    score = sub.add_parser("score", help="score one audio/text pair")
    score.add_argument("--data", required=True)
    score.add_argument("--ckpt", required=True)
    score.add_argument("--audio-id", required=True)
    score.add_argument("--text-id", required=True)
    score.add_argument("--score-mode", choices=EVAL_MODES, default=None)

    grad = sub.add_parser("grad-check", help="finite-difference gradient verification")
    grad.add_argument("--seeds", type=int, default=20)
    grad.add_argument("--eps", type=float, default=1e-5)
    grad.add_argument("--targets", default=None, help=f"comma-separated subset of {','.join(TARGETS)}")
    grad.add_argument("--threshold", type=float, default=1e-4)

    ins = sub.add_parser("inspect", help="summarise a bundle")
    ins.add_argument("--data", required=True)

    return parser


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        items=args.items,
        classes=args.classes,
        n_frames=args.frames,
        n_words=args.words,
        n_caption_tokens=args.caption_tokens,
        dim=args.dim,
        sigma=args.sigma,
        audio_sigma=args.audio_sigma,
        aspects=args.aspects,
        aspect_scale=args.aspect_scale,
        within_scale=args.within_scale,
        orthogonal=args.orthogonal,
        captions=args.captions,
        seed=args.seed,
    )
    bundle = generate_synthetic(cfg)
    write_bundle(bundle, args.out)
    _emit(
        {
            "out": args.out,
            "items": args.items,
            "dim": bundle.dim,
            "sequences": len(bundle.sequences),
            "pairs": len(bundle.pairs),
            "splits": bundle.split_sizes(),
        }
    )
    return 0


def _cmd_train(args) -> int:
    bundle = read_bundle(args.data)
    model = HciRetriever(
        n_segments=args.ns,
        n_phrases=getattr(args, "np"),
        sentence_mode=args.sentence_mode,
        projection=args.projection,
        softmax_axis=args.softmax_axis,
        shared_mlp=args.shared_mlp,
        init=args.init,
        loss=args.loss,
        alpha=args.alpha,
        beta=args.beta,
        tau=args.tau,
        enable_fw=args.enable_fw,
        enable_sp=args.enable_sp,
        tc_weight=args.tc_weight,
        ac=args.ac,
        fusion_lambda=args.fusion_lambda,
        heads=args.heads,
        acfi_kv=args.acfi_kv,
        acfi_scope=args.acfi_scope,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        lr_schedule=args.lr_schedule,
        grad_clip=args.grad_clip,
        eval_mode=args.eval_mode,
        seed=args.seed,
    )
    model.fit(bundle)
    model.save(args.out)
    history = [b.to_dict() for b in model.history_]
    _emit(
        {
            "checkpoint": args.out,
            "epochs": args.epochs,
            "steps": model.step_,
            "first_epoch": history[0],
            "final_epoch": history[-1],
        }
    )
    return 0


def _cmd_eval(args) -> int:
    bundle = read_bundle(args.data)
    model = HciRetriever.load(args.ckpt)
    try:
        ks = tuple(int(k) for k in args.ks.split(","))
    except ValueError as err:
        raise UsageError(f"--ks must be comma-separated integers: {err}") from err
    score_config = None
    if args.score_mode is not None:
        score_config = ScoreConfig(tau=model.tau, eval_mode=args.score_mode, alpha=model.alpha, beta=model.beta)
    fusion_config = None
    if args.fusion is not None or args.fusion_lambda is not None:
        lam = model.fusion_lambda if args.fusion_lambda is None else args.fusion_lambda
        enabled = model.fusion_config().enabled if args.fusion is None else args.fusion
        fusion_config = FusionConfig(lam=lam, enabled=enabled)
    report = model.evaluate(bundle, split=args.split, ks=ks,
                            score_config=score_config, fusion_config=fusion_config)
    _emit(report.to_json())
    return 0


def _cmd_score(args) -> int:
    bundle = read_bundle(args.data)
    model = HciRetriever.load(args.ckpt)
    score_config = None
    if args.score_mode is not None:
        score_config = ScoreConfig(tau=model.tau, eval_mode=args.score_mode, alpha=model.alpha, beta=model.beta)
    if args.audio_id not in bundle.by_id:
        raise DataError(f"unknown audio id {args.audio_id}")
    if args.text_id not in bundle.by_id:
        raise DataError(f"unknown text id {args.text_id}")
    _emit(model.score_pair(bundle, args.audio_id, args.text_id, score_config))
    return 0


def _cmd_grad_check(args) -> int:
    targets = TARGETS if args.targets is None else tuple(args.targets.split(","))
    unknown = [t for t in targets if t not in TARGETS]
    if unknown:
        raise UsageError(f"unknown grad-check targets: {unknown}")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    result = gradient_suite(seeds=args.seeds, eps=args.eps, targets=targets)
    result["threshold"] = args.threshold
    result["passed"] = bool(result["max"] <= args.threshold)
    _emit(result)
    return 0


def _cmd_inspect(args) -> int:
    bundle = read_bundle(args.data)
    modalities = {m: 0 for m in ("audio", "text", "caption")}
    for seq in bundle.sequences:
        modalities[seq.modality] += 1
    _emit(
        {
            "dim": bundle.dim,
            "sequences": len(bundle.sequences),
            "modalities": modalities,
            "pairs": len(bundle.pairs),
            "splits": bundle.split_sizes(),
        }
    )
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "grad-check": _cmd_grad_check,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
