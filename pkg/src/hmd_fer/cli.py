"""``hmd-fer`` command line: mask, train, eval, predict, analyze, stats, gradcheck.

Every run writes a JSON manifest (resolved flags, seed, input checksums,
version, duration) next to its primary output, or to ``--manifest``.
Exit codes: 0 success, 1 input/validation error, 2 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import (LABEL_NAMES, DatasetError, by_split, class_histogram,
                      parse_fer_csv, parse_frames_csv, parse_self_report, read_frames_dir,
                      read_pgm, resize_bilinear, stratified_subset, write_fer_csv,
                      write_frames_csv)
from .occlusion import (DEFAULT_BAND_COLS, DEFAULT_BAND_ROWS, default_band_mask, mask_dataset,
                        parse_rects_file, parse_span)
from .session import (annotate_frames, compare_with_report, format_report, predict_session,
                      summarize)
from .training import Classifier, TrainConfig, TrainingError, evaluate, history_csv, train

log = logging.getLogger("hmd_fer")

DATA_ENV = "HMD_FER_DATA_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_corpus():
    d = os.environ.get(DATA_ENV)
    return str(Path(d) / "fer2013.csv") if d else None


def _add_band(p):
    p.add_argument("--band-rows", default=f"{DEFAULT_BAND_ROWS[0]}:{DEFAULT_BAND_ROWS[1]}",
                   help="eye band rows A:B (half-open)")
    p.add_argument("--band-cols", default=f"{DEFAULT_BAND_COLS[0]}:{DEFAULT_BAND_COLS[1]}",
                   help="eye band columns A:B (half-open)")


def _band(args):
    return default_band_mask(parse_span(args.band_rows), parse_span(args.band_cols))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hmd-fer", description="Occlusion-aware facial emotion recognition toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--manifest", help="where to write the run manifest")
        p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("mask", "black out the eye band of every image in a FER2013 CSV")
    p.add_argument("--in", dest="input", default=_default_corpus())
    p.add_argument("--out", required=True)
    p.add_argument("--rects", help="per-image rectangles CSV from an external detector")
    p.add_argument("--policy", choices=["default", "skip"], default="default",
                   help="images missing from --rects: default band or drop")
    p.add_argument("--lenient", action="store_true", help="skip malformed rows")
    _add_band(p)

    p = command("train", "train (or fine-tune with --init-from) a classifier")
    p.add_argument("--data", default=_default_corpus())
    p.add_argument("--preset", default="vgg-fer-mini")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--decay-factor", type=float, default=0.5)
    p.add_argument("--decay-every", type=int, default=20)
    p.add_argument("--init-from")
    p.add_argument("--from-scratch", action="store_true",
                   help="ignore --init-from weights (stage 2 trained from scratch)")
    p.add_argument("--normalization", choices=["computed", "inherited"], default="computed")
    p.add_argument("--mask", action="store_true", help="mask the eye band before training")
    p.add_argument("--per-class", type=int, help="stratified subset size per class (train split)")
    p.add_argument("--val-per-class", type=int, help="stratified subset size per class (val split)")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="per-epoch CSV (default: <out>.history.csv)")
    _add_band(p)

    p = command("eval", "accuracy and confusion matrix, masked and unmasked")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=_default_corpus())
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--per-class", type=int)
    p.add_argument("--out", help="write the JSON report here")
    _add_band(p)

    p = command("predict", "classify one PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", action="store_true")
    _add_band(p)

    p = command("analyze", "per-frame predictions, session summary, self-report agreement")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="frames CSV or directory of frame_*.pgm")
    p.add_argument("--report", help="self-report CSV (emotion,rating)")
    p.add_argument("--out", help="predictions CSV (default: <frames>.predictions.csv)")
    p.add_argument("--summary", help="summary report (default: <out>.summary.txt)")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--presence-threshold", type=float, default=0.05)
    p.add_argument("--likert-threshold", type=int, default=3)
    p.add_argument("--mask", action="store_true")
    p.add_argument("--game-id", default="")
    p.add_argument("--participant-id", default="")
    _add_band(p)

    p = command("stats", "class histogram per split")
    p.add_argument("--data", default=_default_corpus())
    p.add_argument("--lenient", action="store_true")

    p = command("gradcheck", "finite-difference check of every backward pass")
    p.add_argument("--instances", type=int, default=50)
    return parser


def read_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def parse_args(argv):
    """Flags > ``--config`` file > built-in defaults."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub = parser._subparsers._group_actions[0].choices
    if known.config and known.command in sub:
        sp = sub[known.command]
        actions = {a.dest: a for a in sp._actions}
        cfg = read_config(known.config)
        unknown = sorted(set(cfg) - set(actions))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        defaults = {}
        for k, v in cfg.items():
            act = actions[k]
            if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[k] = act.type(v) if act.type else v
                except ValueError:
                    raise UsageError(f"config {k}: bad value {v!r}") from None
            act.required = False
        sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(path, what):
    if not path:
        raise UsageError(f"no {what} given (and {DATA_ENV} is unset)")
    if not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return path


# --------------------------------------------------------------------------
# subcommands; each returns (primary output path or None, input paths)
# --------------------------------------------------------------------------

def cmd_mask(args):
    src = _need(args.input, "input corpus")
    examples = parse_fer_csv(src, strict=not args.lenient)
    inputs = [src]
    if args.rects:
        spec = parse_rects_file(_need(args.rects, "rects file"))
        inputs.append(args.rects)
    else:
        spec = _band(args)
    masked, report = mask_dataset(examples, spec, args.policy)
    if examples and not masked:
        raise UsageError("masking produced no images (rects file covers none with --policy skip)")
    write_fer_csv(masked, args.out)
    print(report)
    return args.out, inputs


def _load_split(path, split, per_class, seed):
    xs = by_split(parse_fer_csv(path), split)
    if per_class:
        xs = stratified_subset(xs, per_class, seed)
    return xs


def cmd_train(args):
    src = _need(args.data, "training corpus")
    examples = parse_fer_csv(src)
    tr = by_split(examples, "train")
    va = by_split(examples, "val")
    if args.per_class:
        tr = stratified_subset(tr, args.per_class, args.seed)
    if args.val_per_class:
        va = stratified_subset(va, args.val_per_class, args.seed)
    if args.mask:
        band = _band(args)
        tr, _ = mask_dataset(tr, band)
        va, _ = mask_dataset(va, band)
    init = None if args.from_scratch else args.init_from
    cfg = TrainConfig(preset=args.preset, epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed, learning_rate=args.lr, momentum=args.momentum,
                      weight_decay=args.weight_decay, decay_factor=args.decay_factor,
                      decay_every=args.decay_every, init_from=init,
                      normalization=args.normalization if init else "computed")
    ckpt, history = train(cfg, tr, va)
    save_checkpoint(ckpt, args.out)
    hist_path = args.history or f"{args.out}.history.csv"
    Path(hist_path).write_bytes(history_csv(history))
    best = max((h for h in history if h.epoch > 0), key=lambda h: (h.val_accuracy, h.epoch))
    print(f"saved {args.out} (epoch {ckpt.epoch}, val acc {best.val_accuracy:.4f})")
    return args.out, [src] + ([init] if init else [])


def cmd_eval(args):
    src = _need(args.data, "evaluation corpus")
    ckpt = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    xs = _load_split(src, args.split, args.per_class, args.seed)
    clf = Classifier(ckpt)
    results = {}
    for cond, mask in (("unmasked", None), ("masked", _band(args))):
        rep = evaluate(clf, xs, mask)
        print(f"[{cond} {args.split}]\n{rep.summary()}\n")
        results[cond] = {
            "accuracy": rep.accuracy,
            "count": rep.count,
            "confusion": rep.confusion.tolist(),
            "precision": [None if np.isnan(v) else v for v in rep.precision],
            "recall": [None if np.isnan(v) else v for v in rep.recall],
        }
    if args.out:
        Path(args.out).write_text(json.dumps({"labels": LABEL_NAMES, **results}, indent=2))
    return args.out, [src, args.checkpoint]


def cmd_predict(args):
    ckpt = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    img = read_pgm(_need(args.image, "image"))
    if img.shape != (48, 48):
        img = resize_bilinear(img)
    pred = Classifier(ckpt).predict(img, _band(args) if args.mask else None)
    print(f"{pred.label.canonical} {pred.confidence:.4f}")
    for name, p in zip(LABEL_NAMES, pred.probabilities):
        print(f"  {name:<9} {p:.4f}")
    return None, [args.checkpoint, args.image]


def cmd_analyze(args):
    ckpt = load_checkpoint(_need(args.checkpoint, "checkpoint"))
    src = _need(args.frames, "frames")
    frames = read_frames_dir(src) if Path(src).is_dir() else parse_frames_csv(src)
    if not frames:
        raise UsageError("session has no frames")
    timeline = predict_session(ckpt, frames, _band(args) if args.mask else None,
                               window=args.window, game_id=args.game_id,
                               participant_id=args.participant_id)
    out = args.out or f"{src.rstrip('/')}.predictions.csv"
    write_frames_csv(annotate_frames(frames, timeline), out)
    summary = summarize(timeline, args.presence_threshold)
    inputs = [args.checkpoint] + ([] if Path(src).is_dir() else [src])
    agreement = None
    if args.report:
        report = parse_self_report(_need(args.report, "self-report"), args.game_id,
                                   args.participant_id)
        agreement = compare_with_report(summary, report, args.likert_threshold)
        inputs.append(args.report)
    text = format_report(summary, agreement)
    Path(args.summary or f"{out}.summary.txt").write_text(text)
    print(text, end="")
    return out, inputs


def cmd_stats(args):
    src = _need(args.data, "corpus")
    xs = parse_fer_csv(src, strict=not args.lenient)
    print("split," + ",".join(LABEL_NAMES) + ",total")
    for split in ("train", "val", "test"):
        h = class_histogram(by_split(xs, split))
        print(f"{split}," + ",".join(map(str, h)) + f",{h.sum()}")
    h = class_histogram(xs)
    print("all," + ",".join(map(str, h)) + f",{h.sum()}")
    return None, [src]


def cmd_gradcheck(args):
    from .nn.gradcheck import run_suite
    reports = run_suite(args.instances, args.seed)
    for r in reports:
        print(r)
    if not all(r.passed for r in reports):
        raise UsageError("gradient check failed")
    return None, []


COMMANDS = {
    "mask": cmd_mask, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "analyze": cmd_analyze, "stats": cmd_stats, "gradcheck": cmd_gradcheck,
}


def _write_manifest(args, output, inputs, duration):
    manifest = {
        "subcommand": args.command,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "command"},
        "seed": args.seed,
        "inputs": {str(p): sha256(p) for p in inputs if p and Path(p).is_file()},
        "version": __version__,
        "duration_s": round(duration, 3),
    }
    text = json.dumps(manifest, indent=2, default=str)
    dest = args.manifest or (f"{output}.manifest.json" if output else None)
    if dest:
        Path(dest).write_text(text + "\n")
    else:
        print(text, file=sys.stderr)


@contextlib.contextmanager
def _thread_cap(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=max(1, n)):
        yield


def run_cli(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        with _thread_cap(args.threads):
            output, inputs = COMMANDS[args.command](args)
        _write_manifest(args, output, inputs, time.perf_counter() - start)
    except (UsageError, DatasetError, CheckpointError, TrainingError, FileNotFoundError,
            ValueError) as exc:
        print(f"hmd-fer {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"hmd-fer {args.command}: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
