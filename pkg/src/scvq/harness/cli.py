"""Command-line entry point (``scvq``).

Exit codes: 0 success, 1 usage error, 2 data or checkpoint error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from scvq import channel, codec, metrics, train, v2it
from scvq.harness import checkpoint, data, jscc, pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_CONFIG_CLASSES = (train.TrainConfig, channel.ChannelConfig, codec.CodecConfig)


def parse_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys must be config field names."""
    known = {f.name for cls in _CONFIG_CLASSES for f in fields(cls)}
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = val
    return out


def _coerce(cls, raw: dict):
    kw = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        try:
            if f.type in ("int", int):
                kw[f.name] = int(v)
            elif f.type in ("float", float):
                kw[f.name] = float(v)
            elif f.type in ("bool", bool):
                if v.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(v)
                kw[f.name] = v.lower() in ("true", "1")
            else:
                kw[f.name] = v
        except ValueError as exc:
            raise UsageError(f"bad value for {f.name}: {v!r}") from exc
    return kw


def build_configs(args, base_train: train.TrainConfig):
    raw = parse_config_file(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    try:
        tcfg = replace(base_train, **_coerce(train.TrainConfig, raw))
        ccfg = channel.ChannelConfig(**_coerce(channel.ChannelConfig, raw))
        kcfg = codec.CodecConfig(**_coerce(codec.CodecConfig, raw))
        kcfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return tcfg, ccfg, kcfg


def _images(path) -> np.ndarray:
    try:
        return data.load_dir(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _load(fn, path):
    try:
        return fn(path)
    except (OSError, KeyError, checkpoint.CheckpointError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _ckpts(args) -> pipeline.Checkpoints:
    ck = pipeline.Checkpoints()
    if getattr(args, "stage1", None):
        ck.stage1 = _load(train.load_stage1, args.stage1)
    if getattr(args, "stage2", None):
        ck.v2it, s1 = _load(train.load_stage2, args.stage2)
        # a fine-tuned stage-2 file carries its own codec
        ck.stage1 = s1 or ck.stage1
    if getattr(args, "jscc", None):
        ck.jscc = _load(jscc.load_jscc, args.jscc)
    return ck


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    tcfg, _, kcfg = build_configs(args, train.DESK_STAGE1)
    paths = data.gen_data(args.n, args.size, tcfg.seed, args.out, kcfg.factor)
    print(f"wrote {len(paths)} images to {args.out}")


def _iters(tcfg, args):
    return replace(tcfg, iterations=args.iterations) if args.iterations else tcfg


def cmd_train_stage1(args):
    tcfg, _, kcfg = build_configs(args, train.DESK_STAGE1)
    tcfg = _iters(tcfg, args)
    imgs = metrics.from_uint8(_images(args.data))
    kcfg = replace(kcfg, image_size=imgs.shape[1])
    try:
        kcfg.validate()
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    res = train.train_stage1(imgs, tcfg, kcfg, _out(args))
    stats = train.code_usage(res.model, imgs)
    print(f"l1 {res.initial_l1:.4f} -> {res.final_l1:.4f}; perplexity {stats.perplexity:.1f}")


def cmd_train_stage2(args):
    tcfg, _, _ = build_configs(args, train.DESK_STAGE2)
    tcfg = replace(_iters(tcfg, args), stage=2)
    imgs = metrics.from_uint8(_images(args.data))
    s1 = _load(train.load_stage1, args.stage1)
    kind = "noiseless" if args.noiseless else "awgn-feature"
    vcfg = v2it.V2ITConfig(feature_target=args.feature_target)
    try:
        res = train.train_stage2(imgs, s1, tcfg, vcfg, _out(args), kind)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    acc = train.v2it_accuracy(res.model, s1, imgs)
    print(f"noiseless index accuracy {acc:.4f}")


def cmd_train_jscc(args):
    tcfg, _, kcfg = build_configs(args, jscc.DESK_JSCC)
    tcfg = _iters(tcfg, args)
    imgs = metrics.from_uint8(_images(args.data))
    res = jscc.train_jscc(imgs, tcfg, replace(kcfg, image_size=imgs.shape[1]), _out(args))
    print(f"l1 {res.initial_l1:.4f} -> {res.final_l1:.4f}")


def cmd_eval(args):
    tcfg, ccfg, _ = build_configs(args, train.DESK_STAGE1)
    imgs = _images(args.data)
    ck = _ckpts(args)
    snr = None if ccfg.kind == "noiseless" else (args.snr if args.snr is not None else ccfg.snr_db)
    try:
        rec = pipeline.mean_record(pipeline.evaluate(imgs, args.mode, snr, ck, tcfg.seed))
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    print(pipeline.CSV_HEADER)
    print(pipeline.format_row(args.mode, snr if snr is not None else float("inf"), rec,
                              len(imgs), tcfg.seed))


def cmd_sweep(args):
    tcfg, _, _ = build_configs(args, train.DESK_STAGE1)
    imgs = _images(args.data)
    ck = _ckpts(args)
    out = _out(args)
    snrs = tuple(args.snrs) if args.snrs else pipeline.DEFAULT_SNRS
    try:
        pipeline.sweep(imgs, args.modes, ck, snrs, out / "sweep.csv", tcfg.seed,
                       out / "dumps" if args.dump else None, args.dump)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    print(f"wrote {out / 'sweep.csv'}")


_GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": "runs"}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be a u64, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="key = value file overriding config fields")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS,
                        help="seed (u64) overriding the config")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: runs)")

    p = _Parser(prog="scvq", description="Codebook-based semantic communication at desk scale.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write synthetic PPM images")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--size", type=int, default=32)
    g.set_defaults(fn=cmd_gen_data)

    for name, fn, help_ in (("train-stage1", cmd_train_stage1, "train encoder, decoder, codebook"),
                            ("train-stage2", cmd_train_stage2, "train the vector-to-index transformer"),
                            ("train-jscc", cmd_train_jscc, "train the analog JSCC baseline")):
        t = sub.add_parser(name, parents=[common], help=help_)
        t.add_argument("--data", required=True, help="directory of PPM images")
        t.add_argument("--iterations", type=int, help="override the iteration count")
        if name == "train-stage2":
            t.add_argument("--stage1", required=True, help="stage-1 checkpoint")
            t.add_argument("--noiseless", action="store_true", help="train without channel noise")
            t.add_argument("--feature-target", choices=("feature", "literal"), default="feature")
        t.set_defaults(fn=fn)

    for name, fn in (("eval", cmd_eval), ("sweep", cmd_sweep)):
        e = sub.add_parser(name, parents=[common], help=f"{name} pipeline modes")
        e.add_argument("--data", required=True)
        e.add_argument("--stage1")
        e.add_argument("--stage2")
        e.add_argument("--jscc")
        if name == "eval":
            e.add_argument("--mode", choices=pipeline.MODES, required=True)
            e.add_argument("--snr", type=float)
        else:
            e.add_argument("--modes", nargs="+", choices=pipeline.MODES, default=list(pipeline.MODES))
            e.add_argument("--snrs", nargs="+", type=float)
            e.add_argument("--dump", type=int, default=0, help="dump the first N reconstructions")
        e.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, val in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"scvq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"scvq: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
