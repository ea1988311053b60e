"""Command-line entry point: ``hybridsnn VERB [--config PATH] [--seed N] [--out DIR] [--resume]``."""

import argparse
import json
import logging
import os
import sys

from . import audio
from .config import load_config, load_config_file
from .errors import ConfigurationError, HybridSNNError
from .pipeline import STAGES, Pipeline, StageError, _cell

VERBS = {
    "train-teacher": ("teacher",),
    "train-ltl": ("ltl",),
    "calibrate": ("calibrate",),
    "train-ttfs": ("ttfs",),
    "eval": ("eval",),
    "audit-energy": ("energy",),
    "loc-experiment": STAGES,
    "run-pipeline": STAGES,
    "gen-audio": (),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hybridsnn", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="INI experiment config (defaults used when omitted)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--out", default="runs/default", help="output directory")
        p.add_argument("--resume", action="store_true",
                       help="skip stages already completed in --out with the same config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args):
    if args.config:
        cfg = load_config_file(args.config, args.seed)
    else:
        text = "[experiment]\ntask = sound-loc\n" if args.verb in ("loc-experiment", "gen-audio") else ""
        cfg = load_config(text, args.seed)
    if args.verb == "loc-experiment" and cfg.task != "sound-loc":
        raise ConfigurationError("loc-experiment needs a sound-loc config")
    return cfg


def gen_audio(cfg, out):
    pipe = Pipeline(cfg, out)
    train, test = pipe.audio_datasets()
    for name, ds in (("train", train), ("test", test)):
        audio.save_dataset(ds, os.path.join(out, "audio", name))
    with open(os.path.join(out, "resolved_config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    return {"train_frames": len(train), "test_frames": len(test),
            "directory": os.path.join(out, "audio")}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.verb == "gen-audio":
            summary = gen_audio(cfg, args.out)
        else:
            record = Pipeline(cfg, args.out).run(VERBS[args.verb], resume=args.resume)
            summary = record.metrics
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 1
    except HybridSNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True, default=_cell))
    return 0


if __name__ == "__main__":
    sys.exit(main())
