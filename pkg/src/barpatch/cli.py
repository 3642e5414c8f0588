"""Command-line entry point: curate, build, train, generate, eval, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

log = logging.getLogger("barpatch")

DECODING_KEYS = ("temperature", "top_p", "max_patches")


class ConfigError(ValueError):
    pass


def _decode_escapes(text: str) -> str:
    return text.encode("ascii").decode("unicode_escape")


def resolve_config(args) -> dict:
    """Merge desk preset < config file < CLI flags into model/schedule/decoding dicts."""
    from .generation import DecodingParams
    from .model import ModelConfig
    from .training import TrainSchedule

    model = ModelConfig.desk().to_dict()
    schedule = TrainSchedule().to_dict()
    decoding = {k: v for k, v in asdict(DecodingParams(temperature=0.0)).items() if k in DECODING_KEYS}

    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in data.items():
            if key in model:
                model[key] = value
            elif key in schedule:
                schedule[key] = value
            elif key in decoding:
                decoding[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")

    if getattr(args, "seed", None) is not None:
        model["seed"] = schedule["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        schedule["steps"] = args.steps
    for key in DECODING_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            decoding[key] = value

    ModelConfig.from_dict(model)
    TrainSchedule.from_dict(schedule)
    return {"model": model, "schedule": schedule, "decoding": decoding}


def _log_config(args, resolved: dict) -> None:
    plain = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("resolved config: %s", json.dumps({"args": plain, **resolved}, sort_keys=True))


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="ascii")


def cmd_curate(args, resolved) -> int:
    from .abcnotation import split_tunes
    from .curation import CurationReport, curate_directory, curate_texts, write_corpus

    src = Path(args.input)
    if src.is_dir():
        tunes, report = curate_directory(src)
    else:
        report = CurationReport()
        text = src.read_bytes().decode("utf-8", errors="replace")
        tunes = curate_texts([c for c in split_tunes(text) if c.lstrip().startswith("X:")], report)
    write_corpus(tunes, args.out)
    if args.report:
        Path(args.report).write_text(report.to_json())
    log.info("curated %d of %d tunes", report.output_count, report.input_count)
    return 0


def cmd_build(args, resolved) -> int:
    from .curation import read_corpus
    from .tasks import build_dataset, split_instances, stats_table, write_jsonl

    m = resolved["model"]
    corpus = read_corpus(args.input)
    tasks = [args.task] if args.task else None
    kwargs = {"tasks": tasks} if tasks else {}
    result = build_dataset(corpus, seed=m["seed"], patch_size=m["patch_size"],
                           patch_length=m["patch_length"], **kwargs)
    instances = result.instances
    if args.test:
        instances, held = split_instances(instances, args.test_fraction, seed=m["seed"])
        write_jsonl(held, args.test)
    write_jsonl(instances, args.out)
    if args.stats:
        Path(args.stats).write_text(stats_table(result.counts, Path(args.input).name))
    for task, n in result.dropped.items():
        if n:
            log.info("dropped %d %s instances over patch bounds", n, task)
    return 0


def cmd_train(args, resolved) -> int:
    from .checkpoint import Checkpoint
    from .model import ModelConfig
    from .tasks import read_jsonl
    from .training import TrainSchedule, train

    instances = read_jsonl(args.input, args.task)
    init = Checkpoint.load(args.ckpt) if args.ckpt else None
    config = init.config if init else ModelConfig.from_dict(resolved["model"])
    schedule = TrainSchedule.from_dict(resolved["schedule"])
    result = train(instances, config, schedule, init=init, checkpoint_path=args.out, log_path=args.log)
    if result.losses:
        log.info("final loss %.6f after %d steps", result.losses[-1], len(result.losses))
    return 0


def cmd_generate(args, resolved) -> int:
    from .generation import DecodingParams, generate
    from .tasks import TASKS, task_header
    from .training import load_model

    if args.task not in TASKS:
        raise ConfigError(f"unknown task {args.task!r}")
    model = load_model(args.ckpt)
    text = Path(args.input).read_text(encoding="ascii") if args.input else ""
    if not text.startswith("%%"):
        text = task_header(args.task) + text
    params = DecodingParams(forced_prefix=_decode_escapes(args.prefix or ""),
                            seed=args.seed if args.seed is not None else 0,
                            **resolved["decoding"])
    _write(args.out, generate(model, text, params))
    return 0


def cmd_eval(args, resolved) -> int:
    from .generation import DecodingParams
    from .metrics import evaluate
    from .tasks import read_jsonl
    from .training import load_model

    model = load_model(args.ckpt)
    instances = read_jsonl(args.test, args.task)
    params = DecodingParams(seed=args.seed if args.seed is not None else 0, **resolved["decoding"])
    report = evaluate(model, instances, args.task, params)
    _write(args.out, report.to_json())
    return 0


def cmd_inspect(args, resolved) -> int:
    from .abcnotation import parse_tune
    from .patching import dump, patchify
    from .tasks import compute_control_codes

    m = resolved["model"]
    text = Path(args.tune).read_text(encoding="ascii")
    seq = patchify(text, m["patch_size"], m["patch_length"])
    out = [f"{len(seq)} patches ({sum(p.origin == 'information_field' for p in seq)} field, "
           f"{sum(p.origin == 'bar' for p in seq)} bar)", dump(seq, m["patch_size"]).rstrip("\n"),
           "control codes:", compute_control_codes(parse_tune(text, strict=False)).serialize().rstrip("\n")]
    _write(args.out, "\n".join(out) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barpatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of model/schedule/decoding settings")
        p.add_argument("--seed", type=int)
        return p

    p = add("curate", cmd_curate, "clean a directory or file of ABC tunes into one corpus file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the curation report JSON here")

    p = add("build", cmd_build, "build task instances as JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", help="build a single task only")
    p.add_argument("--test", help="also write a held-out split here")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--stats", help="write a per-task count table (TSV)")

    p = add("train", cmd_train, "train or fine-tune a model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--ckpt", help="initial checkpoint to fine-tune from")
    p.add_argument("--task", help="train on one task only")
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="loss log (TSV)")

    def decoding(p):
        p.add_argument("--temperature", type=float)
        p.add_argument("--top-p", dest="top_p", type=float)
        p.add_argument("--max-patches", dest="max_patches", type=int)

    p = add("generate", cmd_generate, "decode one output")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--in", dest="input", help="input score (task header optional)")
    p.add_argument("--prefix", help=r"forced output prefix; \n escapes are decoded")
    p.add_argument("--out")
    decoding(p)

    p = add("eval", cmd_eval, "score a checkpoint on held-out instances of one task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    decoding(p)

    p = add("inspect", cmd_inspect, "show the patches and control codes of one tune")
    p.add_argument("--tune", required=True)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BARPATCH_LOG_LEVEL", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        resolved = resolve_config(args)
        _log_config(args, resolved)
        return args.func(args, resolved)
    except Exception as err:  # one machine-parseable line per failure
        msg = " ".join(str(err).split())
        print(f"error: {type(err).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
