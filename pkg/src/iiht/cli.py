"""Command line: ``iiht synth-data | train | generate | evaluate | gradcheck | inspect``."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .corpus import CorpusSpec, generate as generate_corpus, load_jsonl, save_jsonl
from .errors import IIHTError
from .templates import IndicatorTemplates

log = logging.getLogger("iiht")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def default_seed():
    raw = os.environ.get("IIHT_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"IIHT_SEED must be an integer, got {raw!r}") from None


def _existing(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    return p


# -- synth-data ---------------------------------------------------------------


def cmd_synth_data(args):
    spec = CorpusSpec(n_indicators=args.indicators, seed=args.seed, n_train=args.n_train,
                      n_val=args.n_val, n_test=args.n_test, cell=args.cell, n_views=args.views,
                      noise=args.noise)
    templates = (IndicatorTemplates.load(_existing(args.templates)) if args.templates
                 else IndicatorTemplates.default(args.indicators))
    train, val, test = generate_corpus(spec, templates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in (("train", train), ("val", val), ("test", test)):
        save_jsonl(recs, out / f"{name}.jsonl")
    templates.save(out / "templates.txt")
    print(f"wrote {len(train)}/{len(val)}/{len(test)} records to {out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

TRAIN_KEYS = {"lam", "lr", "weight_decay", "batch_size", "epochs", "clip_norm", "swap_prob", "max_swaps"}
MODEL_KEYS = {"hidden", "layers", "heads", "dropout", "visual_dropout", "n_features", "encoder"}


def _train_settings(args):
    """Merge preset < config file < explicit flags into (TrainConfig, model kwargs, vocab size)."""
    from .training import PAPER_HIDDEN, PRESETS, TrainConfig

    values = {"vocab_size": 512}
    if args.preset:
        values.update(PRESETS[args.preset])
        if args.preset == "paper":
            values["hidden"] = PAPER_HIDDEN
    if args.config:
        with open(_existing(args.config), encoding="utf-8") as fh:
            cfg = json.load(fh)
        unknown = set(cfg) - TRAIN_KEYS - MODEL_KEYS - {"vocab_size", "seed"}
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {', '.join(sorted(unknown))}")
        values.update(cfg)
    for key in TRAIN_KEYS | MODEL_KEYS | {"vocab_size", "seed"}:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    values.setdefault("seed", default_seed())
    tc = TrainConfig(seed=values["seed"], **{k: values[k] for k in TRAIN_KEYS if k in values})
    mk = {k: values[k] for k in MODEL_KEYS if k in values}
    return tc, mk, values["vocab_size"]


def _load_split(args, name):
    path = getattr(args, name) or (Path(args.data) / f"{name}.jsonl" if args.data else None)
    if path is None:
        return None
    return load_jsonl(_existing(path))


def cmd_train(args):
    from .model import IIHTModel, ModelConfig
    from .tokenizer import train_bpe
    from .training import train

    train_cfg, model_kw, vocab_size = _train_settings(args)
    train_records = _load_split(args, "train")
    if train_records is None:
        raise UsageError("train needs --data DIR or --train FILE")
    val_records = _load_split(args, "val") if (args.val or args.data) and (
        args.val or (Path(args.data) / "val.jsonl").exists()) else None
    if args.templates:
        templates = IndicatorTemplates.load(_existing(args.templates))
    elif args.data and (Path(args.data) / "templates.txt").exists():
        templates = IndicatorTemplates.load(Path(args.data) / "templates.txt")
    else:
        templates = IndicatorTemplates.default(train_records[0].labels.shape[0])
    first = train_records[0]
    if first.images is not None:
        model_kw.setdefault("encoder", "tiny-conv")
        image_shape = tuple(first.images[0].shape)
    else:
        model_kw["encoder"] = "passthrough"
        model_kw["n_features"] = first.features.shape[0]
        image_shape = None
    vocab = train_bpe([r.report for r in train_records], vocab_size)
    config = ModelConfig(n_indicators=templates.n_indicators, n_states=templates.n_states,
                         image_shape=image_shape, seed=train_cfg.seed, **model_kw)
    model = IIHTModel(config, templates, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt", out / "merges.txt")
    result = train(train_cfg, train_records, val_records, model,
                   log_path=out / "metrics.csv", checkpoint_path=out / "model.iiht")
    last = result.history[-1]
    print(f"trained {result.steps} steps; final loss {last['train_loss']:.4f}, "
          f"state accuracy {last['state_acc']:.4f}; checkpoint {out / 'model.iiht'}")
    return EXIT_OK


# -- generate / evaluate ------------------------------------------------------


def _load_model(path):
    from .training import load_checkpoint

    return load_checkpoint(_existing(path)).model


def _pick_record(args):
    records = load_jsonl(_existing(args.data))
    if args.id is None:
        return records[args.index] if -len(records) <= args.index < len(records) else _missing(args, records)
    for rec in records:
        if rec.id == args.id:
            return rec
    raise IIHTError(f"record {args.id!r} not found in {args.data}")


def _missing(args, records):
    raise IIHTError(f"index {args.index} out of range for {args.data} ({len(records)} records)")


def format_alpha(templates, alpha, states, overrides):
    width = max(len(n) for n in templates.names)
    head = f"{'indicator':<{width}}  " + "  ".join(f"{s:>9}" for s in templates.states) + "  used"
    lines = [head]
    for t, name in enumerate(templates.names):
        probs = "  ".join(f"{p:9.4f}" for p in alpha[t])
        used = templates.states[int(states[t])] + (" (set)" if t in overrides else "")
        lines.append(f"{name:<{width}}  {probs}  {used}")
    return "\n".join(lines)


def cmd_generate(args):
    from .decoding import generate, parse_assignment

    model = _load_model(args.checkpoint)
    record = _pick_record(args)
    overrides = dict(parse_assignment(s) for s in args.set or [])
    mode = "beam" if args.beam and args.beam > 1 else "greedy"
    res = generate(model, record, overrides, mode=mode, beam=args.beam or 1, max_len=args.max_len,
                   hard=args.hard_states, length_norm=args.length_norm)
    print(res.text)
    print()
    print(format_alpha(model.templates, res.alpha, res.states, res.overrides))
    return EXIT_OK


def cmd_evaluate(args):
    from .decoding import generate, generate_batch
    from .metrics import build_report

    model = _load_model(args.checkpoint)
    records = load_jsonl(_existing(args.data))
    if not records:
        raise IIHTError(f"{args.data} holds no records")
    if args.beam and args.beam > 1:
        results = [generate(model, r, mode="beam", beam=args.beam, max_len=args.max_len,
                            hard=args.hard_states) for r in records]
    else:
        results = []
        for i in range(0, len(records), 32):
            results += generate_batch(model, records[i:i + 32], max_len=args.max_len, hard=args.hard_states)
    report = build_report([r.text for r in results], [r.report for r in records],
                          np.stack([r.states for r in results]), np.stack([r.states for r in records]),
                          model.templates.keys, model.templates.n_states)
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


# -- gradcheck / inspect ------------------------------------------------------


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(args.seed if args.seed is not None else default_seed(), log=print)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_inspect(args):
    from .training import load_checkpoint

    ck = load_checkpoint(_existing(args.checkpoint))
    model = ck.model
    print(f"checkpoint {args.checkpoint}")
    print(f"step {ck.step}, epoch {ck.meta.get('epoch', 0)}, vocabulary {model.vocab.size}, "
          f"indicators {model.templates.n_indicators}")
    print("model config: " + json.dumps(model.config.to_dict(), sort_keys=True))
    if ck.train_config is not None:
        print("train config: " + json.dumps(ck.train_config.to_dict(), sort_keys=True))
    total = 0
    for name, p in model.named_parameters():
        total += p.data.size
        print(f"  {name:<48} {'x'.join(map(str, p.data.shape))}")
    print(f"{total} parameters")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser():
    parser = Parser(prog="iiht", description="Indicator-conditioned report generation toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("synth-data", help="write a synthetic train/val/test corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--indicators", type=int, default=11)
    p.add_argument("--n-train", type=int, default=256)
    p.add_argument("--n-val", type=int, default=32)
    p.add_argument("--n-test", type=int, default=64)
    p.add_argument("--cell", type=int, default=4, help="pixels per indicator cell side")
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.05, help="Gaussian pixel noise (0 = noiseless)")
    p.add_argument("--templates", help="template file (default: built-in)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model and write checkpoint, metrics.csv, vocab")
    p.add_argument("--data", help="directory with train.jsonl / val.jsonl / templates.txt")
    p.add_argument("--train", help="training JSONL (overrides --data)")
    p.add_argument("--val", help="validation JSONL (overrides --data)")
    p.add_argument("--templates", help="template file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON file with default hyperparameters")
    p.add_argument("--preset", choices=["toy", "paper"])
    p.add_argument("--seed", type=int)
    p.add_argument("--lam", type=float, help="generator loss weight in [0, 1]")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--swap-prob", type=float, help="probability of state-swap augmentation per record")
    p.add_argument("--max-swaps", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--visual-dropout", type=float)
    p.add_argument("--n-features", type=int)
    p.add_argument("--encoder", choices=["tiny-conv", "passthrough"])
    p.add_argument("--vocab-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a report for one record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="JSONL file holding the record")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--id", help="record id")
    g.add_argument("--index", type=int, default=0, help="record position (default 0)")
    p.add_argument("--set", action="append", metavar="INDICATOR=STATE", help="force a state (repeatable)")
    p.add_argument("--beam", type=int, default=0, help="beam width (0 or 1 = greedy)")
    p.add_argument("--length-norm", action="store_true")
    p.add_argument("--hard-states", action="store_true", help="one-hot the predicted states")
    p.add_argument("--max-len", type=int, default=128)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated reports against references")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="test JSONL")
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--beam", type=int, default=0)
    p.add_argument("--hard-states", action="store_true")
    p.add_argument("--max-len", type=int, default=128)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="summarise a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def run(argv=None):
    """Entry point returning the exit code (0 ok, 1 usage, 2 runtime failure)."""
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "seed", None) is None and args.command == "synth-data":
            args.seed = default_seed()
        level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IIHTError, ValueError, KeyError) as exc:
        print(f"iiht: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())
