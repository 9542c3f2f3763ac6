"""Command-line surface: train, eval (single model or ensemble) and
attention trace export.

Exit statuses are a stable contract: 0 success, 2 io, 3 parse, 4 config,
5 numeric-fault. Failures print one machine-readable line to stderr:
``error<TAB>category<TAB>message``.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data as data_mod
from .checkpoint import load_checkpoint
from .errors import ConfigError, IOFailure, ReaderError, UnknownExampleError
from .model import forward_batch, score_batch
from .prediction import CandidateScores, ensemble_average
from .training import PROFILES, train

EXIT_CODES = {"io": 2, "parse": 3, "config": 4, "lookup": 4,
              "numeric-fault": 5}

_HYPER_FLAGS = {
    "steps": "steps",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "epochs": "max_epochs",
    "window": "eval_window",
    "dropout": "dropout",
    "embed_dim": "embed_dim",
    "hidden_size": "hidden_size",
    "state_size": "state_size",
    "seed": "seed",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="alterread",
        description="Alternating-attention Cloze reader: train, evaluate, "
                    "export attention traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--data", help="dataset path (cbt file, cnn directory, "
                        "or synthetic config json)")
    shared.add_argument("--format", choices=("cbt", "cnn", "synthetic"),
                        default="synthetic")
    shared.add_argument("--profile", choices=tuple(PROFILES), default="desk")
    shared.add_argument("--config", help="json file with hyperparameter "
                        "overrides (flags win over it)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--steps", type=int, help="inference step count T")
    shared.add_argument("--fixed-query-attention", action="store_true",
                        help="force uniform query attention weights")
    shared.add_argument("--checkpoint", action="append", default=[],
                        help="checkpoint path (repeat for an ensemble)")
    shared.add_argument("--out", help="output path")
    shared.add_argument("--workers", type=int, default=1)
    shared.add_argument("--lowercase", action="store_true")
    shared.add_argument("--min-count", type=int, default=1)
    shared.add_argument("--batch-size", type=int, dest="batch_size")
    shared.add_argument("--lr", type=float)
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--window", type=int)
    shared.add_argument("--dropout", type=float)
    shared.add_argument("--embed-dim", type=int, dest="embed_dim")
    shared.add_argument("--hidden-size", type=int, dest="hidden_size")
    shared.add_argument("--state-size", type=int, dest="state_size")

    p_train = sub.add_parser("train", parents=[shared],
                             help="train a model, write checkpoint + metrics")
    p_train.add_argument("--valid-data", help="validation dataset "
                         "(required for cbt/cnn)")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", parents=[shared],
                            help="accuracy of one checkpoint or an ensemble")
    p_eval.set_defaults(fn=cmd_eval)

    p_trace = sub.add_parser("trace", parents=[shared],
                             help="export per-step attention weights as csv")
    p_trace.add_argument("--example", required=True,
                         help="source id of the example to trace")
    p_trace.set_defaults(fn=cmd_trace)
    return parser


def resolve_hyper(args):
    """Profile defaults, overridden by --config file, overridden by flags."""
    hyper = PROFILES[args.profile]
    if args.config:
        if not os.path.exists(args.config):
            raise IOFailure(f"no such config file: {args.config}")
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                overrides = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"bad config json: {e}") from None
        unknown = set(overrides) - set(hyper.as_dict())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        hyper = hyper.override(**overrides)
    flag_overrides = {}
    for flag, fieldname in _HYPER_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            flag_overrides[fieldname] = value
    if flag_overrides:
        hyper = hyper.override(**flag_overrides)
    return hyper


def _synthetic_spec(args, hyper):
    seed = args.seed if args.seed is not None else hyper.seed
    spec = {"n_train": 5000, "n_valid": 500, "vocab_size": 100,
            "doc_len_range": [30, 60], "n_candidates": 10, "seed": seed}
    if args.data:
        if not os.path.exists(args.data):
            raise IOFailure(f"no such file: {args.data}")
        with open(args.data, "r", encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"bad synthetic spec json: {e}") from None
        unknown = set(user) - set(spec)
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        spec.update(user)
    return spec


def load_raw_splits(args, hyper):
    """(train raws, valid raws) for the requested format.

    For eval/trace only the valid split is consumed; the synthetic format
    regenerates it from the spec, so a separate file is never needed.
    """
    fmt = args.format
    if fmt == "synthetic":
        spec = _synthetic_spec(args, hyper)
        return data_mod.synthetic_splits(
            spec["n_train"], spec["n_valid"], spec["vocab_size"],
            tuple(spec["doc_len_range"]), spec["n_candidates"], spec["seed"])
    if not args.data:
        raise ConfigError(f"--data is required for format {fmt}")
    if fmt == "cbt":
        parse = lambda p: data_mod.parse_cbt(p, args.lowercase)
    else:
        parse = lambda p: data_mod.parse_cnn_dir(p, args.lowercase)
    train_raws = parse(args.data)
    valid_path = getattr(args, "valid_data", None)
    valid_raws = parse(valid_path) if valid_path else []
    return train_raws, valid_raws


def cmd_train(args):
    hyper = resolve_hyper(args)
    train_raws, valid_raws = load_raw_splits(args, hyper)
    if not valid_raws:
        raise ConfigError("training needs a validation split "
                          "(--valid-data for cbt/cnn)")
    vocab = data_mod.build_vocab(train_raws, args.min_count)
    train_ex, train_report = data_mod.encode_examples(train_raws, vocab)
    valid_ex, valid_report = data_mod.encode_examples(valid_raws, vocab)
    for split, report in (("train", train_report), ("valid", valid_report)):
        if report.unanswerable:
            print(f"note\tunanswerable-{split}\t{report.unanswerable}",
                  file=sys.stderr)

    out = args.out or "alterread.ckpt"
    metrics_path = out + ".metrics"
    lines = [
        "# alterread-train"
        f"\tprofile={args.profile}"
        f"\tformat={args.format}"
        f"\tseed={hyper.seed}"
        f"\tfixed_query_attention={int(args.fixed_query_attention)}",
        "# window\tbatches\ttrain_loss\tval_accuracy\tlr",
    ]
    result = train(train_ex, valid_ex, hyper, vocab=vocab,
                   fixed_query=args.fixed_query_attention,
                   checkpoint_path=out)
    for w in result.windows:
        lines.append(f"{w.index}\t{w.batches}\t{w.train_loss:.6f}"
                     f"\t{w.val_accuracy:.4f}\t{w.lr!r}")
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"checkpoint\t{out}")
    print(f"metrics\t{metrics_path}")
    print(f"best_accuracy\t{result.best_accuracy:.4f}")
    return 0


def _load_members(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    members = [load_checkpoint(p) for p in args.checkpoint]
    first = members[0]
    for m in members[1:]:
        if m.vocab.id_to_token != first.vocab.id_to_token:
            raise ConfigError("ensemble members use different vocabularies")
        if m.hyper.hidden_size != first.hyper.hidden_size \
                or m.hyper.state_size != first.hyper.state_size \
                or m.hyper.embed_dim != first.hyper.embed_dim:
            raise ConfigError("ensemble members have mismatched dimensions")
    return members


def _eval_split(args, hyper):
    _train_raws, valid_raws = load_raw_splits(args, hyper)
    if args.format == "synthetic":
        return valid_raws
    # for cbt/cnn the file given by --data is the split under evaluation
    return _train_raws


def cmd_eval(args):
    members = _load_members(args)
    first = members[0]
    steps = args.steps if args.steps is not None else first.hyper.steps
    fixed_query = args.fixed_query_attention or first.fixed_query
    raws = _eval_split(args, first.hyper)
    examples, report = data_mod.encode_examples(raws, first.vocab)
    batches = data_mod.make_batches(examples, first.hyper.batch_size)

    def score_member(ckpt):
        def one(batch):
            return score_batch(ckpt.params, batch, steps, fixed_query)
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                return list(pool.map(one, batches))
        return [one(b) for b in batches]

    per_member = [score_member(m) for m in members]
    correct = 0
    total = report.unanswerable  # unanswerable examples count as wrong
    for bi, batch in enumerate(batches):
        for ei in range(batch.size):
            scored = [CandidateScores(tuple(batch.candidates[ei]),
                                      member[bi][ei][1],
                                      int(np.argmax(member[bi][ei][1])))
                      for member in per_member]
            merged = ensemble_average(scored)
            total += 1
            correct += int(merged.predicted == batch.answers[ei])
    print(f"examples\t{total}")
    print(f"correct\t{correct}")
    print(f"unanswerable\t{report.unanswerable}")
    print(f"accuracy\t{correct / max(total, 1):.4f}")
    return 0


def cmd_trace(args):
    members = _load_members(args)
    if len(members) != 1:
        raise ConfigError("trace wants exactly one checkpoint")
    ckpt = members[0]
    steps = args.steps if args.steps is not None else ckpt.hyper.steps
    fixed_query = args.fixed_query_attention or ckpt.fixed_query
    raws = _eval_split(args, ckpt.hyper)
    examples, _report = data_mod.encode_examples(raws, ckpt.vocab)
    by_id = {ex.source_id: ex for ex in examples}
    if args.example not in by_id:
        raise UnknownExampleError(
            f"example {args.example!r} not found among "
            f"{len(by_id)} loaded examples")
    example = by_id[args.example]
    batch = data_mod.make_batches([example], 1)[0]
    _loss, trace, _ = forward_batch(ckpt.params, batch, steps,
                                    fixed_query=fixed_query)
    out = args.out or "trace.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "side", "position", "token", "weight"])
        for t in range(steps):
            for side, weights, ids in (
                    ("query", trace.query_weights[t].data[0], example.query),
                    ("document", trace.doc_weights[t].data[0],
                     example.document)):
                for pos in range(len(ids)):
                    token = ckpt.vocab.id_to_token[int(ids[pos])]
                    writer.writerow(
                        [t + 1, side, pos, token, f"{weights[pos]:.6f}"])
    print(f"trace\t{out}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ReaderError as e:
        message = str(e).replace("\n", "; ").replace("\t", " ")
        print(f"error\t{e.category}\t{message}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except OSError as e:
        print(f"error\tio\t{e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
