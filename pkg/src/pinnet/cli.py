"""Command-line entry point: ``pinnet <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure, 4 self-check failure.
"""
import argparse
import os
import sys
import warnings

import numpy as np

from . import __version__, backend, features, selfcheck, synthetic
from .config import ConfigFileError, RunConfig
from .features import DataFormatError, ParseError, SchemaError, Vocabulary
from .metrics import UndefinedMetricError, evaluate
from .model import ConfigError, predict_batch
from .optimizers import NumericError, sparsity_report
from .training import (CheckpointFormatError, TrainingDivergence, VocabularyMismatchWarning,
                       history_to_csv, load_checkpoint, save_checkpoint, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_SELF_CHECK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(*parts):
    print(*parts, flush=True)


def _read(path, delimiter):
    return list(features.read_rows(path, delimiter))


def cmd_build_vocab(args):
    schema = features.read_schema(args.schema)
    vocab = features.fit_vocabulary(features.read_rows(args.data, args.delimiter), schema,
                                    min_count=args.min_count, bins=args.bins)
    vocab.save(args.out)
    for fv, card in zip(vocab.fields, vocab.cardinalities):
        _say(f"{fv.spec.name}\t{card}")
    _say(f"vocabulary {vocab.digest()} written to {args.out}")
    return EXIT_OK


def _load_run_data(cfg):
    delim, label = cfg["data.delimiter"], cfg["data.label"]
    if cfg["data.train"]:
        if not cfg["data.valid"]:
            raise UsageError("data.train needs data.valid")
        parts = [_read(cfg["data.train"], delim), _read(cfg["data.valid"], delim),
                 _read(cfg["data.test"], delim) if cfg["data.test"] else []]
    elif cfg["data.path"]:
        rows = _read(cfg["data.path"], delim)
        if not rows:
            raise DataFormatError(f"{cfg['data.path']}: no data rows")
        pos = features.split_indices(len(rows), cfg["data.fractions"], cfg["data.split_seed"])
        parts = [[rows[i] for i in p] for p in pos]
    else:
        raise UsageError("set data.path, or data.train and data.valid")
    fitted = False
    if cfg["data.vocab"]:
        vocab = Vocabulary.load(cfg["data.vocab"])
    elif cfg["data.schema"]:
        vocab = features.fit_vocabulary(parts[0], features.read_schema(cfg["data.schema"]),
                                        cfg["data.min_count"], cfg["data.bins"])
        fitted = True
    else:
        raise UsageError("set data.vocab, or data.schema to fit one on the training rows")
    sets = [features.encode(p, vocab, label) if p else None for p in parts]
    return vocab, fitted, sets


def cmd_train(args):
    cfg = RunConfig.load(args.config, args.overrides)
    tcfg = cfg.train_config()
    effective = cfg.to_text()
    _say("# effective configuration")
    sys.stdout.write(effective)
    vocab, fitted, (tr, va, te) = _load_run_data(cfg)
    if len(tr) == 0 or va is None or len(va) == 0:
        raise DataFormatError("training and validation sets must be non-empty")
    out = cfg["out.dir"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(effective)
    if fitted:
        vocab.save(os.path.join(out, "vocab.txt"))
    _say(f"# backend={backend} train={len(tr)} valid={len(va)} test={len(te) if te else 0}")

    def log(step, res):
        _say(f"step={step} valid {res.format()}")

    result = train(tr, va, tcfg, vocab_hash=vocab.digest(), log=log)
    best = result.best
    save_checkpoint(best, os.path.join(out, "best.ckpt"))
    save_checkpoint(result.last, os.path.join(out, "last.ckpt"))
    history = list(result.history)
    if te is not None and len(te):
        res = evaluate(best.params, best.model_config, te)
        history.append((best.step, "test", res.auc, res.logloss))
        _say(f"best step={best.step} test {res.format()}")
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(history_to_csv(history))
    _say(f"best step={best.step} valid auc={best.best_auc:.6f} logloss={best.best_logloss:.6f}"
         f"{' (early stop)' if result.stopped_early else ''}")
    return EXIT_OK


def _checkpoint_for(args, vocab):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", VocabularyMismatchWarning)
        ckpt = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab.digest())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
        if not args.allow_vocab_mismatch:
            raise UsageError("vocabulary mismatch; pass --allow-vocab-mismatch to proceed")
    if vocab.cardinalities != tuple(e.shape[0] for e in ckpt.params.embeddings):
        raise DataFormatError("vocabulary cardinalities do not match the checkpoint tables")
    return ckpt


def _encode_file(args, vocab):
    return features.encode(features.read_rows(args.data, args.delimiter), vocab, args.label)


def cmd_evaluate(args):
    vocab = Vocabulary.load(args.vocab)
    ckpt = _checkpoint_for(args, vocab)
    ds = _encode_file(args, vocab)
    _say(evaluate(ckpt.params, ckpt.model_config, ds).format())
    return EXIT_OK


def cmd_predict(args):
    vocab = Vocabulary.load(args.vocab)
    ckpt = _checkpoint_for(args, vocab)
    rows = list(features.read_rows(args.data, args.delimiter))
    idx = np.asarray([[fv.index_of(row[fv.spec.name], n) for fv in vocab.fields]
                      for n, row in rows], dtype=np.int64).reshape(len(rows), len(vocab.fields))
    preds = predict_batch(idx, ckpt.params, ckpt.model_config)
    text = "".join(f"{p:.9f}\n" for p in preds)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sparsity(args):
    ckpt = load_checkpoint(args.checkpoint)
    feat, weight = sparsity_report(ckpt.params)
    _say(f"feature_sparse_ratio={feat:.6f} weight_sparse_ratio={weight:.6f}")
    return EXIT_OK


def cmd_self_check(args):
    results, secs = selfcheck.run(seed=args.seed, mutation=args.mutate)
    for r in results:
        _say(r.line())
    failed = [r for r in results if not r.ok]
    _say(f"{len(results) - len(failed)}/{len(results)} checks passed in {secs:.1f}s"
         f" (backend={backend}{', mutation=' + args.mutate if args.mutate else ''})")
    return EXIT_SELF_CHECK if failed else EXIT_OK


def cmd_synth(args):
    gen = synthetic.GENERATORS[args.kind]
    ds = gen(n=args.rows, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    features.write_schema(synthetic.schema_for(ds), os.path.join(args.out_dir, "schema.tsv"))
    path = os.path.join(args.out_dir, "data.tsv")
    names = ["label"] + [f"f{f}" for f in range(ds.field_count)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(names) + "\n")
        for row in synthetic.to_rows(ds):
            fh.write("\t".join(row[n] for n in names) + "\n")
    _say(f"{len(ds)} rows, {ds.field_count} fields written to {path}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="pinnet", description="Train and evaluate polynomial interaction "
                "networks for click prediction.")
    p.add_argument("--version", action="version", version=f"pinnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_opts(q):
        q.add_argument("--delimiter", default="\t", help="column delimiter (default: tab)")
        q.add_argument("--label", default="label", help="label column name")

    q = sub.add_parser("build-vocab", help="fit a vocabulary file on training data")
    q.add_argument("--schema", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--min-count", type=int, default=20)
    q.add_argument("--bins", type=int, default=10)
    data_opts(q)
    q.set_defaults(func=cmd_build_vocab)

    q = sub.add_parser("train", help="train from a key = value config file")
    q.add_argument("config")
    q.add_argument("overrides", nargs="*", metavar="key=value")
    q.set_defaults(func=cmd_train)

    for name, fn, helptext in [("evaluate", cmd_evaluate, "print AUC and log loss"),
                               ("predict", cmd_predict, "write one probability per row")]:
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--vocab", required=True)
        q.add_argument("--data", required=True)
        q.add_argument("--allow-vocab-mismatch", action="store_true")
        if name == "predict":
            q.add_argument("--out", default="")
        data_opts(q)
        q.set_defaults(func=fn)

    q = sub.add_parser("sparsity", help="report exact-zero ratios of a checkpoint")
    q.add_argument("--checkpoint", required=True)
    q.set_defaults(func=cmd_sparsity)

    q = sub.add_parser("self-check", help="compare fast paths with brute-force references")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--mutate", choices=selfcheck.MUTATIONS, default=None,
                   help="deliberately break the layer formula; the run must fail")
    q.set_defaults(func=cmd_self_check)

    q = sub.add_parser("synth", help="write a generated dataset and its schema")
    q.add_argument("--kind", choices=sorted(synthetic.GENERATORS), default="second_order")
    q.add_argument("--rows", type=int, default=50_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigFileError, ConfigError) as exc:
        print(f"pinnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergence, NumericError, UndefinedMetricError) as exc:
        print(f"pinnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, ParseError, SchemaError, CheckpointFormatError, OSError,
            ValueError) as exc:
        print(f"pinnet: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
