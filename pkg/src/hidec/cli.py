"""Command-line entry point: ``hidec <command> ...``.

Exit codes: 0 success, 1 domain error (the error class is printed), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import statistics
import sys
from pathlib import Path

from . import __version__
from . import autograd as ag
from .checkpoint import load_checkpoint
from .codec import deserialize, encode_labels, from_text, to_text
from .datagen import SynthSpec, write_dataset
from .encoder import tokenize
from .estimator import HiDECClassifier, check_documents
from .exceptions import HidecError
from .inference import recursive_decode
from .metrics import evaluate
from .taxonomy import Special, load_taxonomy
from .training import TrainConfig


log = logging.getLogger("hidec")

DATA_KEYS = ("taxonomy", "train", "dev", "test")
CONFIG_NAME = "config.cfg"
LOG_NAME = "train_log.csv"
BEST_NAME = "best.ckpt"
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- io helpers ---------------------------------------------------------------

def read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise UsageError(f"{path}:{n}: expected a JSON object")
            records.append(rec)
    return records


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, extra=None):
    """Record every file under ``out`` with its digest. No timestamps, so
    reruns produce identical manifests."""
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST_NAME:
            files[p.relative_to(out).as_posix()] = _sha256(p)
    body = {"command": command, "hidec_version": __version__, "files": files}
    if extra:
        body.update(extra)
    (out / MANIFEST_NAME).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_csv(value):
    return [v.strip() for v in value.split(",") if v.strip()]


# -- taxonomy / codec ---------------------------------------------------------

def cmd_taxonomy_validate(args):
    t = load_taxonomy(args.taxonomy)
    print(f"ok: C={len(t)} labels (root {t.names[t.root]!r}), P={t.max_depth}")
    return 0


def cmd_codec_encode(args):
    t = load_taxonomy(args.taxonomy)
    seq = encode_labels(t, [t.id_of(n) for n in _split_csv(args.labels)])
    print(to_text(t, seq, sep=args.sep))
    return 0


def cmd_codec_decode(args):
    t = load_taxonomy(args.taxonomy)
    sub = deserialize(t, from_text(t, args.sequence).tokens)
    print(",".join(sorted(t.names[v] for v in sub.assigned)))
    return 0


# -- data ---------------------------------------------------------------------

def cmd_synth_data(args):
    out = _out_dir(args.out)
    splits = tuple(float(x) for x in _split_csv(args.splits))
    if len(splits) != 3:
        raise UsageError("--splits needs three comma-separated fractions")
    spec = SynthSpec(depth=args.depth, branching=(args.branching_min, args.branching_max),
                     keywords_per_label=args.keywords_per_label, keywords_per_mention=args.keywords_per_mention,
                     noise_vocab=args.noise_vocab, noise_ratio=args.noise, docs=args.docs,
                     avg_labels=args.avg_labels, seed=args.seed, splits=splits)
    write_dataset(spec, out)
    write_manifest(out, "synth-data")
    print(f"wrote synthetic dataset to {out}")
    return 0


# -- training -----------------------------------------------------------------

def resolve_run_config(args):
    """Merge config file values with ``--set`` and dedicated flags (flags win).

    Returns (TrainConfig, data paths). Relative data paths in the config file
    are resolved against the file's directory.
    """
    values, paths = {}, {}
    if args.config:
        cfg_path = Path(args.config)
        try:
            raw = TrainConfig.parse_pairs(cfg_path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        for k, v in raw.items():
            if k in DATA_KEYS:
                p = Path(v.strip())
                paths[k] = p if p.is_absolute() else cfg_path.parent / p
            else:
                values[k] = v
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v
    for k in DATA_KEYS:
        v = getattr(args, k, None)
        if v:
            paths[k] = Path(v)
    for k in ("seed", "epochs", "lr", "batch_size", "threshold"):
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    unknown = sorted(set(values) - set(TrainConfig.keys()))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    try:
        config = TrainConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from None
    for k in ("taxonomy", "train"):
        if k not in paths:
            raise UsageError(f"no {k} path (set it in the config file or with --{k})")
    return config, paths


def _texts_labels(records):
    return [r.get("text", "") for r in records], [r.get("labels") or [] for r in records]


def train_one(config, paths, out: Path):
    t = load_taxonomy(paths["taxonomy"])
    X, y = _texts_labels(read_jsonl(paths["train"]))
    eval_set = None
    if paths.get("dev"):
        eval_set = _texts_labels(read_jsonl(paths["dev"]))
        if not eval_set[0]:
            eval_set = None
    est = HiDECClassifier.from_config(t, config)
    est.fit(X, y, eval_set=eval_set)
    (out / LOG_NAME).write_text(est.history_.log_csv(), encoding="utf-8")
    est.save(out / BEST_NAME)
    summary = {"best_epoch": est.history_.best_epoch,
               "dev_micro_f1": _row_value(est.history_, "dev_micro_f1"),
               "dev_macro_f1": _row_value(est.history_, "dev_macro_f1")}
    if paths.get("test"):
        Xt, yt = _texts_labels(read_jsonl(paths["test"]))
        report = evaluate(_gold(t, yt), [r.labels for r in est.decode(Xt)], t)
        report.write_json(out / "test_report.json", t)
        summary["test_micro_f1"], summary["test_macro_f1"] = report.micro_f1, report.macro_f1
    return summary


def _row_value(history, key):
    for row in history.log:
        if row["epoch"] == history.best_epoch:
            return row[key]
    return None


def _gold(t, label_lists):
    return [{t.id_of(n) for n in names} for names in label_lists]


def cmd_train(args):
    config, paths = resolve_run_config(args)
    out = _out_dir(args.out)
    if args.replicas < 1:
        raise UsageError("--replicas must be at least 1")
    if args.replicas == 1:
        (out / CONFIG_NAME).write_text(config.to_text(), encoding="utf-8")
        summary = train_one(config, paths, out)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_manifest(out, "train")
        print(json.dumps(summary, sort_keys=True))
        return 0

    results = []
    for i in range(args.replicas):
        cfg = config.replace(seed=config.seed + i)
        sub = _out_dir(out / f"replica_{i}")
        (sub / CONFIG_NAME).write_text(cfg.to_text(), encoding="utf-8")
        results.append(train_one(cfg, paths, sub))
    (out / CONFIG_NAME).write_text(config.to_text(), encoding="utf-8")
    agg = {"replicas": results}
    for key in ("dev_micro_f1", "dev_macro_f1", "test_micro_f1", "test_macro_f1"):
        vals = [r[key] for r in results if r.get(key) is not None]
        if vals:
            agg[key] = {"mean": statistics.fmean(vals), "std": statistics.pstdev(vals)}
    (out / "summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "train")
    for key in ("dev_micro_f1", "dev_macro_f1", "test_micro_f1", "test_macro_f1"):
        if key in agg:
            print(f"{key}: {agg[key]['mean']:.4f} +- {agg[key]['std']:.4f}")
    return 0


# -- inference ----------------------------------------------------------------

def _load(args):
    t = load_taxonomy(args.taxonomy) if getattr(args, "taxonomy", None) else None
    est = HiDECClassifier.from_bundle(load_checkpoint(args.checkpoint, t))
    if args.threshold is not None:
        est.threshold = args.threshold
    return est


def cmd_predict(args):
    est = _load(args)
    records = read_jsonl(args.corpus)
    texts = check_documents([r.get("text", "") for r in records]) if records else []
    names = est.taxonomy_.names
    lines = []
    for r in (est.decode(texts) if texts else []):
        lines.append(json.dumps({"labels": sorted(names[v] for v in r.labels),
                                 "fallback_steps": r.fallback_steps}))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        out = _out_dir(args.out)
        (out / "predictions.jsonl").write_text(text, encoding="utf-8")
        write_manifest(out, "predict")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args):
    est = _load(args)
    t = est.taxonomy_
    records = read_jsonl(args.corpus)
    X, y = _texts_labels(records)
    pred = [r.labels for r in est.decode(check_documents(X))]
    report = evaluate(_gold(t, y), pred, t, ancestor_closure=not args.no_closure)
    if args.out:
        out = _out_dir(args.out)
        report.write_json(out / "report.json", t)
        report.write_level_csv(out / "levels.csv")
        write_manifest(out, "evaluate")
    print(json.dumps(report.to_dict(t), indent=2, sort_keys=True))
    return 0


def _token_names(t, seq):
    return [str(Special(x)) if x < 0 else t.names[x] for x in seq.tokens]


def cmd_inspect_attention(args):
    """Dump self- and text-attention weights for one document, one CSV per
    layer, kind and head. Rows are sequence tokens; columns are sequence
    tokens (self) or words (cross)."""
    est = _load(args)
    t, model, vocab = est.taxonomy_, est.model_, est.vocabulary_
    if args.text is not None:
        text, gold = args.text, None
    else:
        records = read_jsonl(args.corpus)
        if not 0 <= args.index < len(records):
            raise UsageError(f"--index {args.index} out of range for {len(records)} documents")
        text, gold = records[args.index].get("text", ""), records[args.index].get("labels")
    ids = tokenize(text, vocab, max_len=est.max_len)
    if args.labels:
        labels = {t.id_of(n) for n in _split_csv(args.labels)}
    elif args.use_gold and gold:
        labels = {t.id_of(n) for n in gold}
    else:
        ctx = model.encode_documents([ids])[0]
        labels = recursive_decode(model, ctx, t, est.threshold).labels
    seq = encode_labels(t, labels)
    capture = []
    with ag.no_grad():
        model.forward([ids], [seq], training=False, capture=capture)
    rows = _token_names(t, seq)
    words = [vocab.itos[i] for i in ids]
    out = _out_dir(args.out)
    for r, layer in enumerate(capture):
        for kind, weights in layer.items():
            cols = rows if kind == "self" else words
            for head in range(weights.shape[1]):
                path = out / f"layer{r}_{kind}_head{head}.csv"
                with open(path, "w", newline="", encoding="utf-8") as fh:
                    w = csv.writer(fh)
                    w.writerow(["token", *cols])
                    for i, name in enumerate(rows):
                        w.writerow([name, *(repr(float(x)) for x in weights[0, head, i, : len(cols)])])
    (out / "sequence.txt").write_text(to_text(t, seq, sep=" ") + "\n", encoding="utf-8")
    write_manifest(out, "inspect-attention")
    print(f"wrote {len(capture)} layers of attention to {out}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="hidec", description="Hierarchical text classification by sub-hierarchy decoding.")
    p.add_argument("--version", action="version", version=f"hidec {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tax = sub.add_parser("taxonomy", help="taxonomy utilities")
    tsub = tax.add_subparsers(dest="action", required=True, parser_class=_Parser)
    v = tsub.add_parser("validate", help="check a taxonomy file and report C and P")
    v.add_argument("--taxonomy", required=True, help="tab-separated 'parent child...' file")
    v.set_defaults(func=cmd_taxonomy_validate)

    codec = sub.add_parser("codec", help="sub-hierarchy sequence notation")
    csub = codec.add_subparsers(dest="action", required=True, parser_class=_Parser)
    e = csub.add_parser("encode", help="label names -> bracket sequence")
    e.add_argument("--taxonomy", required=True)
    e.add_argument("--labels", required=True, help="comma-separated label names")
    e.add_argument("--sep", default="", help="token separator (default: none)")
    e.set_defaults(func=cmd_codec_encode)
    d = csub.add_parser("decode", help="bracket sequence -> assigned label names")
    d.add_argument("--taxonomy", required=True)
    d.add_argument("--sequence", required=True, help="e.g. '(R(A([END])))'")
    d.set_defaults(func=cmd_codec_decode)

    s = sub.add_parser("synth-data", help="write a seeded synthetic taxonomy and corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--depth", type=int, default=4)
    s.add_argument("--branching-min", type=int, default=1)
    s.add_argument("--branching-max", type=int, default=3)
    s.add_argument("--keywords-per-label", type=int, default=3)
    s.add_argument("--keywords-per-mention", type=int, default=2)
    s.add_argument("--noise-vocab", type=int, default=200)
    s.add_argument("--noise", type=float, default=0.0, help="fraction of noise tokens per document")
    s.add_argument("--docs", type=int, default=200)
    s.add_argument("--avg-labels", type=float, default=1.5)
    s.add_argument("--splits", default="1,0,0", help="train,dev,test fractions")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    tr = sub.add_parser("train", help="train a model; writes best.ckpt, train_log.csv, config.cfg")
    tr.add_argument("--config", help="key = value file; keys are TrainConfig fields plus "
                                     "taxonomy/train/dev/test paths")
    tr.add_argument("--out", required=True)
    for k in DATA_KEYS:
        tr.add_argument(f"--{k}", help=f"{k} path (overrides the config file)")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--threshold", type=float)
    tr.add_argument("--replicas", type=int, default=1, help="train k seeds (seed, seed+1, ...) and report mean/std")
    tr.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "label a JSONL corpus"),
                                 ("evaluate", cmd_evaluate, "score a labelled JSONL corpus")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--checkpoint", required=True, help="checkpoint file (the .ckpt suffix may be omitted)")
        q.add_argument("--corpus", required=True, help="JSONL with 'text' (and 'labels' for evaluate)")
        q.add_argument("--out", help="output directory; stdout only when omitted")
        q.add_argument("--taxonomy", help="verify the checkpoint against this taxonomy")
        q.add_argument("--threshold", type=float)
        if name == "evaluate":
            q.add_argument("--no-closure", action="store_true", help="score without ancestor closure")
        q.set_defaults(func=func)

    a = sub.add_parser("inspect-attention", help="export attention weights as CSV")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--out", required=True)
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--corpus")
    a.add_argument("--index", type=int, default=0, help="document index in --corpus")
    a.add_argument("--labels", help="comma-separated labels to build the sequence from")
    a.add_argument("--use-gold", action="store_true", help="use the corpus labels instead of decoding")
    a.add_argument("--taxonomy")
    a.add_argument("--threshold", type=float)
    a.set_defaults(func=cmd_inspect_attention)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except HidecError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
