"""Teacher-forced training: batching, BCE loss, Adam with warmup, selection."""

from __future__ import annotations

import configparser
import csv
import io
import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import autograd as ag
from .codec import encode_labels
from .decoder import DecoderConfig, SequenceBatch
from .encoder import Vocabulary, pad_batch, tokenize
from .exceptions import MissingLabels, NumericalDivergence
from .inference import recursive_decode_batch
from .metrics import evaluate
from .model import HiDECNetwork, ModelConfig
from .optim import adam_step, clip_global_norm, linear_schedule
from .taxonomy import Taxonomy

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
LOG_COLUMNS = ("epoch", "loss", "dev_micro_f1", "dev_macro_f1", "lr")


@dataclass
class TrainConfig:
    """Every training and model hyper-parameter; one config-file key each."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 20
    warmup_ratio: float = 0.1
    clip_norm: float = 1.0
    embed_dropout: float = 0.5
    attn_dropout: float = 0.1
    ffn_dropout: float = 0.1
    threshold: float = 0.5
    seed: int = 0
    precision: str = "float32"
    # model shape
    encoder: str = "bigru"
    embed_dim: int = 64
    hidden: int = 64
    d_model: int = 64
    heads: int = 2
    layers: int = 2
    ffn_dim: int = 128
    residual: bool = False
    layer_norm: bool = False
    level_embedding: bool = True
    mask_mode: str = "hierarchy"
    # text
    min_count: int = 2
    max_len: int = 256
    eval_batch_size: int = 64

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "clip_norm", "eps", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.warmup_ratio < 1:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def model_config(self) -> ModelConfig:
        dec = DecoderConfig(
            d_model=self.d_model, heads=self.heads, layers=self.layers, ffn_dim=self.ffn_dim,
            embed_dropout=self.embed_dropout, attn_dropout=self.attn_dropout, ffn_dropout=self.ffn_dropout,
            residual=self.residual, layer_norm=self.layer_norm, level_embedding=self.level_embedding,
            mask_mode=self.mask_mode,
        )
        return ModelConfig(self.encoder, self.embed_dim, self.hidden, dec)

    def replace(self, **changes) -> "TrainConfig":
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)

    # -- key = value files ------------------------------------------------

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, key, raw):
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        kind = types[key]
        if kind == "bool":
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{key}: not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw).strip()

    @classmethod
    def parse_pairs(cls, text: str) -> dict:
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        parser.optionxform = str
        parser.read_string("[config]\n" + text)
        return dict(parser["config"])

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        return cls(**{k: cls.coerce(k, v) for k, v in values.items()})

    def to_text(self) -> str:
        buf = io.StringIO()
        for k, v in asdict(self).items():
            buf.write(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n")
        return buf.getvalue()


# -- data -------------------------------------------------------------------

@dataclass
class Example:
    ids: list
    labels: frozenset


def encode_corpus(records, taxonomy: Taxonomy, vocab: Vocabulary, max_len=256, stopwords=None):
    """``records``: iterables of dicts with ``text`` and ``labels`` (names)."""
    out = []
    for i, rec in enumerate(records):
        names = rec.get("labels") or []
        if not names:
            raise MissingLabels(f"document {i} has no labels")
        labels = frozenset(taxonomy.id_of(n) for n in names)
        out.append(Example(tokenize(rec.get("text", ""), vocab, stopwords, max_len), labels))
    return out


@dataclass
class TargetLabels:
    """Flat (sequence, position, candidate) pairs with 0/1 targets."""

    rows: np.ndarray
    cols: np.ndarray
    candidates: np.ndarray  # token-table rows
    targets: np.ndarray

    def __len__(self):
        return len(self.targets)


def build_targets(taxonomy: Taxonomy, sequences, label_sets, dtype=np.float32) -> TargetLabels:
    """Each label position scores its augmented children: a child is positive
    iff it is a node of the gold sub-hierarchy, END iff the label is assigned."""
    t = taxonomy
    end_row = len(t) + 2
    rows, cols, cands, ys = [], [], [], []
    for b, (seq, labels) in enumerate(zip(sequences, label_sets)):
        labels = set(labels)
        nodes = {tok for tok in seq.tokens if tok >= 0}
        for i, tok in enumerate(seq.tokens):
            if tok < 0:
                continue
            for c in t.children[tok]:
                rows.append(b)
                cols.append(i)
                cands.append(c)
                ys.append(1.0 if c in nodes else 0.0)
            rows.append(b)
            cols.append(i)
            cands.append(end_row)
            ys.append(1.0 if tok in labels else 0.0)
    as_int = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
    return TargetLabels(as_int(rows), as_int(cols), as_int(cands), np.asarray(ys, dtype=dtype))


@dataclass
class Batch:
    ids: np.ndarray
    text_mask: np.ndarray
    sequences: list
    seq_batch: SequenceBatch
    targets: TargetLabels
    labels: list


def build_batch(examples, model: HiDECNetwork) -> Batch:
    for i, ex in enumerate(examples):
        if not ex.labels:
            raise MissingLabels(f"example {i} has no labels")
    ids, mask = pad_batch([ex.ids for ex in examples])
    sequences = [encode_labels(model.taxonomy, ex.labels) for ex in examples]
    labels = [ex.labels for ex in examples]
    return Batch(ids, mask, sequences, model.decoder.prepare(sequences),
                 build_targets(model.taxonomy, sequences, labels, model.dtype), labels)


def compute_loss(probs, targets, eps=PROB_EPS, reduction="mean"):
    """Binary cross-entropy averaged over every scored (parent, candidate) pair."""
    y = np.asarray(targets, dtype=probs.dtype)
    p = ag.clip(probs, eps, 1 - eps)
    terms = ag.mul(y, ag.log(p)) + ag.mul(1 - y, ag.log(1 - p))
    total = ag.tsum(terms)
    if reduction == "sum":
        return -total
    return ag.scale(total, -1.0 / max(len(y), 1))


def batch_loss(model: HiDECNetwork, batch: Batch, training=False, reduction="mean"):
    h = model.encode(batch.ids, batch.text_mask, training)
    u = model.decode(batch.seq_batch, h, batch.text_mask, training)
    t = batch.targets
    probs = ag.sigmoid(model.decoder.pair_logits(model.store, u, t.rows, t.cols, t.candidates))
    return compute_loss(probs, t.targets, reduction=reduction)


# -- evaluation -------------------------------------------------------------

def predict_examples(model: HiDECNetwork, examples, threshold=0.5, batch_size=64):
    results = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        contexts = model.encode_documents([ex.ids for ex in chunk])
        results.extend(recursive_decode_batch(model, contexts, model.taxonomy, threshold))
    return results


def evaluate_examples(model, examples, threshold=0.5, batch_size=64, ancestor_closure=True):
    results = predict_examples(model, examples, threshold, batch_size)
    report = evaluate([ex.labels for ex in examples], [r.labels for r in results], model.taxonomy,
                      ancestor_closure=ancestor_closure)
    return report, results


# -- fitting ----------------------------------------------------------------

@dataclass
class FitResult:
    best_params: dict
    best_epoch: int
    best_dev_f1: float
    log: list

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in self.log:
            w.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def fit(model: HiDECNetwork, train, dev, config: TrainConfig,
        on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Train ``model`` in place and return the best-by-dev-micro-F1 parameters.

    With an empty dev set the last epoch wins.
    """
    if not train:
        raise MissingLabels("empty training set")
    order_rng = np.random.default_rng([config.seed, 2])
    n_batches = -(-len(train) // config.batch_size)
    total = n_batches * config.epochs
    step = 0
    best = (None, -1, -1.0)
    rows = []
    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(len(train))
        losses = []
        lr = 0.0
        for bi in range(n_batches):
            idx = perm[bi * config.batch_size:(bi + 1) * config.batch_size]
            batch = build_batch([train[i] for i in idx], model)
            model.store.zero_grad()
            loss = batch_loss(model, batch, training=True)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalDivergence(f"non-finite loss at epoch {epoch}, batch {bi}", batch_index=bi)
            loss.backward()
            clip_global_norm(model.store, config.clip_norm)
            lr = linear_schedule(step, total, config.lr, config.warmup_ratio)
            adam_step(model.store, lr, config.beta1, config.beta2, config.eps)
            step += 1
            losses.append(value)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "dev_micro_f1": None,
               "dev_macro_f1": None, "lr": float(lr)}
        if dev:
            report, _ = evaluate_examples(model, dev, config.threshold, config.eval_batch_size)
            row["dev_micro_f1"], row["dev_macro_f1"] = report.micro_f1, report.macro_f1
            score = report.micro_f1
        else:
            score = float(epoch)
        if score > best[2]:
            best = (model.store.snapshot(), epoch, score)
        rows.append(row)
        log.info("epoch %d loss %.5f dev micro %s", epoch, row["loss"], row["dev_micro_f1"])
        if on_epoch is not None:
            on_epoch(row)
    best_params, best_epoch, best_score = best
    return FitResult(best_params, best_epoch, best_score if dev else float("nan"), rows)
