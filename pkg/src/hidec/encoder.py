"""Text cleaning, vocabulary, and document encoders.

An encoder maps a padded batch of token ids ``(B, N)`` to a feature tensor
``(B, N, out_dim)``. Two are provided: a single-layer bidirectional GRU and
a cheap mean-pooled embedding encoder for fast experiments.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from functools import lru_cache
from importlib import resources

import numpy as np

from . import autograd as ag
from .exceptions import EmptyCorpus, UnknownToken

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

_NON_ALNUM = re.compile(r"[\W_]+", re.UNICODE)


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset:
    text = resources.files("hidec").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords(path) -> frozenset:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip())


def clean(text: str, stopwords=None) -> list[str]:
    """NFC-normalize, lowercase, turn non-alphanumerics into spaces, split,
    and drop stopwords."""
    if stopwords is None:
        stopwords = default_stopwords()
    text = unicodedata.normalize("NFC", text).lower()
    return [w for w in _NON_ALNUM.sub(" ", text).split() if w not in stopwords]


class Vocabulary:
    def __init__(self, tokens, min_count=2):
        self.itos = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.min_count = min_count

    @classmethod
    def build(cls, texts, min_count=2, stopwords=None):
        """Build from raw training texts; ids ordered by descending count,
        ties broken lexicographically."""
        texts = list(texts)
        if not texts:
            raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
        if stopwords is None:
            stopwords = default_stopwords()
        counts = Counter()
        for text in texts:
            counts.update(clean(text, stopwords))
        kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        return cls(kept, min_count)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def lookup(self, words) -> list[int]:
        return [self.stoi.get(w, UNK) for w in words]

    def to_dict(self):
        return {"min_count": self.min_count, "tokens": self.itos[2:]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tokens"], d.get("min_count", 2))


def tokenize(text: str, vocab: Vocabulary, stopwords=None, max_len=256) -> list[int]:
    ids = vocab.lookup(clean(text, stopwords))
    if max_len:
        ids = ids[:max_len]
    return ids or [UNK]


def pad_batch(docs, pad=PAD):
    """Right-pad token-id lists into ``(B, N)`` ids and a ``(B, N)`` bool mask."""
    n = max(len(d) for d in docs)
    ids = np.full((len(docs), n), pad, dtype=np.int64)
    mask = np.zeros((len(docs), n), dtype=bool)
    for b, d in enumerate(docs):
        ids[b, : len(d)] = d
        mask[b, : len(d)] = True
    return ids, mask


def _check_ids(ids, vocab_size):
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise UnknownToken(f"token id outside vocabulary of size {vocab_size}")


class BiGRUEncoder:
    """Single-layer bidirectional GRU over word embeddings.

    Gate layout in the stacked weight matrices is (reset, update, candidate):

        r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
        z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h

    Padded steps hold the previous state, so a right-padded row produces the
    same states at its real positions as the unpadded sequence.
    """

    kind = "bigru"

    def __init__(self, vocab_size, embed_dim=64, hidden=64, prefix="encoder"):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.prefix = prefix

    @property
    def out_dim(self):
        return 2 * self.hidden

    def init_params(self, store, rng):
        e, h = self.embed_dim, self.hidden
        store.add(f"{self.prefix}.word_embedding", rng.normal(0.0, e ** -0.5, size=(self.vocab_size, e)))
        bound = h ** -0.5
        for d in ("fwd", "bwd"):
            store.add(f"{self.prefix}.{d}.w_ih", rng.uniform(-bound, bound, size=(e, 3 * h)))
            store.add(f"{self.prefix}.{d}.w_hh", rng.uniform(-bound, bound, size=(h, 3 * h)))
            store.add(f"{self.prefix}.{d}.b_ih", rng.uniform(-bound, bound, size=(3 * h,)))
            store.add(f"{self.prefix}.{d}.b_hh", rng.uniform(-bound, bound, size=(3 * h,)))

    def num_parameters(self):
        e, h = self.embed_dim, self.hidden
        return self.vocab_size * e + 2 * (3 * h * (e + h) + 6 * h)

    def _direction(self, store, gi, mask, d, reverse):
        h_dim = self.hidden
        w_hh = store[f"{self.prefix}.{d}.w_hh"]
        b_hh = store[f"{self.prefix}.{d}.b_hh"]
        batch, n = mask.shape
        h = ag.Tensor(np.zeros((batch, h_dim), dtype=gi.dtype))
        steps = range(n - 1, -1, -1) if reverse else range(n)
        outs = [None] * n
        for t in steps:
            x_t = gi[:, t, :]
            h_t = h @ w_hh + b_hh
            r = ag.sigmoid(x_t[:, :h_dim] + h_t[:, :h_dim])
            z = ag.sigmoid(x_t[:, h_dim:2 * h_dim] + h_t[:, h_dim:2 * h_dim])
            cand = ag.tanh(x_t[:, 2 * h_dim:] + r * h_t[:, 2 * h_dim:])
            h_new = cand + z * (h - cand)
            m = mask[:, t]
            if m.all():
                h = h_new
            else:
                keep = ag.Tensor(m[:, None].astype(gi.dtype))
                h = h + keep * (h_new - h)
            outs[t] = h
        return ag.stack(outs, axis=1)

    def __call__(self, store, ids, mask, training=False, rng=None):
        ids = np.asarray(ids)
        _check_ids(ids, self.vocab_size)
        x = ag.embedding(store[f"{self.prefix}.word_embedding"], ids)
        halves = []
        for d, reverse in (("fwd", False), ("bwd", True)):
            gi = x @ store[f"{self.prefix}.{d}.w_ih"] + store[f"{self.prefix}.{d}.b_ih"]
            halves.append(self._direction(store, gi, np.asarray(mask, dtype=bool), d, reverse))
        return ag.concat(halves, axis=-1)

    def config(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, "embed_dim": self.embed_dim, "hidden": self.hidden}


class MeanPoolEncoder:
    """Each row is ``[embedding(w_n), mean of the document's embeddings]``."""

    kind = "meanpool"

    def __init__(self, vocab_size, embed_dim=64, hidden=None, prefix="encoder"):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.prefix = prefix

    @property
    def out_dim(self):
        return 2 * self.embed_dim

    def init_params(self, store, rng):
        e = self.embed_dim
        store.add(f"{self.prefix}.word_embedding", rng.normal(0.0, e ** -0.5, size=(self.vocab_size, e)))

    def num_parameters(self):
        return self.vocab_size * self.embed_dim

    def __call__(self, store, ids, mask, training=False, rng=None):
        ids = np.asarray(ids)
        _check_ids(ids, self.vocab_size)
        mask = np.asarray(mask, dtype=bool)
        x = ag.embedding(store[f"{self.prefix}.word_embedding"], ids)
        w = mask.astype(x.dtype) / np.maximum(mask.sum(axis=1, keepdims=True), 1).astype(x.dtype)
        pooled = (x * ag.Tensor(w[:, :, None])).sum(axis=1, keepdims=True)
        n = ids.shape[1]
        tiled = pooled * ag.Tensor(np.ones((1, n, 1), dtype=x.dtype))
        return ag.concat([x, tiled], axis=-1)

    def config(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, "embed_dim": self.embed_dim, "hidden": None}


ENCODERS = {BiGRUEncoder.kind: BiGRUEncoder, MeanPoolEncoder.kind: MeanPoolEncoder}


def make_encoder(kind, vocab_size, embed_dim, hidden, prefix="encoder"):
    try:
        cls = ENCODERS[kind]
    except KeyError:
        raise ValueError(f"unknown encoder {kind!r}; choose from {sorted(ENCODERS)}") from None
    return cls(vocab_size, embed_dim, hidden, prefix)
