"""The full network: text encoder + hierarchy decoder over one parameter store."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .decoder import DecoderConfig, HierarchyDecoder, text_key_mask
from .encoder import make_encoder, pad_batch
from .optim import ParameterStore
from .taxonomy import Taxonomy


@dataclass
class ModelConfig:
    encoder: str = "bigru"
    embed_dim: int = 64
    hidden: int = 64
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self):
        return {"encoder": self.encoder, "embed_dim": self.embed_dim, "hidden": self.hidden,
                "decoder": self.decoder.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["encoder"], d["embed_dim"], d["hidden"], DecoderConfig(**d["decoder"]))


class HiDECNetwork:
    def __init__(self, taxonomy: Taxonomy, vocab_size: int, config: ModelConfig | None = None,
                 seed=0, dtype=np.float32):
        self.taxonomy = taxonomy
        self.vocab_size = vocab_size
        self.config = config or ModelConfig()
        self.encoder = make_encoder(self.config.encoder, vocab_size, self.config.embed_dim, self.config.hidden)
        self.decoder = HierarchyDecoder(taxonomy, self.encoder.out_dim, self.config.decoder)
        self.store = ParameterStore(dtype)
        init_rng = np.random.default_rng(seed)
        self.encoder.init_params(self.store, init_rng)
        self.decoder.init_params(self.store, init_rng)
        # separate stream so dropout draws never disturb initialization
        self.seed = seed
        self.rng = np.random.default_rng([seed, 1])

    @property
    def dtype(self):
        return self.store.dtype

    def num_parameters(self):
        return self.store.num_parameters()

    def astype(self, dtype):
        """Copy with parameters cast to ``dtype`` (e.g. float64 for checks)."""
        other = object.__new__(HiDECNetwork)
        other.__dict__.update(self.__dict__)
        other.store = self.store.astype(dtype)
        other.rng = np.random.default_rng([self.seed, 1])
        return other

    # -- forward pieces ---------------------------------------------------

    def encode(self, ids, mask, training=False):
        return self.encoder(self.store, ids, mask, training, self.rng)

    def decode(self, batch, h, text_mask, training=False, capture=None):
        tm = text_key_mask(text_mask, self.dtype)
        return self.decoder.forward(self.store, batch, h, tm, training, self.rng, capture)

    def forward(self, docs, sequences, training=False, capture=None):
        """Encode token-id lists and decode the matching sequences.

        Returns (U, sequence batch).
        """
        ids, mask = pad_batch(docs)
        h = self.encode(ids, mask, training)
        batch = self.decoder.prepare(sequences)
        return self.decode(batch, h, mask, training, capture), batch

    # -- inference interface ----------------------------------------------

    def encode_documents(self, docs):
        """Text features per document (list of (N_b, dim) arrays), no grad."""
        with ag.no_grad():
            ids, mask = pad_batch(docs)
            h = self.encode(ids, mask, training=False).data
        return [h[b, : len(d)] for b, d in enumerate(docs)]

    def child_probabilities(self, contexts, sequences, queries):
        """For each sequence, score the augmented children of the labels at the
        query positions. Returns one list of probability arrays per sequence."""
        with ag.no_grad():
            n = max(len(c) for c in contexts)
            h = np.zeros((len(contexts), n, contexts[0].shape[1]), dtype=self.dtype)
            mask = np.zeros((len(contexts), n), dtype=bool)
            for b, c in enumerate(contexts):
                h[b, : len(c)] = c
                mask[b, : len(c)] = True
            batch = self.decoder.prepare(sequences)
            u = self.decode(batch, ag.Tensor(h), mask).data
        out = []
        for b, (seq, positions) in enumerate(zip(sequences, queries)):
            out.append([self.decoder.score_children(self.store, u[b], seq, i) for i in positions])
        return out
