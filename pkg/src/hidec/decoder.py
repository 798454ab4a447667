"""Hierarchy decoder: label/level embeddings, attentive layers, child scoring.

Each attentive layer is

    U_hat   = MHA(U, U, U; hierarchy mask)        (masked self-attention)
    U_tilde = MHA(U_hat, H, H; text padding mask)  (text-hierarchy attention)
    U_next  = FFN(U_tilde)

with no residual connections unless ``residual=True``. The token embedding
matrix is shared between the input lookup and the child scoring dot
products.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .codec import MASKED, SubHierSequence, build_hierarchy_mask
from .exceptions import LevelOverflow, NotALabelPosition, ShapeError
from .taxonomy import CLOSE, END, OPEN, Taxonomy


@dataclass
class DecoderConfig:
    d_model: int = 64
    heads: int = 2
    layers: int = 2
    ffn_dim: int = 128
    embed_dropout: float = 0.5
    attn_dropout: float = 0.1
    ffn_dropout: float = 0.1
    residual: bool = False
    layer_norm: bool = False
    level_embedding: bool = True
    mask_mode: str = "hierarchy"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.mask_mode not in ("hierarchy", "literal", "none"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")

    def to_dict(self):
        return asdict(self)


def special_index(token, num_labels):
    """Row of the token embedding table for a sequence token."""
    if token >= 0:
        return int(token)
    return num_labels + {OPEN: 0, CLOSE: 1, END: 2}[token]


@dataclass
class SequenceBatch:
    """Padded decoder inputs for ``B`` sequences of max length ``M``."""

    token_index: np.ndarray  # (B, M) rows of the token table
    levels: np.ndarray  # (B, M), 0 at padding
    self_mask: np.ndarray  # (B, M, M) additive
    valid: np.ndarray  # (B, M) bool
    sequences: list

    @property
    def shape(self):
        return self.token_index.shape


def text_key_mask(mask, dtype=np.float64):
    """(B, N) bool -> (B, 1, 1, N) additive mask hiding padded text rows."""
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, 0.0, MASKED).astype(dtype)[:, None, None, :]


class HierarchyDecoder:
    def __init__(self, taxonomy: Taxonomy, enc_dim: int, config: DecoderConfig | None = None, prefix="decoder"):
        self.taxonomy = taxonomy
        self.enc_dim = enc_dim
        self.config = config or DecoderConfig()
        self.prefix = prefix
        self.num_labels = len(taxonomy)
        # levels: 0 = padding, depth+1 for labels, one more for END under the deepest labels
        self.num_levels = taxonomy.max_depth + 3

    # -- parameters -------------------------------------------------------

    def init_params(self, store, rng):
        cfg, d = self.config, self.config.d_model
        p = self.prefix
        std = d ** -0.5
        store.add(f"{p}.token_embedding", rng.normal(0.0, std, size=(self.num_labels + 3, d)))
        store.add(f"{p}.level_embedding", rng.normal(0.0, std, size=(self.num_levels, d)))

        def linear(name, fan_in, fan_out):
            bound = fan_in ** -0.5
            store.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            store.add(f"{name}.b", np.zeros(fan_out))

        for r in range(cfg.layers):
            lp = f"{p}.layer{r}"
            for proj in ("q", "k", "v", "o"):
                linear(f"{lp}.self.{proj}", d, d)
            linear(f"{lp}.cross.q", d, d)
            linear(f"{lp}.cross.k", self.enc_dim, d)
            linear(f"{lp}.cross.v", self.enc_dim, d)
            linear(f"{lp}.cross.o", d, d)
            linear(f"{lp}.ffn.1", d, cfg.ffn_dim)
            linear(f"{lp}.ffn.2", cfg.ffn_dim, d)
            if cfg.layer_norm:
                for k in range(3):
                    store.add(f"{lp}.norm{k}.gain", np.ones(d))
                    store.add(f"{lp}.norm{k}.bias", np.zeros(d))

    def num_parameters(self):
        """Closed-form parameter count; only the token table depends on C."""
        cfg, d, f, e = self.config, self.config.d_model, self.config.ffn_dim, self.enc_dim
        per_layer = 4 * (d * d + d)  # self-attention
        per_layer += 2 * (d * d + d) + 2 * (e * d + d)  # cross-attention
        per_layer += d * f + f + f * d + d  # FFN
        if cfg.layer_norm:
            per_layer += 6 * d
        return (self.num_labels + 3) * d + self.num_levels * d + cfg.layers * per_layer

    # -- inputs -----------------------------------------------------------

    def prepare(self, sequences) -> SequenceBatch:
        t = self.taxonomy
        m = max(len(s) for s in sequences)
        b = len(sequences)
        tok = np.full((b, m), self.num_labels, dtype=np.int64)  # pad with OPEN row
        lev = np.zeros((b, m), dtype=np.int64)
        mask = np.full((b, m, m), MASKED)
        valid = np.zeros((b, m), dtype=bool)
        for i, seq in enumerate(sequences):
            n = len(seq)
            tok[i, :n] = [special_index(x, self.num_labels) for x in seq.tokens]
            lev[i, :n] = seq.levels
            mask[i, :n, :n] = build_hierarchy_mask(t, seq, self.config.mask_mode)
            valid[i, :n] = True
        if lev.max() >= self.num_levels:
            raise LevelOverflow(f"level {lev.max()} exceeds level table size {self.num_levels}")
        return SequenceBatch(tok, lev, mask, valid, list(sequences))

    # -- forward ----------------------------------------------------------

    def embed_sequence(self, store, batch: SequenceBatch, training=False, rng=None):
        """U0 = token_embedding[token] + level_embedding[level], then dropout."""
        p = self.prefix
        u = ag.embedding(store[f"{p}.token_embedding"], batch.token_index)
        if self.config.level_embedding:
            u = u + ag.embedding(store[f"{p}.level_embedding"], batch.levels)
        return ag.dropout(u, self.config.embed_dropout, rng, training)

    def _mha(self, store, name, query, key_value, mask, training, rng, capture=None):
        cfg = self.config
        h, d = cfg.heads, cfg.d_model
        dk = d // h

        def proj(x, which):
            return x @ store[f"{name}.{which}.w"] + store[f"{name}.{which}.b"]

        def split(x):
            b, n, _ = x.shape
            return ag.transpose(ag.reshape(x, (b, n, h, dk)), (0, 2, 1, 3))

        q = split(proj(query, "q"))
        k = split(proj(key_value, "k"))
        v = split(proj(key_value, "v"))
        scores = ag.scale(q @ ag.swap_last(k), 1.0 / np.sqrt(dk))
        attn = ag.masked_softmax(scores, mask)
        if capture is not None:
            capture.append(attn.data.copy())
        ctx = attn @ v  # (B, H, M, dk)
        b, _, m, _ = ctx.shape
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, m, d))
        out = proj(ctx, "o")
        return ag.dropout(out, cfg.attn_dropout, rng, training)

    def _norm(self, store, name, x):
        if not self.config.layer_norm:
            return x
        return ag.layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])

    def attentive_layer(self, store, r, u, h, self_mask, text_mask, training=False, rng=None, capture=None):
        cfg = self.config
        lp = f"{self.prefix}.layer{r}"
        self_cap = [] if capture is not None else None
        cross_cap = [] if capture is not None else None

        sm = ag.Tensor(self_mask[:, None, :, :].astype(u.dtype, copy=False))
        u_hat = self._mha(store, f"{lp}.self", u, u, sm, training, rng, self_cap)
        if cfg.residual:
            u_hat = u_hat + u
        u_hat = self._norm(store, f"{lp}.norm0", u_hat)

        tm = None if text_mask is None else ag.Tensor(np.asarray(text_mask, dtype=u.dtype))
        u_tilde = self._mha(store, f"{lp}.cross", u_hat, h, tm, training, rng, cross_cap)
        if cfg.residual:
            u_tilde = u_tilde + u_hat
        u_tilde = self._norm(store, f"{lp}.norm1", u_tilde)

        hidden = ag.relu(u_tilde @ store[f"{lp}.ffn.1.w"] + store[f"{lp}.ffn.1.b"])
        out = hidden @ store[f"{lp}.ffn.2.w"] + store[f"{lp}.ffn.2.b"]
        out = ag.dropout(out, cfg.ffn_dropout, rng, training)
        if cfg.residual:
            out = out + u_tilde
        out = self._norm(store, f"{lp}.norm2", out)
        if capture is not None:
            capture.append({"self": self_cap[0], "cross": cross_cap[0]})
        return out

    def forward(self, store, batch: SequenceBatch, h, text_mask, training=False, rng=None, capture=None):
        """Return U (B, M, d): the embedded sequence pushed through all layers."""
        if h.ndim != 3 or h.shape[-1] != self.enc_dim:
            raise ShapeError(f"text features must be (B, N, {self.enc_dim}), got {h.shape}")
        if h.shape[0] != batch.shape[0]:
            raise ShapeError("text batch and sequence batch sizes differ")
        u = self.embed_sequence(store, batch, training, rng)
        for r in range(self.config.layers):
            u = self.attentive_layer(store, r, u, h, batch.self_mask, text_mask, training, rng, capture)
        return u

    # -- scoring ----------------------------------------------------------

    def candidate_index(self, candidates):
        return np.asarray([special_index(c, self.num_labels) for c in candidates], dtype=np.int64)

    def pair_logits(self, store, u, rows, cols, candidates):
        """Dot products ``U[rows, cols] . W[candidates]`` for flat pair lists."""
        b, m, d = u.shape
        flat = ag.reshape(u, (b * m, d))
        picked = ag.getitem(flat, np.asarray(rows) * m + np.asarray(cols))
        w = ag.embedding(store[f"{self.prefix}.token_embedding"], np.asarray(candidates, dtype=np.int64))
        return ag.tsum(picked * w, axis=-1)

    def score_children(self, store, u, seq, i, candidates=None):
        """Sigmoid scores of ``candidates`` against the decoder output at
        position ``i`` (default candidates: augmented children of that label).

        ``u`` is the (M, d) output for one sequence.
        """
        token = seq.tokens[i]
        if token < 0:
            raise NotALabelPosition(f"position {i} holds {token!s}, not a label")
        if candidates is None:
            candidates = self.taxonomy.augmented_children(int(token))
        u = u.data if isinstance(u, ag.Tensor) else np.asarray(u)
        w = store[f"{self.prefix}.token_embedding"].data[self.candidate_index(candidates)]
        return _sigmoid(w @ u[i])


def _sigmoid(x):
    x = np.asarray(x)
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def single_batch(decoder: HierarchyDecoder, seq: SubHierSequence) -> SequenceBatch:
    return decoder.prepare([seq])
