import json
from pathlib import Path

import numpy as np
import pytest

from hidec import autograd as ag
from hidec.codec import SubHierSequence, encode_labels
from hidec.decoder import DecoderConfig, HierarchyDecoder, special_index, text_key_mask
from hidec.exceptions import LevelOverflow, NotALabelPosition
from hidec.optim import ParameterStore
from hidec.taxonomy import END, Taxonomy

from conftest import random_labels, random_tree

GOLDEN = Path(__file__).parent / "data" / "sample_tree_decoder_golden.json"


def make_decoder(t, d=4, layers=2, heads=2, enc_dim=6, seed=0, **kw):
    cfg = DecoderConfig(d_model=d, heads=heads, layers=layers, ffn_dim=2 * d, embed_dropout=0.0,
                        attn_dropout=0.0, ffn_dropout=0.0, **kw)
    dec = HierarchyDecoder(t, enc_dim, cfg)
    store = ParameterStore(np.float64)
    dec.init_params(store, np.random.default_rng(seed))
    return dec, store


def text_features(b, n, enc_dim, seed=1):
    return ag.Tensor(np.random.default_rng(seed).normal(size=(b, n, enc_dim)))


def softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def reference_forward(dec, store, seq, h):
    """Straight numpy decoder for one sequence, looping over heads."""
    P = {k: store[k].data for k in store.names()}
    cfg, d = dec.config, dec.config.d_model
    dk = d // cfg.heads
    rows = [special_index(x, dec.num_labels) for x in seq.tokens]
    u = P["decoder.token_embedding"][rows] + P["decoder.level_embedding"][seq.levels]
    allowed = np.zeros((len(seq), len(seq)), dtype=bool)
    for i, a in enumerate(seq.tokens):
        for j, b in enumerate(seq.tokens):
            allowed[i, j] = a < 0 or b < 0 or a == b or b in dec.taxonomy.ancestors(a)

    def mha(name, x, kv, keep):
        q = x @ P[f"{name}.q.w"] + P[f"{name}.q.b"]
        k = kv @ P[f"{name}.k.w"] + P[f"{name}.k.b"]
        v = kv @ P[f"{name}.v.w"] + P[f"{name}.v.b"]
        heads = []
        for hd in range(cfg.heads):
            s = slice(hd * dk, (hd + 1) * dk)
            scores = q[:, s] @ k[:, s].T / np.sqrt(dk)
            scores = np.where(keep, scores, -np.inf)
            heads.append(softmax(scores) @ v[:, s])
        return np.concatenate(heads, axis=1) @ P[f"{name}.o.w"] + P[f"{name}.o.b"]

    for r in range(cfg.layers):
        lp = f"decoder.layer{r}"
        u_hat = mha(f"{lp}.self", u, u, allowed)
        u_tilde = mha(f"{lp}.cross", u_hat, h, np.ones((len(seq), len(h)), dtype=bool))
        u = np.maximum(u_tilde @ P[f"{lp}.ffn.1.w"] + P[f"{lp}.ffn.1.b"], 0) @ P[f"{lp}.ffn.2.w"] + P[f"{lp}.ffn.2.b"]
    return u


def sample_tree_case(sample_tree):
    seq = encode_labels(sample_tree, {sample_tree.id_of(n) for n in "CFI"})
    dec, store = make_decoder(sample_tree, d=4, enc_dim=4)
    h = text_features(1, 5, 4)
    return dec, store, seq, h


def test_forward_matches_reference(sample_tree):
    dec, store, seq, h = sample_tree_case(sample_tree)
    batch = dec.prepare([seq])
    u = dec.forward(store, batch, h, None).data[0]
    np.testing.assert_allclose(u, reference_forward(dec, store, seq, h.data[0]), atol=1e-12)


def test_sample_tree_golden(sample_tree):
    dec, store, seq, h = sample_tree_case(sample_tree)
    batch = dec.prepare([seq])
    u0 = dec.embed_sequence(store, batch).data[0]
    u = dec.forward(store, batch, h, None).data[0]
    golden = json.loads(GOLDEN.read_text())
    assert u0.shape == (30, 4)
    np.testing.assert_allclose(u0, np.array(golden["embedding"]), rtol=0, atol=1e-12)
    np.testing.assert_allclose(u, np.array(golden["forward"]), rtol=0, atol=1e-10)


def test_embedding_is_token_plus_level(sample_tree):
    dec, store, seq, _ = sample_tree_case(sample_tree)
    u0 = dec.embed_sequence(store, dec.prepare([seq])).data[0]
    tok, lev = store["decoder.token_embedding"].data, store["decoder.level_embedding"].data
    for i, (x, level) in enumerate(zip(seq.tokens, seq.levels)):
        np.testing.assert_array_equal(u0[i], tok[special_index(x, len(sample_tree))] + lev[level])


def test_level_embedding_can_be_disabled(sample_tree):
    dec, store = make_decoder(sample_tree, level_embedding=False)
    seq = encode_labels(sample_tree, {sample_tree.id_of("C")})
    u0 = dec.embed_sequence(store, dec.prepare([seq])).data[0]
    rows = [special_index(x, len(sample_tree)) for x in seq.tokens]
    np.testing.assert_array_equal(u0, store["decoder.token_embedding"].data[rows])


def no_leak_gap(rng):
    t = random_tree(rng, int(rng.integers(6, 40)))
    seq = encode_labels(t, random_labels(rng, t, int(rng.integers(1, 6))))
    dec, store = make_decoder(t, d=8, layers=1, heads=2, seed=int(rng.integers(1 << 30)))
    h = text_features(1, 4, 6, seed=int(rng.integers(1 << 30)))
    batch = dec.prepare([seq])
    base = dec.forward(store, batch, h, None).data[0]
    labels = [x for x in seq.tokens if x >= 0]
    v = labels[int(rng.integers(len(labels)))]
    store["decoder.token_embedding"].data[v] += rng.normal(scale=3.0, size=8)
    moved = dec.forward(store, batch, h, None).data[0]
    gaps = [np.abs(moved[i] - base[i]).max() for i, q in enumerate(seq.tokens)
            if q >= 0 and q != v and v not in t.ancestors(q)]
    return max(gaps, default=0.0)


def test_single_layer_has_no_leak():
    rng = np.random.default_rng(11)
    assert max(no_leak_gap(rng) for _ in range(25)) <= 1e-9


def test_descendants_do_leak_with_literal_mask(sample_tree):
    # the transposed mask lets R read its descendants; perturbing I must move R
    dec, store = make_decoder(sample_tree, layers=1, mask_mode="literal")
    seq = encode_labels(sample_tree, {sample_tree.id_of("I")})
    h = text_features(1, 3, 6)
    batch = dec.prepare([seq])
    base = dec.forward(store, batch, h, None).data[0]
    store["decoder.token_embedding"].data[sample_tree.id_of("I")] += 1.0
    moved = dec.forward(store, batch, h, None).data[0]
    r = seq.position_of(sample_tree.root)
    assert np.abs(moved[r] - base[r]).max() > 1e-6


def flat_taxonomy(c, depth=1):
    # a chain of `depth` labels under the root, the rest flat under the root
    parents = [None] + list(range(depth))
    parents += [0] * (c - len(parents))
    return Taxonomy([f"v{i}" for i in range(c)], parents)


def test_parameter_count_is_linear_in_labels():
    d = 16
    counts = []
    for c in (100, 1100):
        dec, store = make_decoder(flat_taxonomy(c, depth=3), d=d)
        assert store.num_parameters() == dec.num_parameters()
        counts.append(store.num_parameters())
    assert counts[1] - counts[0] == 1000 * d


def test_padding_receives_no_gradient(sample_tree):
    dec, store = make_decoder(sample_tree)
    short = encode_labels(sample_tree, {sample_tree.id_of("C")})
    long = encode_labels(sample_tree, {sample_tree.id_of(n) for n in "CFI"})
    batch = dec.prepare([short, long])
    h = text_features(2, 5, 6)
    tm = text_key_mask(np.array([[1, 1, 0, 0, 0], [1, 1, 1, 1, 1]], dtype=bool))
    u0 = dec.embed_sequence(store, batch)
    u0.retain_grad()
    u = u0
    for r in range(dec.config.layers):
        u = dec.attentive_layer(store, r, u, h, batch.self_mask, tm)
    rows, cols, cands = [], [], []
    for b, seq in enumerate([short, long]):
        for i in seq.label_positions():
            for c in sample_tree.augmented_children(seq.tokens[i]):
                rows.append(b)
                cols.append(i)
                cands.append(special_index(c, len(sample_tree)))
    ag.tsum(ag.sigmoid(dec.pair_logits(store, u, rows, cols, cands))).backward()
    assert not u0.grad[0, len(short):].any()
    assert np.abs(u0.grad[0, : len(short)]).sum() > 0
    assert not store["decoder.level_embedding"].grad[0].any()


def test_padded_text_is_ignored(sample_tree):
    dec, store = make_decoder(sample_tree)
    seq = encode_labels(sample_tree, {sample_tree.id_of("F")})
    h = text_features(1, 3, 6)
    alone = dec.forward(store, dec.prepare([seq]), h, text_key_mask(np.ones((1, 3), dtype=bool))).data
    padded_h = ag.Tensor(np.concatenate([h.data, np.full((1, 2, 6), 7.0)], axis=1))
    tm = text_key_mask(np.array([[1, 1, 1, 0, 0]], dtype=bool))
    padded = dec.forward(store, dec.prepare([seq]), padded_h, tm).data
    np.testing.assert_allclose(padded, alone, atol=1e-12)


def test_score_children(sample_tree):
    dec, store, seq, h = sample_tree_case(sample_tree)
    u = dec.forward(store, dec.prepare([seq]), h, None).data[0]
    i = seq.position_of(sample_tree.root)
    probs = dec.score_children(store, u, seq, i)
    w = store["decoder.token_embedding"].data
    rows = [special_index(c, len(sample_tree)) for c in sample_tree.augmented_children(sample_tree.root)]
    np.testing.assert_allclose(probs, 1 / (1 + np.exp(-(w[rows] @ u[i]))), rtol=1e-12)
    assert sample_tree.augmented_children(sample_tree.root)[-1] == END
    with pytest.raises(NotALabelPosition):
        dec.score_children(store, u, seq, 0)


def test_level_overflow(sample_tree):
    dec, _ = make_decoder(sample_tree)
    bad = SubHierSequence([sample_tree.root], [dec.num_levels], [sample_tree.root])
    with pytest.raises(LevelOverflow):
        dec.prepare([bad])


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        DecoderConfig(d_model=10, heads=3)
