"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line and
the terminal summary repeats them."""

import time

import numpy as np
import pytest

from hidec.cli import run
from hidec.codec import build_hierarchy_mask, build_subhierarchy, deserialize, encode_labels, serialize, to_text
from hidec.datagen import SynthSpec, generate_corpus, generate_taxonomy
from hidec.encoder import Vocabulary
from hidec.estimator import HiDECClassifier
from hidec.inference import recursive_decode_batch
from hidec.metrics import evaluate
from hidec.model import HiDECNetwork
from hidec.optim import finite_diff_check
from hidec.taxonomy import Taxonomy
from hidec.training import TrainConfig, batch_loss, build_batch, encode_corpus, evaluate_examples, fit

from conftest import random_labels, random_tree
from test_codec import mask_oracle
from test_decoder import no_leak_gap
from test_inference import RandomScorer
from test_metrics import brute_force, random_corpus

OVERFIT_SPEC = SynthSpec(depth=4, branching=(1, 3), docs=200, avg_labels=1.5, seed=5)
OVERFIT_CONFIG = TrainConfig(lr=3e-3, batch_size=16, epochs=100, min_count=1, seed=0)
GENERAL_SPEC = SynthSpec(depth=4, branching=(1, 3), docs=1000, avg_labels=1.5, seed=5,
                         noise_ratio=0.2, splits=(0.8, 0.1, 0.1))
GENERAL_CONFIG = dict(lr=5e-3, batch_size=16, epochs=60, min_count=1, seed=0)


@pytest.mark.criterion(1)
def test_codec_roundtrip(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    failures = 0
    for _ in range(1000):
        t = random_tree(rng, int(rng.integers(1, 501)))
        labels = random_labels(rng, t, int(rng.integers(1, 31)))
        sh = build_subhierarchy(t, labels)
        failures += deserialize(t, serialize(t, sh)) != sh
    elapsed = time.perf_counter() - start
    criterion(1, "codec roundtrip", failures == 0 and elapsed < 10,
              f"1000 cases, {failures} failures, {elapsed:.2f}s (limit 10s)")


@pytest.mark.criterion(2)
def test_worked_example_string(criterion, sample_tree):
    text = to_text(sample_tree, encode_labels(sample_tree, {sample_tree.id_of(n) for n in "CFI"}), sep=" ")
    expected = "( R ( A ( D ( I ( [END] ) ) ) ) ( B ( F ( [END] ) ) ) ( C ( [END] ) ) )"
    criterion(2, "worked-example sequence", text == expected, text)


@pytest.mark.criterion(3)
def test_mask_oracle(criterion):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(200):
        t = random_tree(rng, int(rng.integers(1, 80)))
        seq = encode_labels(t, random_labels(rng, t, int(rng.integers(1, 8))))
        mismatches += not np.array_equal(build_hierarchy_mask(t, seq), mask_oracle(t, seq.tokens))
    criterion(3, "mask oracle", mismatches == 0, f"200 sequences, {mismatches} mismatching")


@pytest.mark.criterion(4)
def test_single_layer_no_leak(criterion):
    rng = np.random.default_rng(4)
    worst = max(no_leak_gap(rng) for _ in range(100))
    criterion(4, "single-layer no-leak", worst <= 1e-9, f"max |delta| = {worst:.3e} over 100 cases (limit 1e-9)")


@pytest.mark.criterion(5)
def test_gradient_check(criterion):
    spec = SynthSpec(depth=2, branching=(1, 2), docs=3, seed=9)
    t = generate_taxonomy(spec)
    records = generate_corpus(spec, t)["train"]
    vocab = Vocabulary.build([r["text"] for r in records], min_count=1)
    cfg = TrainConfig(embed_dim=8, hidden=8, d_model=8, heads=2, layers=2, ffn_dim=16, precision="float64")
    model = HiDECNetwork(t, len(vocab), cfg.model_config(), seed=1, dtype=np.float64)
    batch = build_batch(encode_corpus(records, t, vocab), model)
    # at the small initial scale the decoder gradients sit near float64 noise
    rng = np.random.default_rng(0)
    for _, p in model.store:
        p.data[...] = rng.normal(0.0, 0.5, p.data.shape)
    loss = lambda store: batch_loss(model, batch, training=False)  # noqa: E731
    report = finite_diff_check(loss, model.store, eps=1e-6, tolerance=1e-5, floor=1e-4)

    # softmax ignores a shift shared by every key, so key biases get no gradient
    model.store.zero_grad()
    loss(model.store).backward()
    key_bias = max(np.abs(p.grad).max() for name, p in model.store if name.endswith(".k.b"))
    name, err = report.worst()
    criterion(5, "gradient check", report.passed and key_bias < 1e-12,
              f"{len(report.errors)} tensors, {model.num_parameters()} entries, worst {name} = {err:.2e} "
              f"(limit 1e-5), key-bias grad {key_bias:.1e}")


@pytest.fixture(scope="module")
def overfit():
    t = generate_taxonomy(OVERFIT_SPEC)
    records = generate_corpus(OVERFIT_SPEC, t)["train"]
    vocab = Vocabulary.build([r["text"] for r in records], min_count=OVERFIT_CONFIG.min_count)
    train = encode_corpus(records, t, vocab)
    model = HiDECNetwork(t, len(vocab), OVERFIT_CONFIG.model_config(), seed=OVERFIT_CONFIG.seed)
    start = time.perf_counter()
    result = fit(model, train, [], OVERFIT_CONFIG)
    model.store.load_arrays(result.best_params)
    report, decoded = evaluate_examples(model, train)
    elapsed = time.perf_counter() - start
    eval_loss = batch_loss(model, build_batch(train, model), training=False).item()
    return dict(t=t, train=train, report=report, decoded=decoded, elapsed=elapsed, eval_loss=eval_loss)


@pytest.mark.criterion(6)
def test_overfit(criterion, overfit):
    f1, elapsed = overfit["report"].micro_f1, overfit["elapsed"]
    criterion(6, "overfit", f1 >= 0.98 and elapsed < 300,
              f"{len(overfit['t'])} labels, train micro-F1 {f1:.4f} after {OVERFIT_CONFIG.epochs} epochs "
              f"in {elapsed:.0f}s (need >= 0.98, < 300s)")


@pytest.mark.criterion(7)
def test_generalization(criterion):
    t = generate_taxonomy(GENERAL_SPEC)
    c = generate_corpus(GENERAL_SPEC, t)
    split = lambda rs: ([r["text"] for r in rs], [r["labels"] for r in rs])  # noqa: E731
    start = time.perf_counter()
    est = HiDECClassifier(t, **GENERAL_CONFIG).fit(*split(c["train"]), eval_set=split(c["dev"]))
    f1 = est.score(*split(c["test"]))
    elapsed = time.perf_counter() - start
    criterion(7, "generalization", f1 >= 0.90 and elapsed < 900,
              f"test micro-F1 {f1:.4f} (best dev {est.history_.best_dev_f1:.4f} at epoch "
              f"{est.history_.best_epoch}) in {elapsed:.0f}s (need >= 0.90, < 900s)")


@pytest.mark.criterion(8)
def test_teacher_forcing_consistency(criterion, overfit):
    exact = sum(ex.labels == r.labels for ex, r in zip(overfit["train"], overfit["decoded"]))
    rate = exact / len(overfit["train"])
    criterion(8, "teacher-forcing consistency", rate >= 0.99,
              f"{exact}/{len(overfit['train'])} exact = {rate:.3f}, eval-mode loss {overfit['eval_loss']:.4f}")


@pytest.mark.criterion(9)
def test_parameter_linearity(criterion):
    d = 64
    counts = []
    for c in (100, 1100):
        parents = [None, 0, 1, 2] + [0] * (c - 4)
        t = Taxonomy([f"v{i}" for i in range(c)], parents)
        counts.append(HiDECNetwork(t, 500, TrainConfig(d_model=d).model_config()).num_parameters())
    diff = counts[1] - counts[0]
    criterion(9, "parameter linearity", diff == 1000 * d, f"{counts[0]} -> {counts[1]}, diff {diff} = 1000*{d}")


@pytest.mark.criterion(10)
def test_decoding_bounds(criterion):
    rng = np.random.default_rng(10)
    t = random_tree(rng, 150)
    while t.max_depth != 6:
        t = random_tree(rng, 150)
    results = recursive_decode_batch(RandomScorer(t), list(range(1000)), t)
    bad = 0
    for r in results:
        ok = r.iterations <= 6 and bool(r.labels)
        ok = ok and all(set(t.ancestors(v)) <= r.state.nodes for v in r.labels)
        bad += not ok
    worst = max(r.iterations for r in results)
    criterion(10, "decoding bounds", bad == 0, f"1000 decodes, max iterations {worst}, {bad} violations")


@pytest.mark.criterion(11)
def test_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(["synth-data", "--out", "data", "--docs", "60", "--splits", "0.7,0.3,0", "--seed", "2"]) == 0
    (tmp_path / "run.cfg").write_text(
        "taxonomy = data/taxonomy.tsv\ntrain = data/train.jsonl\ndev = data/dev.jsonl\n"
        "lr = 3e-3\nepochs = 3\nbatch_size = 8\nembed_dim = 16\nhidden = 16\nd_model = 16\n"
        "ffn_dim = 32\nmin_count = 1\nseed = 7\n")
    for out in ("a", "b"):
        assert run(["train", "--config", "run.cfg", "--out", out]) == 0
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("train_log.csv", "best.ckpt", "config.cfg", "manifest.json")]
    criterion(11, "determinism", all(same), f"log/ckpt/config/manifest identical: {same}")


@pytest.mark.criterion(12)
def test_metrics_oracle(criterion):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(100):
        t = random_tree(rng, int(rng.integers(2, 40)))
        gold, pred = random_corpus(rng, t, int(rng.integers(1, 40)))
        rep = evaluate(gold, pred, t)
        micro, macro, levels = brute_force(gold, pred, t)
        assert rep.per_level.keys() == levels.keys()
        worst = max([worst, abs(rep.micro_f1 - micro), abs(rep.macro_f1 - macro),
                     *(abs(rep.per_level[d] - levels[d]) for d in levels)])
    criterion(12, "metrics oracle", worst <= 1e-12, f"100 corpora, max deviation {worst:.1e}")
