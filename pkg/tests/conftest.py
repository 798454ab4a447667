import numpy as np
import pytest
from hypothesis import strategies as st

from hidec.taxonomy import Taxonomy
from hidec.training import TrainConfig

SAMPLE_TREE_LINES = ["R\tA\tB\tC", "A\tD", "D\tI", "B\tF"]


@pytest.fixture
def sample_tree():
    return Taxonomy.from_lines(SAMPLE_TREE_LINES)


def random_tree(rng, n, max_children=None):
    """Random rooted tree on ``n`` nodes via random parent attachment."""
    parents = [None]
    counts = [0]
    for i in range(1, n):
        while True:
            p = int(rng.integers(0, i))
            if max_children is None or counts[p] < max_children:
                break
        parents.append(p)
        counts[p] += 1
        counts.append(0)
    return Taxonomy([f"n{i}" for i in range(n)], parents)


def random_labels(rng, t, k):
    k = max(1, min(k, len(t)))
    return {int(v) for v in rng.choice(len(t), size=k, replace=False)}


@st.composite
def trees(draw, min_size=1, max_size=40):
    n = draw(st.integers(min_size, max_size))
    parents = [None] + [draw(st.integers(0, i - 1)) for i in range(1, n)]
    return Taxonomy([f"n{i}" for i in range(n)], parents)


@st.composite
def trees_with_labels(draw, min_size=1, max_size=40, max_labels=8):
    t = draw(trees(min_size, max_size))
    labels = draw(st.sets(st.integers(0, len(t) - 1), min_size=1, max_size=max_labels))
    return t, labels


def tiny_config(**overrides):
    base = dict(embed_dim=8, hidden=8, d_model=8, heads=2, layers=2, ffn_dim=16, min_count=1,
                embed_dropout=0.0, attn_dropout=0.0, ffn_dropout=0.0, lr=3e-3, batch_size=8, epochs=2)
    base.update(overrides)
    return TrainConfig(**base)


# -- acceptance summary ---------------------------------------------------------

@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion.

    Usage: ``criterion(n, title, ok, detail)``; asserts ``ok``.
    """
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})
    state = {}

    def record(n, title, ok, detail=""):
        state["n"] = n
        lines[n] = f"criterion {n:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        print(lines[n])
        assert ok, detail

    yield record
    call = getattr(request.node, "rep_call", None)
    if "n" not in state and call is not None and call.failed:
        n = request.node.get_closest_marker("criterion").args[0]
        lines[n] = f"criterion {n:>2} [FAIL] {request.node.name}: raised before measuring"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
