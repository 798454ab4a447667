import numpy as np
import pytest
from hypothesis import given

from hidec.exceptions import CyclicTaxonomy, MultipleParents, OrphanLabel, UnknownLabel
from hidec.taxonomy import END, Taxonomy, load_taxonomy

from conftest import trees


def test_sample_tree_file(tmp_path):
    p = tmp_path / "sample_tree.tsv"
    p.write_text("Root\tA\tB\tC\nA\tD\nD\tI\nB\tF\n", encoding="utf-8")
    t = load_taxonomy(p)
    assert len(t) == 7
    assert t.names[t.root] == "Root"
    assert t.depth[t.id_of("I")] == 3
    assert t.max_depth == 3


def test_single_node():
    t = Taxonomy.from_lines(["R"])
    assert len(t) == 1 and t.max_depth == 0
    assert t.augmented_children(t.root) == [END]


def test_comments_and_blank_lines_ignored():
    t = Taxonomy.from_lines(["# header", "", "R\tA", "  ", "A\tB"])
    assert list(t.names) == ["R", "A", "B"]


def test_multiple_parents():
    with pytest.raises(MultipleParents):
        Taxonomy.from_lines(["R\tA", "B\tA"])


def test_orphan():
    with pytest.raises(OrphanLabel):
        Taxonomy.from_lines(["R\tA", "X\tY"])


def test_cycle():
    with pytest.raises(CyclicTaxonomy):
        Taxonomy.from_lines(["R\tA", "B\tC", "C\tB"])


def test_ancestors_and_children(sample_tree):
    n = sample_tree.id_of
    assert sample_tree.ancestors(n("I")) == [n("R"), n("A"), n("D")]
    assert sample_tree.ancestors(sample_tree.root) == []
    assert sample_tree.augmented_children(n("R")) == [n("A"), n("B"), n("C"), END]
    assert sample_tree.augmented_children(n("I")) == [END]


def test_unknown_label(sample_tree):
    with pytest.raises(UnknownLabel):
        sample_tree.ancestors(99)
    with pytest.raises(UnknownLabel):
        sample_tree.id_of("nope")


def test_numpy_ids_accepted(sample_tree):
    assert sample_tree.ancestors(np.int64(sample_tree.id_of("D"))) == [0, 1]


@given(trees())
def test_ancestors_match_parent_chasing(t):
    for v in range(len(t)):
        chain, p = [], t.parents[v]
        while p != -1 and p is not None:
            chain.append(p)
            p = t.parents[p]
        assert t.ancestors(v) == chain[::-1]
        assert t.depth[v] == len(chain)
        assert len(t.augmented_children(v)) == len(t.children[v]) + 1


def _named_edges(t):
    return {(t.names[t.parents[v]], t.names[v]) for v in range(len(t)) if v != t.root}


@given(trees())
def test_lines_roundtrip(t):
    # ids are reassigned in first-appearance order, so compare by name
    again = Taxonomy.from_lines(t.to_lines())
    assert _named_edges(again) == _named_edges(t)
    assert again.names[again.root] == t.names[t.root]
    assert Taxonomy.from_lines(again.to_lines()).content_hash() == again.content_hash()


def test_hash_changes_with_structure(sample_tree):
    edited = Taxonomy.from_lines(["R\tA\tB\tC", "A\tD", "D\tI", "C\tF"])
    assert edited.content_hash() != sample_tree.content_hash()
