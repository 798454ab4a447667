"""Sub-hierarchy <-> parse-tree token sequence conversion and masking.

A document's sub-hierarchy (its labels plus all their ancestors) is written
depth-first in bracket notation::

    ( R ( A ( D ( I ( [END] ) ) ) ) ( B ( F ( [END] ) ) ) ( C ( [END] ) ) )

Every node contributes ``( label ... )``; every assigned label additionally
carries a ``( [END] )`` group after its child subtrees.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DuplicateLabel,
    EmptyLabelSet,
    InvalidEdge,
    InvalidSubHierarchy,
    ParseError,
    UnknownLabel,
)
from .taxonomy import CLOSE, END, OPEN, Special, Taxonomy

MASKED = -1e9


@dataclass(frozen=True)
class SubHierarchy:
    nodes: frozenset
    edges: frozenset
    assigned: frozenset


@dataclass
class SubHierSequence:
    """Linearized sub-hierarchy.

    ``owner[i]`` is the label whose bracket scope contains position ``i``
    (the label itself for label tokens).
    """

    tokens: list
    levels: list = field(default_factory=list)
    owner: list = field(default_factory=list)

    @property
    def length(self):
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def label_positions(self):
        return [i for i, t in enumerate(self.tokens) if t >= 0]

    def position_of(self, label):
        for i, t in enumerate(self.tokens):
            if t == label:
                return i
        raise UnknownLabel(f"label {label} not in sequence")


def is_special(token) -> bool:
    return token < 0


def build_subhierarchy(t: Taxonomy, labels) -> SubHierarchy:
    labels = [t.check(v) for v in labels]
    if not labels:
        raise EmptyLabelSet("a document needs at least one label")
    nodes = {t.root}
    edges = set()
    for v in labels:
        nodes.add(v)
        while (p := t.parents[v]) >= 0:
            edges.add((p, v))
            if p in nodes:
                break
            nodes.add(p)
            v = p
    # the loop above stops early once it meets a known node, but that node's
    # own chain was already added when it first entered
    return SubHierarchy(frozenset(nodes), frozenset(edges), frozenset(labels))


def validate_subhierarchy(t: Taxonomy, sh: SubHierarchy) -> None:
    if not sh.assigned:
        raise InvalidSubHierarchy("no assigned labels")
    for v in sh.nodes:
        try:
            t.check(v)
        except UnknownLabel as exc:
            raise InvalidSubHierarchy(str(exc)) from None
    if t.root not in sh.nodes:
        raise InvalidSubHierarchy("root missing from nodes")
    if not sh.assigned <= sh.nodes:
        raise InvalidSubHierarchy("assigned labels must be nodes")
    expected_edges = {(t.parents[v], v) for v in sh.nodes if v != t.root}
    if any(t.parents[v] not in sh.nodes for v in sh.nodes if v != t.root):
        raise InvalidSubHierarchy("nodes are not closed under ancestors")
    if set(sh.edges) != expected_edges:
        raise InvalidSubHierarchy("edges do not match taxonomy parent links of the nodes")
    has_child = {p for p, _ in sh.edges}
    for v in sh.nodes:
        if v not in has_child and v not in sh.assigned:
            raise InvalidSubHierarchy(f"leaf {t.names[v]!r} of the sub-hierarchy is not assigned")


def linearize(t: Taxonomy, nodes, assigned) -> SubHierSequence:
    """Emit the bracket sequence for an ancestor-closed node set.

    No leaf-is-assigned check: partially decoded graphs have unterminated
    leaves.
    """
    nodes = set(nodes)
    assigned = set(assigned)
    tokens, levels, owner = [], [], []

    # iterative DFS; frames are (label, next child index, phase)
    def emit_open(v):
        lvl = t.depth[v] + 1
        tokens.extend((OPEN, v))
        levels.extend((lvl, lvl))
        owner.extend((v, v))

    emit_open(t.root)
    stack = [(t.root, 0)]
    while stack:
        v, k = stack.pop()
        kids = t.children[v]
        while k < len(kids) and kids[k] not in nodes:
            k += 1
        if k < len(kids):
            stack.append((v, k + 1))
            emit_open(kids[k])
            stack.append((kids[k], 0))
            continue
        lvl = t.depth[v] + 1
        if v in assigned:
            tokens.extend((OPEN, END, CLOSE))
            levels.extend((lvl + 1, lvl + 1, lvl + 1))
            owner.extend((v, v, v))
        tokens.append(CLOSE)
        levels.append(lvl)
        owner.append(v)
    return SubHierSequence(tokens, levels, owner)


def serialize(t: Taxonomy, sh: SubHierarchy) -> SubHierSequence:
    validate_subhierarchy(t, sh)
    return linearize(t, sh.nodes, sh.assigned)


def encode_labels(t: Taxonomy, labels) -> SubHierSequence:
    return serialize(t, build_subhierarchy(t, labels))


def deserialize(t: Taxonomy, seq) -> SubHierarchy:
    tokens = seq.tokens if isinstance(seq, SubHierSequence) else list(seq)
    nodes, edges, assigned = set(), set(), set()
    # stack of the label (or END marker) owning each open bracket
    stack: list = []
    pending_open = False
    for i, tok in enumerate(tokens):
        if tok == OPEN:
            if pending_open:
                raise ParseError(f"position {i}: '(' must be followed by a label or [END]")
            pending_open = True
        elif tok == CLOSE:
            if pending_open or not stack:
                raise ParseError(f"position {i}: unbalanced ')'")
            stack.pop()
            if not stack and i != len(tokens) - 1:
                raise ParseError("tokens after the closing bracket of the root")
        elif tok == END:
            if not pending_open:
                raise ParseError(f"position {i}: [END] must follow '('")
            if not stack or stack[-1] == END:
                raise ParseError(f"position {i}: [END] outside a label scope")
            if stack[-1] in assigned:
                raise DuplicateLabel(f"label {t.names[stack[-1]]!r} terminated twice")
            assigned.add(stack[-1])
            stack.append(END)
            pending_open = False
        else:
            if not pending_open:
                raise ParseError(f"position {i}: label must follow '('")
            v = int(tok)
            try:
                t.check(v)
            except UnknownLabel:
                raise ParseError(f"position {i}: unknown label id {tok!r}") from None
            if v in nodes:
                raise DuplicateLabel(f"label {t.names[v]!r} appears twice")
            if stack:
                parent = stack[-1]
                if parent == END:
                    raise ParseError(f"position {i}: label nested inside [END] group")
                if t.parents[v] != parent:
                    raise InvalidEdge(f"{t.names[parent]!r} -> {t.names[v]!r} is not a taxonomy edge")
                edges.add((parent, v))
            elif nodes:
                raise ParseError("more than one top-level group")
            elif v != t.root:
                raise InvalidEdge(f"sequence must start at the root, got {t.names[v]!r}")
            nodes.add(v)
            stack.append(v)
            pending_open = False
    if stack or pending_open or not nodes:
        raise ParseError("unbalanced brackets")
    return SubHierarchy(frozenset(nodes), frozenset(edges), frozenset(assigned))


def token_levels(t: Taxonomy, seq) -> list:
    """Per-token level: depth+1 for labels, bracket tokens inherit the level of
    the label they bracket, END sits one level below its owner."""
    tokens = seq.tokens if isinstance(seq, SubHierSequence) else list(seq)
    levels = []
    stack = []
    for i, tok in enumerate(tokens):
        if tok == OPEN:
            nxt = tokens[i + 1]
            if nxt == END:
                levels.append(t.depth[stack[-1]] + 2)
                stack.append(END)
            else:
                levels.append(t.depth[nxt] + 1)
                stack.append(None)
        elif tok == CLOSE:
            top = stack.pop()
            levels.append(t.depth[stack[-1]] + 2 if top == END else t.depth[top] + 1)
        elif tok == END:
            levels.append(t.depth[stack[-2]] + 2)
        else:
            stack[-1] = int(tok)
            levels.append(t.depth[tok] + 1)
    return levels


def _ancestor_table(t: Taxonomy, labels):
    return {v: set(t.ancestors(v)) for v in labels}


def build_hierarchy_mask(t: Taxonomy, seq: SubHierSequence, mode: str = "hierarchy") -> np.ndarray:
    """Additive self-attention mask (0 = visible, ``MASKED`` = hidden).

    ``mode``:
      * ``"hierarchy"`` -- a label query sees itself and its ancestors;
      * ``"literal"``   -- the transposed reading: a label query sees itself
        and its descendants;
      * ``"none"``      -- everything visible.
    Rows and columns of bracket/END tokens are always fully visible.
    """
    tokens = np.asarray([int(x) for x in seq.tokens])
    m = len(tokens)
    mask = np.zeros((m, m))
    if mode == "none":
        return mask
    if mode not in ("hierarchy", "literal"):
        raise ValueError(f"unknown mask mode {mode!r}")
    pos = np.flatnonzero(tokens >= 0)
    labels = tokens[pos]
    # visible[a, b]: label b is label a itself or an ancestor of a
    depth = np.asarray(t.depth)
    visible = labels[:, None] == labels[None, :]
    cur = labels.copy()
    parents = np.asarray(t.parents)
    for _ in range(int(depth[labels].max()) if len(labels) else 0):
        has_parent = cur >= 0
        cur = np.where(has_parent, parents[np.maximum(cur, 0)], -1)
        visible |= (cur[:, None] == labels[None, :]) & (cur[:, None] >= 0)
    if mode == "literal":
        visible = visible.T
    sub = np.where(visible, 0.0, MASKED)
    mask[np.ix_(pos, pos)] = sub
    return mask


# -- textual notation --------------------------------------------------------

def to_text(t: Taxonomy, seq, sep: str = "") -> str:
    tokens = seq.tokens if isinstance(seq, SubHierSequence) else seq
    return sep.join(str(Special(x)) if x < 0 else t.names[x] for x in tokens)


_TEXT_TOKEN = re.compile(r"\(|\)|\[END\]|[^\s()]+")


def from_text(t: Taxonomy, text: str) -> SubHierSequence:
    """Parse bracket notation back into tokens.

    Label names may not contain whitespace or brackets for this to be
    unambiguous.
    """
    tokens = []
    for piece in _TEXT_TOKEN.findall(text):
        if piece == "(":
            tokens.append(OPEN)
        elif piece == ")":
            tokens.append(CLOSE)
        elif piece == "[END]":
            tokens.append(END)
        else:
            try:
                tokens.append(t.id_of(piece))
            except UnknownLabel:
                raise ParseError(f"unknown label name {piece!r}") from None
    return SubHierSequence(tokens, token_levels(t, tokens) if _balanced(tokens) else [], [])


def _balanced(tokens) -> bool:
    depth = 0
    for tok in tokens:
        depth += (tok == OPEN) - (tok == CLOSE)
        if depth < 0:
            return False
    return depth == 0 and bool(tokens)
