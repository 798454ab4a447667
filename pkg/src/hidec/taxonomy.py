"""Label taxonomy: a rooted tree over dense integer label ids."""

from __future__ import annotations

import hashlib
import operator
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import CyclicTaxonomy, MultipleParents, OrphanLabel, TaxonomyError, UnknownLabel


class Special(IntEnum):
    """Non-label tokens of a linearized sub-hierarchy.

    Label tokens are the non-negative label ids, so any negative token is
    special.
    """

    OPEN = -1
    CLOSE = -2
    END = -3

    def __str__(self):
        return _SPECIAL_TEXT[self]


_SPECIAL_TEXT = {Special.OPEN: "(", Special.CLOSE: ")", Special.END: "[END]"}

OPEN, CLOSE, END = Special.OPEN, Special.CLOSE, Special.END


class Taxonomy:
    """Immutable label tree.

    Labels are identified by dense ids ``0..C-1``. ``children`` lists are in
    ascending id order, which is the canonical order used everywhere a
    deterministic traversal is needed.
    """

    def __init__(self, names: Sequence[str], parents: Sequence[int | None]):
        if len(names) != len(parents):
            raise TaxonomyError("names and parents must have equal length")
        if not names:
            raise TaxonomyError("taxonomy must contain at least one label")
        self.names = tuple(names)
        self.parents = tuple(-1 if p is None else int(p) for p in parents)
        self._validate_names()

        n = len(self.names)
        roots = [v for v, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise TaxonomyError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        for v, p in enumerate(self.parents):
            if p >= n:
                raise OrphanLabel(f"label {self.names[v]!r} has unknown parent id {p}")

        children: list[list[int]] = [[] for _ in range(n)]
        for v, p in enumerate(self.parents):
            if p >= 0:
                children[p].append(v)
        self.children = tuple(tuple(c) for c in children)

        depth = [-1] * n
        depth[self.root] = 0
        stack = [self.root]
        seen = 1
        while stack:
            v = stack.pop()
            for c in self.children[v]:
                depth[c] = depth[v] + 1
                seen += 1
                stack.append(c)
        if seen != n:
            raise CyclicTaxonomy("some labels are unreachable from the root (cycle)")
        self.depth = tuple(depth)
        self.max_depth = max(depth)
        self._index = {name: i for i, name in enumerate(self.names)}

    def _validate_names(self):
        seen = set()
        for name in self.names:
            if not name or not name.strip():
                raise TaxonomyError("label names must be non-empty")
            if name in seen:
                raise TaxonomyError(f"duplicate label name {name!r}")
            seen.add(name)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Taxonomy":
        """Parse ``parent<TAB>child1<TAB>child2...`` records."""
        ids: dict[str, int] = {}
        names: list[str] = []
        parent_of: dict[int, int] = {}
        mentioned_as_parent: list[int] = []
        root = None

        def intern(name):
            if name not in ids:
                ids[name] = len(names)
                names.append(name)
            return ids[name]

        for lineno, raw in enumerate(lines, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = [f.strip() for f in line.split("\t")]
            fields = [f for f in fields if f]
            parent = intern(fields[0])
            if root is None:
                root = parent
            mentioned_as_parent.append(parent)
            for child_name in fields[1:]:
                child = intern(child_name)
                if child in parent_of:
                    raise MultipleParents(
                        f"line {lineno}: {child_name!r} already has parent "
                        f"{names[parent_of[child]]!r}"
                    )
                parent_of[child] = parent

        if root is None:
            raise TaxonomyError("taxonomy file has no records")

        # cycle check before orphan check: a cycle through the root also
        # leaves the root with a parent
        for start in parent_of:
            seen = {start}
            v = start
            while v in parent_of:
                v = parent_of[v]
                if v in seen:
                    raise CyclicTaxonomy(f"cycle through label {names[v]!r}")
                seen.add(v)
        for v in mentioned_as_parent:
            if v != root and v not in parent_of:
                raise OrphanLabel(f"label {names[v]!r} is never defined as a child")
        if root in parent_of:
            raise OrphanLabel(f"root {names[root]!r} has a parent")

        parents = [parent_of.get(v) for v in range(len(names))]
        return cls(names, parents)

    @classmethod
    def from_parent_map(cls, parents: Sequence[int | None], names: Sequence[str] | None = None):
        if names is None:
            names = [f"v{i}" for i in range(len(parents))]
        return cls(names, parents)

    def to_lines(self) -> list[str]:
        """Serialize back to the tab-separated file format (breadth-first)."""
        if not self.children[self.root]:
            return [self.names[self.root]]
        out = []
        queue = [self.root]
        while queue:
            v = queue.pop(0)
            if self.children[v]:
                out.append("\t".join([self.names[v], *(self.names[c] for c in self.children[v])]))
                queue.extend(self.children[v])
        return out

    def content_hash(self) -> str:
        """SHA-256 over names and parent links, in id order."""
        h = hashlib.sha256()
        for name, parent in zip(self.names, self.parents):
            h.update(name.encode("utf-8"))
            h.update(b"\t")
            h.update(str(parent).encode("ascii"))
            h.update(b"\n")
        return h.hexdigest()

    # -- queries ----------------------------------------------------------

    def __len__(self):
        return len(self.names)

    def __repr__(self):
        return f"Taxonomy(C={len(self)}, P={self.max_depth}, root={self.names[self.root]!r})"

    def __eq__(self, other):
        return isinstance(other, Taxonomy) and (self.names, self.parents) == (other.names, other.parents)

    def __hash__(self):
        return hash((self.names, self.parents))

    def check(self, v: int) -> int:
        try:
            i = operator.index(v)
        except TypeError:
            raise UnknownLabel(f"unknown label id {v!r}") from None
        if isinstance(v, bool) or not 0 <= i < len(self.names):
            raise UnknownLabel(f"unknown label id {v!r}")
        return i

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLabel(f"unknown label name {name!r}") from None

    def parent(self, v: int) -> int | None:
        p = self.parents[self.check(v)]
        return None if p < 0 else p

    def is_leaf(self, v: int) -> bool:
        return not self.children[self.check(v)]

    def ancestors(self, v: int) -> list[int]:
        """Labels on the path from the root down to ``parent(v)``."""
        v = self.check(v)
        chain = []
        p = self.parents[v]
        while p >= 0:
            chain.append(p)
            p = self.parents[p]
        chain.reverse()
        return chain

    def augmented_children(self, v: int) -> list[int]:
        """Children in canonical order followed by the END candidate."""
        return [*self.children[self.check(v)], END]

    def labels_at_depth(self, depth: int) -> list[int]:
        return [v for v, d in enumerate(self.depth) if d == depth]


def load_taxonomy(path) -> Taxonomy:
    with open(Path(path), encoding="utf-8") as fh:
        return Taxonomy.from_lines(fh)
