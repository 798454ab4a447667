"""Recursive hierarchy decoding.

Starting from the root alone, every iteration linearizes the current
predicted graph, runs the decoder once, and expands every frontier label
into the candidates whose probability clears the threshold. After at most
``P`` iterations the assigned labels are the ones that selected END plus the
graph leaves still on the frontier.

The scorer is anything with a ``child_probabilities(contexts, sequences,
queries)`` method (see :class:`hidec.model.HiDECNetwork`), which lets tests
drive decoding with stub models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import linearize
from .taxonomy import END, Taxonomy


@dataclass
class DecodeState:
    nodes: set
    edges: set
    terminated: set
    frontier: list
    iteration: int = 0
    fallback_steps: int = 0

    @classmethod
    def initial(cls, t: Taxonomy):
        return cls({t.root}, set(), set(), [t.root])

    def copy(self):
        return DecodeState(set(self.nodes), set(self.edges), set(self.terminated), list(self.frontier),
                           self.iteration, self.fallback_steps)

    def is_leaf(self, v):
        return not any(p == v for p, _ in self.edges)


@dataclass
class DecodeResult:
    labels: set
    state: DecodeState
    fallback_steps: int = 0
    iterations: int = 0


def state_sequence(t: Taxonomy, state: DecodeState):
    """Terminated labels keep their ([END]) group so later steps see it."""
    return linearize(t, state.nodes, state.terminated)


def apply_probabilities(t: Taxonomy, state: DecodeState, probs, threshold=0.5) -> DecodeState:
    """Expand every frontier label given its candidate probabilities.

    ``probs`` maps frontier label -> array aligned with
    ``t.augmented_children(label)``. When no candidate clears the threshold,
    the argmax is taken (counted in ``fallback_steps``).
    """
    nxt = state.copy()
    nxt.frontier = []
    nxt.iteration = state.iteration + 1
    for v in state.frontier:
        cands = t.augmented_children(v)
        p = np.asarray(probs[v], dtype=float)
        chosen = [c for c, pc in zip(cands, p) if pc >= threshold]
        if not chosen:
            chosen = [cands[int(np.argmax(p))]]
            nxt.fallback_steps += 1
        for c in chosen:
            if c == END:
                nxt.terminated.add(v)
            else:
                nxt.nodes.add(c)
                nxt.edges.add((v, c))
                nxt.frontier.append(c)
    nxt.frontier.sort()
    return nxt


def expand_frontier(scorer, context, t: Taxonomy, state: DecodeState, threshold=0.5) -> DecodeState:
    return expand_frontier_batch(scorer, [context], t, [state], threshold)[0]


def expand_frontier_batch(scorer, contexts, t, states, threshold=0.5):
    seqs = [state_sequence(t, s) for s in states]
    queries = [[seq.position_of(v) for v in s.frontier] for seq, s in zip(seqs, states)]
    scored = scorer.child_probabilities(contexts, seqs, queries)
    return [
        apply_probabilities(t, s, dict(zip(s.frontier, probs)), threshold)
        for s, probs in zip(states, scored)
    ]


def assign_labels(state: DecodeState) -> set:
    """END-terminated labels plus frontier labels that are graph leaves."""
    labels = set(state.terminated)
    labels.update(v for v in state.frontier if state.is_leaf(v))
    return labels


def recursive_decode(scorer, context, t: Taxonomy, threshold=0.5) -> DecodeResult:
    return recursive_decode_batch(scorer, [context], t, threshold)[0]


def recursive_decode_batch(scorer, contexts, t: Taxonomy, threshold=0.5, batch_size=None) -> list:
    """Decode many documents; each keeps an independent state, active ones are
    scored together per iteration."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    states = [DecodeState.initial(t) for _ in contexts]
    for _ in range(t.max_depth):
        active = [i for i, s in enumerate(states) if s.frontier]
        if not active:
            break
        step = batch_size or len(active)
        for start in range(0, len(active), step):
            chunk = active[start:start + step]
            new = expand_frontier_batch(scorer, [contexts[i] for i in chunk], t,
                                        [states[i] for i in chunk], threshold)
            for i, s in zip(chunk, new):
                states[i] = s
    return [DecodeResult(assign_labels(s), s, s.fallback_steps, s.iteration) for s in states]
