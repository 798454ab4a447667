"""Seeded synthetic taxonomies and keyword corpora.

Every non-root label owns a disjoint set of keywords. A document's text is a
shuffled bag of keywords from its labels and their ancestors, plus optional
noise words. Label sets are antichains (no assigned label is an ancestor of
another), so the gold set is exactly the set of deepest labels whose
keywords appear -- a keyword-lookup oracle recovers it perfectly when there
is no noise.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .encoder import default_stopwords
from .exceptions import InvalidSpec
from .taxonomy import Taxonomy


@dataclass
class SynthSpec:
    depth: int = 4
    branching: tuple = (2, 3)
    keywords_per_label: int = 3
    keywords_per_mention: int = 2
    noise_vocab: int = 200
    noise_ratio: float = 0.0
    docs: int = 200
    avg_labels: float = 1.5
    seed: int = 0
    splits: tuple = (1.0, 0.0, 0.0)

    def validate(self):
        lo, hi = self.branching
        if self.depth < 1:
            raise InvalidSpec("depth must be at least 1")
        if hi < 1 or lo < 0 or lo > hi:
            raise InvalidSpec(f"infeasible branching range {self.branching}")
        if self.keywords_per_label < 1 or not 1 <= self.keywords_per_mention:
            raise InvalidSpec("need at least one keyword per label and per mention")
        if not 0 <= self.noise_ratio < 1:
            raise InvalidSpec("noise_ratio must lie in [0, 1)")
        if self.avg_labels < 1:
            raise InvalidSpec("avg_labels must be at least 1")
        if abs(sum(self.splits) - 1.0) > 1e-9 or min(self.splits) < 0:
            raise InvalidSpec("splits must be non-negative and sum to 1")


def _label_name(depth, index):
    return f"L{depth}_{index:02d}"


def generate_taxonomy(spec: SynthSpec) -> Taxonomy:
    """Random tree of exactly ``spec.depth`` levels below the root.

    Every node above the last level gets between ``lo`` and ``hi`` children;
    the first node of each level gets at least one so the depth is reached.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    lo, hi = spec.branching
    names, parents = ["ROOT"], [None]
    level = [0]
    for d in range(1, spec.depth + 1):
        nxt = []
        for j, v in enumerate(level):
            k = int(rng.integers(lo, hi + 1))
            if j == 0:
                k = max(k, 1)
            for _ in range(k):
                nxt.append(len(names))
                names.append(_label_name(d, len(nxt) - 1))
                parents.append(v)
        level = nxt
    return Taxonomy(names, parents)


def _words(rng, count, forbidden, length=6):
    letters = np.array(list(string.ascii_lowercase))
    out, seen = [], set(forbidden)
    while len(out) < count:
        w = "".join(rng.choice(letters, size=length))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def keyword_table(spec: SynthSpec, t: Taxonomy):
    """Disjoint keyword lists per non-root label, plus the noise vocabulary."""
    rng = np.random.default_rng([spec.seed, 1])
    n_labels = len(t) - 1
    words = _words(rng, n_labels * spec.keywords_per_label + spec.noise_vocab, default_stopwords())
    table = {}
    k = spec.keywords_per_label
    i = 0
    for v in range(len(t)):
        if v == t.root:
            continue
        table[v] = words[i * k:(i + 1) * k]
        i += 1
    return table, words[n_labels * k:]


def sample_label_set(rng, t: Taxonomy, avg_labels: float) -> set:
    """Antichain of non-root labels with size ~ 1 + Poisson(avg - 1)."""
    candidates = [v for v in range(len(t)) if v != t.root]
    if not candidates:
        return {t.root}
    target = 1 + int(rng.poisson(avg_labels - 1))
    chosen: set = set()
    blocked: set = set()
    for v in rng.permutation(candidates):
        if len(chosen) >= target:
            break
        v = int(v)
        if v in blocked:
            continue
        chosen.add(v)
        blocked.add(v)
        blocked.update(t.ancestors(v))
        stack = list(t.children[v])
        while stack:
            c = stack.pop()
            blocked.add(c)
            stack.extend(t.children[c])
    return chosen


def generate_corpus(spec: SynthSpec, t: Taxonomy):
    """Return ``{"train": [...], "dev": [...], "test": [...]}`` of records
    ``{"text": str, "labels": [names]}``."""
    spec.validate()
    table, noise = keyword_table(spec, t)
    rng = np.random.default_rng([spec.seed, 2])
    docs = []
    for _ in range(spec.docs):
        labels = sample_label_set(rng, t, spec.avg_labels)
        mentioned = set()
        for v in labels:
            mentioned.add(v)
            mentioned.update(t.ancestors(v))
        mentioned.discard(t.root)
        words = []
        for v in sorted(mentioned):
            kw = table[v]
            take = min(spec.keywords_per_mention, len(kw))
            words.extend(rng.choice(kw, size=take, replace=False).tolist())
        if spec.noise_ratio > 0 and noise:
            n_noise = int(round(len(words) * spec.noise_ratio / (1 - spec.noise_ratio)))
            words.extend(rng.choice(noise, size=n_noise).tolist())
        rng.shuffle(words)
        docs.append({"text": " ".join(words), "labels": sorted(t.names[v] for v in labels)})

    n_train = int(round(spec.splits[0] * len(docs)))
    n_dev = int(round(spec.splits[1] * len(docs)))
    return {
        "train": docs[:n_train],
        "dev": docs[n_train:n_train + n_dev],
        "test": docs[n_train + n_dev:],
    }


def keyword_oracle(spec: SynthSpec, t: Taxonomy):
    """Bag-of-keywords classifier: deepest labels whose keywords occur."""
    table, _ = keyword_table(spec, t)
    owner = {w: v for v, kws in table.items() for w in kws}

    def predict(text):
        present = {owner[w] for w in text.split() if w in owner}
        return {v for v in present if not any(c in present for c in t.children[v])} or {t.root}

    return predict


def write_dataset(spec: SynthSpec, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = generate_taxonomy(spec)
    (out / "taxonomy.tsv").write_text("\n".join(t.to_lines()) + "\n", encoding="utf-8")
    paths = {"taxonomy": out / "taxonomy.tsv"}
    for split, records in generate_corpus(spec, t).items():
        p = out / f"{split}.jsonl"
        with open(p, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        paths[split] = p
    spec_path = out / "synth_spec.json"
    spec_path.write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["spec"] = spec_path
    return paths
