"""Micro/macro F1 and per-level F1 for hierarchical label sets.

The root label is never scored. Macro-F1 averages per-label F1 over labels
that occur in the gold or the predicted sets at least once.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field

from .exceptions import AlignmentError
from .taxonomy import Taxonomy

MACRO_CONVENTION = "macro-F1 averages labels appearing in gold or predictions; root excluded"


def f1_score(tp, fp, fn):
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def close_ancestors(t: Taxonomy, labels) -> set:
    closed = set()
    for v in labels:
        closed.add(v)
        closed.update(t.ancestors(v))
    return closed


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    tp: Counter = field(default_factory=Counter)
    fp: Counter = field(default_factory=Counter)
    fn: Counter = field(default_factory=Counter)
    per_label: dict = field(default_factory=dict)
    per_level: dict = field(default_factory=dict)
    level_counts: dict = field(default_factory=dict)
    n_docs: int = 0
    ancestor_closure: bool = True

    def to_dict(self, taxonomy: Taxonomy | None = None):
        name = (lambda v: taxonomy.names[v]) if taxonomy is not None else str
        return {
            "convention": MACRO_CONVENTION,
            "ancestor_closure": self.ancestor_closure,
            "n_docs": self.n_docs,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "per_level_micro_f1": {str(k): v for k, v in sorted(self.per_level.items())},
            "per_label": {
                name(v): {"precision": p, "recall": r, "f1": f, "tp": self.tp[v], "fp": self.fp[v], "fn": self.fn[v]}
                for v, (p, r, f) in sorted(self.per_label.items())
            },
        }

    def write_json(self, path, taxonomy=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(taxonomy), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_level_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "tp", "fp", "fn", "micro_f1"])
            for level in sorted(self.per_level):
                tp, fp, fn = self.level_counts[level]
                w.writerow([level, tp, fp, fn, repr(self.per_level[level])])


def evaluate(gold, pred, taxonomy: Taxonomy, ancestor_closure=True) -> EvalReport:
    gold, pred = list(gold), list(pred)
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sets vs {len(pred)} predicted sets")
    t = taxonomy
    tp, fp, fn = Counter(), Counter(), Counter()
    for g, p in zip(gold, pred):
        g = {t.check(v) for v in g}
        p = {t.check(v) for v in p}
        if ancestor_closure:
            g, p = close_ancestors(t, g), close_ancestors(t, p)
        g.discard(t.root)
        p.discard(t.root)
        for v in g & p:
            tp[v] += 1
        for v in p - g:
            fp[v] += 1
        for v in g - p:
            fn[v] += 1

    labels = sorted(set(tp) | set(fp) | set(fn))
    per_label = {}
    for v in labels:
        prec = tp[v] / (tp[v] + fp[v]) if tp[v] + fp[v] else 0.0
        rec = tp[v] / (tp[v] + fn[v]) if tp[v] + fn[v] else 0.0
        per_label[v] = (prec, rec, f1_score(tp[v], fp[v], fn[v]))

    TP, FP, FN = sum(tp.values()), sum(fp.values()), sum(fn.values())
    levels = {}
    for v in labels:
        d = t.depth[v]
        a, b, c = levels.get(d, (0, 0, 0))
        levels[d] = (a + tp[v], b + fp[v], c + fn[v])
    return EvalReport(
        micro_f1=f1_score(TP, FP, FN),
        macro_f1=sum(f for _, _, f in per_label.values()) / len(per_label) if per_label else 0.0,
        micro_precision=TP / (TP + FP) if TP + FP else 0.0,
        micro_recall=TP / (TP + FN) if TP + FN else 0.0,
        tp=tp, fp=fp, fn=fn,
        per_label=per_label,
        per_level={d: f1_score(*c) for d, c in levels.items()},
        level_counts=levels,
        n_docs=len(gold),
        ancestor_closure=ancestor_closure,
    )
