"""scikit-learn style wrapper around vocabulary building, training and decoding."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from .encoder import Vocabulary, tokenize
from .exceptions import MissingLabels
from .metrics import evaluate
from .model import HiDECNetwork
from .taxonomy import Taxonomy
from .training import Example, TrainConfig, fit, predict_examples


def check_documents(X) -> list[str]:
    """Coerce a 1-d collection of texts to a list of str."""
    if isinstance(X, str):
        raise TypeError("expected a collection of documents, got a single string")
    docs = list(X)
    if not docs:
        raise ValueError("no documents")
    for i, d in enumerate(docs):
        if d is None:
            docs[i] = ""
        elif not isinstance(d, str):
            raise TypeError(f"document {i} is {type(d).__name__}, not str")
    return docs


def check_label_sets(y, taxonomy: Taxonomy, n_docs=None) -> list[frozenset]:
    """Each entry is an iterable of label names or ids; returns id sets."""
    out = []
    for i, labels in enumerate(y):
        if isinstance(labels, (str, int, np.integer)):
            labels = [labels]
        ids = frozenset(taxonomy.id_of(v) if isinstance(v, str) else taxonomy.check(v) for v in labels)
        if not ids:
            raise MissingLabels(f"document {i} has no labels")
        out.append(ids)
    if n_docs is not None and len(out) != n_docs:
        raise ValueError(f"{n_docs} documents but {len(out)} label sets")
    return out


class HiDECClassifier(BaseEstimator, ClassifierMixin):
    """Hierarchical multi-label classifier over a fixed taxonomy.

    ``fit(X, y)`` takes raw texts and label-name lists; ``predict`` returns
    sorted label-name lists. Every hyper-parameter mirrors a TrainConfig key.
    """

    def __init__(self, taxonomy=None, *, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, batch_size=32,
                 epochs=20, warmup_ratio=0.1, clip_norm=1.0, embed_dropout=0.5, attn_dropout=0.1,
                 ffn_dropout=0.1, threshold=0.5, seed=0, precision="float32", encoder="bigru",
                 embed_dim=64, hidden=64, d_model=64, heads=2, layers=2, ffn_dim=128, residual=False,
                 layer_norm=False, level_embedding=True, mask_mode="hierarchy", min_count=2, max_len=256,
                 eval_batch_size=64):
        self.taxonomy = taxonomy
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.warmup_ratio = warmup_ratio
        self.clip_norm = clip_norm
        self.embed_dropout = embed_dropout
        self.attn_dropout = attn_dropout
        self.ffn_dropout = ffn_dropout
        self.threshold = threshold
        self.seed = seed
        self.precision = precision
        self.encoder = encoder
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        self.ffn_dim = ffn_dim
        self.residual = residual
        self.layer_norm = layer_norm
        self.level_embedding = level_embedding
        self.mask_mode = mask_mode
        self.min_count = min_count
        self.max_len = max_len
        self.eval_batch_size = eval_batch_size

    @classmethod
    def from_config(cls, taxonomy, config: TrainConfig):
        return cls(taxonomy, **{f.name: getattr(config, f.name) for f in fields(TrainConfig)})

    @classmethod
    def from_bundle(cls, bundle: ModelBundle):
        est = cls.from_config(bundle.taxonomy, bundle.config)
        est.config_ = bundle.config
        est.taxonomy_ = bundle.taxonomy
        est.vocabulary_ = bundle.vocabulary
        est.model_ = bundle.model
        est.history_ = None
        return est

    @classmethod
    def load(cls, path, taxonomy=None):
        return cls.from_bundle(load_checkpoint(path, taxonomy))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def _encode(self, docs, label_sets=None):
        ids = [tokenize(d, self.vocabulary_, max_len=self.max_len) for d in docs]
        if label_sets is None:
            return [Example(x, frozenset()) for x in ids]
        return [Example(x, labels) for x, labels in zip(ids, label_sets)]

    def fit(self, X, y, eval_set=None, on_epoch=None):
        """Train and keep the parameters of the best dev epoch.

        ``eval_set`` is an optional ``(X_dev, y_dev)`` pair used for model
        selection; without it the last epoch is kept.
        """
        if not isinstance(self.taxonomy, Taxonomy):
            raise TypeError("taxonomy must be a Taxonomy instance")
        docs = check_documents(X)
        labels = check_label_sets(y, self.taxonomy, len(docs))
        config = self.train_config()
        self.config_ = config
        self.taxonomy_ = self.taxonomy
        self.vocabulary_ = Vocabulary.build(docs, min_count=config.min_count)
        train = self._encode(docs, labels)
        dev = []
        if eval_set is not None:
            dev_docs = check_documents(eval_set[0])
            dev = self._encode(dev_docs, check_label_sets(eval_set[1], self.taxonomy, len(dev_docs)))
        self.model_ = HiDECNetwork(self.taxonomy, len(self.vocabulary_), config.model_config(),
                                   seed=config.seed, dtype=config.dtype)
        self.history_ = fit(self.model_, train, dev, config, on_epoch)
        self.model_.store.load_arrays(self.history_.best_params)
        return self

    def decode(self, X):
        """Full decode results (labels, fallback counts, iterations)."""
        check_is_fitted(self, "model_")
        examples = self._encode(check_documents(X))
        return predict_examples(self.model_, examples, self.threshold, self.eval_batch_size)

    def predict(self, X):
        results = self.decode(X)
        names = self.taxonomy_.names
        return [sorted(names[v] for v in r.labels) for r in results]

    def score(self, X, y, sample_weight=None):
        """Micro-F1 with ancestor closure."""
        check_is_fitted(self, "model_")
        gold = check_label_sets(y, self.taxonomy_)
        pred = [r.labels for r in self.decode(X)]
        return evaluate(gold, pred, self.taxonomy_).micro_f1

    def save(self, path, params=None):
        check_is_fitted(self, "model_")
        return save_checkpoint(path, self.model_, self.vocabulary_, self.config_, params)
