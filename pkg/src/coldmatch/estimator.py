"""Scikit-learn flavored facade over the preparation/training/scoring stack.

The estimator consumes raw interaction sequences, meta-trains the matcher,
and exposes prediction as ranking over a registry of candidate items, each
represented by a few support interactions. Heavy lifting stays in the
functional modules; this class only adapts them to the fit/transform/predict
idiom so the model composes with scikit-learn tooling.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import matcher
from .config import Hyperparams
from .data import InteractionSequence, SequencePair, prepare_dataset
from .errors import ConfigError
from .tensor import Tensor
from .trainer import (_support_cache, evaluate, meta_train,
                      pipeline_from_checkpoint)


class ColdStartMatcher(BaseEstimator):
    """Few-shot matcher for items with almost no interaction history.

    fit() builds leakage-safe splits from raw sequences and meta-trains on
    episodic tasks; predict() ranks candidate items for new prefixes using
    K-shot support sets. Candidates default to the held-out cold items
    discovered during fit, but any registry of item -> support prefixes
    can be supplied.

    Parameters mirror Hyperparams plus the preparation knobs.
    """

    def __init__(self, n_train: int = 16, n_eval: int = 128, k_shot: int = 3,
                 t_steps: int = 2, dim: int = 32, learning_rate: float = 1e-3,
                 epochs: int = 30, episodes_per_epoch: int = 100,
                 patience: int = 5, seed: int = 0, variant: str = "full",
                 precision: str = "float32", max_prefix_len: int = 50,
                 cold_fraction: float = 0.2,
                 ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
                 valid_query_limit: int = 150):
        self.n_train = n_train
        self.n_eval = n_eval
        self.k_shot = k_shot
        self.t_steps = t_steps
        self.dim = dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.episodes_per_epoch = episodes_per_epoch
        self.patience = patience
        self.seed = seed
        self.variant = variant
        self.precision = precision
        self.max_prefix_len = max_prefix_len
        self.cold_fraction = cold_fraction
        self.ratios = ratios
        self.valid_query_limit = valid_query_limit

    def _hyper(self) -> Hyperparams:
        return Hyperparams(n_train=self.n_train, n_eval=self.n_eval,
                           k_shot=self.k_shot, t_steps=self.t_steps, dim=self.dim,
                           learning_rate=self.learning_rate, epochs=self.epochs,
                           episodes_per_epoch=self.episodes_per_epoch,
                           patience=self.patience, seed=self.seed,
                           variant=self.variant, precision=self.precision)

    @staticmethod
    def _as_sequences(X) -> list[InteractionSequence]:
        out = []
        for i, x in enumerate(X):
            if isinstance(x, InteractionSequence):
                out.append(x)
            else:
                out.append(InteractionSequence(user_id=f"u{i:05d}",
                                               items=tuple(str(it) for it in x)))
        return out

    def fit(self, X, y=None):
        """Prepare splits from raw sequences and meta-train the matcher.

        X: iterable of InteractionSequence or of plain item-id sequences.
        y is ignored; targets come from the sequences themselves.
        """
        hyper = self._hyper()
        hyper.validate()
        sequences = self._as_sequences(X)
        rng = np.random.default_rng(self.seed)
        self.vocab_, self.splits_ = prepare_dataset(
            sequences, rng, max_len=self.max_prefix_len,
            cold_fraction=self.cold_fraction, ratios=self.ratios)
        result = meta_train(self.splits_, self.vocab_, hyper,
                            valid_query_limit=self.valid_query_limit)
        self.checkpoint_ = result.checkpoint
        self.history_ = result.log
        self.best_valid_score_ = result.checkpoint.best_metric
        self.pipeline_ = pipeline_from_checkpoint(self.checkpoint_, self.vocab_)
        self._default_registry()
        return self

    def _default_registry(self) -> None:
        """Cache support representations for the held-out cold items."""
        rng = np.random.default_rng([0, self.seed])
        items, reps, _ = _support_cache(self.splits_.test, self.pipeline_,
                                        self.k_shot, rng)
        self.candidate_items_ = list(items)
        self._candidate_reps = np.stack([reps[it] for it in items])

    def _check_fitted(self) -> None:
        if not hasattr(self, "pipeline_"):
            raise NotFittedError(
                "this ColdStartMatcher instance is not fitted yet; call fit first")

    def _registry(self, candidates: Mapping[str, Sequence[Sequence[str]]] | None
                  ) -> tuple[list[str], np.ndarray]:
        if candidates is None:
            return self.candidate_items_, self._candidate_reps
        items = sorted(candidates)
        if len(items) < 2:
            raise ConfigError("need at least 2 candidate items to rank")
        reps = []
        for item in items:
            pairs = [SequencePair(user_id=f"s{k}", prefix=tuple(prefix), target=item)
                     for k, prefix in enumerate(candidates[item])]
            if not pairs:
                raise ConfigError(f"candidate {item!r} has no support prefixes")
            reps.append(self.pipeline_.support_repr(pairs).data)
        return items, np.stack(reps)

    def transform(self, X) -> np.ndarray:
        """Encode item-id prefixes into query representations (n, 2*dim)."""
        self._check_fitted()
        rows = [self.pipeline_.query_repr(
            SequencePair(user_id=f"q{i}", prefix=tuple(str(it) for it in x), target=""))
            .data for i, x in enumerate(X)]
        return np.stack(rows)

    def decision_function(self, X, candidates=None) -> np.ndarray:
        """Matching scores (n_queries, n_candidates), higher is better."""
        self._check_fitted()
        items, reps = self._registry(candidates)
        support = Tensor(reps)
        out = np.empty((len(X), len(items)))
        for i, row in enumerate(self.transform(X)):
            z, _ = self.pipeline_.score_query(row, support, labels=items)
            out[i] = z.data
        return out

    def predict(self, X, candidates=None) -> np.ndarray:
        """Best-matching candidate item id for each prefix in X."""
        self._check_fitted()
        items, _ = self._registry(candidates)
        scores = self.decision_function(X, candidates)
        picks = [matcher.rank_candidates(row, items)[0] for row in scores]
        return np.asarray(picks, dtype=object)

    def score(self, X=None, y=None) -> float:
        """Mean HR@10 under the held-out ranking protocol.

        With X and y given, each X[i] is a prefix and y[i] the true next
        item; the truth is ranked against the fitted candidate registry.
        Without arguments, runs the full evaluation on the test split.
        """
        self._check_fitted()
        hyper = self._hyper()
        if X is None:
            report = evaluate(self.splits_.test, self.pipeline_, hyper, seeds=[0])
            return report.metrics["hr@10"]
        scores = self.decision_function(X)
        hits = 0
        for row, truth in zip(scores, y):
            order = matcher.rank_candidates(row, self.candidate_items_)
            hits += 1 if str(truth) in order[:10] else 0
        return hits / len(scores)
