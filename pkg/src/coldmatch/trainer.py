"""Meta-training loop, ablation variants, and ranking evaluation.

Training samples N-way K-shot episodes from the meta-train split, scores
every query against every candidate in one batched pass, applies the full
binary cross-entropy over the N x N probability matrix, and takes one
Adam step per episode. Model selection tracks HR@10 on the meta-valid
split; evaluation ranks each meta-test query's ground truth against
sampled negative items, each represented by its own K-shot support set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import encoder as enc
from . import matcher
from . import tensor as T
from .checkpoint import Checkpoint
from .config import Hyperparams, VARIANTS
from .data import DatasetSplits, Episode, MetaSplit, SequencePair, Vocabulary, sample_episode
from .errors import ConfigError, NumericError, SamplingError
from .metrics import hr_at, mrr, ndcg_at
from .optim import AdamState, adam_step
from .params import ModelParams, init_params
from .tensor import GradTape, Tensor

LOG_CLAMP = 1e-12
EVAL_CUTOFFS = (5, 10, 20)


class Pipeline:
    """Variant-aware mapping from episodes to representations and scores.

    full     - attention encoder + pair lift + t-step matching
    variant1 - pair encoder replaced by mean item embeddings (zero-lifted)
    variant2 - matching steps forced to zero
    variant3 - both substitutions
    """

    def __init__(self, params: ModelParams, vocab: Vocabulary, hyper: Hyperparams):
        if hyper.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {hyper.variant!r}")
        self.params = params
        self.vocab = vocab
        self.variant = hyper.variant
        self.use_pair_encoder = hyper.variant in ("full", "variant2")
        self.t_steps = 0 if hyper.variant in ("variant2", "variant3") else hyper.t_steps

    def _mean_embedding(self, ids: np.ndarray) -> Tensor:
        rows = T.gather_rows(self.params.item_emb, ids)
        lifted = T.tmean(rows, axis=0)
        pad = Tensor(np.zeros(self.params.dim, dtype=self.params.dtype))
        return T.concat([lifted, pad])

    def support_repr(self, pairs: Sequence[SequencePair]) -> Tensor:
        """Set representation (2d) of one candidate's support pairs."""
        if self.use_pair_encoder:
            return enc.encode_support_set(pairs, self.vocab, self.params)
        reprs = [self._mean_embedding(self.vocab.encode(p.prefix + (p.target,)))
                 for p in pairs]
        return enc.aggregate(reprs)

    def query_repr(self, pair: SequencePair) -> Tensor:
        """Query representation (2d) from the prefix alone."""
        if self.use_pair_encoder:
            return enc.encode_query(pair, self.vocab, self.params)
        return self._mean_embedding(self.vocab.encode(pair.prefix))

    def encode_episode(self, episode: Episode) -> tuple[Tensor, Tensor]:
        """(support matrix (N, 2d), query matrix (N, 2d)) for an episode."""
        supports = T.stack([self.support_repr(pairs) for pairs in episode.support_sets])
        queries = T.stack([self.query_repr(pair) for pair in episode.query_pairs])
        return supports, queries

    def probability_matrix(self, episode: Episode) -> Tensor:
        """Entry (i, j): probability that query i matches candidate j."""
        supports, queries = self.encode_episode(episode)
        return matcher.score_matrix(queries, supports, self.t_steps, self.params)

    def score_query(self, query_vec, support_rows, labels=None):
        """(z, y) of one encoded query against candidate support rows."""
        return matcher.score_all(query_vec, support_rows, self.t_steps, self.params,
                                 labels=labels)


def episode_one_hot(episode: Episode, dtype=np.float64) -> np.ndarray:
    """Ground-truth indicator matrix: row i marks query i's true candidate."""
    n = episode.n_way
    one_hot = np.zeros((n, n), dtype=dtype)
    for i, query in enumerate(episode.query_pairs):
        one_hot[i, episode.candidate_items.index(query.target)] = 1.0
    return one_hot


def cross_entropy(probs: Tensor, one_hot: np.ndarray) -> Tensor:
    """-sum_ij [ y log p + (1 - y) log(1 - p) ], logs clamped away from 0/1."""
    if probs.data.shape != one_hot.shape:
        raise NumericError(
            f"probability matrix shape {probs.data.shape} != targets {one_hot.shape}")
    clamped = T.clip(probs, LOG_CLAMP, 1.0 - LOG_CLAMP)
    pos = T.mul(one_hot, T.log(clamped))
    neg = T.mul(1.0 - one_hot, T.log(T.sub(1.0, clamped)))
    return T.neg(T.tsum(T.add(pos, neg)))


def task_loss(episode: Episode, pipeline: Pipeline) -> Tensor:
    """Full binary cross-entropy over the episode's probability matrix."""
    probs = pipeline.probability_matrix(episode)
    loss = cross_entropy(probs, episode_one_hot(episode, dtype=pipeline.params.dtype))
    if not np.isfinite(loss.data):
        raise NumericError(
            f"non-finite loss on episode with candidates {episode.candidate_items}")
    return loss


@dataclass
class EvalReport:
    """Mean and per-seed ranking metrics."""

    metrics: dict[str, float]
    per_seed: dict[str, list[float]]
    seeds: list[int]
    n_queries: list[int]

    def to_text(self) -> str:
        lines = [f"{name}\t{self.metrics[name]:.6f}" for name in sorted(self.metrics)]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "metrics": {k: round(v, 10) for k, v in sorted(self.metrics.items())},
            "per_seed": {k: [round(v, 10) for v in vals]
                         for k, vals in sorted(self.per_seed.items())},
            "seeds": self.seeds,
            "n_queries": self.n_queries,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass
class TrainLogRow:
    epoch: int
    mean_loss: float
    valid_hr10: float
    best_so_far: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[TrainLogRow] = field(default_factory=list)


def _model_scorer(pipeline: Pipeline) -> Callable:
    def score(query_vec, support_rows, rng, labels):
        z, _ = pipeline.score_query(query_vec, support_rows, labels=labels)
        return z.data
    return score


def random_scorer(query_vec, support_rows, rng, labels):
    """Uniform random scores; the calibration baseline."""
    return rng.uniform(size=len(support_rows.data if isinstance(support_rows, Tensor)
                                else support_rows))


def oracle_scorer(query_vec, support_rows, rng, labels):
    """Always ranks the ground truth (index 0 by construction) first."""
    n = len(support_rows.data if isinstance(support_rows, Tensor) else support_rows)
    scores = np.zeros(n)
    scores[0] = 1.0
    return scores


def _support_cache(split: MetaSplit, pipeline: Pipeline, k_shot: int,
                   rng: np.random.Generator) -> tuple[list[str], dict[str, np.ndarray],
                                                      dict[str, tuple[int, ...]]]:
    """Per-item support representation and query indices for one seed.

    Items lacking K+1 pairs are skipped (cannot provide both a support
    set and a query). Support pairs are drawn once per item and seed; the
    remaining pool entries become that item's queries.
    """
    items: list[str] = []
    reps: dict[str, np.ndarray] = {}
    query_idx: dict[str, tuple[int, ...]] = {}
    for item in split.items:
        pool = split.pools[item]
        if len(pool) < k_shot + 1:
            continue
        picks = rng.choice(len(pool), size=k_shot, replace=False)
        support = [pool[i] for i in picks]
        reps[item] = pipeline.support_repr(support).data
        query_idx[item] = tuple(i for i in range(len(pool)) if i not in set(picks))
        items.append(item)
    return items, reps, query_idx


def evaluate(split: MetaSplit, pipeline: Pipeline, hyper: Hyperparams,
             seeds: Sequence[int], scorer: Callable | None = None,
             query_limit: int = 0) -> EvalReport:
    """Rank every query's ground truth against sampled negatives.

    For each seed: every eligible item gets one fixed K-shot support set;
    each remaining pair of that item becomes a query whose candidate list
    is its ground truth plus n_eval - 1 negatives drawn from the other
    eligible items (with replacement only if the pool is too small).
    ``query_limit`` > 0 caps the per-seed query count deterministically.
    """
    if scorer is None:
        scorer = _model_scorer(pipeline)
    metric_names = [f"hr@{p}" for p in EVAL_CUTOFFS] + [f"ndcg@{p}" for p in EVAL_CUTOFFS] + ["mrr"]
    per_seed: dict[str, list[float]] = {name: [] for name in metric_names}
    n_queries: list[int] = []

    for seed in seeds:
        rng = np.random.default_rng([seed, hyper.seed])
        items, reps, query_idx = _support_cache(split, pipeline, hyper.k_shot, rng)
        if len(items) < 2:
            raise SamplingError(
                f"split '{split.name}': need >= 2 items with {hyper.k_shot + 1}+ pairs "
                f"to evaluate, found {len(items)}")
        queries = [(item, idx) for item in items for idx in query_idx[item]]
        if query_limit and len(queries) > query_limit:
            keep = rng.choice(len(queries), size=query_limit, replace=False)
            queries = [queries[i] for i in sorted(keep)]

        totals = {name: 0.0 for name in metric_names}
        for item, idx in queries:
            pair = split.pools[item][idx]
            negatives = _draw_negatives(items, item, hyper.n_eval - 1, rng)
            candidates = [item] + negatives
            support_rows = Tensor(np.stack([reps[c] for c in candidates]))
            query_vec = pipeline.query_repr(pair)
            scores = scorer(query_vec, support_rows, rng, candidates)
            rank = _pessimistic_rank(np.asarray(scores, dtype=float))
            for p in EVAL_CUTOFFS:
                totals[f"hr@{p}"] += hr_at(rank, p)
                totals[f"ndcg@{p}"] += ndcg_at(rank, p)
            totals["mrr"] += mrr(rank)

        n_queries.append(len(queries))
        for name in metric_names:
            per_seed[name].append(totals[name] / len(queries))

    means = {name: float(np.mean(vals)) for name, vals in per_seed.items()}
    return EvalReport(metrics=means, per_seed=per_seed,
                      seeds=list(seeds), n_queries=n_queries)


def _draw_negatives(items: Sequence[str], ground_truth: str, count: int,
                    rng: np.random.Generator) -> list[str]:
    pool = [it for it in items if it != ground_truth]
    replace = len(pool) < count
    picks = rng.choice(len(pool), size=count, replace=replace)
    return [pool[i] for i in picks]


def _pessimistic_rank(scores: np.ndarray) -> int:
    """Rank of candidate 0 with ties counted against it."""
    gt = scores[0]
    better = int(np.sum(scores > gt))
    tied = int(np.sum(scores == gt)) - 1
    return 1 + better + tied


def _grads_for(params: ModelParams, tape: GradTape, loss: Tensor) -> dict[str, np.ndarray]:
    named = params.as_dict()
    grads = tape.gradient(loss, list(named.values()))
    return dict(zip(named.keys(), grads))


def _copy_adam(adam: AdamState) -> AdamState:
    return AdamState(learning_rate=adam.learning_rate, beta1=adam.beta1,
                     beta2=adam.beta2, eps=adam.eps, step=adam.step,
                     m={k: v.copy() for k, v in adam.m.items()},
                     v={k: v.copy() for k, v in adam.v.items()})


def meta_train(splits: DatasetSplits, vocab: Vocabulary, hyper: Hyperparams,
               item_emb: np.ndarray | None = None,
               valid_query_limit: int = 150,
               log_fn: Callable[[str], None] | None = None) -> TrainResult:
    """Episodic training with per-episode Adam updates and early stopping.

    Keeps the parameters of the epoch with the best meta-valid HR@10 and
    stops after ``patience`` epochs without improvement. Deterministic in
    (splits, vocab, hyper): all randomness flows from hyper.seed.
    """
    hyper.validate()
    dtype = np.float32 if hyper.precision == "float32" else np.float64
    seq = np.random.SeedSequence(hyper.seed)
    init_ss, episode_ss, valid_ss = seq.spawn(3)
    init_rng = np.random.default_rng(init_ss)
    episode_rng = np.random.default_rng(episode_ss)
    valid_seed = int(valid_ss.generate_state(1)[0])

    params = init_params(len(vocab), hyper.dim, init_rng, dtype=dtype, item_emb=item_emb)
    pipeline = Pipeline(params, vocab, hyper)
    named = params.as_dict()
    adam = AdamState.for_params(named, learning_rate=hyper.learning_rate)

    # fail fast if the split cannot furnish episodes at this N and K
    eligible = [it for it in splits.train.items
                if len(splits.train.pools[it]) >= hyper.k_shot + 1]
    if len(eligible) < hyper.n_train:
        raise ConfigError(
            f"meta-train split supports only {len(eligible)} candidates with "
            f">= {hyper.k_shot + 1} pairs; n_train={hyper.n_train} is infeasible")

    def snapshot() -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in named.items()}

    best_tensors = snapshot()
    best_metric: float | None = None
    best_adam = _copy_adam(adam)
    log_rows: list[TrainLogRow] = []
    stale = 0

    for epoch in range(hyper.epochs):
        losses = []
        for _ in range(hyper.episodes_per_epoch):
            episode = sample_episode(splits.train, hyper.n_train, hyper.k_shot, episode_rng)
            with GradTape() as tape:
                loss = task_loss(episode, pipeline)
            grads = _grads_for(params, tape, loss)
            adam_step(named, grads, adam)
            losses.append(float(loss.data))

        valid = evaluate(splits.valid, pipeline, hyper,
                         seeds=[valid_seed, valid_seed + 1],
                         query_limit=valid_query_limit)
        hr10 = valid.metrics["hr@10"]
        improved = best_metric is None or hr10 > best_metric
        if improved:
            best_metric = hr10
            best_tensors = snapshot()
            best_adam = _copy_adam(adam)
            stale = 0
        else:
            stale += 1
        row = TrainLogRow(epoch=epoch, mean_loss=float(np.mean(losses)),
                          valid_hr10=hr10, best_so_far=best_metric)
        log_rows.append(row)
        if log_fn:
            log_fn(f"epoch {epoch}\tloss {row.mean_loss:.4f}\tvalid_hr10 {hr10:.4f}"
                   f"\tbest {best_metric:.4f}")
        if stale > hyper.patience:
            break

    ckpt = Checkpoint(hyper=hyper, tensors=best_tensors, adam=best_adam,
                      rng_state=episode_rng.bit_generator.state,
                      best_metric=best_metric)
    return TrainResult(checkpoint=ckpt, log=log_rows)


def pipeline_from_checkpoint(ckpt: Checkpoint, vocab: Vocabulary,
                             variant: str | None = None) -> Pipeline:
    """Rebuild a scoring pipeline from saved tensors."""
    hyper = ckpt.hyper if variant is None else replace(ckpt.hyper, variant=variant)
    if len(vocab) != ckpt.tensors["item_emb"].shape[0]:
        raise ConfigError(
            f"checkpoint was trained with {ckpt.tensors['item_emb'].shape[0]} items "
            f"but the dataset has {len(vocab)}")
    params = ModelParams(**{name: T.parameter(arr.copy())
                            for name, arr in ckpt.tensors.items()})
    params.validate()
    return Pipeline(params, vocab, hyper)
