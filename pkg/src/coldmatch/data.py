"""Interaction-log ingestion, episode sampling, and synthetic data.

The pipeline is: load raw per-user event logs, expand every sequence into
(prefix, next-click) pairs, mark the least-interacted items as cold, split
the cold items into disjoint meta-train / meta-valid / meta-test label
sets, and sample N-way K-shot episodes from the per-item pair pools. A
clustered synthetic generator stands in for full-scale interaction dumps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    ParseError,
    PartitionError,
    SamplingError,
    SplitSizeError,
    VocabularyError,
)

DEFAULT_MAX_PREFIX_LEN = 50
DEFAULT_COLD_FRACTION = 0.20
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class InteractionSequence:
    """One user's chronologically ordered item ids."""

    user_id: str
    items: tuple[str, ...]
    timestamps: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SequencePair:
    """A prefix of interactions plus its ground-truth next click.

    ``target`` is the known next click for support pairs; for query pairs
    the field still stores the ground truth, but the model-facing encoders
    never read it (only ranking/metrics do).
    """

    user_id: str
    prefix: tuple[str, ...]
    target: str

    @property
    def key(self) -> tuple:
        """Identity used for dedup and support/query disjointness."""
        return (self.prefix, self.target)


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task: N support sets plus N query pairs."""

    candidate_items: tuple[str, ...]
    support_sets: tuple[tuple[SequencePair, ...], ...]
    query_pairs: tuple[SequencePair, ...]

    @property
    def n_way(self) -> int:
        return len(self.candidate_items)

    def validate(self) -> None:
        n = len(self.candidate_items)
        if len(set(self.candidate_items)) != n:
            raise SamplingError("episode candidates are not distinct")
        if len(self.support_sets) != n or len(self.query_pairs) != n:
            raise SamplingError("episode arity mismatch")
        support_keys = set()
        for item, sset in zip(self.candidate_items, self.support_sets):
            for pair in sset:
                if pair.target != item:
                    raise SamplingError(f"support pair targets {pair.target!r}, expected {item!r}")
                support_keys.add(pair.key)
        for q in self.query_pairs:
            if q.target not in self.candidate_items:
                raise SamplingError(f"query ground truth {q.target!r} not among candidates")
            if q.key in support_keys:
                raise SamplingError("query pair also appears as a support pair")


@dataclass(frozen=True)
class MetaSplit:
    """One label split: its candidate items and their pair pools."""

    name: str
    items: tuple[str, ...]
    pools: Mapping[str, tuple[SequencePair, ...]]

    def pool(self, item: str) -> tuple[SequencePair, ...]:
        return self.pools[item]


@dataclass(frozen=True)
class DatasetSplits:
    """Pre-train pool plus the three disjoint cold-item splits."""

    pretrain_pairs: tuple[SequencePair, ...]
    train: MetaSplit
    valid: MetaSplit
    test: MetaSplit

    def split(self, name: str) -> MetaSplit:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}; expected train, valid, or test") from None

    @property
    def cold_items(self) -> tuple[str, ...]:
        return tuple(sorted(self.train.items + self.valid.items + self.test.items))


class Vocabulary:
    """Sorted item-id table mapping raw string ids to dense indices."""

    def __init__(self, ids: Iterable[str]):
        self._items: tuple[str, ...] = tuple(sorted(set(ids)))
        if not self._items:
            raise EmptyDatasetError("empty-dataset: no items to build a vocabulary from")
        self._index = {item: i for i, item in enumerate(self._items)}

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item: str) -> bool:
        return item in self._index

    @property
    def items(self) -> tuple[str, ...]:
        return self._items

    def index(self, item: str) -> int:
        try:
            return self._index[item]
        except KeyError:
            raise VocabularyError(f"unknown item id {item!r}") from None

    def id_at(self, index: int) -> str:
        return self._items[index]

    def encode(self, items: Sequence[str]) -> np.ndarray:
        return np.array([self.index(it) for it in items], dtype=np.int64)


def load_interactions(path: str, format: str = "tsv") -> list[InteractionSequence]:
    """Read a `user<TAB>item<TAB>timestamp` log into per-user sequences.

    Events are sorted by timestamp within each user (stable, so equal
    timestamps keep file order); users with fewer than two events are
    dropped. Lines starting with '#' and blank lines are ignored.
    """
    if format != "tsv":
        raise ConfigError(f"unsupported interaction log format {format!r}; expected 'tsv'")
    events: dict[str, list[tuple[int, str]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user, item, ts_text = parts
            if not user or not item:
                raise ParseError(f"{path}:{lineno}: empty user or item id")
            try:
                ts = int(ts_text)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: timestamp {ts_text!r} is not an integer") from None
            if user not in events:
                events[user] = []
                order.append(user)
            events[user].append((ts, item))

    sequences = []
    for user in order:
        rows = sorted(events[user], key=lambda r: r[0])
        if len(rows) < 2:
            continue
        sequences.append(InteractionSequence(
            user_id=user,
            items=tuple(item for _, item in rows),
            timestamps=tuple(ts for ts, _ in rows),
        ))
    if not sequences:
        raise EmptyDatasetError(f"empty-dataset: no sequences of length >= 2 in {path}")
    return sequences


def write_interactions(path: str, sequences: Sequence[InteractionSequence]) -> None:
    """Write sequences in the tab-separated log format read back by load."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user_id\titem_id\ttimestamp\n")
        for seq in sequences:
            stamps = seq.timestamps or tuple(range(len(seq.items)))
            for item, ts in zip(seq.items, stamps):
                fh.write(f"{seq.user_id}\t{item}\t{ts}\n")


def augment(sequence: InteractionSequence,
            max_len: int = DEFAULT_MAX_PREFIX_LEN) -> list[SequencePair]:
    """Expand a length-n sequence into its n-1 (prefix, next-click) pairs.

    Prefixes keep only the most recent ``max_len`` items. Sequences
    shorter than 2 yield no pairs.
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    items = sequence.items
    pairs = []
    for k in range(1, len(items)):
        prefix = items[max(0, k - max_len):k]
        pairs.append(SequencePair(user_id=sequence.user_id, prefix=prefix, target=items[k]))
    return pairs


def count_targets(pairs: Sequence[SequencePair]) -> dict[str, int]:
    """Pairs per target item, keyed by item id."""
    counts: dict[str, int] = {}
    for pair in pairs:
        counts[pair.target] = counts.get(pair.target, 0) + 1
    return counts


def partition_cold_items(pairs: Sequence[SequencePair],
                         cold_fraction: float = DEFAULT_COLD_FRACTION,
                         ) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split target items into (rich, cold) by ascending interaction count.

    The lowest ``cold_fraction`` of items (at least one) become the cold
    set; ties at the cutoff break by ascending item id.
    """
    if not 0.0 < cold_fraction < 1.0:
        raise ConfigError(f"cold_fraction must be in (0, 1), got {cold_fraction}")
    counts = count_targets(pairs)
    if len(counts) < 2:
        raise PartitionError(f"need at least 2 distinct target items, got {len(counts)}")
    ranked = sorted(counts, key=lambda item: (counts[item], item))
    n_cold = max(1, int(np.floor(len(ranked) * cold_fraction + 1e-9)))
    cold = tuple(sorted(ranked[:n_cold]))
    rich = tuple(sorted(ranked[n_cold:]))
    return rich, cold


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n items across the ratios."""
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e + 1e-9)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for _ in range(n - sum(counts)):
        i = max(range(len(ratios)), key=lambda j: (remainders[j], -j))
        counts[i] += 1
        remainders[i] = -1.0
    return counts


def build_splits(pairs: Sequence[SequencePair], cold_items: Sequence[str],
                 rng: np.random.Generator,
                 ratios: Sequence[float] = DEFAULT_RATIOS) -> DatasetSplits:
    """Partition cold items into train/valid/test label sets.

    Cold items are shuffled with ``rng`` and apportioned by ``ratios``.
    Pairs targeting rich items form the pre-train pool, minus any pair
    whose item content mentions a cold item (leakage rule). Per-item
    pools are deduplicated on (prefix, target).
    """
    if len(ratios) != 3:
        raise ConfigError(f"expected 3 split ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be positive and sum to 1, got {tuple(ratios)}")
    cold = tuple(sorted(set(cold_items)))
    counts = _allocate(len(cold), ratios)
    names = ("train", "valid", "test")
    for name, count in zip(names, counts):
        if count == 0:
            raise SplitSizeError(
                f"split '{name}' would receive 0 of {len(cold)} cold items at ratios {tuple(ratios)}")

    perm = rng.permutation(len(cold))
    shuffled = [cold[i] for i in perm]
    cold_set = set(cold)

    assigned: dict[str, tuple[str, ...]] = {}
    start = 0
    for name, count in zip(names, counts):
        assigned[name] = tuple(sorted(shuffled[start:start + count]))
        start += count

    pools: dict[str, list[SequencePair]] = {item: [] for item in cold}
    seen: dict[str, set] = {item: set() for item in cold}
    pretrain = []
    for pair in pairs:
        if pair.target in cold_set:
            if pair.key not in seen[pair.target]:
                seen[pair.target].add(pair.key)
                pools[pair.target].append(pair)
        elif not any(it in cold_set for it in pair.prefix):
            pretrain.append(pair)

    def make_split(name: str) -> MetaSplit:
        items = assigned[name]
        return MetaSplit(name=name, items=items,
                         pools={it: tuple(pools[it]) for it in items})

    return DatasetSplits(
        pretrain_pairs=tuple(pretrain),
        train=make_split("train"),
        valid=make_split("valid"),
        test=make_split("test"),
    )


def sample_episode(split: MetaSplit, n_way: int, k_shot: int,
                   rng: np.random.Generator) -> Episode:
    """Draw one N-way K-shot episode from a split's pair pools.

    Candidates are N distinct items with at least K+1 pairs each; each
    contributes K support pairs and one query pair, all sampled without
    replacement within the episode.
    """
    if n_way < 2:
        raise ConfigError(f"n_way must be >= 2, got {n_way}")
    if k_shot < 1:
        raise ConfigError(f"k_shot must be >= 1, got {k_shot}")
    eligible = [item for item in split.items if len(split.pools[item]) >= k_shot + 1]
    if len(eligible) < n_way:
        raise SamplingError(
            f"split '{split.name}': need {n_way} items with >= {k_shot + 1} pairs, "
            f"only {len(eligible)} of {len(split.items)} qualify")
    chosen = rng.choice(len(eligible), size=n_way, replace=False)
    candidates = tuple(eligible[i] for i in chosen)

    support_sets = []
    queries = []
    for item in candidates:
        pool = split.pools[item]
        picks = rng.choice(len(pool), size=k_shot + 1, replace=False)
        support_sets.append(tuple(pool[i] for i in picks[:k_shot]))
        queries.append(pool[picks[k_shot]])
    return Episode(candidate_items=candidates, support_sets=tuple(support_sets),
                   query_pairs=tuple(queries))


@dataclass(frozen=True)
class SynthConfig:
    """Shape of the clustered synthetic interaction generator.

    The last ``niche_clusters`` clusters attract only ``niche_share`` of
    the sequences, giving the catalogue a popularity skew: their items
    end up least-interacted, so the cold partition concentrates there.
    """

    n_clusters: int = 8
    items_per_cluster: int = 64
    n_sequences: int = 6000
    seq_len_range: tuple[int, int] = (4, 12)
    within_cluster_prob: float = 0.9
    markov_prob: float = 0.75
    niche_clusters: int = 2
    niche_share: float = 0.15
    hub_items: int = 0

    def n_items(self) -> int:
        return self.n_clusters * self.items_per_cluster


def synth_generate(config: SynthConfig, rng: np.random.Generator) -> list[InteractionSequence]:
    """Generate clustered interaction sequences.

    Each sequence has a latent home cluster; every click comes from the
    home cluster with probability ``within_cluster_prob`` and uniformly
    from the full catalogue otherwise. Each cluster carries two fixed
    transition routes (random permutations of its items): a home-cluster
    click follows one of the two routes from the walk's previous route
    position with probability ``markov_prob``; otherwise it detours to
    one of the cluster's first ``hub_items`` staple items without
    advancing the walk. Next clicks are therefore statistically
    predictable from the prefix's recent route items, while the route
    branching keeps prefixes for the same target diverse and the staple
    detours pollute order-insensitive summaries of the prefix.

    Home clusters are not equally popular: the last ``niche_clusters``
    clusters together receive only ``niche_share`` of the sequences, so
    their items accumulate the fewest interactions and dominate the
    least-interacted (cold) partition downstream. Staples absorb the
    detour traffic, keeping them out of the cold partition entirely.
    """
    if not 0.0 <= config.within_cluster_prob <= 1.0:
        raise ConfigError(f"within_cluster_prob must be in [0, 1], got {config.within_cluster_prob}")
    if not 0.0 <= config.markov_prob <= 1.0:
        raise ConfigError(f"markov_prob must be in [0, 1], got {config.markov_prob}")
    if not 0.0 <= config.niche_share <= 1.0:
        raise ConfigError(f"niche_share must be in [0, 1], got {config.niche_share}")
    if not 0 <= config.niche_clusters <= config.n_clusters:
        raise ConfigError(
            f"niche_clusters must be in [0, {config.n_clusters}], got {config.niche_clusters}")
    if not 0 <= config.hub_items <= config.items_per_cluster:
        raise ConfigError(
            f"hub_items must be in [0, {config.items_per_cluster}], got {config.hub_items}")
    if config.n_clusters < 1 or config.items_per_cluster < 1 or config.n_sequences < 1:
        raise ConfigError("synthetic generator sizes must be positive")
    lo, hi = config.seq_len_range
    if lo < 2 or hi < lo:
        raise ConfigError(f"seq_len_range must satisfy 2 <= lo <= hi, got ({lo}, {hi})")

    n_items = config.n_items()
    per_cluster = config.items_per_cluster
    n_head = config.n_clusters - config.niche_clusters
    skewed = 0 < config.niche_clusters < config.n_clusters
    width = max(4, len(str(n_items - 1)))
    ids = [f"i{j:0{width}d}" for j in range(n_items)]
    routes = [(rng.permutation(per_cluster), rng.permutation(per_cluster))
              for _ in range(config.n_clusters)]
    sequences = []
    for u in range(config.n_sequences):
        if skewed:
            if rng.random() < config.niche_share:
                cluster = n_head + int(rng.integers(config.niche_clusters))
            else:
                cluster = int(rng.integers(n_head))
        else:
            cluster = int(rng.integers(config.n_clusters))
        length = int(rng.integers(lo, hi + 1))
        base = cluster * per_cluster
        pos = int(rng.integers(per_cluster))
        items = []
        for _ in range(length):
            if rng.random() < config.within_cluster_prob:
                if rng.random() < config.markov_prob:
                    route = routes[cluster][int(rng.integers(2))]
                    pos = int(route[pos])
                    j = base + pos
                elif config.hub_items > 0:
                    j = base + int(rng.integers(config.hub_items))
                else:
                    pos = int(rng.integers(per_cluster))
                    j = base + pos
            else:
                j = int(rng.integers(n_items))
            items.append(ids[j])
        sequences.append(InteractionSequence(
            user_id=f"u{u:05d}", items=tuple(items),
            timestamps=tuple(range(length))))
    return sequences


def prepare_dataset(sequences: Sequence[InteractionSequence],
                    rng: np.random.Generator,
                    max_len: int = DEFAULT_MAX_PREFIX_LEN,
                    cold_fraction: float = DEFAULT_COLD_FRACTION,
                    ratios: Sequence[float] = DEFAULT_RATIOS,
                    ) -> tuple[Vocabulary, DatasetSplits]:
    """Full preparation pipeline: augment, partition, split."""
    vocab = Vocabulary(item for seq in sequences for item in seq.items)
    pairs = [pair for seq in sequences for pair in augment(seq, max_len=max_len)]
    if not pairs:
        raise EmptyDatasetError("empty-dataset: no sequence pairs after augmentation")
    _, cold = partition_cold_items(pairs, cold_fraction=cold_fraction)
    splits = build_splits(pairs, cold, rng, ratios=ratios)
    return vocab, splits
