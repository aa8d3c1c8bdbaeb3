"""
Duration-constrained batch samplers.

All samplers produce :class:`Batch` objects in a deterministic order given the
input order, constraints and seed. Batch sizes are dynamic: cuts accumulate
until adding the next one would exceed ``max_duration`` (seconds) or
``max_cuts``. Distributed training is supported by sharding whole batches:
rank ``r`` receives the batches whose index ``i`` satisfies
``i % world_size == r``.
"""
from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from speechcuts.cut import Cut
from speechcuts.cutset import CutSet
from speechcuts.utils import ArgumentError, Seconds, SpeechCutsError

# Sums of float durations are compared against the cap with this slack.
_EPS = 1e-9


class PairingError(SpeechCutsError, ValueError):
    pass


@dataclass(frozen=True)
class SamplerConstraints:
    max_duration: Optional[Seconds] = None
    max_cuts: Optional[int] = None
    drop_last: bool = False
    shuffle_seed: Optional[int] = None
    world_size: int = 1
    rank: int = 0
    shuffle_buffer: int = 10_000

    def __post_init__(self):
        if self.max_duration is None and self.max_cuts is None:
            raise ArgumentError("at least one of max_duration / max_cuts must be set")
        if self.max_duration is not None and not self.max_duration > 0:
            raise ArgumentError(f"max_duration must be > 0, got {self.max_duration}")
        if self.max_cuts is not None and self.max_cuts < 1:
            raise ArgumentError(f"max_cuts must be >= 1, got {self.max_cuts}")
        if self.world_size < 1 or not 0 <= self.rank < self.world_size:
            raise ArgumentError(f"need 0 <= rank < world_size, got rank={self.rank}, world_size={self.world_size}")


@dataclass
class Batch:
    cuts: CutSet
    index: int
    oversized: bool = False

    def __len__(self) -> int:
        return len(self.cuts)

    def __iter__(self) -> Iterator[Cut]:
        return iter(self.cuts)

    @property
    def cut_ids(self) -> List[str]:
        return self.cuts.ids

    @property
    def total_duration(self) -> Seconds:
        return sum(c.duration for c in self.cuts)

    @property
    def padding_waste(self) -> Seconds:
        durations = [c.duration for c in self.cuts]
        return len(durations) * max(durations) - sum(durations) if durations else 0.0

    def to_plan_dict(self) -> dict:
        return {
            "batch_index": self.index,
            "cut_ids": self.cut_ids,
            "total_duration": self.total_duration,
            "oversized": self.oversized,
        }


def padding_waste(batches: Iterable[Batch]) -> Seconds:
    """Sum over batches of sum over items of (batch max duration - item duration)."""
    return sum(b.padding_waste for b in batches)


def _ordered_stream(cuts: Iterable[Cut], c: SamplerConstraints) -> Iterable[Cut]:
    if c.shuffle_seed is None:
        return cuts
    if isinstance(cuts, CutSet) and cuts.is_lazy:
        return cuts.lazy_shuffle(c.shuffle_buffer, c.shuffle_seed)
    return CutSet(cuts).shuffle(c.shuffle_seed)


def _greedy_batches(cuts: Iterable[Cut], c: SamplerConstraints) -> Iterator[Tuple[List[Cut], bool]]:
    """Unsharded greedy accumulation; yields (cuts, oversized)."""
    cur: List[Cut] = []
    total = 0.0
    for cut in cuts:
        d = cut.duration
        if cur and c.max_duration is not None and total + d > c.max_duration + _EPS:
            yield cur, False
            cur, total = [], 0.0
        if not cur and c.max_duration is not None and d > c.max_duration + _EPS:
            yield [cut], True
            continue
        cur.append(cut)
        total += d
        if c.max_cuts is not None and len(cur) == c.max_cuts:
            yield cur, False
            cur, total = [], 0.0
    if cur and not c.drop_last:
        yield cur, False


def _shard(batches: Iterable[Tuple[List[Cut], bool]], c: SamplerConstraints) -> Iterator[Batch]:
    # a manual counter: enumerate() caches its last tuple, which would pin the
    # previous batch in memory while the next one fills
    i = 0
    for cuts, oversized in batches:
        if i % c.world_size == c.rank:
            yield Batch(CutSet(cuts), i, oversized)
        del cuts
        i += 1


def dynamic_sample(cuts: Iterable[Cut], constraints: SamplerConstraints) -> Iterator[Batch]:
    """
    Greedy dynamic batching in (optionally shuffled) stream order.

    A cut longer than ``max_duration`` forms its own batch flagged ``oversized``.
    With ``drop_last`` the trailing batch is dropped when it was not closed by a
    constraint. Lazy inputs are shuffled with a bounded buffer
    (``constraints.shuffle_buffer``), eager ones fully.

    :param cuts: a CutSet (eager or lazy) or any iterable of cuts.
    :param constraints: batch limits, shuffling and sharding parameters.
    """
    yield from _shard(_greedy_batches(_ordered_stream(cuts, constraints), constraints), constraints)


@dataclass(frozen=True)
class BucketSpec:
    num_buckets: int
    boundaries: Tuple[Seconds, ...]

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(float(b) for b in self.boundaries))
        if self.num_buckets < 1 or len(self.boundaries) != self.num_buckets - 1:
            raise ArgumentError(f"{self.num_buckets} buckets need {self.num_buckets - 1} boundaries")
        if any(b < a for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise ArgumentError(f"bucket boundaries must be non-decreasing: {self.boundaries}")

    def bucket_of(self, duration: Seconds) -> int:
        return bisect.bisect_left(self.boundaries, duration)


def estimate_buckets(cuts: Iterable[Cut], num_buckets: int, max_sample: int = 10_000) -> BucketSpec:
    """
    Nearest-rank duration quantiles at ``k / num_buckets`` over the first
    ``max_sample`` cuts. A cut with duration equal to a boundary belongs to the
    lower bucket.
    """
    if num_buckets < 1:
        raise ArgumentError(f"num_buckets must be >= 1, got {num_buckets}")
    durations = sorted(c.duration for _, c in zip(range(max_sample), cuts))
    if not durations:
        return BucketSpec(num_buckets, (0.0,) * (num_buckets - 1))
    n = len(durations)
    bounds = [durations[max(math.ceil(k * n / num_buckets), 1) - 1] for k in range(1, num_buckets)]
    return BucketSpec(num_buckets, tuple(bounds))


def bucketing_sample(
    cuts: Iterable[Cut], spec: BucketSpec, constraints: SamplerConstraints
) -> Iterator[Batch]:
    """
    Route cuts into duration buckets, batch each bucket independently, then
    interleave: the next batch comes from a bucket drawn with probability
    proportional to the number of its cuts not yet emitted. Sharding applies
    to the interleaved sequence.
    """
    unsharded = replace(constraints, world_size=1, rank=0)
    buckets: List[List[Cut]] = [[] for _ in range(spec.num_buckets)]
    for cut in _ordered_stream(cuts, constraints):
        buckets[spec.bucket_of(cut.duration)].append(cut)
    plans = [list(_greedy_batches(b, unsharded)) for b in buckets]
    remaining = [sum(len(cs) for cs, _ in p) for p in plans]
    positions = [0] * len(plans)
    rng = random.Random(constraints.shuffle_seed if constraints.shuffle_seed is not None else 0)

    def interleaved():
        live = [i for i, p in enumerate(plans) if p]
        while live:
            if len(live) == 1:
                i = live[0]
            else:
                i = rng.choices(live, weights=[remaining[j] for j in live])[0]
            cs, oversized = plans[i][positions[i]]
            positions[i] += 1
            remaining[i] -= len(cs)
            if positions[i] == len(plans[i]):
                live.remove(i)
            yield cs, oversized

    yield from _shard(interleaved(), constraints)


def zip_sample(samplers: Sequence[Iterable[Batch]]) -> Iterator[Batch]:
    """Concatenate the i-th batch of every child; stop at the shortest child."""
    for i, parts in enumerate(zip(*samplers)):
        yield Batch(
            CutSet([c for b in parts for c in b.cuts]),
            index=i,
            oversized=any(b.oversized for b in parts),
        )


def pairs_sample(
    source: Iterable[Cut], target: Iterable[Cut], constraints: SamplerConstraints
) -> Iterator[Tuple[Batch, Batch]]:
    """
    Batch ``source`` with :func:`dynamic_sample` and pair every batch with the
    ``target`` cuts of the same ids, in the same order. Constraints apply to the
    source durations only.
    """
    source = source if isinstance(source, CutSet) else CutSet(list(source))
    by_id = {c.id: c for c in target}
    source_ids = set(source.ids)
    unmatched = sorted(source_ids.symmetric_difference(by_id))
    if unmatched:
        raise PairingError(
            f"{len(unmatched)} cut ids are not present in both sets; first: {unmatched[:10]}"
        )
    for batch in dynamic_sample(source, constraints):
        yield batch, Batch(CutSet([by_id[i] for i in batch.cut_ids]), batch.index, batch.oversized)
