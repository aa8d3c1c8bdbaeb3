"""
:class:`CutSet`: an ordered collection of cuts, held either in memory (eager)
or as a replayable stream (lazy, e.g. a JSONL file that is re-opened on every
iteration). Lazy sets lose random access but keep memory flat; every
collection operation available on both modes yields the same cuts in the
same order for both.
"""
from __future__ import annotations

import itertools
import logging
import math
import os
import random
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from speechcuts.cut import Cut, MixedCut, MonoCut, PaddingCut
from speechcuts.manifest import (
    ManifestValidationError,
    Recording,
    SupervisionSegment,
    ValidationReport,
    read_manifests,
    save_manifests,
    validate,
)
from speechcuts.utils import TIME_TOLERANCE, ArgumentError, Seconds, SpeechCutsError, compute_num_samples

logger = logging.getLogger(__name__)


class SubsetError(SpeechCutsError, KeyError):
    pass


class LazySource:
    """Re-iterable stream: each ``iter()`` calls ``fn(*args)`` for a fresh iterator."""

    def __init__(self, fn: Callable[..., Iterator], *args):
        self.fn = fn
        self.args = args

    def __iter__(self) -> Iterator:
        return iter(self.fn(*self.args))


def _iter_file(path) -> Iterator[Cut]:
    yield from read_manifests(path, "cut")


class CutSet:
    """
    Eager when built from a sequence, lazy when built from a :class:`LazySource`.

        >>> cuts = CutSet.from_file("cuts.jsonl.gz")          # lazy
        >>> utts = cuts.trim_to_supervisions()                # still lazy
        >>> windows = cuts.cut_into_windows(5.0, hop=4.0)
    """

    def __init__(self, cuts: Union[Iterable[Cut], LazySource, None] = None):
        if cuts is None:
            cuts = []
        if isinstance(cuts, LazySource):
            self._cuts = cuts
        elif isinstance(cuts, CutSet):
            self._cuts = cuts._cuts
        else:
            self._cuts = list(cuts)

    # construction / persistence
    @staticmethod
    def from_cuts(cuts: Iterable[Cut]) -> "CutSet":
        return CutSet(list(cuts))

    @staticmethod
    def from_file(path, lazy: bool = True) -> "CutSet":
        path = os.fspath(path)
        if lazy:
            return CutSet(LazySource(_iter_file, path))
        return CutSet(list(_iter_file(path)))

    @staticmethod
    def from_manifests(
        recordings: Iterable[Recording],
        supervisions: Iterable[SupervisionSegment] = (),
        lazy: bool = False,
    ) -> "CutSet":
        """
        One cut per (recording, channel) spanning the whole recording, holding that
        channel's supervisions. Raises :class:`ManifestValidationError` if the
        manifests fail :func:`~speechcuts.manifest.validate`.

        With ``lazy=True`` the recordings are re-iterated on every pass (pass a
        :class:`LazySource` or a list); supervisions are indexed in memory.
        """
        supervisions = list(supervisions)
        report = validate(recordings, supervisions)
        if report.errors:
            raise ManifestValidationError(
                f"{len(report.errors)} validation errors, first: {report.errors[0]}"
            )
        index: Dict[str, Dict[int, List[SupervisionSegment]]] = defaultdict(lambda: defaultdict(list))
        for s in supervisions:
            index[s.recording_id][s.channel].append(s)
        for by_channel in index.values():
            for sups in by_channel.values():
                sups.sort(key=lambda s: (s.start, s.id))
        if lazy:
            return CutSet(LazySource(_iter_from_manifests, recordings, index))
        return CutSet(list(_iter_from_manifests(recordings, index)))

    def to_file(self, path) -> int:
        return save_manifests(self, path)

    # container protocol
    @property
    def is_lazy(self) -> bool:
        return isinstance(self._cuts, LazySource)

    def to_eager(self) -> "CutSet":
        return self if not self.is_lazy else CutSet(list(self._cuts))

    def __iter__(self) -> Iterator[Cut]:
        return iter(self._cuts)

    def __len__(self) -> int:
        if self.is_lazy:
            raise TypeError("len() is not available for a lazy CutSet; use to_eager() or count()")
        return len(self._cuts)

    def count(self) -> int:
        return sum(1 for _ in self)

    def __getitem__(self, item):
        if self.is_lazy:
            raise TypeError("a lazy CutSet does not support random access")
        if isinstance(item, str):
            for c in self._cuts:
                if c.id == item:
                    return c
            raise KeyError(item)
        if isinstance(item, slice):
            return CutSet(self._cuts[item])
        return self._cuts[item]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CutSet):
            return NotImplemented
        return list(self) == list(other)

    def __repr__(self) -> str:
        if self.is_lazy:
            return "CutSet(lazy)"
        return f"CutSet(len={len(self._cuts)})"

    @property
    def ids(self) -> List[str]:
        return [c.id for c in self]

    def _derive(self, fn: Callable[..., Iterator[Cut]], *args) -> "CutSet":
        if self.is_lazy:
            return CutSet(LazySource(fn, self._cuts, *args))
        return CutSet(list(fn(self._cuts, *args)))

    # collection operations
    def map(self, fn: Callable[[Cut], Cut]) -> "CutSet":
        return self._derive(_iter_map, fn)

    def filter(self, predicate: Callable[[Cut], bool]) -> "CutSet":
        return self._derive(_iter_filter, predicate)

    def subset(
        self,
        first: Optional[int] = None,
        last: Optional[int] = None,
        ids: Optional[Iterable[str]] = None,
    ) -> "CutSet":
        """
        Select the first ``n``, the last ``n``, or the cuts with the given ids
        (exactly one criterion). ``first`` streams without reading the rest of a
        lazy source. Missing ids raise :class:`SubsetError` listing them.
        """
        given = [x is not None for x in (first, last, ids)]
        if sum(given) != 1:
            raise ArgumentError("subset() needs exactly one of first=, last=, ids=")
        if first is not None:
            return self._derive(_iter_first, first)
        if last is not None:
            return self._derive(_iter_last, last)
        return self._derive(_iter_ids, frozenset(ids))

    def split(self, num_parts: int, shuffle: bool = False, seed: int = 0) -> List["CutSet"]:
        """
        Split into ``num_parts`` contiguous parts whose sizes differ by at most one
        (the first ``n % num_parts`` parts get the extra cut).
        """
        if num_parts < 1:
            raise ArgumentError(f"num_parts must be >= 1, got {num_parts}")
        if shuffle or not self.is_lazy:
            items = list(self)
            if shuffle:
                random.Random(seed).shuffle(items)
            return [CutSet(items[a:b]) for a, b in _split_bounds(len(items), num_parts)]
        n = self.count()
        return [
            CutSet(LazySource(_iter_slice, self._cuts, a, b)) for a, b in _split_bounds(n, num_parts)
        ]

    def repeat(self, times: Optional[int] = None) -> "CutSet":
        """Repeat ``times`` times, or forever (lazily) when ``times`` is None."""
        if times is not None and times < 0:
            raise ArgumentError(f"times must be >= 0, got {times}")
        if times is None or self.is_lazy:
            return CutSet(LazySource(_iter_repeat, self._cuts, times))
        return CutSet(self._cuts * times)

    def combine(self, *others: "CutSet") -> "CutSet":
        return combine(self, *others)

    def shuffle(self, seed: int = 0) -> "CutSet":
        """Full Fisher-Yates shuffle; always returns an eager CutSet."""
        items = list(self)
        random.Random(seed).shuffle(items)
        return CutSet(items)

    def lazy_shuffle(self, buffer_size: int = 10_000, seed: int = 0) -> "CutSet":
        """
        Approximate streaming shuffle holding at most ``buffer_size`` cuts: fill
        the buffer, then repeatedly emit a uniformly chosen slot and refill it from
        the stream. ``buffer_size=1`` keeps the input order.
        """
        if buffer_size < 1:
            raise ArgumentError(f"buffer_size must be >= 1, got {buffer_size}")
        return CutSet(LazySource(_iter_buffer_shuffle, self._cuts, buffer_size, seed))

    # corpus reshaping
    def trim_to_supervisions(self) -> "CutSet":
        """One cut per supervision, spanning exactly that supervision (others dropped)."""
        return self._derive(_iter_trim_to_supervisions)

    def cut_into_windows(
        self, window: Seconds, hop: Optional[Seconds] = None, keep_overlapping: bool = True
    ) -> "CutSet":
        """
        Traverse each cut in windows starting at ``0, hop, 2*hop, ...`` (while the
        start is inside the cut); the last window may be shorter.
        """
        hop = window if hop is None else hop
        if not window > 0:
            raise ArgumentError(f"window must be > 0, got {window}")
        if not 0 < hop <= window:
            raise ArgumentError(f"hop must satisfy 0 < hop <= window, got hop={hop}, window={window}")
        return self._derive(_iter_windows, window, hop, keep_overlapping)

    # per-cut augmentation, applied lazily
    def truncate(self, offset: Seconds, duration: Optional[Seconds] = None, keep_overlapping: bool = True):
        return self.map(lambda c: c.truncate(offset, duration, keep_overlapping))

    def pad(self, duration: Seconds, direction: str = "right") -> "CutSet":
        return self.map(lambda c: c.pad(duration, direction))

    def perturb_speed(self, factor: float) -> "CutSet":
        return self.map(lambda c: c.perturb_speed(factor))

    def perturb_tempo(self, factor: float) -> "CutSet":
        return self.map(lambda c: c.perturb_tempo(factor))

    def perturb_volume(self, factor: float) -> "CutSet":
        return self.map(lambda c: c.perturb_volume(factor))

    def resample(self, sampling_rate: int) -> "CutSet":
        return self.map(lambda c: c.resample(sampling_rate))

    def mix(self, noise: "CutSet", snr_db: Optional[float] = None, seed: int = 0) -> "CutSet":
        """Mix each cut with a cut drawn from ``noise`` (eager) at ``snr_db``."""
        pool = list(noise)
        if not pool:
            raise ArgumentError("noise CutSet is empty")
        return self._derive(_iter_mix_with, pool, snr_db, seed)

    def describe(self, verbose: bool = False) -> "CutSetStats":
        return describe(self, verbose=verbose)


def _iter_from_manifests(recordings, index) -> Iterator[Cut]:
    for rec in recordings:
        channels = rec.channel_ids
        by_channel = index.get(rec.id, {})
        for ch in channels:
            yield MonoCut(
                id=rec.id if len(channels) == 1 else f"{rec.id}-{ch}",
                recording=rec,
                start=0.0,
                duration=rec.num_samples / rec.sampling_rate,
                channel=ch,
                supervisions=tuple(by_channel.get(ch, ())),
            )


def _iter_map(source, fn) -> Iterator[Cut]:
    for c in source:
        yield fn(c)


def _iter_filter(source, predicate) -> Iterator[Cut]:
    for c in source:
        if predicate(c):
            yield c


def _iter_first(source, n) -> Iterator[Cut]:
    yield from itertools.islice(source, n)


def _iter_last(source, n) -> Iterator[Cut]:
    yield from deque(source, maxlen=n) if n > 0 else ()


def _iter_ids(source, ids: frozenset) -> Iterator[Cut]:
    found = set()
    for c in source:
        if c.id in ids:
            found.add(c.id)
            yield c
    missing = ids - found
    if missing:
        raise SubsetError(f"{len(missing)} ids not found: {sorted(missing)}")


def _iter_slice(source, a, b) -> Iterator[Cut]:
    yield from itertools.islice(source, a, b)


def _iter_repeat(source, times) -> Iterator[Cut]:
    epochs = itertools.count() if times is None else range(times)
    for _ in epochs:
        yield from source


def _iter_chain(sources) -> Iterator[Cut]:
    for s in sources:
        yield from s


def _iter_buffer_shuffle(source, buffer_size: int, seed: int) -> Iterator[Cut]:
    rng = random.Random(seed)
    stream = iter(source)
    buffer = list(itertools.islice(stream, buffer_size))
    while buffer:
        i = rng.randrange(len(buffer))
        item = buffer[i]
        buffer[i] = None  # the consumer owns the item now
        yield item
        del item
        nxt = next(stream, None)
        if nxt is not None:
            buffer[i] = nxt
        else:
            buffer[i] = buffer[-1]
            buffer.pop()


def _iter_mux(sources, weights, seed) -> Iterator[Cut]:
    rng = random.Random(seed)
    iters = [iter(s) for s in sources]
    active = list(range(len(iters)))
    while active:
        weighted = [i for i in active if weights[i] > 0]
        if weighted:
            i = rng.choices(weighted, weights=[weights[j] for j in weighted])[0]
        else:
            i = active[0]  # zero-weight sources drain in order once the rest are exhausted
        try:
            yield next(iters[i])
        except StopIteration:
            active.remove(i)


def _iter_trim_to_supervisions(source) -> Iterator[Cut]:
    for cut in source:
        for s in cut.supervisions:
            start = max(s.start, 0.0)
            end = min(s.end, cut.duration)
            if end - start <= 0 or compute_num_samples(end - start, cut.sampling_rate) == 0:
                continue
            trimmed = cut.truncate(start, end - start, keep_overlapping=False, new_id=s.id)
            own = replace(s, start=0.0 if s.start >= 0 else s.start - start)
            if isinstance(trimmed, MonoCut):
                trimmed = replace(trimmed, id=s.id, supervisions=(own,))
            elif trimmed.id != s.id:
                trimmed = trimmed.with_id(s.id)
            yield trimmed


def _iter_windows(source, window, hop, keep_overlapping) -> Iterator[Cut]:
    for cut in source:
        rate = cut.sampling_rate
        total = cut.num_samples
        w = compute_num_samples(window, rate)
        h = compute_num_samples(hop, rate)
        if w <= 0 or h <= 0:
            raise ArgumentError(
                f"window={window}/hop={hop} round to zero samples at {rate} Hz"
            )
        offset, k = 0, 0
        while offset < total:
            length = min(w, total - offset)
            yield cut.truncate(offset / rate, length / rate, keep_overlapping, new_id=f"{cut.id}-w{k}")
            offset += h
            k += 1


def _iter_mix_with(source, pool, snr_db, seed) -> Iterator[Cut]:
    rng = random.Random(seed)
    for cut in source:
        noise = pool[rng.randrange(len(pool))]
        if noise.duration > cut.duration:
            noise = noise.truncate(0.0, cut.duration)
        yield cut.mix(noise, 0.0, snr_db)


def _split_bounds(n: int, k: int) -> List[Tuple[int, int]]:
    base, extra = divmod(n, k)
    bounds, a = [], 0
    for i in range(k):
        b = a + base + (1 if i < extra else 0)
        bounds.append((a, b))
        a = b
    return bounds


def combine(*cutsets: CutSet) -> CutSet:
    """Concatenate in argument order; lazy if any input is lazy."""
    if len(cutsets) == 1 and not isinstance(cutsets[0], CutSet):
        cutsets = tuple(cutsets[0])
    if any(cs.is_lazy for cs in cutsets):
        return CutSet(LazySource(_iter_chain, [cs._cuts for cs in cutsets]))
    return CutSet([c for cs in cutsets for c in cs])


def mux(cutsets: Sequence[CutSet], weights: Optional[Sequence[float]] = None, seed: int = 0) -> CutSet:
    """
    Lazily interleave several CutSets: each step draws source ``i`` with
    probability proportional to ``weights[i]`` among the non-exhausted ones.
    Zero-weight sources are only drawn after all weighted sources run out.
    """
    weights = [1.0] * len(cutsets) if weights is None else list(weights)
    if len(weights) != len(cutsets):
        raise ArgumentError("weights and cutsets differ in length")
    if any(w < 0 for w in weights):
        raise ArgumentError("weights must be non-negative")
    return CutSet(LazySource(_iter_mux, [cs._cuts for cs in cutsets], weights, seed))


@dataclass
class CutSetStats:
    num_cuts: int = 0
    total_duration: Seconds = 0.0
    speech_duration: Seconds = 0.0
    num_speakers: int = 0
    duration_histogram: List[Tuple[int, int]] = field(default_factory=list)
    has_overlap: bool = False
    speaker_durations: Optional[Dict[str, Seconds]] = None

    def render(self) -> str:
        lines = [
            f"cuts: {self.num_cuts}",
            f"total duration: {self.total_duration:.3f} s",
            f"speech duration: {self.speech_duration:.3f} s"
            + (" (overlapping supervisions counted twice)" if self.has_overlap else ""),
            f"speakers: {self.num_speakers}",
            "duration histogram (upper bound s: count):",
        ]
        lines += [f"  <{ub:>5d}: {n}" for ub, n in self.duration_histogram]
        if self.speaker_durations is not None:
            lines.append("per-speaker speech duration:")
            lines += [f"  {spk}: {d:.3f} s" for spk, d in sorted(self.speaker_durations.items())]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        d = {
            "num_cuts": self.num_cuts,
            "total_duration": self.total_duration,
            "speech_duration": self.speech_duration,
            "num_speakers": self.num_speakers,
            "duration_histogram": [list(x) for x in self.duration_histogram],
            "has_overlap": self.has_overlap,
        }
        if self.speaker_durations is not None:
            d["speaker_durations"] = self.speaker_durations
        return d


def describe(cuts: Iterable[Cut], verbose: bool = False) -> CutSetStats:
    """Corpus statistics in a single streaming pass (1-second duration bins)."""
    stats = CutSetStats()
    bins: Counter = Counter()
    speakers: Dict[str, float] = defaultdict(float)
    for cut in cuts:
        stats.num_cuts += 1
        stats.total_duration += cut.duration
        bins[int(math.floor(cut.duration)) + 1] += 1
        last_end = -math.inf
        for s in sorted(cut.supervisions, key=lambda s: s.start):
            stats.speech_duration += s.duration
            if s.start < last_end:
                stats.has_overlap = True
            last_end = max(last_end, s.end)
            if s.speaker is not None:
                speakers[s.speaker] += s.duration
    stats.num_speakers = len(speakers)
    if bins:
        stats.duration_histogram = [(ub, bins.get(ub, 0)) for ub in range(1, max(bins) + 1)]
    if verbose:
        stats.speaker_durations = dict(speakers)
    return stats


def validate_cuts(cuts: Iterable[Cut]) -> ValidationReport:
    """Check cut invariants: windows inside their recordings, supervision overlap, mix tracks."""
    report = ValidationReport()
    seen = set()
    for cut in cuts:
        if cut.id in seen:
            report.errors.append(f"cut {cut.id}: duplicate id")
        seen.add(cut.id)
        tracks = cut.tracks if isinstance(cut, MixedCut) else ()
        for i, t in enumerate(tracks):
            if isinstance(t.cut, PaddingCut) and t.snr_db is not None:
                report.errors.append(
                    f"cut {cut.id}: track {i} is padding with an SNR ({t.snr_db} dB); it cannot be mixed"
                )
        monos = [t.cut for t in tracks if isinstance(t.cut, MonoCut)] if tracks else [cut]
        for mono in monos:
            if not isinstance(mono, MonoCut):
                continue
            rate = mono.sampling_rate
            excess = (mono.start_sample + mono.num_samples - mono.timeline_length()) / rate
            if excess > TIME_TOLERANCE:
                report.errors.append(
                    f"cut {mono.id}: ends {excess:.6g} s past the end of recording {mono.recording_id}"
                )
            if mono.channel not in mono.recording.channel_ids:
                report.errors.append(
                    f"cut {mono.id}: channel {mono.channel} not in recording {mono.recording_id}"
                )
            for s in mono.supervisions:
                if not (s.start < mono.duration and s.end > 0):
                    report.errors.append(
                        f"cut {mono.id}: supervision {s.id} does not overlap the cut"
                    )
    return report
