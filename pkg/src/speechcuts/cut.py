"""
Cuts: windows into recordings (:class:`MonoCut`), synthetic silence
(:class:`PaddingCut`) and multi-track compositions (:class:`MixedCut`).

Every operation here is metadata-only; audio is read only by ``load_audio()``.
Cut boundaries are kept on the sample grid of the cut's sampling rate, so that
``len(cut.load_audio()) == round(cut.duration * cut.sampling_rate)`` holds
exactly for any chain of operations.

Perturbations (speed, tempo, volume, resampling) of a :class:`MonoCut` are kept
as an ordered list of :class:`Transform` stages applied to the recording's
timeline. ``start``/``duration`` of a perturbed cut are expressed in the
perturbed timeline; materialization maps the requested frames back through
the stages so that only the needed part of the file is decoded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np

from speechcuts.audio import (
    SampleBlock,
    audio_energy,
    interpolate,
    mix_samples,
    read_wav_frames,
    resample_samples,
)
from speechcuts.manifest import (
    FeaturesManifest,
    ManifestParseError,
    Recording,
    SupervisionSegment,
    _require,
)
from speechcuts.utils import (
    LOG_EPSILON,
    TIME_TOLERANCE,
    RangeError,
    Seconds,
    SpeechCutsError,
    compute_num_samples,
    next_id,
    round_time,
)


class MaterializationError(SpeechCutsError):
    pass


# live / peak number of cut objects in this process; used to check streaming memory bounds
_live = [0, 0]


def live_cut_count() -> int:
    return _live[0]


def peak_cut_count() -> int:
    return _live[1]


def reset_peak_cut_count() -> None:
    _live[1] = _live[0]


TRANSFORM_KINDS = ("speed", "tempo", "volume", "resample")


@dataclass(frozen=True, slots=True)
class Transform:
    """One recorded perturbation: ``value`` is a factor, or the target rate for ``resample``."""

    kind: str
    value: Union[float, int]

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "resample":
            if int(self.value) != self.value or self.value <= 0:
                raise ValueError(f"target_rate must be a positive integer, got {self.value}")
            object.__setattr__(self, "value", int(self.value))
        elif not self.value > 0:
            raise ValueError(f"{self.kind} factor must be > 0, got {self.value}")

    def output_length(self, num_samples: int, sampling_rate: int) -> Tuple[int, int]:
        """(num_samples, sampling_rate) of a signal after this stage."""
        if self.kind in ("speed", "tempo"):
            return int(round(num_samples / self.value)), sampling_rate
        if self.kind == "resample":
            return int(round(num_samples * self.value / sampling_rate)), self.value
        return num_samples, sampling_rate

    def input_step(self, sampling_rate: int) -> float:
        """Input samples advanced per output sample."""
        if self.kind in ("speed", "tempo"):
            return float(self.value)
        if self.kind == "resample":
            return sampling_rate / self.value
        return 1.0

    def to_dict(self) -> dict:
        if self.kind == "resample":
            return {"kind": "resample", "target_rate": self.value}
        return {"kind": self.kind, "factor": self.value}

    @staticmethod
    def from_dict(data: dict) -> "Transform":
        kind = _require(data, "kind")
        return Transform(kind, _require(data, "target_rate" if kind == "resample" else "factor"))


def _perturb_samples(num_samples: int, factor: float) -> int:
    return int(round(num_samples / factor))


class Cut:
    """Operations shared by all cut types. Subclasses are frozen dataclasses."""

    __slots__ = ()
    KIND: ClassVar[str] = "cut"

    def _track(self) -> None:
        _live[0] += 1
        if _live[0] > _live[1]:
            _live[1] = _live[0]

    def __del__(self):
        _live[0] -= 1

    # derived sizes
    @property
    def num_samples(self) -> int:
        return compute_num_samples(self.duration, self.sampling_rate)

    @property
    def end(self) -> Seconds:
        return self.start + self.duration

    @property
    def speakers(self) -> set:
        return {s.speaker for s in self.supervisions if s.speaker is not None}

    def with_id(self, id: str) -> "Cut":
        return replace(self, id=id)

    def pad(self, duration: Seconds, direction: str = "right") -> "Cut":
        """
        Extend the cut to ``duration`` seconds with silence.

        :param direction: ``"right"``, ``"left"`` or ``"both"`` (the odd sample goes right).
        :return: the cut itself when it is already long enough, otherwise a :class:`MixedCut`.
        """
        if direction not in ("right", "left", "both"):
            raise ValueError(f"unknown pad direction {direction!r}")
        if duration < self.duration - TIME_TOLERANCE:
            raise RangeError(
                f"cannot pad cut {self.id!r} of {self.duration} s to a shorter {duration} s"
            )
        rate = self.sampling_rate
        target = compute_num_samples(duration, rate)
        n = self.num_samples
        if target <= n:
            return self
        total = target - n
        left = {"right": 0, "left": total, "both": total // 2}[direction]
        right = total - left
        tracks = [replace(t, offset=round_time(t.offset + left / rate)) for t in _as_tracks(self)]
        if left:
            tracks.append(MixTrack(PaddingCut.from_samples(left, rate), 0.0))
        if right:
            tracks.append(MixTrack(PaddingCut.from_samples(right, rate), (left + n) / rate))
        return MixedCut(next_id(f"{self.id}-pad"), tracks)

    def mix(self, other: "Cut", offset: Seconds = 0.0, snr_db: Optional[float] = None) -> "MixedCut":
        """
        Overlay ``other`` starting ``offset`` seconds into this cut.

        Mixed inputs are flattened: their tracks are spliced in with offsets
        compounded. When ``other`` is a :class:`MixedCut`, ``snr_db`` applies to its
        tracks that had no SNR of their own.
        """
        if offset < 0:
            raise ValueError(f"mix offset must be >= 0, got {offset}")
        tracks = list(_as_tracks(self))
        for t in _as_tracks(other):
            tracks.append(
                MixTrack(
                    t.cut,
                    round_time(t.offset + offset),
                    snr_db if t.snr_db is None else t.snr_db,
                )
            )
        return MixedCut(next_id(f"{self.id}-mix"), tracks)

    def append(self, other: "Cut", gap: Seconds = 0.0, snr_db: Optional[float] = None) -> "MixedCut":
        if gap < 0:
            raise ValueError(f"gap must be >= 0, got {gap}")
        return self.mix(other, offset=round_time(self.duration + gap), snr_db=snr_db)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _as_tracks(cut: Cut) -> Sequence["MixTrack"]:
    if isinstance(cut, MixedCut):
        return cut.tracks
    return (MixTrack(cut, 0.0),)


def _check_window(cut: Cut, offset: Seconds, duration: Optional[Seconds]) -> Tuple[int, int]:
    """Window in samples, clipped to the cut end when it overshoots by <= TIME_TOLERANCE."""
    rate = cut.sampling_rate
    n = cut.num_samples
    if offset < 0:
        raise RangeError(f"truncate offset must be >= 0, got {offset}")
    a = compute_num_samples(offset, rate)
    d = n - a if duration is None else compute_num_samples(duration, rate)
    if a + d > n:
        if (a + d - n) / rate > TIME_TOLERANCE:
            raise RangeError(
                f"window [{offset}, {offset + (duration or 0)}) exceeds cut {cut.id!r} "
                f"of duration {cut.duration}"
            )
        d = n - a
    if d <= 0:
        raise RangeError(f"empty truncation window for cut {cut.id!r} (offset={offset}, duration={duration})")
    return a, d


def _select_supervisions(
    supervisions: Sequence[SupervisionSegment], shift: Seconds, duration: Seconds, keep_overlapping: bool
) -> tuple:
    kept = []
    for s in supervisions:
        moved = s.with_offset(-shift) if shift else s
        start, end = moved.start, moved.start + moved.duration
        if keep_overlapping:
            if start < duration and end > 0:
                kept.append(moved)
        elif start >= 0 and end <= duration + TIME_TOLERANCE:
            kept.append(moved)
    return tuple(kept)


@dataclass(frozen=True, slots=True)
class MonoCut(Cut):
    """
    A single-channel window ``[start, start + duration)`` into a recording.

    Supervision times are relative to the cut start and may extend past either
    edge. ``transforms`` lists pending perturbations in the order they were applied.
    """

    id: str
    recording: Recording
    start: Seconds
    duration: Seconds
    channel: int = 0
    supervisions: tuple = ()
    features: Optional[FeaturesManifest] = None
    transforms: tuple = ()

    def __post_init__(self):
        self._track()
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "duration", float(self.duration))
        object.__setattr__(self, "supervisions", tuple(self.supervisions))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if self.start < 0:
            raise RangeError(f"cut {self.id!r}: negative start {self.start}")
        if not self.duration > 0:
            raise RangeError(f"cut {self.id!r}: duration must be > 0, got {self.duration}")

    @property
    def recording_id(self) -> str:
        return self.recording.id

    @property
    def sampling_rate(self) -> int:
        rate = self.recording.sampling_rate
        for t in self.transforms:
            if t.kind == "resample":
                rate = t.value
        return rate

    def timeline_length(self) -> int:
        """Number of samples in the (perturbed) recording timeline the cut points into."""
        n, rate = self.recording.num_samples, self.recording.sampling_rate
        for t in self.transforms:
            n, rate = t.output_length(n, rate)
        return n

    @property
    def start_sample(self) -> int:
        return compute_num_samples(self.start, self.sampling_rate)

    def truncate(
        self,
        offset: Seconds = 0.0,
        duration: Optional[Seconds] = None,
        keep_overlapping: bool = True,
        new_id: Optional[str] = None,
    ) -> "MonoCut":
        """
        Sub-window ``[offset, offset + duration)`` of this cut (times relative to the cut).

        :param keep_overlapping: keep supervisions that only partially overlap the window
            (their relative start may become negative); otherwise keep only those fully inside.
        """
        rate = self.sampling_rate
        a, d = _check_window(self, offset, duration)
        new_duration = d / rate
        return replace(
            self,
            id=new_id or next_id(f"{self.id}-trunc"),
            start=(self.start_sample + a) / rate,
            duration=new_duration,
            supervisions=_select_supervisions(self.supervisions, a / rate, new_duration, keep_overlapping),
        )

    def _perturb_time(self, kind: str, factor: float, suffix: str) -> "MonoCut":
        rate = self.sampling_rate
        n = _perturb_samples(self.num_samples, factor)
        start = _perturb_samples(self.start_sample, factor)
        sups = tuple(
            replace(s, start=s.start / factor, duration=s.duration / factor) for s in self.supervisions
        )
        return replace(
            self,
            id=f"{self.id}-{suffix}{factor}",
            start=start / rate,
            duration=n / rate,
            supervisions=sups,
            features=None,
            transforms=self.transforms + (Transform(kind, factor),),
        )

    def perturb_speed(self, factor: float) -> "MonoCut":
        return self._perturb_time("speed", factor, "sp")

    def perturb_tempo(self, factor: float) -> "MonoCut":
        return self._perturb_time("tempo", factor, "tp")

    def perturb_volume(self, factor: float) -> "MonoCut":
        return replace(
            self,
            id=f"{self.id}-vp{factor}",
            features=None,
            transforms=self.transforms + (Transform("volume", factor),),
        )

    def resample(self, sampling_rate: int) -> "MonoCut":
        rate = self.sampling_rate
        if sampling_rate == rate:
            return self
        start = compute_num_samples(self.start, sampling_rate)
        n = int(round(self.num_samples * sampling_rate / rate))
        return replace(
            self,
            id=f"{self.id}-rs{sampling_rate}",
            start=start / sampling_rate,
            duration=n / sampling_rate,
            features=None,
            transforms=self.transforms + (Transform("resample", sampling_rate),),
        )

    def load_audio(self) -> SampleBlock:
        rec = self.recording
        source = rec.source_for_channel(self.channel)
        stages = []  # (transform, input_length, input_rate)
        n, rate = rec.num_samples, rec.sampling_rate
        for t in self.transforms:
            stages.append((t, n, rate))
            n, rate = t.output_length(n, rate)
        a = self.start_sample
        count = self.num_samples
        resampling = [s for s in stages if s[0].kind != "volume"]
        if not resampling:
            block = read_wav_frames(source, a, count, channels=[self.channel])
            samples = block.samples
            if samples.shape[1] < count:
                samples = np.pad(samples, ((0, 0), (0, count - samples.shape[1])))
        else:
            # walk the stages backwards to find which input frames each one needs
            windows = []
            lo, hi = a, a + count
            for t, n_in, rate_in in reversed(stages):
                if t.kind == "volume":
                    windows.append((lo, hi))
                    continue
                step = t.input_step(rate_in)
                positions = np.arange(lo, hi, dtype=np.float64) * step
                windows.append((lo, hi, positions))
                if len(positions):
                    new_lo = min(int(math.floor(positions[0])), max(n_in - 1, 0))
                    new_hi = min(int(math.floor(positions[-1])) + 2, n_in)
                else:
                    new_lo = new_hi = 0
                lo, hi = max(new_lo, 0), max(new_hi, new_lo)
            windows.reverse()
            samples = read_wav_frames(source, lo, hi - lo, channels=[self.channel]).samples
            first = lo
            for (t, _, _), win in zip(stages, windows):
                if t.kind == "volume":
                    continue
                samples = interpolate(samples, win[2], first_index=first)
                first = win[0]
        gain = 1.0
        for t in self.transforms:
            if t.kind == "volume":
                gain *= t.value
        if gain != 1.0:
            samples = (samples * np.float32(gain)).astype(np.float32)
        return SampleBlock(np.ascontiguousarray(samples, dtype=np.float32), self.sampling_rate)

    def with_features(self, features: Optional[FeaturesManifest]) -> "MonoCut":
        return replace(self, features=features)

    def to_dict(self) -> dict:
        d = {
            "type": "mono",
            "id": self.id,
            "recording": self.recording.to_dict(),
            "start": self.start,
            "duration": self.duration,
            "channel": self.channel,
            "supervisions": [s.to_dict() for s in self.supervisions],
        }
        if self.features is not None:
            d["features"] = self.features.to_dict()
        if self.transforms:
            d["transforms"] = [t.to_dict() for t in self.transforms]
        return d

    @staticmethod
    def from_dict(data: dict) -> "MonoCut":
        feats = data.get("features")
        return MonoCut(
            id=_require(data, "id"),
            recording=Recording.from_dict(_require(data, "recording")),
            start=_require(data, "start"),
            duration=_require(data, "duration"),
            channel=data.get("channel", 0),
            supervisions=tuple(SupervisionSegment.from_dict(s) for s in data.get("supervisions", ())),
            features=FeaturesManifest.from_dict(feats) if feats is not None else None,
            transforms=tuple(Transform.from_dict(t) for t in data.get("transforms", ())),
        )


@dataclass(frozen=True, slots=True)
class PaddingCut(Cut):
    """Silence of a given length; ``feat_value`` fills feature matrices."""

    id: str
    duration: Seconds
    sampling_rate: int
    num_samples: int
    feat_value: float = LOG_EPSILON

    def __post_init__(self):
        self._track()
        object.__setattr__(self, "duration", float(self.duration))
        if self.num_samples != compute_num_samples(self.duration, self.sampling_rate):
            raise ValueError(
                f"padding cut {self.id!r}: num_samples={self.num_samples} inconsistent with "
                f"duration={self.duration} at {self.sampling_rate} Hz"
            )
        if self.num_samples <= 0:
            raise RangeError(f"padding cut {self.id!r} must be non-empty")

    @staticmethod
    def from_samples(num_samples: int, sampling_rate: int, feat_value: float = LOG_EPSILON) -> "PaddingCut":
        return PaddingCut(
            id=next_id("pad"),
            duration=num_samples / sampling_rate,
            sampling_rate=sampling_rate,
            num_samples=num_samples,
            feat_value=feat_value,
        )

    @property
    def start(self) -> Seconds:
        return 0.0

    @property
    def supervisions(self) -> tuple:
        return ()

    def _resized(self, num_samples: int, sampling_rate: int, id: str) -> "PaddingCut":
        return PaddingCut(id, num_samples / sampling_rate, sampling_rate, num_samples, self.feat_value)

    def truncate(
        self,
        offset: Seconds = 0.0,
        duration: Optional[Seconds] = None,
        keep_overlapping: bool = True,
        new_id: Optional[str] = None,
    ) -> "PaddingCut":
        _, d = _check_window(self, offset, duration)
        return self._resized(d, self.sampling_rate, new_id or next_id(f"{self.id}-trunc"))

    def perturb_speed(self, factor: float) -> "PaddingCut":
        return self._resized(
            _perturb_samples(self.num_samples, factor), self.sampling_rate, f"{self.id}-sp{factor}"
        )

    def perturb_tempo(self, factor: float) -> "PaddingCut":
        return self._resized(
            _perturb_samples(self.num_samples, factor), self.sampling_rate, f"{self.id}-tp{factor}"
        )

    def perturb_volume(self, factor: float) -> "PaddingCut":
        return self

    def resample(self, sampling_rate: int) -> "PaddingCut":
        if sampling_rate == self.sampling_rate:
            return self
        n = int(round(self.num_samples * sampling_rate / self.sampling_rate))
        return self._resized(n, sampling_rate, f"{self.id}-rs{sampling_rate}")

    def load_audio(self) -> SampleBlock:
        return SampleBlock(np.zeros((1, self.num_samples), dtype=np.float32), self.sampling_rate)

    def to_dict(self) -> dict:
        return {
            "type": "padding",
            "id": self.id,
            "duration": self.duration,
            "sampling_rate": self.sampling_rate,
            "num_samples": self.num_samples,
            "feat_value": self.feat_value,
        }

    @staticmethod
    def from_dict(data: dict) -> "PaddingCut":
        return PaddingCut(
            id=_require(data, "id"),
            duration=_require(data, "duration"),
            sampling_rate=_require(data, "sampling_rate"),
            num_samples=_require(data, "num_samples"),
            feat_value=data.get("feat_value", LOG_EPSILON),
        )


@dataclass(frozen=True, slots=True)
class MixTrack:
    cut: Union[MonoCut, PaddingCut]
    offset: Seconds = 0.0
    snr_db: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.cut, MixedCut):
            raise TypeError("mix tracks hold mono or padding cuts; flatten mixed cuts first")
        if self.offset < 0:
            raise ValueError(f"track offset must be >= 0, got {self.offset}")
        object.__setattr__(self, "offset", float(self.offset))

    def to_dict(self) -> dict:
        d = {"cut": self.cut.to_dict(), "offset": self.offset}
        if self.snr_db is not None:
            d["snr_db"] = self.snr_db
        return d

    @staticmethod
    def from_dict(data: dict) -> "MixTrack":
        return MixTrack(
            cut=cut_from_dict(_require(data, "cut")),
            offset=_require(data, "offset"),
            snr_db=data.get("snr_db"),
        )


@dataclass(frozen=True, slots=True)
class MixedCut(Cut):
    """
    A sum of tracks placed at offsets. The first track sets the sampling rate;
    other tracks are resampled to it when loaded. The SNR of a track is measured
    against the first non-padding track without an SNR of its own.
    """

    id: str
    tracks: tuple

    def __post_init__(self):
        self._track()
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if len(self.tracks) < 2:
            raise ValueError(f"mixed cut {self.id!r} needs at least two tracks")
        if self.tracks[0].snr_db is not None:
            raise ValueError(f"mixed cut {self.id!r}: the first track cannot carry an SNR")

    @property
    def start(self) -> Seconds:
        return 0.0

    @property
    def sampling_rate(self) -> int:
        return self.tracks[0].cut.sampling_rate

    def track_extent(self, track: MixTrack) -> Tuple[int, int]:
        """(first sample, number of samples) of a track in the mix's sampling rate."""
        rate = self.sampling_rate
        n = track.cut.num_samples
        if track.cut.sampling_rate != rate:
            n = int(round(n * rate / track.cut.sampling_rate))
        return compute_num_samples(track.offset, rate), n

    @property
    def num_samples(self) -> int:
        return max(sum(self.track_extent(t)) for t in self.tracks)

    @property
    def duration(self) -> Seconds:
        return self.num_samples / self.sampling_rate

    @property
    def supervisions(self) -> List[SupervisionSegment]:
        return [s.with_offset(t.offset) for t in self.tracks for s in t.cut.supervisions]

    def _reference_index(self) -> int:
        for i, t in enumerate(self.tracks):
            if not isinstance(t.cut, PaddingCut) and t.snr_db is None:
                return i
        return 0

    def truncate(
        self,
        offset: Seconds = 0.0,
        duration: Optional[Seconds] = None,
        keep_overlapping: bool = True,
        new_id: Optional[str] = None,
    ) -> Cut:
        """
        Truncate every track to the window, dropping tracks outside it. Gaps at the end
        of the window are filled with padding; if a single track covers the whole
        window, that track's cut is returned directly.
        """
        rate = self.sampling_rate
        a, d = _check_window(self, offset, duration)
        b = a + d
        tracks = []
        for t in self.tracks:
            ts, tl = self.track_extent(t)
            lo, hi = max(a, ts), min(b, ts + tl)
            if hi <= lo:
                continue
            if lo == ts and hi == ts + tl:
                cut = t.cut
            else:
                try:
                    cut = t.cut.truncate((lo - ts) / rate, (hi - lo) / rate, keep_overlapping)
                except RangeError:
                    # sliver that rounds to zero samples at the track's own rate
                    continue
            tracks.append(MixTrack(cut, (lo - a) / rate, t.snr_db))
        if not tracks:
            return PaddingCut.from_samples(d, rate)
        # the SNR reference may have been cut away: promote the next plain track
        if all(t.snr_db is not None or isinstance(t.cut, PaddingCut) for t in tracks):
            i = next((i for i, t in enumerate(tracks) if not isinstance(t.cut, PaddingCut)), 0)
            tracks[i] = replace(tracks[i], snr_db=None)
        if tracks[0].snr_db is not None:
            i = next((i for i, t in enumerate(tracks) if t.snr_db is None), None)
            if i is None:
                tracks[0] = replace(tracks[0], snr_db=None)
            else:
                tracks.insert(0, tracks.pop(i))
        covered = max(
            compute_num_samples(t.offset, rate) + _samples_at(t.cut, rate) for t in tracks
        )
        if covered < d:
            tracks.append(MixTrack(PaddingCut.from_samples(d - covered, rate), covered / rate))
        if len(tracks) == 1:
            return tracks[0].cut
        return MixedCut(new_id or next_id(f"{self.id}-trunc"), tracks)

    def _map_tracks(self, fn, suffix: str, offset_fn=None) -> "MixedCut":
        rate = self.sampling_rate
        tracks = []
        for t in self.tracks:
            off = t.offset if offset_fn is None else offset_fn(compute_num_samples(t.offset, rate))
            tracks.append(MixTrack(fn(t.cut), off, t.snr_db))
        return MixedCut(f"{self.id}-{suffix}", tracks)

    def perturb_speed(self, factor: float) -> "MixedCut":
        rate = self.sampling_rate
        return self._map_tracks(
            lambda c: c.perturb_speed(factor),
            f"sp{factor}",
            lambda off: _perturb_samples(off, factor) / rate,
        )

    def perturb_tempo(self, factor: float) -> "MixedCut":
        rate = self.sampling_rate
        return self._map_tracks(
            lambda c: c.perturb_tempo(factor),
            f"tp{factor}",
            lambda off: _perturb_samples(off, factor) / rate,
        )

    def perturb_volume(self, factor: float) -> "MixedCut":
        return self._map_tracks(lambda c: c.perturb_volume(factor), f"vp{factor}")

    def resample(self, sampling_rate: int) -> "MixedCut":
        if sampling_rate == self.sampling_rate:
            return self
        rate = self.sampling_rate
        return self._map_tracks(
            lambda c: c.resample(sampling_rate),
            f"rs{sampling_rate}",
            lambda off: int(round(off * sampling_rate / rate)) / sampling_rate,
        )

    def load_audio(self) -> SampleBlock:
        rate = self.sampling_rate
        blocks = []
        for i, t in enumerate(self.tracks):
            block = t.cut.load_audio()
            if block.sampling_rate != rate:
                block = resample_samples(block, rate)
            expected = self.track_extent(t)[1]
            if block.num_frames != expected:
                raise MaterializationError(
                    f"track {i} ({t.cut.id!r}) of mixed cut {self.id!r} produced "
                    f"{block.num_frames} frames at {rate} Hz, expected {expected}"
                )
            blocks.append(block)
        reference_energy = audio_energy(blocks[self._reference_index()].samples)
        mixed = SampleBlock(np.zeros((1, 0), dtype=np.float32), rate)
        for t, block in zip(self.tracks, blocks):
            mixed = mix_samples(
                mixed,
                block,
                offset=compute_num_samples(t.offset, rate) / rate,
                snr_db=t.snr_db,
                reference_energy=reference_energy,
            )
        return mixed

    def to_dict(self) -> dict:
        return {"type": "mixed", "id": self.id, "tracks": [t.to_dict() for t in self.tracks]}

    @staticmethod
    def from_dict(data: dict) -> "MixedCut":
        return MixedCut(
            id=_require(data, "id"),
            tracks=tuple(MixTrack.from_dict(t) for t in _require(data, "tracks")),
        )


def _samples_at(cut: Cut, rate: int) -> int:
    n = cut.num_samples
    if cut.sampling_rate != rate:
        n = int(round(n * rate / cut.sampling_rate))
    return n


_CUT_TYPES = {"mono": MonoCut, "padding": PaddingCut, "mixed": MixedCut}


def cut_from_dict(data: dict) -> Cut:
    kind = _require(data, "type")
    try:
        cls = _CUT_TYPES[kind]
    except KeyError:
        raise ManifestParseError(f"unknown cut type {kind!r}", field="type") from None
    return cls.from_dict(data)


# module-level spellings of the cut operations
def truncate(cut: Cut, offset: Seconds, duration: Optional[Seconds] = None, keep_overlapping: bool = True) -> Cut:
    return cut.truncate(offset, duration, keep_overlapping)


def pad(cut: Cut, duration: Seconds, direction: str = "right") -> Cut:
    return cut.pad(duration, direction)


def mix(a: Cut, b: Cut, offset: Seconds = 0.0, snr_db: Optional[float] = None) -> MixedCut:
    return a.mix(b, offset, snr_db)


def append(a: Cut, b: Cut, gap: Seconds = 0.0) -> MixedCut:
    return a.append(b, gap)


def perturb_speed(cut: Cut, factor: float) -> Cut:
    return cut.perturb_speed(factor)


def perturb_tempo(cut: Cut, factor: float) -> Cut:
    return cut.perturb_tempo(factor)


def perturb_volume(cut: Cut, factor: float) -> Cut:
    return cut.perturb_volume(factor)


def resample(cut: Cut, sampling_rate: int) -> Cut:
    return cut.resample(sampling_rate)


def load_audio(cut: Cut) -> SampleBlock:
    return cut.load_audio()
