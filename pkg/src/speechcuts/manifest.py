"""
Manifest data model: recordings, supervision segments and feature manifests,
plus JSONL(.gz) reading/writing and cross-manifest validation.

All manifest values are frozen dataclasses; derive modified copies with
:func:`dataclasses.replace`.
"""
from __future__ import annotations

import base64
import gzip
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Any, ClassVar, Dict, Iterable, Iterator, List, Optional, Sequence, Union

from speechcuts.utils import TIME_TOLERANCE, Seconds, SpeechCutsError

Pathlike = Union[str, os.PathLike]

FILE = "file"
MEMORY = "memory"
COMMAND = "command"
SOURCE_KINDS = (FILE, MEMORY, COMMAND)

GZIP_MAGIC = b"\x1f\x8b"


class ManifestParseError(SpeechCutsError):
    """A manifest line could not be parsed into the requested manifest kind."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.message = message
        self.line = line
        self.field = field
        super().__init__(self._render())

    def _render(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field is not None:
            where.append(f"field {self.field!r}")
        return f"{', '.join(where)}: {self.message}" if where else self.message

    def at_line(self, line: int) -> "ManifestParseError":
        self.line = line
        self.args = (self._render(),)
        return self


class ManifestValidationError(SpeechCutsError, ValueError):
    """A manifest value violates one of its invariants."""

    def __init__(self, message: str, field: Optional[str] = None, id: Optional[str] = None):
        self.field = field
        self.id = id
        prefix = []
        if id is not None:
            prefix.append(f"id={id!r}")
        if field is not None:
            prefix.append(f"field={field!r}")
        super().__init__(f"[{' '.join(prefix)}] {message}" if prefix else message)


class ManifestWriteError(SpeechCutsError, OSError):
    pass


def _require(data: dict, key: str) -> Any:
    try:
        return data[key]
    except KeyError:
        raise ManifestParseError(f"missing required field {key!r}", field=key) from None


def _split_extras(data: dict, known: Iterable[str]) -> Dict[str, Any]:
    known = set(known)
    return {k: v for k, v in data.items() if k not in known}


@dataclass(frozen=True, slots=True)
class AudioSource:
    """
    Where the samples of one or more recording channels live.

    ``location`` is a path for ``"file"`` sources, raw WAV bytes for ``"memory"``
    sources and a shell pipeline for ``"command"`` sources (the latter exists only
    so that Kaldi ``wav.scp`` pipe entries survive a round trip; it cannot be loaded).
    """

    kind: str
    channel_ids: tuple
    location: Union[str, bytes]

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ManifestValidationError(f"unknown source kind {self.kind!r}", field="kind")
        ch = tuple(int(c) for c in self.channel_ids)
        object.__setattr__(self, "channel_ids", ch)
        if not ch:
            raise ManifestValidationError("channel_ids must be non-empty", field="channel_ids")
        if any(c < 0 for c in ch) or any(b <= a for a, b in zip(ch, ch[1:])):
            raise ManifestValidationError(
                f"channel_ids must be non-negative and strictly increasing, got {list(ch)}",
                field="channel_ids",
            )
        if self.kind == MEMORY:
            if not isinstance(self.location, (bytes, bytearray)):
                raise ManifestValidationError("memory source needs bytes", field="location")
            object.__setattr__(self, "location", bytes(self.location))
        elif not isinstance(self.location, str) or not self.location:
            raise ManifestValidationError(
                f"{self.kind} source needs a non-empty string location", field="location"
            )

    def to_dict(self) -> dict:
        location = self.location
        if self.kind == MEMORY:
            location = base64.b64encode(location).decode("ascii")
        return {"kind": self.kind, "channel_ids": list(self.channel_ids), "location": location}

    @staticmethod
    def from_dict(data: dict) -> "AudioSource":
        kind = _require(data, "kind")
        location = _require(data, "location")
        if kind == MEMORY:
            location = base64.b64decode(location)
        return AudioSource(kind=kind, channel_ids=tuple(_require(data, "channel_ids")), location=location)

    def with_path_prefix(self, prefix: Pathlike) -> "AudioSource":
        if self.kind != FILE or os.path.isabs(self.location):
            return self
        return replace(self, location=str(Path(prefix) / self.location))


@dataclass(frozen=True, slots=True)
class Recording:
    """
    Physical audio: one or more sources that together provide ``channel_ids``.

    ``num_samples`` is authoritative; ``duration`` must agree with it to within one sample.
    """

    KIND: ClassVar[str] = "recording"

    id: str
    sources: tuple
    sampling_rate: int
    num_samples: int
    duration: Seconds
    extras: Dict[str, Any] = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "duration", float(self.duration))
        if not isinstance(self.id, str) or not self.id:
            raise ManifestValidationError("id must be a non-empty string", field="id", id=self.id)
        if not isinstance(self.sampling_rate, int) or self.sampling_rate <= 0:
            raise ManifestValidationError(
                f"sampling_rate must be a positive integer, got {self.sampling_rate!r}",
                field="sampling_rate",
                id=self.id,
            )
        if not isinstance(self.num_samples, int) or self.num_samples < 0:
            raise ManifestValidationError(
                f"num_samples must be a non-negative integer, got {self.num_samples!r}",
                field="num_samples",
                id=self.id,
            )
        if self.duration < 0:
            raise ManifestValidationError("duration must be >= 0", field="duration", id=self.id)
        if abs(self.duration - self.num_samples / self.sampling_rate) > 1.0 / self.sampling_rate:
            raise ManifestValidationError(
                f"duration {self.duration} disagrees with num_samples/sampling_rate "
                f"= {self.num_samples / self.sampling_rate}",
                field="duration",
                id=self.id,
            )
        if not self.sources:
            raise ManifestValidationError("at least one source is required", field="sources", id=self.id)
        seen: set = set()
        for src in self.sources:
            overlap = seen.intersection(src.channel_ids)
            if overlap:
                raise ManifestValidationError(
                    f"channel ids {sorted(overlap)} provided by more than one source",
                    field="channel_ids",
                    id=self.id,
                )
            seen.update(src.channel_ids)

    @property
    def channel_ids(self) -> List[int]:
        return sorted(c for s in self.sources for c in s.channel_ids)

    @property
    def num_channels(self) -> int:
        return len(self.channel_ids)

    def source_for_channel(self, channel: int) -> AudioSource:
        for src in self.sources:
            if channel in src.channel_ids:
                return src
        raise KeyError(f"recording {self.id!r} has no channel {channel}")

    def to_dict(self) -> dict:
        d = dict(self.extras)
        d.update(
            id=self.id,
            sources=[s.to_dict() for s in self.sources],
            sampling_rate=self.sampling_rate,
            num_samples=self.num_samples,
            duration=self.duration,
            channel_ids=self.channel_ids,
        )
        return d

    @staticmethod
    def from_dict(data: dict) -> "Recording":
        known = ("id", "sources", "sampling_rate", "num_samples", "duration", "channel_ids")
        # scalar fields first so that a bare {"id": ...} reports sampling_rate
        rec_id = _require(data, "id")
        sampling_rate = _require(data, "sampling_rate")
        num_samples = _require(data, "num_samples")
        duration = _require(data, "duration")
        rec = Recording(
            id=rec_id,
            sources=tuple(AudioSource.from_dict(s) for s in _require(data, "sources")),
            sampling_rate=sampling_rate,
            num_samples=num_samples,
            duration=duration,
            extras=_split_extras(data, known),
        )
        if "channel_ids" in data and list(data["channel_ids"]) != rec.channel_ids:
            raise ManifestValidationError(
                f"channel_ids {data['channel_ids']} differ from the union of source channels "
                f"{rec.channel_ids}",
                field="channel_ids",
                id=rec.id,
            )
        return rec

    def with_path_prefix(self, prefix: Pathlike) -> "Recording":
        return replace(self, sources=tuple(s.with_path_prefix(prefix) for s in self.sources))

    def load_audio(
        self,
        offset: Seconds = 0.0,
        duration: Optional[Seconds] = None,
        channels: Optional[Sequence[int]] = None,
    ):
        """
        Read (part of) the recording as a :class:`~speechcuts.audio.SampleBlock`.

        Only the byte range covering ``[offset, offset + duration)`` is read.
        """
        from speechcuts.audio import SampleBlock, read_wav_frames, seconds_to_frame_range

        channels = list(self.channel_ids if channels is None else channels)
        start, end = seconds_to_frame_range(
            offset, duration, self.sampling_rate, self.num_samples, what=f"recording {self.id!r}"
        )
        rows = []
        for ch in channels:
            src = self.source_for_channel(ch)
            block = read_wav_frames(src, start, end - start, channels=[ch])
            rows.append(block.samples[0])
        import numpy as np

        data = np.stack(rows) if rows else np.zeros((0, end - start), dtype=np.float32)
        return SampleBlock(data, self.sampling_rate)


@dataclass(frozen=True, slots=True)
class SupervisionSegment:
    """A labelled time span of one channel of a recording."""

    KIND: ClassVar[str] = "supervision"

    id: str
    recording_id: str
    start: Seconds
    duration: Seconds
    channel: int = 0
    text: Optional[str] = None
    speaker: Optional[str] = None
    language: Optional[str] = None
    gender: Optional[str] = None
    custom: Optional[Dict[str, str]] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "duration", float(self.duration))
        if not (self.duration > 0):
            raise ManifestValidationError(
                f"duration must be > 0, got {self.duration}", field="duration", id=self.id
            )
        if not isinstance(self.channel, int) or self.channel < 0:
            raise ManifestValidationError("channel must be a non-negative integer", field="channel", id=self.id)

    @property
    def end(self) -> Seconds:
        return self.start + self.duration

    def with_offset(self, offset: Seconds) -> "SupervisionSegment":
        from speechcuts.utils import round_time

        return replace(self, start=round_time(self.start + offset))

    def to_dict(self) -> dict:
        d = dict(self.extras)
        d.update(
            id=self.id,
            recording_id=self.recording_id,
            start=self.start,
            duration=self.duration,
            channel=self.channel,
        )
        for key in ("text", "speaker", "language", "gender", "custom"):
            value = getattr(self, key)
            if value is not None:
                d[key] = dict(value) if key == "custom" else value
        return d

    @staticmethod
    def from_dict(data: dict) -> "SupervisionSegment":
        known = (
            "id", "recording_id", "start", "duration", "channel",
            "text", "speaker", "language", "gender", "custom",
        )
        return SupervisionSegment(
            id=_require(data, "id"),
            recording_id=_require(data, "recording_id"),
            start=_require(data, "start"),
            duration=_require(data, "duration"),
            channel=data.get("channel", 0),
            text=data.get("text"),
            speaker=data.get("speaker"),
            language=data.get("language"),
            gender=data.get("gender"),
            custom=data.get("custom"),
            extras=_split_extras(data, known),
        )


@dataclass(frozen=True, slots=True)
class FeaturesManifest:
    """
    Shape and storage location of a feature matrix computed over
    ``[start, start + duration)`` of a recording (or a cut's materialized audio).

    ``frame_length`` is optional; when present, ``num_frames`` is checked against
    :func:`speechcuts.features.frame_count`.
    """

    KIND: ClassVar[str] = "features"

    recording_id: str
    channels: tuple
    start: Seconds
    duration: Seconds
    extractor_type: str
    num_frames: int
    num_features: int
    frame_shift: Seconds
    sampling_rate: int
    storage_path: str
    storage_key: str
    frame_length: Optional[Seconds] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "duration", float(self.duration))
        object.__setattr__(self, "frame_shift", float(self.frame_shift))
        ident = f"{self.recording_id}:{self.storage_key}"
        if not (self.frame_shift > 0):
            raise ManifestValidationError("frame_shift must be > 0", field="frame_shift", id=ident)
        if not isinstance(self.num_features, int) or self.num_features <= 0:
            raise ManifestValidationError("num_features must be > 0", field="num_features", id=ident)
        if not isinstance(self.num_frames, int) or self.num_frames < 0:
            raise ManifestValidationError("num_frames must be >= 0", field="num_frames", id=ident)
        if self.frame_length is not None:
            from speechcuts.features import frame_count
            from speechcuts.utils import compute_num_samples

            expected = frame_count(
                compute_num_samples(self.duration, self.sampling_rate),
                self.frame_length,
                self.frame_shift,
                self.sampling_rate,
            )
            if expected != self.num_frames:
                raise ManifestValidationError(
                    f"num_frames={self.num_frames} but the framing law gives {expected}",
                    field="num_frames",
                    id=ident,
                )

    @property
    def end(self) -> Seconds:
        return self.start + self.duration

    def to_dict(self) -> dict:
        d = dict(self.extras)
        d.update(
            recording_id=self.recording_id,
            channels=list(self.channels),
            start=self.start,
            duration=self.duration,
            extractor_type=self.extractor_type,
            num_frames=self.num_frames,
            num_features=self.num_features,
            frame_shift=self.frame_shift,
            sampling_rate=self.sampling_rate,
            storage_path=self.storage_path,
            storage_key=self.storage_key,
        )
        if self.frame_length is not None:
            d["frame_length"] = self.frame_length
        return d

    @staticmethod
    def from_dict(data: dict) -> "FeaturesManifest":
        known = (
            "recording_id", "channels", "start", "duration", "extractor_type", "num_frames",
            "num_features", "frame_shift", "sampling_rate", "storage_path", "storage_key",
            "frame_length",
        )
        kwargs = {k: _require(data, k) for k in known if k != "frame_length"}
        return FeaturesManifest(
            **kwargs, frame_length=data.get("frame_length"), extras=_split_extras(data, known)
        )


Manifest = Union[Recording, SupervisionSegment, FeaturesManifest]


def _resolve_kind(kind) -> Any:
    if isinstance(kind, str):
        if kind in ("recording", "recordings"):
            return Recording
        if kind in ("supervision", "supervisions"):
            return SupervisionSegment
        if kind == "features":
            return FeaturesManifest
        if kind in ("cut", "cuts"):
            from speechcuts.cut import cut_from_dict

            return cut_from_dict
        raise ValueError(f"unknown manifest kind {kind!r}")
    return kind


def manifest_kind(item: Any) -> str:
    kind = getattr(item, "KIND", None)
    if kind is None:
        raise TypeError(f"{type(item).__name__} is not a manifest")
    return kind


def dumps_line(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def _open_binary_writer(destination, compress: bool):
    if isinstance(destination, (str, os.PathLike)):
        raw = open(destination, "wb")
        owns = True
    else:
        raw = destination
        owns = False
    if compress:
        # mtime=0 and an empty name keep gzip output byte-identical across runs
        return gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0), raw, owns
    return raw, raw, owns


def write_manifests(items: Iterable[Any], destination, compress: bool = False) -> int:
    """
    Write manifests as JSON lines (keys sorted, compact separators).

    :param items: manifests of a single kind (cuts of any type count as one kind).
    :param destination: a path or a writable binary stream.
    :param compress: gzip-wrap the output.
    :return: the number of lines written.
    """
    sink, raw, owns = _open_binary_writer(destination, compress)
    count = 0
    offset = 0
    kind = None
    try:
        for item in items:
            k = manifest_kind(item)
            if kind is None:
                kind = k
            elif k != kind:
                raise TypeError(f"cannot mix manifest kinds in one file: {kind!r} and {k!r}")
            line = dumps_line(item.to_dict()).encode("utf-8")
            try:
                sink.write(line)
            except OSError as e:
                raise ManifestWriteError(f"write failed at byte offset {offset}: {e}") from e
            offset += len(line)
            count += 1
        if sink is not raw:
            try:
                sink.close()
            except OSError as e:
                raise ManifestWriteError(f"write failed at byte offset {offset}: {e}") from e
        elif hasattr(raw, "flush"):
            raw.flush()
    finally:
        if owns:
            raw.close()
    return count


def save_manifests(items: Iterable[Any], path: Pathlike) -> int:
    """Write to ``path``; gzip is chosen by a ``.gz`` suffix."""
    return write_manifests(items, path, compress=str(path).endswith(".gz"))


def _open_text_reader(source):
    if isinstance(source, (str, os.PathLike)):
        raw = open(source, "rb")
        owns = True
    else:
        raw = source
        owns = False
    if hasattr(raw, "peek"):
        head = raw.peek(2)[:2]
    elif raw.seekable():
        pos = raw.tell()
        head = raw.read(2)
        raw.seek(pos)
    else:
        raw = io.BufferedReader(raw)
        head = raw.peek(2)[:2]
    stream = gzip.GzipFile(fileobj=raw, mode="rb") if head == GZIP_MAGIC else raw
    return io.TextIOWrapper(stream, encoding="utf-8"), (raw if owns else None)


def iter_jsonl(source) -> Iterator[tuple]:
    """Yield ``(line_number, dict)`` pairs from a JSONL or gzip-JSONL path/stream."""
    text, owned = _open_text_reader(source)
    try:
        for lineno, line in enumerate(text, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestParseError(f"malformed JSON: {e.msg}", line=lineno) from None
            if not isinstance(data, dict):
                raise ManifestParseError("expected a JSON object", line=lineno)
            yield lineno, data
    finally:
        text.detach() if owned is None else text.close()


def read_manifests(source, kind) -> Iterator[Any]:
    """
    Lazily parse manifests from a JSONL (optionally gzip) path or binary stream.

    The gzip wrapper is detected from the first two bytes. Items are yielded in file
    order and only one line is held in memory at a time. Parse errors carry the
    1-based line number; invariant violations raise :class:`ManifestValidationError`.
    """
    factory = _resolve_kind(kind)
    from_dict = getattr(factory, "from_dict", factory)
    for lineno, data in iter_jsonl(source):
        try:
            yield from_dict(data)
        except ManifestParseError as e:
            raise e.at_line(lineno) from None
        except ManifestValidationError as e:
            raise ManifestValidationError(f"line {lineno}: {e}", field=e.field, id=e.id) from None
        except (TypeError, ValueError, KeyError) as e:
            raise ManifestParseError(f"invalid value: {e}", line=lineno) from None


def load_manifests(source, kind) -> List[Any]:
    return list(read_manifests(source, kind))


@dataclass
class ValidationReport:
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.errors or self.warnings)

    def extend(self, other: "ValidationReport") -> None:
        self.errors.extend(other.errors)
        self.warnings.extend(other.warnings)

    def render(self) -> str:
        lines = [f"ERROR: {e}" for e in self.errors] + [f"WARNING: {w}" for w in self.warnings]
        lines.append(f"{len(self.errors)} errors, {len(self.warnings)} warnings")
        return "\n".join(lines)


def validate(
    recordings: Iterable[Recording],
    supervisions: Iterable[SupervisionSegment] = (),
    features: Optional[Iterable[FeaturesManifest]] = None,
) -> ValidationReport:
    """
    Cross-check manifests. Problems become report entries; nothing is raised.

    Recordings are indexed (id, duration, channels) while streaming, so supervisions
    and features may be lazy iterables of any length.
    """
    report = ValidationReport()
    index: Dict[str, Recording] = {}
    for rec in recordings:
        if rec.id in index:
            report.errors.append(f"recording {rec.id}: duplicate id")
            continue
        index[rec.id] = rec
        ch = rec.channel_ids
        if ch != list(range(len(ch))):
            report.warnings.append(f"recording {rec.id}: channel_ids {ch} are not contiguous from 0")

    seen_sups: set = set()
    for sup in supervisions:
        if sup.id in seen_sups:
            report.errors.append(f"supervision {sup.id}: duplicate id")
        seen_sups.add(sup.id)
        rec = index.get(sup.recording_id)
        if rec is None:
            report.errors.append(f"supervision {sup.id}: dangling recording_id {sup.recording_id!r}")
            continue
        if sup.start < -TIME_TOLERANCE:
            report.errors.append(
                f"supervision {sup.id}: start {sup.start} s is before the recording start "
                f"by more than the tolerance"
            )
        excess = sup.end - rec.duration
        if excess > TIME_TOLERANCE:
            report.errors.append(
                f"supervision {sup.id}: exceeds recording end by {excess:.6g} s > tolerance "
                f"({TIME_TOLERANCE} s)"
            )
        if sup.channel not in rec.channel_ids:
            report.errors.append(
                f"supervision {sup.id}: channel {sup.channel} not in recording "
                f"{rec.id} channels {rec.channel_ids}"
            )

    for feat in features or ():
        ident = f"features {feat.recording_id}:{feat.storage_key}"
        rec = index.get(feat.recording_id)
        if rec is None:
            report.errors.append(f"{ident}: dangling recording_id {feat.recording_id!r}")
            continue
        if feat.start < -TIME_TOLERANCE or feat.end - rec.duration > TIME_TOLERANCE:
            report.errors.append(f"{ident}: span [{feat.start}, {feat.end}) outside recording")
        missing = set(feat.channels) - set(rec.channel_ids)
        if missing:
            report.errors.append(f"{ident}: channels {sorted(missing)} not in recording")
    return report
