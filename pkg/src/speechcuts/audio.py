"""
WAV (RIFF, PCM int16 / IEEE float32) decoding with seek-based partial reads,
16-bit writing, and the sample-level primitives used when materializing cuts:
SNR-controlled mixing and linear-interpolation resampling.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional, Sequence, Tuple

import numpy as np

from speechcuts.utils import TIME_TOLERANCE, RangeError, Seconds, SpeechCutsError

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(SpeechCutsError):
    pass


class UnsupportedSource(AudioError):
    pass


class DecodeError(AudioError):
    def __init__(self, chunk: str, message: str):
        self.chunk = chunk
        super().__init__(f"chunk {chunk!r}: {message}")


class SilentMixError(AudioError, ValueError):
    """An SNR was requested for a signal with zero energy."""


class IOStats:
    """Process-wide counters of bytes pulled from audio sources (for laziness checks)."""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.opens = 0
        self.header_bytes = 0
        self.data_bytes = 0

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.data_bytes

    def snapshot(self) -> Tuple[int, int, int]:
        return self.opens, self.header_bytes, self.data_bytes


IO_STATS = IOStats()


@dataclass(frozen=True)
class SampleBlock:
    """``samples`` has shape (channels, frames); values nominally in [-1, 1]."""

    samples: np.ndarray
    sampling_rate: int

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (channels, frames), got shape {self.samples.shape}")

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> Seconds:
        return self.num_frames / self.sampling_rate

    def __len__(self) -> int:
        return self.num_frames


@dataclass(frozen=True)
class WavHeaderInfo:
    sampling_rate: int
    num_channels: int
    bits_per_sample: int
    sample_format: str  # "pcm" or "float"
    num_frames: int
    data_offset: int

    @property
    def block_align(self) -> int:
        return self.num_channels * self.bits_per_sample // 8

    @property
    def duration(self) -> Seconds:
        return self.num_frames / self.sampling_rate


class _CountingReader:
    def __init__(self, f: BinaryIO):
        self.f = f
        self.bucket = "header_bytes"

    def read(self, n: int) -> bytes:
        data = self.f.read(n)
        setattr(IO_STATS, self.bucket, getattr(IO_STATS, self.bucket) + len(data))
        return data

    def seek(self, pos: int, whence: int = 0) -> int:
        return self.f.seek(pos, whence)

    def tell(self) -> int:
        return self.f.tell()


def _read_exact(f, n: int, chunk: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DecodeError(chunk, f"truncated: expected {n} bytes, got {len(data)}")
    return data


def parse_wav_header(f) -> WavHeaderInfo:
    """Walk RIFF chunks up to ``data``; unknown chunks are skipped."""
    start = f.tell()
    f.seek(0, os.SEEK_END)
    file_size = f.tell()
    f.seek(start)

    riff = f.read(12)
    if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
        raise DecodeError("RIFF", "not a RIFF/WAVE file")
    fmt = None
    while True:
        head = f.read(8)
        if len(head) < 8:
            raise DecodeError("data" if fmt else "fmt ", "chunk not found before end of file")
        chunk_id, size = head[:4], struct.unpack("<I", head[4:])[0]
        name = chunk_id.decode("latin-1")
        if chunk_id == b"fmt ":
            if size < 16:
                raise DecodeError(name, f"chunk too small ({size} bytes)")
            body = _read_exact(f, size + (size & 1), name)
            tag, channels, rate, _byte_rate, _align, bits = struct.unpack("<HHIIHH", body[:16])
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise DecodeError(name, "extensible format without sub-format GUID")
                tag = struct.unpack("<H", body[24:26])[0]
            if tag == WAVE_FORMAT_PCM and bits == 16:
                fmt = (rate, channels, bits, "pcm")
            elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
                fmt = (rate, channels, bits, "float")
            else:
                raise DecodeError(name, f"unsupported encoding: format tag {tag}, {bits} bits")
            if channels < 1 or rate < 1:
                raise DecodeError(name, f"invalid channels={channels} / rate={rate}")
        elif chunk_id == b"data":
            if fmt is None:
                raise DecodeError("fmt ", "'data' chunk precedes 'fmt ' chunk")
            data_offset = f.tell()
            available = max(file_size - data_offset, 0)
            size = min(size, available)  # streamed writers leave bogus sizes
            rate, channels, bits, kind = fmt
            return WavHeaderInfo(
                sampling_rate=rate,
                num_channels=channels,
                bits_per_sample=bits,
                sample_format=kind,
                num_frames=size // (channels * bits // 8),
                data_offset=data_offset,
            )
        else:
            f.seek(size + (size & 1), os.SEEK_CUR)


def _open_source(source) -> BinaryIO:
    if isinstance(source, (str, os.PathLike)):
        IO_STATS.opens += 1
        return open(source, "rb")
    kind = source.kind
    if kind == "command":
        raise UnsupportedSource(f"command sources cannot be loaded: {source.location!r}")
    IO_STATS.opens += 1
    if kind == "memory":
        return io.BytesIO(source.location)
    if kind == "file":
        return open(source.location, "rb")
    raise UnsupportedSource(f"unsupported source kind {kind!r}")


def read_wav_header(source) -> WavHeaderInfo:
    with _open_source(source) as f:
        return parse_wav_header(_CountingReader(f))


def seconds_to_frame_range(
    offset: Seconds,
    duration: Optional[Seconds],
    sampling_rate: int,
    total_frames: int,
    what: str = "audio",
) -> Tuple[int, int]:
    """Map ``[offset, offset + duration)`` to frame indices, clipping within TIME_TOLERANCE."""
    if offset < 0:
        raise RangeError(f"{what}: negative offset {offset}")
    start = int(round(offset * sampling_rate))
    if start > total_frames:
        if (start - total_frames) / sampling_rate > TIME_TOLERANCE:
            raise RangeError(
                f"{what}: offset {offset} s is beyond the end ({total_frames / sampling_rate} s)"
            )
        start = total_frames
    if duration is None:
        return start, total_frames
    if duration < 0:
        raise RangeError(f"{what}: negative duration {duration}")
    end = int(round((offset + duration) * sampling_rate))
    if end > total_frames:
        if (end - total_frames) / sampling_rate > TIME_TOLERANCE:
            raise RangeError(
                f"{what}: window ends at {offset + duration} s, past the end "
                f"({total_frames / sampling_rate} s)"
            )
        end = total_frames
    return start, max(end, start)


def _local_channel_indices(source, channels: Optional[Sequence[int]]) -> list:
    if channels is None:
        return list(range(len(source.channel_ids)))
    try:
        return [source.channel_ids.index(c) for c in channels]
    except ValueError:
        raise RangeError(f"channels {list(channels)} not provided by source {source.channel_ids}") from None


def _decode(raw: bytes, info: WavHeaderInfo) -> np.ndarray:
    if info.sample_format == "pcm":
        data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / np.float32(32768.0)
    else:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return data.reshape(-1, info.num_channels).T


def _read_frames(f: _CountingReader, info: WavHeaderInfo, start: int, count: int, local: list) -> np.ndarray:
    count = max(0, min(count, info.num_frames - start))
    f.seek(info.data_offset + start * info.block_align)
    f.bucket = "data_bytes"
    raw = f.read(count * info.block_align)
    count = len(raw) // info.block_align
    samples = _decode(raw[: count * info.block_align], info)
    if local != list(range(info.num_channels)):
        samples = samples[local]
    return np.ascontiguousarray(samples)


def read_wav_frames(source, start: int, num_frames: int, channels: Optional[Sequence[int]] = None) -> SampleBlock:
    """
    Read ``num_frames`` frames starting at frame ``start``.

    Only the header and the requested byte range are read. ``channels`` are the
    recording channel ids listed in ``source.channel_ids`` (all when omitted).
    Frames past the end of the data are not returned (the block may be shorter).
    """
    local = _local_channel_indices(source, channels)
    with _open_source(source) as fh:
        f = _CountingReader(fh)
        info = parse_wav_header(f)
        if start < 0 or start > info.num_frames:
            raise RangeError(f"start frame {start} outside [0, {info.num_frames}]")
        samples = _read_frames(f, info, start, num_frames, local)
    return SampleBlock(samples, info.sampling_rate)


def read_wav(
    source,
    offset: Seconds = 0.0,
    duration: Optional[Seconds] = None,
    channels: Optional[Sequence[int]] = None,
) -> SampleBlock:
    """
    Decode ``[offset, offset + duration)`` of a file or in-memory WAV source.

    Frames ``round(offset * rate)`` up to ``round((offset + duration) * rate)`` are
    returned; a window ending at most TIME_TOLERANCE past the end is clipped.
    """
    local = _local_channel_indices(source, channels)
    with _open_source(source) as fh:
        f = _CountingReader(fh)
        info = parse_wav_header(f)
        start, end = seconds_to_frame_range(offset, duration, info.sampling_rate, info.num_frames)
        samples = _read_frames(f, info, start, end - start, local)
    return SampleBlock(samples, info.sampling_rate)


def write_wav(block: SampleBlock, destination, sample_format: str = "pcm16") -> int:
    """
    Write a block as a canonical 44-byte-header WAV file.

    16-bit output is scaled by 32768, rounded and clamped to [-32768, 32767];
    ``sample_format="float32"`` writes IEEE floats instead.
    """
    if block.num_frames == 0 or block.num_channels == 0:
        raise ValueError("cannot write an empty block")
    interleaved = block.samples.T
    if sample_format == "pcm16":
        scaled = np.clip(np.rint(interleaved.astype(np.float64) * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif sample_format == "float32":
        payload = interleaved.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown sample_format {sample_format!r}")
    channels = block.num_channels
    align = channels * bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, tag, channels, block.sampling_rate, block.sampling_rate * align, align, bits
    )
    header += b"data" + struct.pack("<I", len(payload))
    data = header + payload
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as f:
            f.write(data)
    else:
        destination.write(data)
    return len(data)


def wav_bytes(block: SampleBlock, sample_format: str = "pcm16") -> bytes:
    buf = io.BytesIO()
    write_wav(block, buf, sample_format=sample_format)
    return buf.getvalue()


def audio_energy(samples: np.ndarray) -> float:
    """Mean squared amplitude."""
    if samples.size == 0:
        return 0.0
    x = samples.astype(np.float64)
    return float(np.mean(x * x))


def mix_samples(
    reference: SampleBlock,
    added: SampleBlock,
    offset: Seconds,
    snr_db: Optional[float] = None,
    *,
    reference_energy: Optional[float] = None,
) -> SampleBlock:
    """
    Overlay ``added`` onto ``reference`` starting ``offset`` seconds in.

    With ``snr_db`` set, ``added`` is scaled so that
    ``10 * log10(E_ref / E_scaled) == snr_db`` where E is mean squared amplitude of
    each block (``reference_energy`` overrides E_ref, e.g. when ``reference`` already
    contains padding). No clipping is applied.
    """
    if reference.sampling_rate != added.sampling_rate:
        raise ValueError(
            f"sampling rate mismatch: {reference.sampling_rate} vs {added.sampling_rate}"
        )
    if reference.num_channels != added.num_channels:
        raise ValueError(f"channel mismatch: {reference.num_channels} vs {added.num_channels}")
    if offset < 0:
        raise ValueError(f"offset must be >= 0, got {offset}")
    off = int(round(offset * reference.sampling_rate))
    gain = 1.0
    if snr_db is not None:
        e_add = audio_energy(added.samples)
        if e_add == 0:
            raise SilentMixError(f"cannot mix a silent signal at {snr_db} dB SNR")
        e_ref = audio_energy(reference.samples) if reference_energy is None else reference_energy
        gain = float(np.sqrt(e_ref / (e_add * 10.0 ** (snr_db / 10.0))))
    length = max(reference.num_frames, off + added.num_frames)
    out = np.zeros((reference.num_channels, length), dtype=np.float64)
    out[:, : reference.num_frames] += reference.samples
    out[:, off : off + added.num_frames] += gain * added.samples.astype(np.float64)
    return SampleBlock(out.astype(np.float32), reference.sampling_rate)


def interpolate(samples: np.ndarray, positions: np.ndarray, first_index: int = 0) -> np.ndarray:
    """
    Linearly interpolate each row at fractional sample ``positions``.

    ``samples`` holds input frames ``first_index, first_index + 1, ...``; positions
    outside the available range clamp to the edge frames.
    """
    channels, n = samples.shape
    if n == 0:
        return np.zeros((channels, len(positions)), dtype=np.float32)
    grid = np.arange(first_index, first_index + n, dtype=np.float64)
    out = np.empty((channels, len(positions)), dtype=np.float32)
    for c in range(channels):
        out[c] = np.interp(positions, grid, samples[c])
    return out


def resample_samples(block: SampleBlock, target_rate: int) -> SampleBlock:
    """Linear-interpolation resampler; output has ``round(frames * target / source)`` frames."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == block.sampling_rate:
        return block
    n_out = int(round(block.num_frames * target_rate / block.sampling_rate))
    positions = np.arange(n_out, dtype=np.float64) * (block.sampling_rate / target_rate)
    return SampleBlock(interpolate(block.samples, positions), target_rate)
