"""
Frame-level features: the framing law, a reference log-energy extractor,
an uncompressed chunked matrix store, and batch collation.

Store layout (little-endian)::

    b"FSTR1" | u64 index_offset | payload 0 | payload 1 | ... | index

    index  = u32 count, then per entry:
             u16 key_len | key (utf-8) | u64 offset | u32 frames | u32 bins | u8 dtype

Payloads are raw C-order matrices. New matrices overwrite the old index,
then a fresh index is appended and the header pointer updated. Only one
writer may hold a store at a time; this is enforced with a ``<store>.lock``
file created exclusively.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from speechcuts.cut import Cut, MixedCut, MonoCut, PaddingCut
from speechcuts.manifest import FeaturesManifest
from speechcuts.utils import LOG_EPSILON, Seconds, SpeechCutsError, compute_num_samples

MAGIC = b"FSTR1"
_HEADER = struct.Struct("<5sQ")
HEADER_SIZE = _HEADER.size
_ENTRY = struct.Struct("<QIIB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}

DEFAULT_FRAME_LENGTH = 0.025
DEFAULT_FRAME_SHIFT = 0.010


class StoreError(SpeechCutsError):
    pass


class StoreCorruptionError(StoreError):
    pass


class StoreLockedError(StoreError):
    pass


class CollationError(SpeechCutsError, ValueError):
    pass


def frame_count(num_samples: int, frame_length: Seconds, frame_shift: Seconds, sampling_rate: int) -> int:
    """Number of full frames of ``frame_length`` every ``frame_shift`` in ``num_samples``."""
    length = compute_num_samples(frame_length, sampling_rate)
    shift = compute_num_samples(frame_shift, sampling_rate)
    if length <= 0 or shift <= 0:
        raise ValueError(f"frame_length/frame_shift round to zero samples at {sampling_rate} Hz")
    if num_samples < length:
        return 0
    return (num_samples - length) // shift + 1


def logenergy(samples: np.ndarray, frame_length: Seconds, frame_shift: Seconds, sampling_rate: int) -> np.ndarray:
    """``ln(max(mean(x**2), 1e-10))`` per frame of a 1-D signal; shape ``(frames, 1)``."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    n = frame_count(len(x), frame_length, frame_shift, sampling_rate)
    if n == 0:
        return np.zeros((0, 1), dtype=np.float32)
    length = compute_num_samples(frame_length, sampling_rate)
    shift = compute_num_samples(frame_shift, sampling_rate)
    frames = np.lib.stride_tricks.sliding_window_view(x, length)[::shift][:n]
    energy = np.mean(frames * frames, axis=1)
    return np.log(np.maximum(energy, 1e-10)).astype(np.float32)[:, None]


def _read_index(f, path) -> Tuple[int, Dict[str, Tuple[int, int, int, np.dtype]]]:
    size = os.fstat(f.fileno()).st_size
    f.seek(0)
    head = f.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise StoreCorruptionError(f"{path}: expected a {HEADER_SIZE}-byte header, found {len(head)} bytes")
    magic, index_offset = _HEADER.unpack(head)
    if magic != MAGIC:
        raise StoreCorruptionError(f"{path}: bad magic {magic!r}")
    if index_offset + 4 > size:
        raise StoreCorruptionError(
            f"{path}: truncated; expected at least {index_offset + 4} bytes, found {size}"
        )
    f.seek(index_offset)
    raw = f.read()
    (count,) = struct.unpack_from("<I", raw, 0)
    pos = 4
    index = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", raw, pos)
            key = raw[pos + 2 : pos + 2 + klen].decode("utf-8")
            pos += 2 + klen
            offset, frames, bins, code = _ENTRY.unpack_from(raw, pos)
            pos += _ENTRY.size
            index[key] = (offset, frames, bins, _DTYPES[code])
    except (struct.error, KeyError, UnicodeDecodeError) as e:
        raise StoreCorruptionError(f"{path}: damaged index ({e})") from None
    return index_offset, index


def _encode_index(index: Dict[str, Tuple[int, int, int, np.dtype]]) -> bytes:
    parts = [struct.pack("<I", len(index))]
    for key, (offset, frames, bins, dtype) in index.items():
        k = key.encode("utf-8")
        parts.append(struct.pack("<H", len(k)) + k + _ENTRY.pack(offset, frames, bins, _CODES[dtype]))
    return b"".join(parts)


class FeatureStoreWriter:
    """
    Exclusive appender to a store file; creates the store if missing.

        >>> with FeatureStoreWriter("feats.fstr") as w:
        ...     key = w.write(matrix)
    """

    def __init__(self, path):
        self.path = Path(path)
        self.lock_path = Path(f"{self.path}.lock")
        self._f = None
        self._index: Dict[str, Tuple[int, int, int, np.dtype]] = {}
        self._end = HEADER_SIZE

    def open(self) -> "FeatureStoreWriter":
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLockedError(f"{self.path} is locked by another writer ({self.lock_path} exists)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        try:
            if self.path.exists() and self.path.stat().st_size > 0:
                self._f = open(self.path, "r+b")
                self._end, self._index = _read_index(self._f, self.path)
            else:
                self._f = open(self.path, "w+b")
                self._f.write(_HEADER.pack(MAGIC, HEADER_SIZE))
                self._end = HEADER_SIZE
        except BaseException:
            self.lock_path.unlink(missing_ok=True)
            raise
        return self

    def write(self, matrix: np.ndarray, key: Optional[str] = None) -> str:
        """Append a 2-D float32/float64 matrix and return its key."""
        m = np.asarray(matrix)
        if m.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
        dtype = m.dtype.newbyteorder("<")
        if dtype not in _CODES:
            raise ValueError(f"unsupported dtype {m.dtype}; use float32 or float64")
        key = key if key is not None else f"{len(self._index):08x}"
        if key in self._index:
            raise StoreError(f"key {key!r} already exists in {self.path}")
        payload = np.ascontiguousarray(m, dtype=dtype).tobytes()
        self._f.seek(self._end)
        self._f.write(payload)
        self._index[key] = (self._end, m.shape[0], m.shape[1], dtype)
        self._end += len(payload)
        return key

    def close(self) -> None:
        if self._f is None:
            return
        try:
            self._f.seek(self._end)
            self._f.write(_encode_index(self._index))
            self._f.truncate()
            self._f.seek(0)
            self._f.write(_HEADER.pack(MAGIC, self._end))
            self._f.flush()
            os.fsync(self._f.fileno())
        finally:
            self._f.close()
            self._f = None
            self.lock_path.unlink(missing_ok=True)

    def __enter__(self) -> "FeatureStoreWriter":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()


class FeatureStoreReader:
    """Random-access reader with the index loaded once."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as f:
            self.index_offset, self.index = _read_index(f, self.path)
        self.file_size = self.path.stat().st_size

    def keys(self) -> List[str]:
        return list(self.index)

    def overhead_bytes(self) -> int:
        """Bytes that are not payload: the fixed header plus the trailing index."""
        return HEADER_SIZE + (self.file_size - self.index_offset)

    def read(self, key: str, first_frame: int = 0, num_frames: Optional[int] = None) -> np.ndarray:
        offset, frames, bins, dtype = self.index[key]  # KeyError for unknown keys
        num_frames = frames - first_frame if num_frames is None else num_frames
        if first_frame < 0 or num_frames < 0 or first_frame + num_frames > frames:
            raise ValueError(f"frames [{first_frame}, {first_frame + num_frames}) outside 0..{frames} of {key!r}")
        row = bins * dtype.itemsize
        with open(self.path, "rb") as f:
            f.seek(offset + first_frame * row)
            raw = f.read(num_frames * row)
        if len(raw) != num_frames * row:
            raise StoreCorruptionError(
                f"{self.path}: payload of {key!r} truncated; expected {num_frames * row} bytes, got {len(raw)}"
            )
        return np.frombuffer(raw, dtype=dtype).reshape(num_frames, bins).copy()


def store_write(matrix: np.ndarray, store_path, key: Optional[str] = None) -> str:
    with FeatureStoreWriter(store_path) as w:
        return w.write(matrix, key)


def store_read(store_path, key: str) -> np.ndarray:
    return FeatureStoreReader(store_path).read(key)


def _cut_recording_id(cut: Cut) -> str:
    return cut.recording_id if isinstance(cut, MonoCut) else cut.id


def _cut_logenergy(cut: Cut, frame_length: Seconds, frame_shift: Seconds) -> np.ndarray:
    if isinstance(cut, PaddingCut):
        n = frame_count(cut.num_samples, frame_length, frame_shift, cut.sampling_rate)
        return np.full((n, 1), cut.feat_value, dtype=np.float32)
    return logenergy(cut.load_audio().samples[0], frame_length, frame_shift, cut.sampling_rate)


def extract_logenergy(
    cut: Cut,
    store: Optional["FeatureStoreWriter"] = None,
    frame_length: Seconds = DEFAULT_FRAME_LENGTH,
    frame_shift: Seconds = DEFAULT_FRAME_SHIFT,
    storage_path: Optional[str] = None,
) -> Tuple[FeaturesManifest, np.ndarray]:
    """
    Compute log-energy features over the cut's audio.

    :param store: an open writer; the matrix is stored there when given.
    :return: the features manifest (with ``storage_key`` set when stored) and the matrix.
    """
    matrix = _cut_logenergy(cut, frame_length, frame_shift)
    key, path = "", storage_path or ""
    if store is not None:
        key = store.write(matrix)
        path = storage_path or str(store.path)
    manifest = FeaturesManifest(
        recording_id=_cut_recording_id(cut),
        channels=(cut.channel,) if isinstance(cut, MonoCut) else (0,),
        start=cut.start,
        duration=cut.duration,
        extractor_type="logenergy",
        num_frames=matrix.shape[0],
        num_features=1,
        frame_shift=frame_shift,
        sampling_rate=cut.sampling_rate,
        storage_path=path,
        storage_key=key,
        frame_length=frame_length,
    )
    return manifest, matrix


def compute_and_store_features(cuts: Iterable[Cut], store_path, **kw) -> List[Cut]:
    """Extract log-energy for every mono cut and attach the manifests."""
    out = []
    with FeatureStoreWriter(store_path) as w:
        for cut in cuts:
            manifest, _ = extract_logenergy(cut, w, **kw)
            out.append(cut.with_features(manifest) if isinstance(cut, MonoCut) else cut)
    return out


@dataclass
class CollatedBatch:
    """``data`` is (batch, max_len) for audio or (batch, max_frames, bins) for features."""

    data: np.ndarray
    lengths: np.ndarray
    supervision_table: List[Tuple[int, int, int, Optional[str], Optional[str]]] = field(default_factory=list)
    unit: str = "samples"


def _pad_rows(rows: Sequence[np.ndarray], filler: float) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([r.shape[0] for r in rows], dtype=np.int64)
    max_len = int(lengths.max()) if len(rows) else 0
    out = np.full((len(rows), max_len) + rows[0].shape[1:] if rows else (0, 0), filler, dtype=np.float32)
    for i, r in enumerate(rows):
        out[i, : r.shape[0]] = r
    return out, lengths


def collate_audio(batch: Iterable[Cut], filler: float = 0.0) -> CollatedBatch:
    """
    Load every cut (first channel) and right-pad rows with ``filler``.
    Supervision rows are ``(item, start, duration, text, speaker)`` in samples.
    """
    cuts = list(batch)
    rows, table = [], []
    for i, cut in enumerate(cuts):
        rows.append(cut.load_audio().samples[0])
        rate = cut.sampling_rate
        for s in cut.supervisions:
            table.append((i, compute_num_samples(s.start, rate), compute_num_samples(s.duration, rate), s.text, s.speaker))
    data, lengths = _pad_rows(rows, filler)
    return CollatedBatch(data, lengths, table, unit="samples")


def _stored_frames(cut: MonoCut, readers: Dict[str, FeatureStoreReader]) -> np.ndarray:
    feats = cut.features
    reader = readers.get(feats.storage_path)
    if reader is None:
        reader = readers[feats.storage_path] = FeatureStoreReader(feats.storage_path)
    first = int(round((cut.start - feats.start) / feats.frame_shift))
    if feats.frame_length is not None:
        wanted = frame_count(cut.num_samples, feats.frame_length, feats.frame_shift, feats.sampling_rate)
    else:
        wanted = int(round(cut.duration / feats.frame_shift))
    if first < 0 or first + wanted > feats.num_frames:
        raise CollationError(
            f"cut {cut.id!r} spans frames [{first}, {first + wanted}) outside its features (0..{feats.num_frames})"
        )
    return reader.read(feats.storage_key, first, wanted)


def collate_features(
    batch: Iterable[Cut],
    on_the_fly: bool = False,
    frame_length: Seconds = DEFAULT_FRAME_LENGTH,
    frame_shift: Seconds = DEFAULT_FRAME_SHIFT,
    filler: float = LOG_EPSILON,
) -> CollatedBatch:
    """
    Collate feature matrices, padding frames with ``filler``.

    Mono cuts with a features manifest are read from their store (a truncated
    cut reads the matching frame range). Other cuts need ``on_the_fly=True``, in
    which case log-energy is computed from their audio. Supervision rows are in
    frames: ``start = round(start / frame_shift)``.

    :raises CollationError: missing features without ``on_the_fly``, or
        different frame shifts within the batch.
    """
    cuts = list(batch)
    readers: Dict[str, FeatureStoreReader] = {}
    rows, shifts = [], set()
    for cut in cuts:
        if isinstance(cut, MonoCut) and cut.features is not None:
            rows.append(_stored_frames(cut, readers))
            shifts.add(cut.features.frame_shift)
        elif on_the_fly:
            rows.append(_cut_logenergy(cut, frame_length, frame_shift))
            shifts.add(float(frame_shift))
        else:
            raise CollationError(f"cut {cut.id!r} has no features; pass on_the_fly=True to compute them")
    if len(shifts) > 1:
        raise CollationError(f"mixed frame shifts in one batch: {sorted(shifts)}")
    shift = shifts.pop() if shifts else frame_shift
    table = []
    for i, cut in enumerate(cuts):
        for s in cut.supervisions:
            table.append((i, int(round(s.start / shift)), int(round(s.duration / shift)), s.text, s.speaker))
    data, lengths = _pad_rows(rows, filler)
    return CollatedBatch(data, lengths, table, unit="frames")
