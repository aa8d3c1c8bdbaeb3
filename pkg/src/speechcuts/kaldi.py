"""
Kaldi data directory import and export.

Recognised files: ``wav.scp`` (required), ``segments``, ``text``, ``utt2spk``,
``spk2utt`` (export only), ``reco2dur``, ``utt2dur`` and ``spk2gender``
(import only, opt-in). Multi-channel audio uses a non-standard ``channels``
file mapping each utterance id to its channel number; it is written only
when some recording has more than one channel.

Import accepts any whitespace between fields. Export writes single spaces,
sorts every file bytewise by key and prints times with two decimals.
"""
from __future__ import annotations

import logging
import os
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from speechcuts.audio import AudioError, read_wav_header
from speechcuts.manifest import AudioSource, Recording, SupervisionSegment
from speechcuts.utils import SpeechCutsError, compute_num_samples, round_time

logger = logging.getLogger(__name__)

# reco2dur is trusted over the WAV header only when they disagree by more than this.
_HEADER_AGREEMENT = 0.005


class KaldiFormatError(SpeechCutsError, ValueError):
    pass


class ExportError(SpeechCutsError, ValueError):
    pass


def _read_table(path: Path, min_fields: int = 2, split_value: bool = False) -> Dict[str, object]:
    """Parse ``key value...`` lines; duplicate keys are an error."""
    table: Dict[str, object] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(None, 1)
            key = parts[0]
            value = parts[1] if len(parts) > 1 else ""
            if split_value:
                value = value.split()
                if len(value) < min_fields - 1:
                    raise KaldiFormatError(
                        f"{path.name} line {lineno}: expected {min_fields} fields, got {1 + len(value)}"
                    )
            elif min_fields > 1 and not value:
                raise KaldiFormatError(f"{path.name} line {lineno}: missing value for key {key!r}")
            if key in table:
                raise KaldiFormatError(f"{path.name} line {lineno}: duplicate key {key!r}")
            table[key] = value
    return table


def _optional(directory: Path, name: str, **kw) -> Optional[Dict[str, object]]:
    p = directory / name
    return _read_table(p, **kw) if p.is_file() else None


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise KaldiFormatError(f"{where}: {value!r} is not a number") from None


def _make_recording(
    reco_id: str, value: str, reco2dur: Optional[dict], default_rate: int
) -> Recording:
    if value.endswith("|"):
        if reco2dur is None or reco_id not in reco2dur:
            raise KaldiFormatError(f"recording {reco_id!r} is a command pipe; its duration must be in reco2dur")
        duration = _parse_float(reco2dur[reco_id], f"reco2dur {reco_id}")
        n = compute_num_samples(duration, default_rate)
        return Recording(reco_id, (AudioSource("command", (0,), value),), default_rate, n, n / default_rate)

    known = None if reco2dur is None or reco_id not in reco2dur else _parse_float(
        reco2dur[reco_id], f"reco2dur {reco_id}"
    )
    try:
        info = read_wav_header(value)
    except (OSError, AudioError) as e:
        if known is None:
            raise KaldiFormatError(
                f"recording {reco_id!r}: cannot read WAV header of {value!r} ({e}) and no reco2dur entry"
            ) from None
        n = compute_num_samples(known, default_rate)
        return Recording(reco_id, (AudioSource("file", (0,), value),), default_rate, n, n / default_rate)
    rate, n = info.sampling_rate, info.num_frames
    if known is not None and abs(known - n / rate) > _HEADER_AGREEMENT:
        logger.warning("recording %s: reco2dur %.3f s overrides WAV header %.3f s", reco_id, known, n / rate)
        n = compute_num_samples(known, rate)
    channels = tuple(range(info.num_channels))
    return Recording(reco_id, (AudioSource("file", channels, value),), rate, n, n / rate)


def import_kaldi(
    directory,
    default_sampling_rate: int = 16000,
    gender_to_custom: bool = False,
) -> Tuple[List[Recording], List[SupervisionSegment]]:
    """
    Read a Kaldi data directory into manifests.

    Without a ``segments`` file every recording gets one supervision spanning it,
    whose id is the recording id. ``wav.scp`` entries ending in ``|`` become
    command sources; they need a ``reco2dur`` entry and assume
    ``default_sampling_rate``.

    :param gender_to_custom: copy ``spk2gender`` into each supervision's
        ``custom["gender"]``; the file is ignored otherwise.
    :raises KaldiFormatError: missing ``wav.scp``, duplicate keys, segments with
        ``end <= start`` or unknown recording/utterance references.
    """
    d = Path(directory)
    if not (d / "wav.scp").is_file():
        raise FileNotFoundError(f"wav.scp not found in {d}")
    wav_scp = _read_table(d / "wav.scp")
    reco2dur = _optional(d, "reco2dur")
    text = _optional(d, "text", min_fields=1)
    utt2spk = _optional(d, "utt2spk")
    channels = _optional(d, "channels")
    spk2gender = _optional(d, "spk2gender") if gender_to_custom else None

    recordings = [_make_recording(k, v, reco2dur, default_sampling_rate) for k, v in wav_scp.items()]
    by_id = {r.id: r for r in recordings}

    segments = _optional(d, "segments", min_fields=4, split_value=True)
    if segments is not None:
        spans = []
        for utt, (reco, start, end, *_) in segments.items():
            start_s = _parse_float(start, f"segments {utt}")
            end_s = _parse_float(end, f"segments {utt}")
            if end_s <= start_s:
                raise KaldiFormatError(f"segments {utt}: end {end_s} <= start {start_s}")
            if reco not in by_id:
                raise KaldiFormatError(f"segments {utt}: recording {reco!r} not in wav.scp")
            spans.append((utt, reco, start_s, round_time(end_s - start_s)))
    else:
        spans = [(r.id, r.id, 0.0, r.duration) for r in recordings]

    if utt2spk is not None:
        missing = [utt for utt, *_ in spans if utt not in utt2spk]
        if missing:
            raise KaldiFormatError(f"{len(missing)} utterances missing from utt2spk, first: {missing[:10]}")

    supervisions = []
    for utt, reco, start, duration in spans:
        speaker = utt2spk.get(utt) if utt2spk is not None else None
        custom = None
        if spk2gender is not None and speaker in spk2gender:
            custom = {"gender": spk2gender[speaker]}
        channel = int(channels[utt]) if channels is not None and utt in channels else 0
        supervisions.append(
            SupervisionSegment(
                id=utt,
                recording_id=reco,
                start=start,
                duration=duration,
                channel=channel,
                text=text.get(utt) if text is not None else None,
                speaker=speaker,
                custom=custom,
            )
        )
    return recordings, supervisions


def _bytewise(items: Iterable[Tuple[str, str]]) -> List[Tuple[str, str]]:
    return sorted(items, key=lambda kv: kv[0].encode("utf-8"))


def _write_table(path: Path, rows: Iterable[Tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in _bytewise(rows):
            f.write(f"{key} {value}\n" if value != "" else f"{key}\n")


def export_kaldi(
    recordings: Iterable[Recording], supervisions: Iterable[SupervisionSegment], out_dir
) -> List[Path]:
    """
    Write a Kaldi data directory. Supervisions without a speaker are assigned
    their own utterance id as speaker.

    :raises ExportError: a recording is not backed by a single file, or a
        supervision references an unknown recording.
    :return: the written file paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recordings = list(recordings)
    supervisions = list(supervisions)
    by_id = {}
    for r in recordings:
        if len(r.sources) != 1 or r.sources[0].kind != "file":
            kinds = ",".join(s.kind for s in r.sources)
            raise ExportError(f"recording {r.id!r} has {kinds} source(s); only a single file source can be exported")
        by_id[r.id] = r
    for s in supervisions:
        if s.recording_id not in by_id:
            raise ExportError(f"supervision {s.id!r} references unknown recording {s.recording_id!r}")

    def spk(s):
        return s.speaker if s.speaker is not None else s.id

    files = {
        "wav.scp": [(r.id, r.sources[0].location) for r in recordings],
        "reco2dur": [(r.id, f"{r.duration:.2f}") for r in recordings],
        "segments": [
            (s.id, f"{s.recording_id} {s.start:.2f} {s.start + s.duration:.2f}") for s in supervisions
        ],
        "text": [(s.id, s.text) for s in supervisions if s.text is not None],
        "utt2spk": [(s.id, spk(s)) for s in supervisions],
        "utt2dur": [(s.id, f"{s.duration:.2f}") for s in supervisions],
    }
    spk2utt = defaultdict(list)
    for s in supervisions:
        spk2utt[spk(s)].append(s.id)
    files["spk2utt"] = [
        (k, " ".join(sorted(v, key=lambda u: u.encode("utf-8")))) for k, v in spk2utt.items()
    ]
    if any(r.num_channels > 1 for r in recordings):
        files["channels"] = [(s.id, str(s.channel)) for s in supervisions]

    written = []
    for name, rows in files.items():
        _write_table(out / name, rows)
        written.append(out / name)
    return written
