"""
Deterministic synthetic corpora for tests, benchmarks and demos.

Each recording is a mono PCM16 WAV holding a few sine tones over low-level
noise. Supervisions tile each recording with gaps and carry a speaker and a
short made-up transcript. Manifests reference WAVs relative to ``out_dir``
so the same seed always produces byte-identical trees wherever they are
written. A ``ground_truth.json`` sidecar records the exact totals.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from speechcuts.audio import SampleBlock, write_wav
from speechcuts.cut import MonoCut
from speechcuts.manifest import AudioSource, Recording, SupervisionSegment, save_manifests
from speechcuts.utils import Seconds, compute_num_samples

_WORDS = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet")


@dataclass
class SyntheticCorpus:
    recordings: List[Recording]
    supervisions: List[SupervisionSegment]
    ground_truth: Dict = field(default_factory=dict)
    out_dir: Optional[Path] = None


def synthesize_signal(num_samples: int, sampling_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Sum of 1-3 random sines plus white noise, peak well below full scale."""
    t = np.arange(num_samples) / sampling_rate
    x = np.zeros(num_samples)
    for _ in range(int(rng.integers(1, 4))):
        freq = rng.uniform(80.0, 0.4 * sampling_rate / 2)
        x += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    x += 0.01 * rng.standard_normal(num_samples)
    return x.astype(np.float32)


def _tile_supervisions(rec_id: str, duration: Seconds, speakers: Sequence[str], rng) -> List[SupervisionSegment]:
    sups = []
    t = round(float(rng.uniform(0.0, 0.5)), 2)
    k = 0
    while True:
        seg = round(float(rng.uniform(0.5, 3.0)), 2)
        if t + seg > duration:
            break
        words = " ".join(_WORDS[i] for i in rng.integers(0, len(_WORDS), size=int(rng.integers(1, 6))))
        sups.append(
            SupervisionSegment(
                id=f"{rec_id}-sup{k:03d}",
                recording_id=rec_id,
                start=t,
                duration=seg,
                text=words,
                speaker=speakers[int(rng.integers(0, len(speakers)))],
                language="synthetic",
            )
        )
        k += 1
        t = round(t + seg + float(rng.uniform(0.1, 1.0)), 2)
    return sups


def generate_synthetic_corpus(
    out_dir,
    num_recordings: int = 10,
    duration_range: Tuple[Seconds, Seconds] = (2.0, 10.0),
    num_speakers: int = 4,
    seed: int = 0,
    sampling_rate: int = 16000,
    compress: bool = True,
) -> SyntheticCorpus:
    """
    Write ``wav/*.wav``, ``recordings.jsonl[.gz]``, ``supervisions.jsonl[.gz]`` and
    ``ground_truth.json`` under ``out_dir``.

    :param duration_range: recording durations are drawn uniformly from this
        range and rounded to 10 ms.
    :param compress: gzip the manifests.
    :return: the manifests with absolute WAV paths, plus the ground-truth dict.
    """
    lo, hi = duration_range
    if not 0 < lo <= hi:
        raise ValueError(f"invalid duration_range {duration_range}")
    if num_speakers < 1:
        raise ValueError("num_speakers must be >= 1")
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    speakers = [f"spk{i:03d}" for i in range(num_speakers)]

    stored: List[Recording] = []
    sups: List[SupervisionSegment] = []
    durations: Dict[str, float] = {}
    for i in range(num_recordings):
        rec_id = f"rec{i:05d}"
        duration = round(float(rng.uniform(lo, hi)), 2)
        n = compute_num_samples(duration, sampling_rate)
        rel = f"wav/{rec_id}.wav"
        write_wav(SampleBlock(synthesize_signal(n, sampling_rate, rng)[None, :], sampling_rate), out / rel)
        stored.append(
            Recording(
                id=rec_id,
                sources=(AudioSource("file", (0,), rel),),
                sampling_rate=sampling_rate,
                num_samples=n,
                duration=n / sampling_rate,
            )
        )
        durations[rec_id] = n / sampling_rate
        sups.extend(_tile_supervisions(rec_id, n / sampling_rate, speakers, rng))

    ext = ".jsonl.gz" if compress else ".jsonl"
    save_manifests(stored, out / f"recordings{ext}")
    save_manifests(sups, out / f"supervisions{ext}")

    speaker_durations: Dict[str, float] = {}
    for s in sups:
        speaker_durations[s.speaker] = speaker_durations.get(s.speaker, 0.0) + s.duration
    truth = {
        "seed": seed,
        "num_recordings": num_recordings,
        "num_supervisions": len(sups),
        "num_speakers": len(speaker_durations),
        "total_duration": sum(durations.values()),
        "speech_duration": sum(s.duration for s in sups),
        "recording_durations": durations,
        "speaker_durations": speaker_durations,
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8") as f:
        json.dump(truth, f, sort_keys=True, indent=1)
        f.write("\n")

    recordings = [r.with_path_prefix(out.resolve()) for r in stored]
    return SyntheticCorpus(recordings, sups, truth, out)


def metadata_only_cut(
    id: str, duration: Seconds, sampling_rate: int = 16000, supervisions: Sequence[SupervisionSegment] = ()
) -> MonoCut:
    """
    A cut over a placeholder recording that is never read. Handy for sampler
    and collection tests where only durations matter.
    """
    n = compute_num_samples(duration, sampling_rate)
    rec = Recording(
        id=id,
        sources=(AudioSource("file", (0,), f"/nonexistent/{id}.wav"),),
        sampling_rate=sampling_rate,
        num_samples=n,
        duration=n / sampling_rate,
    )
    return MonoCut(id=id, recording=rec, start=0.0, duration=n / sampling_rate, supervisions=tuple(supervisions))


def memory_recording(id: str, samples: np.ndarray, sampling_rate: int) -> Recording:
    """Wrap ``(channels, frames)`` or ``(frames,)`` samples as an in-memory WAV recording."""
    from speechcuts.audio import wav_bytes

    samples = np.atleast_2d(np.asarray(samples, dtype=np.float32))
    data = wav_bytes(SampleBlock(samples, sampling_rate), sample_format="float32")
    n = samples.shape[1]
    return Recording(
        id=id,
        sources=(AudioSource("memory", tuple(range(samples.shape[0])), data),),
        sampling_rate=sampling_rate,
        num_samples=n,
        duration=n / sampling_rate,
    )
