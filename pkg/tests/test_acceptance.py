"""
End-to-end acceptance checks, one test per criterion.

Every criterion prints a single ``[PASS]``/``[FAIL]`` line. Under pytest the lines
are repeated in the terminal summary; ``python3 tests/test_acceptance.py`` runs
the same checks standalone and exits non-zero if any fail.
"""
from __future__ import annotations

import io
import math
import random
import sys
import tempfile
import time
from collections import Counter
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
import pytest

from speechcuts.audio import IO_STATS, SampleBlock, audio_energy, read_wav_header, write_wav
from speechcuts.cut import MonoCut, live_cut_count, peak_cut_count, reset_peak_cut_count
from speechcuts.cutset import CutSet
from speechcuts.features import collate_audio, collate_features, compute_and_store_features, frame_count
from speechcuts.kaldi import export_kaldi, import_kaldi
from speechcuts.manifest import (
    AudioSource,
    FeaturesManifest,
    Recording,
    SupervisionSegment,
    dumps_line,
    read_manifests,
    write_manifests,
)
from speechcuts.sampling import SamplerConstraints, bucketing_sample, dynamic_sample, estimate_buckets, padding_waste
from speechcuts.synth import generate_synthetic_corpus, metadata_only_cut, synthesize_signal

Outcome = Tuple[bool, str]
RESULTS: Dict[int, str] = {}


def report(number: int, title: str, outcome: Outcome) -> str:
    passed, detail = outcome
    line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return line


# shared inputs


def corpus(workdir: Path, num_recordings: int = 8, seed: int = 0):
    return generate_synthetic_corpus(
        workdir / f"corpus-{num_recordings}-{seed}", num_recordings=num_recordings, seed=seed, compress=False
    )


def corpus_cuts(c) -> List[MonoCut]:
    return list(CutSet.from_manifests(c.recordings, c.supervisions))


def random_window(cut, rng: random.Random, min_duration: float = 0.2):
    offset = rng.uniform(0, cut.duration - min_duration)
    return cut.truncate(offset, rng.uniform(min_duration, cut.duration - offset))


OPS = ("truncate", "pad", "mix", "append", "speed", "tempo", "volume", "resample")


def random_op(cut, rng: random.Random, pool):
    op = rng.choice(OPS)
    if op == "truncate" and cut.duration > 0.1:
        offset = rng.uniform(0, 0.5 * cut.duration)
        return cut.truncate(offset, rng.uniform(0.3, 1.0) * (cut.duration - offset))
    if op in ("truncate", "pad"):
        return cut.pad(cut.duration + rng.uniform(0.001, 1.0), rng.choice(["left", "right", "both"]))
    if op == "mix":
        return cut.mix(rng.choice(pool), rng.uniform(0, cut.duration), rng.choice([None, rng.uniform(-10, 30)]))
    if op == "append":
        return cut.append(rng.choice(pool), rng.uniform(0, 0.3))
    if op == "speed":
        return cut.perturb_speed(rng.choice([0.5, 0.9, 1.1, 2.0]))
    if op == "tempo":
        return cut.perturb_tempo(rng.choice([0.9, 1.1]))
    if op == "volume":
        return cut.perturb_volume(rng.uniform(0.1, 2.0))
    return cut.resample(rng.choice([8000, 16000, 22050, 44100]))


def random_chains(pool, count: int = 1000, seed: int = 0):
    rng = random.Random(seed)
    chains = []
    for _ in range(count):
        cut = rng.choice(pool)
        for _ in range(rng.randint(1, 6)):
            cut = random_op(cut, rng, pool)
        chains.append(cut)
    return chains


def chain_pool(workdir: Path):
    return [random_window(c, random.Random(i), 1.0) for i, c in enumerate(corpus_cuts(corpus(workdir)))]


# criteria


def manifest_round_trip(workdir: Path) -> Outcome:
    rng = random.Random(1)
    n = 10_000
    words = ["ala", "ma", "kota", "żółw", "猫", "naïve", "a\"quote", "tab\there"]

    def text():
        return " ".join(rng.choice(words) for _ in range(rng.randint(1, 6)))

    recordings = []
    for i in range(n):
        rate = rng.choice([8000, 16000, 44100])
        samples = rng.randint(1, 10_000_000)
        channels = (0,) if rng.random() < 0.8 else (0, 1)
        recordings.append(Recording(f"rec{i}", (AudioSource("file", channels, f"/data/{i}.wav"),),
                                    rate, samples, samples / rate))
    sups = [
        SupervisionSegment(
            f"sup{i}", f"rec{i % 997}", rng.uniform(0, 1e4), rng.uniform(1e-3, 30), channel=rng.randint(0, 1),
            text=rng.choice([None, text()]), speaker=rng.choice([None, f"spk{i % 50}"]),
            language=rng.choice([None, "pl"]), custom=rng.choice([None, {"age": str(rng.randint(10, 90))}]),
        )
        for i in range(n)
    ]
    feats = [
        FeaturesManifest(f"rec{i}", (0,), rng.uniform(0, 100), rng.uniform(0.1, 30), "logenergy",
                         rng.randint(0, 3000), rng.choice([1, 40, 80]), 0.01, 16000, "/feats/store", f"{i:08x}")
        for i in range(n)
    ]
    cuts = [
        MonoCut(f"cut{i}", r, 0.0, min(r.duration, rng.uniform(0.1, 20)),
                supervisions=(SupervisionSegment(f"cs{i}", r.id, 0.0, 0.05, text=text()),))
        for i, r in enumerate(recordings)
    ]
    start = time.perf_counter()
    failures = []
    for kind, items in (("recording", recordings), ("supervision", sups), ("features", feats), ("cut", cuts)):
        first = io.BytesIO()
        write_manifests(items, first)
        back = list(read_manifests(io.BytesIO(first.getvalue()), kind))
        second = io.BytesIO()
        write_manifests(back, second)
        if len(back) != n or back != items or first.getvalue() != second.getvalue():
            failures.append(kind)
    elapsed = time.perf_counter() - start
    passed = not failures and elapsed < 10
    return passed, f"4 kinds x {n} items, mismatched kinds={failures or 'none'}, {elapsed:.2f} s (limit 10 s)"


def frame_count_law(workdir: Path) -> Outcome:
    pool = chain_pool(workdir)
    start = time.perf_counter()
    chains = random_chains(pool)
    bad = [c.id for c in chains if c.load_audio().num_frames != round(c.duration * c.sampling_rate)]
    elapsed = time.perf_counter() - start
    return not bad and elapsed < 60, f"{len(chains)} chains, {len(bad)} violations, {elapsed:.1f} s (limit 60 s)"


def laziness(workdir: Path) -> Outcome:
    pool = chain_pool(workdir)
    IO_STATS.reset()
    random_chains(pool)
    chain_reads = IO_STATS.total_bytes

    rate = 16000
    signal = synthesize_signal(600 * rate, rate, np.random.default_rng(3))
    path = workdir / "long.wav"
    write_wav(SampleBlock(signal[None, :], rate), path)
    rec = Recording("long", (AudioSource("file", (0,), str(path)),), rate, len(signal), 600.0)
    header = read_wav_header(rec.sources[0])
    data_bytes = header.num_frames * header.block_align
    IO_STATS.reset()
    window = MonoCut("w", rec, 300.0, 2.0).load_audio()
    fraction = IO_STATS.total_bytes / data_bytes
    passed = chain_reads == 0 and fraction < 0.05 and window.num_frames == 2 * rate
    return passed, (
        f"chain construction read {chain_reads} bytes; 2 s window of 600 s read "
        f"{IO_STATS.total_bytes} of {data_bytes} data bytes ({100 * fraction:.3f}%, limit 5%)"
    )


def snr_mixing(workdir: Path) -> Outcome:
    cuts = corpus_cuts(corpus(workdir))
    rng = random.Random(4)
    worst = 0.0
    for _ in range(100):
        signal = random_window(rng.choice(cuts), rng)
        noise = random_window(rng.choice(cuts), rng)
        snr = rng.uniform(-10, 30)
        offset = rng.uniform(0, signal.duration)
        mixed = signal.mix(noise, offset, snr_db=snr).load_audio().samples[0].astype(np.float64)
        ref = signal.load_audio().samples[0].astype(np.float64)
        off = round(offset * signal.sampling_rate)
        added = mixed.copy()
        added[: len(ref)] -= ref
        component = added[off : off + noise.num_samples]
        measured = 10 * math.log10(audio_energy(ref) / audio_energy(component))
        worst = max(worst, abs(measured - snr))
    return worst <= 0.1, f"100 triples, worst |measured - requested| = {worst:.2e} dB (limit 0.1 dB)"


def augmentation_metadata(workdir: Path) -> Outcome:
    cuts = corpus_cuts(corpus(workdir))
    rng = random.Random(5)
    sample = [random_window(rng.choice(cuts), rng) for _ in range(100)]
    worst_duration = worst_boundary = 0.0
    checked = 0
    for cut in sample:
        rate = cut.sampling_rate
        for factor in (0.5, 0.9, 1.0, 1.1, 2.0):
            for p in (cut.perturb_speed(factor), cut.perturb_tempo(factor)):
                worst_duration = max(worst_duration, abs(p.num_samples * factor - cut.num_samples))
                for before, after in zip(cut.supervisions, p.supervisions):
                    checked += 1
                    for b, a in ((before.start, after.start), (before.end, after.end)):
                        worst_boundary = max(worst_boundary, abs(a - b / factor) * rate)
    # 1e-9 absorbs float rounding of an exact one-sample difference
    passed = worst_duration <= 1 + 1e-9 and worst_boundary <= 1 + 1e-9
    return passed, (
        f"100 cuts x 5 factors x speed/tempo; worst duration error {worst_duration:.3f} samples, "
        f"worst boundary error {worst_boundary:.3e} samples over {checked} supervisions (limit 1)"
    )


def window_coverage(workdir: Path) -> Outcome:
    rng = random.Random(6)
    eps = 1e-9
    failures, multi_clipped = [], 0
    for case in range(100):
        # millisecond grid keeps every boundary on a 16 kHz sample
        total_ms = rng.randint(100, 60_000)
        window_ms = rng.randint(10, 10_000)
        hop_ms = rng.randint(1, window_ms)
        D, w, h = total_ms / 1000, window_ms / 1000, hop_ms / 1000
        cut = metadata_only_cut(f"d{case}", D)
        spans = [(x.start - cut.start, x.start - cut.start + x.duration) for x in CutSet([cut]).cut_into_windows(w, h)]
        ok = abs(spans[0][0]) < eps and abs(max(e for _, e in spans) - D) < eps
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            ok &= s1 <= e0 + eps  # no gap
            ok &= abs((s1 - s0) - h) < eps
            if abs((e0 - s0) - w) < eps:
                ok &= abs((e0 - s1) - (w - h)) < eps
        clipped = [(s, e) for s, e in spans if (e - s) < w - eps]
        ok &= all(abs(e - D) < eps for _, e in clipped)
        multi_clipped += len(clipped) > 1
        if not ok:
            failures.append((D, w, h))
    return not failures, (
        f"100 (D, window, hop) cases, {len(failures)} failures; full windows overlap by window - hop, "
        f"windows clipped at D end exactly at D ({multi_clipped} cases clip more than one window)"
    )


def _random_durations(n: int, seed: int, low: float, high: float):
    rng = random.Random(seed)
    return [round(rng.uniform(low, high), 3) for _ in range(n)]


def _cutset(durations) -> CutSet:
    return CutSet([metadata_only_cut(f"c{i:06d}", d) for i, d in enumerate(durations)])


def sampler_partition(workdir: Path) -> Outcome:
    cuts = _cutset(_random_durations(100_000, 7, 0.5, 70.0))
    constraints = SamplerConstraints(max_duration=60.0, max_cuts=12, drop_last=False, shuffle_seed=11)
    plans = [[(b.index, tuple(b.cut_ids), b.oversized) for b in dynamic_sample(cuts, constraints)] for _ in range(3)]
    plan = plans[0]
    durations = {c.id: c.duration for c in cuts}
    multiset_ok = Counter(i for _, ids, _ in plan for i in ids) == Counter(cuts.ids)
    violations = sum(
        1 for _, ids, over in plan
        if not over and (len(ids) > 12 or sum(durations[i] for i in ids) > 60.0 + 1e-9)
    )
    oversized = sum(over for *_, over in plan)
    identical = plans[0] == plans[1] == plans[2]
    passed = multiset_ok and violations == 0 and identical
    return passed, (
        f"1e5 cuts -> {len(plan)} batches ({oversized} oversized); multiset preserved={multiset_ok}, "
        f"constraint violations={violations}, identical across 3 runs={identical}"
    )


def bucketing_padding(workdir: Path) -> Outcome:
    cuts = _cutset(_random_durations(10_000, 8, 1.0, 30.0))
    constraints = SamplerConstraints(max_duration=120.0, shuffle_seed=0)
    waste = {
        k: padding_waste(bucketing_sample(cuts, estimate_buckets(cuts, k), constraints)) for k in (1, 10)
    }
    ratio = waste[10] / waste[1]
    return ratio <= 0.5, (
        f"waste 1 bucket={waste[1]:.1f} s, 10 buckets={waste[10]:.1f} s, ratio={ratio:.3f} (limit 0.5)"
    )


def sharding(workdir: Path) -> Outcome:
    cuts = _cutset(_random_durations(20_000, 9, 0.5, 25.0))
    base = dict(max_duration=90.0, shuffle_seed=2)
    full = {(b.index, tuple(b.cut_ids)) for b in dynamic_sample(cuts, SamplerConstraints(**base))}
    notes, passed = [], True
    for world in (2, 4):
        plans = [
            [(b.index, tuple(b.cut_ids)) for b in dynamic_sample(cuts, SamplerConstraints(world_size=world, rank=r, **base))]
            for r in range(world)
        ]
        ids = [set(i for _, batch in p for i in batch) for p in plans]
        disjoint = all(not (ids[a] & ids[b]) for a in range(world) for b in range(a + 1, world))
        union = set().union(*map(set, plans)) == full and sum(map(len, plans)) == len(full)
        counts = [len(p) for p in plans]
        balanced = max(counts) - min(counts) <= 1
        passed &= disjoint and union and balanced
        notes.append(f"world_size={world}: disjoint={disjoint}, union==single={union}, batches/rank={counts}")
    return passed, "; ".join(notes)


def kaldi_round_trip(workdir: Path) -> Outcome:
    c = corpus(workdir, num_recordings=50, seed=10)
    first, second = workdir / "kaldi1", workdir / "kaldi2"
    files = export_kaldi(c.recordings, c.supervisions, first)
    recordings, supervisions = import_kaldi(first)
    export_kaldi(recordings, supervisions, second)
    names = sorted(Path(f).name for f in files)
    identical = all((first / n).read_bytes() == (second / n).read_bytes() for n in names)
    sorted_ok = True
    for n in names:
        keys = [line.split(b" ", 1)[0] for line in (first / n).read_bytes().splitlines()]
        sorted_ok &= keys == sorted(keys)
    return identical and sorted_ok, (
        f"{len(c.recordings)} recordings, {len(c.supervisions)} supervisions, files={names}; "
        f"second export identical={identical}, bytewise sorted={sorted_ok}"
    )


def lazy_memory(workdir: Path) -> Outcome:
    n = 1_000_000
    path = workdir / "million.jsonl"
    template = metadata_only_cut("x", 1.0).to_dict()
    rng = random.Random(12)
    with open(path, "w", encoding="utf-8") as f:
        for i in range(n):
            template["id"] = f"c{i:07d}"
            template["duration"] = round(rng.uniform(1, 20), 2)
            f.write(dumps_line(template))

    start = time.perf_counter()
    lazy = CutSet.from_file(path)
    constraints = SamplerConstraints(max_duration=200.0, shuffle_seed=0, shuffle_buffer=10_000)
    baseline = live_cut_count()
    reset_peak_cut_count()
    batches = dynamic_sample(lazy, constraints)
    num_batches = num_cuts = largest = 0
    while True:
        batch = next(batches, None)
        if batch is None:
            break
        num_batches += 1
        num_cuts += len(batch)
        largest = max(largest, len(batch))
        del batch  # a training loop drops each batch before asking for the next
    peak = peak_cut_count() - baseline
    elapsed = time.perf_counter() - start
    limit = 10_000 + largest
    passed = num_cuts == n and peak <= limit and elapsed < 300
    return passed, (
        f"{num_cuts} cuts in {num_batches} batches; peak resident cuts {peak} "
        f"(limit 10000 + largest batch {largest} = {limit}); {elapsed:.1f} s (limit 300 s)"
    )


def collation(workdir: Path) -> Outcome:
    c = corpus(workdir)
    cuts = corpus_cuts(c)
    rng = random.Random(13)
    bad_rows = bad_shapes = 0
    for _ in range(200):
        batch = []
        for _ in range(rng.randint(1, 8)):
            cut = random_window(rng.choice(cuts), rng)
            roll = rng.random()
            if roll < 0.2:
                cut = cut.perturb_speed(rng.choice([0.9, 1.1]))
            elif roll < 0.35:
                cut = cut.pad(cut.duration + rng.uniform(0.01, 1.0))
            elif roll < 0.5:
                cut = cut.mix(random_window(rng.choice(cuts), rng), 0.0, snr_db=rng.uniform(0, 20))
            batch.append(cut)
        filler = rng.choice([0.0, -1.0, 0.5])
        out = collate_audio(batch, filler=filler)
        for row, length, cut in zip(out.data, out.lengths, batch):
            audio = cut.load_audio().samples[0]
            if length != len(audio) or not np.array_equal(row[:length], audio) or not np.all(row[length:] == filler):
                bad_rows += 1
        feats = collate_features(batch, on_the_fly=True)
        expected = [frame_count(x.num_samples, 0.025, 0.01, x.sampling_rate) for x in batch]
        if list(feats.lengths) != expected or feats.data.shape != (len(batch), max(expected), 1):
            bad_shapes += 1

    stored = compute_and_store_features(cuts, workdir / "feats.fstr")
    for _ in range(50):
        batch = [random_window(rng.choice(stored), rng) for _ in range(rng.randint(1, 8))]
        feats = collate_features(batch)
        expected = [frame_count(x.num_samples, 0.025, 0.01, x.sampling_rate) for x in batch]
        if list(feats.lengths) != expected or feats.data.shape != (len(batch), max(expected), 1):
            bad_shapes += 1
    return bad_rows == 0 and bad_shapes == 0, (
        f"200 audio batches: {bad_rows} mismatched rows; 250 feature batches: {bad_shapes} shape violations"
    )


CRITERIA: List[Tuple[int, str, Callable[[Path], Outcome]]] = [
    (1, "manifest round trip", manifest_round_trip),
    (2, "cut-algebra frame-count law", frame_count_law),
    (3, "laziness", laziness),
    (4, "SNR mixing", snr_mixing),
    (5, "augmentation metadata", augmentation_metadata),
    (6, "window coverage", window_coverage),
    (7, "sampler partition and constraints", sampler_partition),
    (8, "bucketing reduces padding", bucketing_padding),
    (9, "distributed sharding", sharding),
    (10, "Kaldi round trip", kaldi_round_trip),
    (11, "lazy memory ceiling", lazy_memory),
    (12, "collation", collation),
]


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"{n:02d}-{t.replace(' ', '-')}" for n, t, _ in CRITERIA])
def test_criterion(number, title, check, tmp_path):
    line = report(number, title, check(tmp_path))
    assert line.startswith("[PASS]"), line


def main() -> int:
    failed = 0
    with tempfile.TemporaryDirectory() as tmp:
        for number, title, check in CRITERIA:
            workdir = Path(tmp) / f"c{number}"
            workdir.mkdir()
            failed += report(number, title, check(workdir)).startswith("[FAIL]")
    print(f"{len(CRITERIA) - failed}/{len(CRITERIA)} criteria passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
