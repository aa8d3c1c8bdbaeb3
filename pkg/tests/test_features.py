import math
import os
import struct

import numpy as np
import pytest

from speechcuts.cut import MonoCut
from speechcuts.cutset import CutSet
from speechcuts.features import (
    HEADER_SIZE,
    CollationError,
    FeatureStoreReader,
    FeatureStoreWriter,
    StoreCorruptionError,
    StoreLockedError,
    collate_audio,
    collate_features,
    compute_and_store_features,
    extract_logenergy,
    frame_count,
    logenergy,
    store_read,
    store_write,
)
from speechcuts.manifest import SupervisionSegment
from speechcuts.utils import LOG_EPSILON

from conftest import sine, write_recording


def loop_frame_count(n, length, shift):
    # oracle: count window starts one by one
    count, start = 0, 0
    while start + length <= n:
        count += 1
        start += shift
    return count


def loop_logenergy(x, length, shift):
    out = []
    start = 0
    while start + length <= len(x):
        frame = x[start : start + length].astype(np.float64)
        out.append(math.log(max(sum(float(v) * float(v) for v in frame) / length, 1e-10)))
        start += shift
    return np.array(out)


class TestFraming:
    def test_one_second(self):
        assert frame_count(16000, 0.025, 0.01, 16000) == 98 == loop_frame_count(16000, 400, 160)

    @pytest.mark.parametrize("n", [0, 399, 400, 401, 559, 560, 12345])
    def test_matches_loop(self, n):
        assert frame_count(n, 0.025, 0.01, 16000) == loop_frame_count(n, 400, 160)

    def test_silence(self):
        out = logenergy(np.zeros(16000), 0.025, 0.01, 16000)
        assert out.shape == (98, 1) and out.dtype == np.float32
        assert np.allclose(out, -23.025851)

    def test_constant_one(self):
        assert np.allclose(logenergy(np.ones(16000), 0.025, 0.01, 16000), 0.0)

    def test_sine_matches_loop(self):
        x = sine(440, 4000, 8000)
        got = logenergy(x, 0.025, 0.01, 8000)[:, 0]
        assert np.allclose(got, loop_logenergy(x, 200, 80), atol=1e-5)

    def test_too_short(self):
        assert logenergy(np.zeros(10), 0.025, 0.01, 16000).shape == (0, 1)


class TestStore:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        m32 = rng.standard_normal((37, 13)).astype(np.float32)
        m64 = rng.standard_normal((5, 2))
        path = tmp_path / "s.fstr"
        with FeatureStoreWriter(path) as w:
            k1, k2 = w.write(m32), w.write(m64)
        assert k1 != k2
        r = FeatureStoreReader(path)
        assert r.read(k1).tobytes() == m32.tobytes() and r.read(k1).dtype == np.float32
        assert r.read(k2).tobytes() == m64.tobytes() and r.read(k2).dtype == np.float64
        assert np.array_equal(r.read(k1, 10, 5), m32[10:15])

    def test_size_arithmetic(self, tmp_path):
        path = tmp_path / "s.fstr"
        rng = np.random.default_rng(1)
        payload = 0
        with FeatureStoreWriter(path) as w:
            for _ in range(1000):
                m = rng.standard_normal((int(rng.integers(1, 20)), 3)).astype(np.float32)
                payload += m.nbytes
                w.write(m)
        r = FeatureStoreReader(path)
        # 8-hex-digit keys: 2 + 8 bytes of key plus the 17-byte entry each
        assert r.overhead_bytes() == HEADER_SIZE + 4 + 1000 * (2 + 8 + 17)
        assert path.stat().st_size == r.overhead_bytes() + payload
        assert len(set(r.keys())) == 1000

    def test_unknown_key(self, tmp_path):
        store_write(np.zeros((1, 1), np.float32), tmp_path / "s.fstr")
        with pytest.raises(KeyError):
            store_read(tmp_path / "s.fstr", "nope")

    def test_truncated(self, tmp_path):
        path = tmp_path / "s.fstr"
        store_write(np.zeros((100, 4), np.float32), path)
        data = path.read_bytes()
        path.write_bytes(data[:200])
        with pytest.raises(StoreCorruptionError, match="truncated"):
            FeatureStoreReader(path)
        path.write_bytes(b"NOPE!" + data[5:])
        with pytest.raises(StoreCorruptionError, match="magic"):
            FeatureStoreReader(path)

    def test_lock_contention(self, tmp_path):
        path = tmp_path / "s.fstr"
        with FeatureStoreWriter(path):
            with pytest.raises(StoreLockedError):
                FeatureStoreWriter(path).open()
        assert not os.path.exists(f"{path}.lock")
        store_write(np.zeros((1, 1), np.float32), path)

    def test_reopen_appends(self, tmp_path):
        path = tmp_path / "s.fstr"
        a = store_write(np.ones((2, 2), np.float32), path)
        b = store_write(np.full((3, 2), 2.0, np.float32), path)
        r = FeatureStoreReader(path)
        assert r.keys() == [a, b]
        assert np.array_equal(r.read(a), np.ones((2, 2)))

    def test_header_layout(self, tmp_path):
        path = tmp_path / "s.fstr"
        store_write(np.zeros((2, 3), np.float32), path, key="k")
        raw = path.read_bytes()
        magic, index_offset = struct.unpack("<5sQ", raw[:13])
        assert magic == b"FSTR1" and index_offset == 13 + 24
        assert struct.unpack("<IH", raw[index_offset : index_offset + 6]) == (1, 1)


@pytest.fixture
def two_cuts(tmp_path):
    a = write_recording(tmp_path / "a.wav", sine(300, 16000, 16000), 16000, "a")
    b = write_recording(tmp_path / "b.wav", sine(500, 8000, 16000, amplitude=0.2), 16000, "b")
    sup = SupervisionSegment("sa", "a", 0.5, 0.25, text="hi", speaker="S")
    return [MonoCut("ca", a, 0.0, a.duration, supervisions=(sup,)), MonoCut("cb", b, 0.0, b.duration)]


class TestExtraction:
    def test_manifest(self, two_cuts, tmp_path):
        with FeatureStoreWriter(tmp_path / "f.fstr") as w:
            manifest, m = extract_logenergy(two_cuts[0], w)
        assert manifest.num_frames == 98 == m.shape[0]
        assert manifest.storage_key and manifest.storage_path == str(tmp_path / "f.fstr")
        assert np.array_equal(store_read(tmp_path / "f.fstr", manifest.storage_key), m)

    def test_persisted_store_survives_restart(self, two_cuts, tmp_path):
        cuts = compute_and_store_features(two_cuts, tmp_path / "f.fstr")
        CutSet(cuts).to_file(tmp_path / "cuts.jsonl")
        # a fresh reader in a fresh load reproduces the matrices bitwise
        reloaded = CutSet.from_file(tmp_path / "cuts.jsonl", lazy=False)
        for cut in reloaded:
            _, expected = extract_logenergy(cut)
            assert np.array_equal(store_read(cut.features.storage_path, cut.features.storage_key), expected)


class TestCollation:
    def test_audio(self, two_cuts):
        out = collate_audio(two_cuts)
        assert out.data.shape == (2, 16000) and list(out.lengths) == [16000, 8000]
        assert np.all(out.data[1, 8000:] == 0.0)
        assert out.supervision_table == [(0, 8000, 4000, "hi", "S")]

    def test_audio_filler(self, two_cuts):
        assert np.all(collate_audio(two_cuts, filler=-1.0).data[1, 8000:] == -1.0)

    def test_features_from_store(self, two_cuts, tmp_path):
        cuts = compute_and_store_features(two_cuts, tmp_path / "f.fstr")
        out = collate_features(cuts)
        assert out.data.shape == (2, 98, 1) and list(out.lengths) == [98, 48]
        assert np.all(out.data[1, 48:] == np.float32(LOG_EPSILON))
        assert out.unit == "frames"
        assert out.supervision_table == [(0, 50, 25, "hi", "S")]

    def test_truncated_cut_reads_frame_slice(self, two_cuts, tmp_path):
        (cut, _) = compute_and_store_features(two_cuts, tmp_path / "f.fstr")
        full = collate_features([cut]).data[0, :, 0]
        part = cut.truncate(offset=0.3, duration=0.5)
        got = collate_features([part]).data[0, :, 0]
        assert len(got) == frame_count(8000, 0.025, 0.01, 16000)
        assert np.array_equal(got, full[30 : 30 + len(got)])

    def test_on_the_fly_matches_stored(self, two_cuts, tmp_path):
        stored = collate_features(compute_and_store_features(two_cuts, tmp_path / "f.fstr"))
        live = collate_features(two_cuts, on_the_fly=True)
        assert np.array_equal(stored.data, live.data)

    def test_missing_features(self, two_cuts):
        with pytest.raises(CollationError, match="on_the_fly"):
            collate_features(two_cuts)

    def test_mixed_shifts(self, two_cuts, tmp_path):
        (a,) = compute_and_store_features(two_cuts[:1], tmp_path / "f1.fstr")
        (b,) = compute_and_store_features(two_cuts[1:], tmp_path / "f2.fstr", frame_shift=0.02)
        with pytest.raises(CollationError, match="mixed frame shifts"):
            collate_features([a, b])
