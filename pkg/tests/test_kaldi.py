import numpy as np
import pytest

from speechcuts.audio import UnsupportedSource
from speechcuts.kaldi import ExportError, KaldiFormatError, export_kaldi, import_kaldi
from speechcuts.manifest import AudioSource, Recording, SupervisionSegment, validate

from conftest import write_recording

KALDI_FILES = ["wav.scp", "segments", "text", "utt2spk", "spk2utt", "reco2dur", "utt2dur"]


def write_dir(d, **files):
    d.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (d / name.replace("_", ".") if name == "wav_scp" else d / name).write_text(content)
    return d


@pytest.fixture
def wav(tmp_path):
    return write_recording(tmp_path / "a.wav", np.zeros(48000, np.float32), 16000, "reco1")


class TestImport:
    def test_segments_line(self, tmp_path, wav):
        d = write_dir(tmp_path / "k", wav_scp=f"reco1 {wav.sources[0].location}\n", segments="utt1 reco1 0.50 2.75\n")
        recs, (s,) = import_kaldi(d)
        assert (s.id, s.recording_id, s.start, s.duration) == ("utt1", "reco1", 0.5, 2.25)
        assert recs[0].num_samples == 48000

    def test_no_segments(self, tmp_path, wav):
        d = write_dir(tmp_path / "k", wav_scp=f"reco1   {wav.sources[0].location}\n", text="reco1 hello\n")
        recs, sups = import_kaldi(d)
        assert len(recs) == 1 and len(sups) == 1
        assert (sups[0].id, sups[0].start, sups[0].duration, sups[0].text) == ("reco1", 0.0, 3.0, "hello")

    def test_command_source(self, tmp_path):
        d = write_dir(tmp_path / "k", wav_scp="reco1 sox a.sph -t wav - |\n", reco2dur="reco1 2.5\n")
        (r,), sups = import_kaldi(d)
        assert r.sources[0].kind == "command" and r.duration == 2.5
        assert validate([r], sups).ok
        with pytest.raises(UnsupportedSource):
            r.load_audio()

    def test_missing_text_and_speaker(self, tmp_path, wav):
        d = write_dir(
            tmp_path / "k",
            wav_scp=f"reco1 {wav.sources[0].location}\n",
            segments="u1 reco1 0 1\nu2 reco1 1 2\n",
            text="u1 yes\n",
        )
        _, sups = import_kaldi(d)
        assert [(s.text, s.speaker) for s in sups] == [("yes", None), (None, None)]

    def test_reco2dur_override(self, tmp_path, wav):
        d = write_dir(tmp_path / "k", wav_scp=f"reco1 {wav.sources[0].location}\n", reco2dur="reco1 2.0\n")
        (r,), _ = import_kaldi(d)
        assert r.duration == 2.0
        d2 = write_dir(tmp_path / "k2", wav_scp=f"reco1 {wav.sources[0].location}\n", reco2dur="reco1 3.00\n")
        assert import_kaldi(d2)[0][0].num_samples == 48000

    @pytest.mark.parametrize(
        "files,match",
        [
            (dict(segments="u1 reco1 0 1\nu1 reco1 1 2\n"), "segments line 2: duplicate key 'u1'"),
            (dict(segments="u1 reco1 2 1\n"), "end 1.0 <= start 2.0"),
            (dict(segments="u1 nope 0 1\n"), "recording 'nope' not in wav.scp"),
            (dict(segments="u1 reco1 0 1\n", utt2spk="other A\n"), "missing from utt2spk"),
        ],
    )
    def test_errors(self, tmp_path, wav, files, match):
        d = write_dir(tmp_path / "k", wav_scp=f"reco1 {wav.sources[0].location}\n", **files)
        with pytest.raises(KaldiFormatError, match=match):
            import_kaldi(d)

    def test_missing_wav_scp(self, tmp_path):
        (tmp_path / "k").mkdir()
        with pytest.raises(FileNotFoundError, match="wav.scp not found"):
            import_kaldi(tmp_path / "k")

    def test_gender_flag(self, tmp_path, wav):
        d = write_dir(
            tmp_path / "k",
            wav_scp=f"reco1 {wav.sources[0].location}\n",
            utt2spk="reco1 spkA\n",
            spk2gender="spkA f\n",
        )
        assert import_kaldi(d)[1][0].custom is None
        assert import_kaldi(d, gender_to_custom=True)[1][0].custom == {"gender": "f"}


class TestExport:
    def corpus(self, wav):
        sups = [
            SupervisionSegment("u2", "reco1", 1.0, 0.5, text="b", speaker="S"),
            SupervisionSegment("u1", "reco1", 0.0, 1.0, text="a", speaker="S"),
            SupervisionSegment("u3", "reco1", 2.0, 0.25),
        ]
        return [wav], sups

    def test_files_sorted_and_formatted(self, tmp_path, wav):
        recs, sups = self.corpus(wav)
        export_kaldi(recs, sups, tmp_path / "out")
        out = tmp_path / "out"
        assert (out / "segments").read_text() == "u1 reco1 0.00 1.00\nu2 reco1 1.00 1.50\nu3 reco1 2.00 2.25\n"
        assert (out / "spk2utt").read_text() == "S u1 u2\nu3 u3\n"
        assert (out / "utt2spk").read_text() == "u1 S\nu2 S\nu3 u3\n"
        assert (out / "reco2dur").read_text() == "reco1 3.00\n"
        for name in KALDI_FILES:
            keys = [line.split(" ", 1)[0].encode() for line in (out / name).read_text().splitlines()]
            assert keys == sorted(keys)

    def test_bytewise_not_locale_order(self, tmp_path, wav):
        sups = [SupervisionSegment(k, "reco1", 0, 1) for k in ["b", "B", "a", "_x"]]
        export_kaldi([wav], sups, tmp_path / "o")
        assert [l.split()[0] for l in (tmp_path / "o" / "utt2spk").read_text().splitlines()] == ["B", "_x", "a", "b"]

    def test_round_trip_within_quantization(self, tmp_path, small_corpus):
        recs, sups = small_corpus.recordings, small_corpus.supervisions
        export_kaldi(recs, sups, tmp_path / "k1")
        recs2, sups2 = import_kaldi(tmp_path / "k1")
        assert [r.id for r in recs2] == sorted(r.id for r in recs)
        by_id = {s.id: s for s in sups}
        for s in sups2:
            orig = by_id[s.id]
            assert abs(s.start - orig.start) <= 0.005 and abs(s.duration - orig.duration) <= 0.01
            assert (s.text, s.speaker, s.recording_id) == (orig.text, orig.speaker, orig.recording_id)
        for r in recs2:
            assert r.num_samples == next(x for x in recs if x.id == r.id).num_samples

    def test_second_round_trip_idempotent(self, tmp_path, small_corpus):
        export_kaldi(small_corpus.recordings, small_corpus.supervisions, tmp_path / "k1")
        r, s = import_kaldi(tmp_path / "k1")
        export_kaldi(r, s, tmp_path / "k2")
        r2, s2 = import_kaldi(tmp_path / "k2")
        export_kaldi(r2, s2, tmp_path / "k3")
        assert (r, s) == (r2, s2)
        for name in KALDI_FILES:
            assert (tmp_path / "k2" / name).read_bytes() == (tmp_path / "k3" / name).read_bytes()

    def test_non_file_sources_rejected(self, tmp_path):
        r = Recording("cmd", (AudioSource("command", (0,), "x |"),), 8000, 8000, 1.0)
        with pytest.raises(ExportError, match="cmd"):
            export_kaldi([r], [], tmp_path)

    def test_unresolvable_supervision(self, tmp_path, wav):
        with pytest.raises(ExportError, match="ghost"):
            export_kaldi([wav], [SupervisionSegment("u", "ghost", 0, 1)], tmp_path)

    def test_multichannel_sidecar(self, tmp_path):
        rec = write_recording(tmp_path / "st.wav", np.zeros((2, 16000), np.float32), 16000, "st")
        sups = [SupervisionSegment("l", "st", 0, 0.5, channel=0), SupervisionSegment("r", "st", 0, 0.5, channel=1)]
        export_kaldi([rec], sups, tmp_path / "k")
        assert (tmp_path / "k" / "channels").read_text() == "l 0\nr 1\n"
        _, back = import_kaldi(tmp_path / "k")
        assert [s.channel for s in back] == [0, 1]
