import sys
from pathlib import Path

import numpy as np
import pytest

from speechcuts.audio import IO_STATS, SampleBlock, write_wav
from speechcuts.manifest import AudioSource, Recording
from speechcuts.synth import generate_synthetic_corpus


def sine(freq: float, num_samples: int, rate: int, amplitude: float = 0.5, phase: float = 0.0) -> np.ndarray:
    t = np.arange(num_samples) / rate
    return (amplitude * np.sin(2 * np.pi * freq * t + phase)).astype(np.float32)


def write_recording(
    path: Path, samples: np.ndarray, rate: int, rec_id: str = "rec", sample_format: str = "pcm16"
) -> Recording:
    samples = np.atleast_2d(samples)
    write_wav(SampleBlock(samples, rate), path, sample_format=sample_format)
    n = samples.shape[1]
    return Recording(
        id=rec_id,
        sources=(AudioSource("file", tuple(range(samples.shape[0])), str(path)),),
        sampling_rate=rate,
        num_samples=n,
        duration=n / rate,
    )


@pytest.fixture
def noise_recording(tmp_path):
    """A 10 s, 16 kHz float32 WAV of seeded white noise (float keeps reads exact)."""
    rng = np.random.default_rng(7)
    samples = (0.3 * rng.standard_normal(160_000)).astype(np.float32)
    return write_recording(tmp_path / "noise.wav", samples, 16000, "noise", sample_format="float32")


@pytest.fixture
def small_corpus(tmp_path):
    return generate_synthetic_corpus(tmp_path / "corpus", num_recordings=6, seed=11)


@pytest.fixture(autouse=True)
def _reset_io_stats():
    IO_STATS.reset()
    yield


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
