"""Small shared helpers: time tolerance, sample arithmetic, id generation, errors."""
from __future__ import annotations

import itertools
import math
from typing import Iterator

Seconds = float

#: Slack allowed on every "within bounds" comparison of second-valued fields.
TIME_TOLERANCE: Seconds = 0.002

#: ln(1e-10); log-domain filler used to pad feature matrices.
LOG_EPSILON: float = math.log(1e-10)

_id_counter: Iterator[int] = itertools.count()


def next_id(base: str) -> str:
    """Return ``"<base>-<n>"`` with a process-wide monotonic counter."""
    return f"{base}-{next(_id_counter)}"


def compute_num_samples(duration: Seconds, sampling_rate: int) -> int:
    # round-half-even on a float product is fine here: both inputs live on the sample grid
    return int(round(duration * sampling_rate))


def samples_to_seconds(num_samples: int, sampling_rate: int) -> Seconds:
    return num_samples / sampling_rate


def round_time(t: Seconds) -> Seconds:
    """Strip float noise accumulated by shifting times around (nanosecond grid)."""
    return round(t, 9)


class SpeechCutsError(Exception):
    pass


class RangeError(SpeechCutsError, ValueError):
    """A time window falls outside the bounds of the audio it refers to."""


class ArgumentError(SpeechCutsError, ValueError):
    pass
