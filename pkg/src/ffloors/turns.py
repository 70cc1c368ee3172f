"""Turn segmentation and gap/overlap classification between two speakers."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .annotations import runs_of

GAP = "gap"
BETWEEN = "between-overlap"
WITHIN = "within-overlap"
KINDS = (GAP, BETWEEN, WITHIN)

DEFAULT_MIN_SILENCE_MS = 180.0
MODE_BIN_S = 0.010


@dataclass(frozen=True, order=True)
class Turn:
    start_s: float
    end_s: float
    participant: str = ""

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValueError(f"turn must have positive length: {self.start_s}..{self.end_s}")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class TransitionEvent:
    kind: str
    duration_s: float
    at_s: float
    participants: tuple[str, str]


def segment_turns(track: Sequence[int], rate_hz: int, min_silence_ms: float = DEFAULT_MIN_SILENCE_MS,
                  *, participant: str = "", origin_s: float = 0.0) -> list[Turn]:
    """Merge speaking runs separated by silences shorter than ``min_silence_ms``.

    A silence of exactly ``min_silence_ms`` separates two turns.  Invalid
    (-1) samples count as silence.
    """
    if min_silence_ms < 0:
        raise ValueError("min_silence_ms must be non-negative")
    runs = runs_of(np.asarray(track))
    merged: list[list[int]] = []
    for s, e in runs:
        # gap_samples / rate * 1000 < min_silence_ms, kept in integers where possible
        if merged and (s - merged[-1][1]) * 1000 < min_silence_ms * rate_hz:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [Turn(origin_s + s / rate_hz, origin_s + e / rate_hz, participant)
            for s, e in merged]


def turns_to_track(turns: Iterable[Turn], n_samples: int, rate_hz: int,
                   origin_s: float = 0.0) -> np.ndarray:
    track = np.zeros(n_samples, dtype=np.int8)
    for t in turns:
        a = int(round((t.start_s - origin_s) * rate_hz))
        b = int(round((t.end_s - origin_s) * rate_hz))
        track[max(a, 0):min(b, n_samples)] = 1
    return track


def classify_transitions(turns_a: Sequence[Turn], turns_b: Sequence[Turn]) -> list[TransitionEvent]:
    """Label floor exchanges between two speakers.

    The floor holder is tracked through the merged turn sequence.  A turn by
    the other speaker that starts after the holder stops is a gap; one that
    starts before and outlasts the holder is a between-overlap; one that ends
    no later than the holder's turn is a within-overlap and leaves the floor
    where it was.  Exact hand-overs (zero gap) transfer the floor without an
    event.  Turns starting together are ordered longest first, then by
    participant id; the shorter one becomes a within-overlap.
    """
    ordered = sorted(list(turns_a) + list(turns_b),
                     key=lambda t: (t.start_s, -t.duration_s, t.participant))
    events: list[TransitionEvent] = []
    if not ordered:
        return events
    holder = ordered[0]
    for nxt in ordered[1:]:
        if nxt.participant == holder.participant:
            if nxt.end_s > holder.end_s:
                holder = nxt
            continue
        pair = (holder.participant, nxt.participant)
        if nxt.start_s >= holder.end_s:
            silence = nxt.start_s - holder.end_s
            if silence > 0:
                events.append(TransitionEvent(GAP, silence, holder.end_s, pair))
            holder = nxt
        elif nxt.end_s > holder.end_s:
            events.append(TransitionEvent(BETWEEN, holder.end_s - nxt.start_s, nxt.start_s, pair))
            holder = nxt
        else:
            events.append(TransitionEvent(WITHIN, nxt.duration_s, nxt.start_s, pair))
    return events


@dataclass(frozen=True)
class KindStats:
    count: int
    mean_s: float | None
    median_s: float | None
    mode_s: float | None


@dataclass(frozen=True)
class OverlapSummary:
    by_kind: dict[str, KindStats]
    # between-overlaps over all floor transfers (gaps + between-overlaps)
    overlap_fraction: float | None

    def __getitem__(self, kind: str) -> KindStats:
        return self.by_kind[kind]


def histogram_mode(durations: Sequence[float], bin_s: float = MODE_BIN_S) -> float | None:
    """Centre of the most populated ``bin_s`` bin; ties go to the shortest bin."""
    if not durations:
        return None
    bins = Counter(int(math.floor(d / bin_s + 1e-9)) for d in durations)
    top = max(bins.values())
    best = min(k for k, v in bins.items() if v == top)
    return (best + 0.5) * bin_s


def overlap_stats(events: Iterable[TransitionEvent]) -> OverlapSummary:
    durations: dict[str, list[float]] = {k: [] for k in KINDS}
    for ev in events:
        durations[ev.kind].append(ev.duration_s)
    by_kind = {}
    for kind, ds in durations.items():
        if ds:
            by_kind[kind] = KindStats(len(ds), statistics.fmean(ds), statistics.median(ds),
                                      histogram_mode(ds))
        else:
            by_kind[kind] = KindStats(0, None, None, None)
    transfers = len(durations[GAP]) + len(durations[BETWEEN])
    fraction = len(durations[BETWEEN]) / transfers if transfers else None
    return OverlapSummary(by_kind, fraction)
