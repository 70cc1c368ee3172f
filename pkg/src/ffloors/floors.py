"""Simultaneous-speaker counts over sliding windows.

A participant counts as a speaker at a window position when every sample in
the window is a 1.  The number of such speakers is read as the number of
distinct floors held at that position, and the maximum over all positions in
an F-formation's lifetime is the per-group observation.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import groupby
from typing import Iterable, Sequence, TextIO

import numpy as np

from .annotations import INVALID, AnnotationError, FFormation, SpeakingMatrix

log = logging.getLogger(__name__)

_EPS = 1e-9

OBSERVATION_FIELDS = ("fformation_id", "cardinality", "d_s", "y", "n_windows")
AGGREGATE_FIELDS = ("cardinality", "d_s", "mean_y", "n")


@dataclass(frozen=True)
class WindowConfig:
    d_s: float
    step_s: float = 1.0
    rate_hz: int = 20

    def __post_init__(self):
        if not self.d_s > 0:
            raise ValueError("window duration d_s must be positive")
        if not self.step_s > 0:
            raise ValueError("step_s must be positive")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")


@dataclass(frozen=True)
class Observation:
    fformation_id: str
    cardinality: int
    d_s: float
    y: int
    n_windows: int


@dataclass(frozen=True)
class AggregateRow:
    cardinality: int
    d_s: float
    mean_y: float
    n: int


class InvalidTally:
    """Counts invalid (-1) samples that were read as silence."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)


def _frames(t_s: float, rate_hz: int) -> int:
    return int(math.floor(t_s * rate_hz + _EPS))


def count_speakers_in_window(matrix: SpeakingMatrix, members: Iterable[str], t_s: float,
                             cfg: WindowConfig, tally: InvalidTally | None = None) -> int:
    members = sorted(members)
    if not members:
        return 0
    a = _frames(t_s - matrix.origin_s, matrix.rate_hz)
    b = _frames(t_s + cfg.d_s - matrix.origin_s, matrix.rate_hz)
    if a < 0 or b > matrix.n_samples or b <= a:
        raise IndexError(f"window [{t_s}, {t_s + cfg.d_s}) outside matrix extent")
    block = matrix.rows(members)[:, a:b]
    if tally is not None:
        tally.add(np.count_nonzero(block == INVALID))
    return int(np.count_nonzero((block == 1).all(axis=1)))


def window_positions(start_s: float, end_s: float, cfg: WindowConfig) -> np.ndarray:
    """Window starts ``start_s + k * step_s`` with the whole window inside the lifetime."""
    span = end_s - start_s - cfg.d_s
    if span < -_EPS:
        return np.empty(0)
    n = int(math.floor(span / cfg.step_s + _EPS)) + 1
    return start_s + cfg.step_s * np.arange(n)


def max_floors(ff: FFormation, matrix: SpeakingMatrix, cfg: WindowConfig,
               tally: InvalidTally | None = None) -> Observation | None:
    """Maximum simultaneous full-window speakers over the F-formation lifetime.

    Returns ``None`` when the lifetime is shorter than the window.
    """
    positions = window_positions(ff.start_s, ff.end_s, cfg)
    if positions.size == 0:
        return None
    rate = matrix.rate_hz
    lo = _frames(ff.start_s - matrix.origin_s, rate)
    hi = _frames(ff.end_s - matrix.origin_s, rate)
    if lo < 0 or hi > matrix.n_samples:
        raise IndexError(f"F-formation {ff.id} lifetime outside matrix extent")
    block = matrix.rows(ff.sorted_members())[:, lo:hi]
    if tally is not None:
        tally.add(np.count_nonzero(block == INVALID))
    speaking = np.zeros((block.shape[0], block.shape[1] + 1), dtype=np.int64)
    np.cumsum(block == 1, axis=1, out=speaking[:, 1:])
    starts = np.floor((positions - ff.start_s) * rate + _EPS).astype(np.int64)
    stops = np.floor((positions - ff.start_s + cfg.d_s) * rate + _EPS).astype(np.int64)
    full = (speaking[:, stops] - speaking[:, starts]) == (stops - starts)
    y = int(full.sum(axis=0).max())
    return Observation(ff.id, ff.cardinality, float(cfg.d_s), y, int(positions.size))


def _sweep_one(ff, matrix, durations, step_s, tally):
    out = []
    for d in durations:
        obs = max_floors(ff, matrix, WindowConfig(d, step_s, matrix.rate_hz), tally)
        if obs is not None:
            out.append(obs)
    return out


def sweep(ffs: Sequence[FFormation], matrix: SpeakingMatrix, d_min_s: int = 1,
          d_max_s: int = 20, step_s: float = 1.0, *, workers: int | None = None,
          tally: InvalidTally | None = None) -> list[Observation]:
    """Observations for every F-formation and every whole-second ``d`` in range.

    Ordered by F-formation (input order) then ``d`` ascending, whatever the
    number of worker threads.
    """
    if not 0 < d_min_s <= d_max_s:
        raise ValueError("require 0 < d_min_s <= d_max_s")
    durations = [float(d) for d in range(math.ceil(d_min_s), math.floor(d_max_s) + 1)]
    own = tally if tally is not None else InvalidTally()
    tallies = [InvalidTally() for _ in ffs]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda i: _sweep_one(ffs[i], matrix, durations, step_s,
                                                       tallies[i]), range(len(ffs))))
    else:
        parts = [_sweep_one(ff, matrix, durations, step_s, t) for ff, t in zip(ffs, tallies)]
    for t in tallies:
        own.add(t.count)
    if own.count:
        log.warning("%d invalid samples inside F-formation windows were read as silence",
                    own.count)
    return [obs for part in parts for obs in part]


def aggregate_by_cardinality(obs: Iterable[Observation]) -> list[AggregateRow]:
    rows = []
    key = lambda o: (o.cardinality, o.d_s)
    for (c, d), group in groupby(sorted(obs, key=key), key=key):
        ys = [o.y for o in group]
        rows.append(AggregateRow(c, d, sum(ys) / len(ys), len(ys)))
    return rows


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def observations_to_csv(obs: Iterable[Observation]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(OBSERVATION_FIELDS)
    for o in obs:
        w.writerow([o.fformation_id, o.cardinality, _fmt_num(o.d_s), o.y, o.n_windows])
    return out.getvalue()


def parse_observations_csv(source: str | TextIO, *, name: str | None = None) -> list[Observation]:
    text = source if isinstance(source, str) else source.read()
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != OBSERVATION_FIELDS:
        raise AnnotationError("header must be " + ",".join(OBSERVATION_FIELDS), row=1, source=name)
    out = []
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            fid, c, d, y, n = row
            o = Observation(fid, int(c), float(d), int(y), int(n))
        except ValueError as exc:
            raise AnnotationError(f"bad observation row: {exc}", row=rowno, source=name) from None
        if o.y < 0 or o.y > o.cardinality or o.n_windows < 1 or o.d_s <= 0:
            raise AnnotationError("observation out of range", row=rowno, source=name)
        out.append(o)
    return out


def aggregate_to_csv(rows: Iterable[AggregateRow], fields: Sequence[str] = AGGREGATE_FIELDS) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        values = {"cardinality": r.cardinality, "d_s": _fmt_num(r.d_s),
                  "mean_y": repr(float(r.mean_y)), "n": r.n}
        w.writerow([values[f] for f in fields])
    return out.getvalue()
