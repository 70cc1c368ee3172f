"""Speaking-status and F-formation annotation files.

Two wide CSV formats are supported::

    frame,A,B,C          id,start_s,end_s,members
    0,1,0,-1             F1,10,40,A;B;C;D
    1,1,0,0

Speaking cells take values in {0, 1, -1}; ``-1`` (or an empty cell) marks a
participant that is not visible.  F-formation times are whole seconds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

INVALID = -1
DEFAULT_RATE_HZ = 20

DROP_CARDINALITY = "cardinality"
DROP_OUT_OF_VIEW = "out-of-view"
DROP_OUT_OF_RANGE = "out-of-range"


class AnnotationError(ValueError):
    """Malformed annotation input; the message carries the file location."""

    def __init__(self, message: str, *, row: int | None = None,
                 column: str | None = None, source: str | None = None):
        self.row = row
        self.column = column
        self.source = source
        where = []
        if source:
            where.append(source)
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.reason = message


@dataclass(frozen=True, eq=False)
class SpeakingMatrix:
    """Per-participant speaking status sampled at a fixed rate.

    ``samples`` has shape ``(n_participants, n_samples)`` and is read-only.
    """

    rate_hz: int
    participants: tuple[str, ...]
    samples: np.ndarray
    origin_s: float = 0.0
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.rate_hz) != self.rate_hz or self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be a positive integer, got {self.rate_hz!r}")
        participants = tuple(str(p) for p in self.participants)
        if len(set(participants)) != len(participants):
            raise ValueError("participant identifiers must be unique")
        samples = np.array(self.samples, dtype=np.int8, copy=True)
        if samples.ndim == 1 and samples.size == 0:
            samples = samples.reshape(len(participants), 0)
        if samples.ndim != 2 or samples.shape[0] != len(participants):
            raise ValueError("samples must be a 2-D array with one row per participant")
        if samples.size and not np.isin(samples, (0, 1, INVALID)).all():
            raise ValueError("sample values must be 0, 1 or -1")
        samples.setflags(write=False)
        object.__setattr__(self, "rate_hz", int(self.rate_hz))
        object.__setattr__(self, "participants", participants)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(participants)})

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz

    def __contains__(self, pid: str) -> bool:
        return pid in self._index

    def index(self, pid: str) -> int:
        try:
            return self._index[pid]
        except KeyError:
            raise KeyError(f"participant {pid!r} not in speaking matrix") from None

    def track(self, pid: str) -> np.ndarray:
        return self.samples[self.index(pid)]

    def rows(self, pids: Iterable[str]) -> np.ndarray:
        return self.samples[[self.index(p) for p in pids]]

    def frame(self, t_s: float) -> int:
        """Sample index of time ``t_s`` (floor)."""
        return int(math.floor((t_s - self.origin_s) * self.rate_hz + 1e-9))

    def __eq__(self, other):
        if not isinstance(other, SpeakingMatrix):
            return NotImplemented
        return (self.rate_hz == other.rate_hz
                and self.participants == other.participants
                and self.origin_s == other.origin_s
                and np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True)
class FFormation:
    id: str
    members: frozenset[str]
    start_s: int
    end_s: int

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))
        if not self.start_s < self.end_s:
            raise ValueError(f"F-formation {self.id}: empty lifetime")
        if len(self.members) < 2:
            raise ValueError(f"F-formation {self.id}: cardinality below 2")

    @property
    def cardinality(self) -> int:
        return len(self.members)

    @property
    def lifetime_s(self) -> int:
        return self.end_s - self.start_s

    def sorted_members(self) -> list[str]:
        return sorted(self.members)


@dataclass(frozen=True)
class LintFinding:
    fformation_id: str
    participant: str
    start_s: float
    duration_s: float
    rule: str


@dataclass
class LintReport:
    findings: list[LintFinding] = field(default_factory=list)

    def __len__(self):
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)

    def __bool__(self):
        return bool(self.findings)


def _text(source: str | TextIO) -> str:
    return source if isinstance(source, str) else source.read()


def _rows(text: str):
    # csv handles both \n and \r\n once newline translation is disabled
    return csv.reader(io.StringIO(text, newline=""))


def parse_speaking_csv(source: str | TextIO, rate_hz: int = DEFAULT_RATE_HZ,
                       *, name: str | None = None) -> SpeakingMatrix:
    """Parse a wide speaking-status CSV into a :class:`SpeakingMatrix`.

    Rows must carry contiguous frame indices starting at 0.  Empty cells are
    read as -1.  Errors report the 1-based file row (the header is row 1).
    """
    reader = _rows(_text(source))
    try:
        header = next(reader)
    except StopIteration:
        raise AnnotationError("empty file", source=name) from None
    header = [h.strip() for h in header]
    if not header or header[0] != "frame":
        raise AnnotationError("header must start with 'frame'", row=1, source=name)
    pids = header[1:]
    seen = set()
    for pid in pids:
        if not pid:
            raise AnnotationError("empty participant column name", row=1, source=name)
        if pid in seen:
            raise AnnotationError(f"duplicate participant column {pid}", row=1,
                                  column=pid, source=name)
        seen.add(pid)

    columns: list[list[int]] = [[] for _ in pids]
    expected = 0
    for rowno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise AnnotationError(f"expected {len(header)} fields, got {len(row)}",
                                  row=rowno, source=name)
        try:
            frame = int(row[0])
        except ValueError:
            raise AnnotationError(f"bad frame index {row[0]!r}", row=rowno,
                                  column="frame", source=name) from None
        if frame != expected:
            raise AnnotationError(f"non-contiguous frame index at row {rowno}",
                                  row=rowno, column="frame", source=name)
        expected += 1
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                columns[j].append(INVALID)
            elif cell in ("0", "1", "-1"):
                columns[j].append(int(cell))
            else:
                raise AnnotationError(f"illegal cell value {cell!r}", row=rowno,
                                      column=pids[j], source=name)
    samples = np.array(columns, dtype=np.int8).reshape(len(pids), expected)
    return SpeakingMatrix(rate_hz=rate_hz, participants=tuple(pids), samples=samples)


def serialize_speaking_csv(matrix: SpeakingMatrix) -> str:
    out = io.StringIO()
    out.write(",".join(("frame",) + matrix.participants) + "\n")
    for i, column in enumerate(matrix.samples.T):
        out.write(f"{i}," + ",".join(str(int(v)) for v in column) + "\n")
    return out.getvalue()


def _whole_seconds(value: str, column: str, rowno: int, name: str | None) -> int:
    try:
        x = float(value)
    except ValueError:
        raise AnnotationError(f"bad time value {value!r}", row=rowno, column=column,
                              source=name) from None
    if not math.isfinite(x) or x != int(x):
        raise AnnotationError(f"fractional time {value!r}; whole seconds required",
                              row=rowno, column=column, source=name)
    return int(x)


def parse_fformations_csv(source: str | TextIO, *, name: str | None = None) -> list[FFormation]:
    reader = _rows(_text(source))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise AnnotationError("empty file", source=name) from None
    if header != ["id", "start_s", "end_s", "members"]:
        raise AnnotationError("header must be id,start_s,end_s,members", row=1, source=name)

    out, ids = [], set()
    for rowno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise AnnotationError(f"expected 4 fields, got {len(row)}", row=rowno, source=name)
        fid = row[0].strip()
        if not fid:
            raise AnnotationError("empty id", row=rowno, column="id", source=name)
        if fid in ids:
            raise AnnotationError(f"duplicate F-formation id {fid}", row=rowno,
                                  column="id", source=name)
        start = _whole_seconds(row[1].strip(), "start_s", rowno, name)
        end = _whole_seconds(row[2].strip(), "end_s", rowno, name)
        if start >= end:
            raise AnnotationError("empty lifetime", row=rowno, column="end_s", source=name)
        members = [m.strip() for m in row[3].split(";") if m.strip()]
        if not members:
            raise AnnotationError("empty member list", row=rowno, column="members", source=name)
        dupes = sorted({m for m in members if members.count(m) > 1})
        if dupes:
            raise AnnotationError(f"duplicate member {dupes[0]}", row=rowno,
                                  column="members", source=name)
        if len(members) < 2:
            raise AnnotationError("cardinality below 2", row=rowno, column="members",
                                  source=name)
        ids.add(fid)
        out.append(FFormation(fid, frozenset(members), start, end))
    return out


def serialize_fformations_csv(ffs: Iterable[FFormation]) -> str:
    lines = ["id,start_s,end_s,members"]
    for ff in ffs:
        lines.append(f"{ff.id},{ff.start_s},{ff.end_s},{';'.join(ff.sorted_members())}")
    return "\n".join(lines) + "\n"


def _check_members(ff: FFormation, matrix: SpeakingMatrix):
    missing = sorted(m for m in ff.members if m not in matrix)
    if missing:
        raise AnnotationError(f"F-formation {ff.id}: member {missing[0]} not present "
                              "in speaking matrix")


def lifetime_frames(ff: FFormation, matrix: SpeakingMatrix) -> tuple[int, int]:
    return matrix.frame(ff.start_s), matrix.frame(ff.end_s)


def filter_fformations(ffs: Iterable[FFormation], matrix: SpeakingMatrix,
                       min_cardinality: int = 4):
    """Split F-formations into kept and dropped.

    A group is dropped when it is smaller than ``min_cardinality``, when any
    member has an invalid sample inside ``[start_s, end_s)``, or when the
    lifetime runs past the recorded samples.

    Returns
    -------
    kept : list of FFormation
    dropped : list of (FFormation, reason)
    """
    if min_cardinality < 2:
        raise ValueError("min_cardinality must be at least 2")
    kept, dropped = [], []
    for ff in ffs:
        _check_members(ff, matrix)
        if ff.cardinality < min_cardinality:
            dropped.append((ff, DROP_CARDINALITY))
            continue
        a, b = lifetime_frames(ff, matrix)
        if a < 0 or b > matrix.n_samples:
            dropped.append((ff, DROP_OUT_OF_RANGE))
            continue
        if (matrix.rows(ff.sorted_members())[:, a:b] == INVALID).any():
            dropped.append((ff, DROP_OUT_OF_VIEW))
            continue
        kept.append(ff)
    return kept, dropped


def runs_of(values: np.ndarray, value: int = 1) -> list[tuple[int, int]]:
    """Maximal runs of ``value`` as half-open ``(start, stop)`` index pairs."""
    hit = np.concatenate(([False], np.asarray(values) == value, [False]))
    edges = np.flatnonzero(hit[1:] != hit[:-1])
    return [(int(s), int(e)) for s, e in zip(edges[::2], edges[1::2])]


def lint_turns(matrix: SpeakingMatrix, ffs: Iterable[FFormation],
               max_turn_s: float = 20.0) -> LintReport:
    """Flag suspiciously long uninterrupted speaking runs inside F-formations.

    Runs are maximal stretches of 1-samples clipped to the F-formation
    lifetime; any run lasting at least ``max_turn_s`` is reported.
    """
    if max_turn_s <= 0:
        raise ValueError("max_turn_s must be positive")
    report = LintReport()
    min_len = max_turn_s * matrix.rate_hz
    for ff in ffs:
        _check_members(ff, matrix)
        a, b = lifetime_frames(ff, matrix)
        a, b = max(a, 0), min(b, matrix.n_samples)
        for pid in ff.sorted_members():
            for s, e in runs_of(matrix.track(pid)[a:b]):
                if e - s >= min_len - 1e-9:
                    report.findings.append(LintFinding(
                        ff.id, pid,
                        start_s=matrix.origin_s + (a + s) / matrix.rate_hz,
                        duration_s=(e - s) / matrix.rate_hz,
                        rule="max-turn-length",
                    ))
    return report
