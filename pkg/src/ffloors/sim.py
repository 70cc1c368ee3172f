"""Synthetic F-formations with a known number of conversation floors.

Each floor runs its own one-speaker-at-a-time exchange.  Turn, gap and
overlap durations are log-normal with parameters matched to a median/mean
pair.  Random numbers come from :class:`StableRandom` so a seed pins the
output bits.
"""

from __future__ import annotations

import configparser
import math
import random
from dataclasses import asdict, dataclass, field, fields
from typing import TextIO

import numpy as np

from .annotations import FFormation, SpeakingMatrix
from .floors import WindowConfig, max_floors
from .turns import Turn


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario: " + "; ".join(self.problems))


class StableRandom:
    """Seeded generator built only on ``random.Random.random``.

    CPython guarantees the Mersenne Twister ``random()`` sequence for integer
    seeds across versions; every other variate here is derived from it by
    fixed formulas (Box-Muller for normals).
    """

    def __init__(self, seed: int):
        self._rng = random.Random(int(seed))
        self._spare: float | None = None

    def uniform(self) -> float:
        return self._rng.random()

    def index(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def lognormal(self, mu: float, sigma: float) -> float:
        return math.exp(mu + sigma * self.normal())


@dataclass(frozen=True)
class LogNormal:
    """Log-normal duration in milliseconds given its median and mean."""

    median_ms: float
    mean_ms: float

    @property
    def mu(self) -> float:
        return math.log(self.median_ms)

    @property
    def sigma(self) -> float:
        return math.sqrt(2.0 * math.log(self.mean_ms / self.median_ms))

    def problems(self, label: str) -> list[str]:
        out = []
        if not self.median_ms > 0:
            out.append(f"{label}_median_ms must be positive")
        if not self.mean_ms > 0:
            out.append(f"{label}_mean_ms must be positive")
        elif self.median_ms > 0 and not self.mean_ms > self.median_ms:
            out.append(f"{label}_mean_ms must exceed {label}_median_ms")
        return out

    def sample_s(self, rng: StableRandom) -> float:
        return rng.lognormal(self.mu, self.sigma) / 1000.0


@dataclass(frozen=True)
class SimScenario:
    n_floors: int = 2
    participants_per_floor: int = 3
    duration_s: int = 300
    rate_hz: int = 20
    seed: int = 0
    turn_dist: LogNormal = LogNormal(1227.0, 1680.0)
    gap_dist: LogNormal = LogNormal(200.0, 275.0)
    within_overlap_prob: float = 0.1
    within_overlap_dist: LogNormal = LogNormal(389.0, 447.0)
    between_overlap_prob: float = 0.4
    between_overlap_dist: LogNormal = LogNormal(205.0, 275.0)

    def problems(self) -> list[str]:
        out = []
        if not (isinstance(self.n_floors, int) and self.n_floors >= 1):
            out.append("n_floors must be an integer >= 1")
        if not (isinstance(self.participants_per_floor, int) and self.participants_per_floor >= 1):
            out.append("participants_per_floor must be an integer >= 1")
        if not (isinstance(self.rate_hz, int) and self.rate_hz >= 1):
            out.append("rate_hz must be an integer >= 1")
        if not (isinstance(self.duration_s, int) and self.duration_s >= 1):
            out.append("duration_s must be a whole number of seconds >= 1")
        elif self.duration_s * 1000 < self.turn_dist.median_ms:
            out.append("duration_s too short to place a single turn")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            out.append("seed must be a non-negative integer")
        for name in ("within_overlap_prob", "between_overlap_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                out.append(f"{name} must lie in [0, 1]")
        for label, dist in (("turn", self.turn_dist), ("gap", self.gap_dist),
                            ("within", self.within_overlap_dist),
                            ("between", self.between_overlap_dist)):
            out.extend(dist.problems(label))
        return out

    def validate(self) -> "SimScenario":
        problems = self.problems()
        if problems:
            raise ScenarioError(problems)
        return self

    def with_seed(self, seed: int) -> "SimScenario":
        return SimScenario(**{**{f.name: getattr(self, f.name) for f in fields(self)},
                              "seed": seed})

    @property
    def participants(self) -> list[list[str]]:
        return [[f"F{f}P{k}" for k in range(self.participants_per_floor)]
                for f in range(self.n_floors)]


@dataclass
class GroundTruth:
    floor_of: dict[str, int]
    turns: list[list[Turn]] = field(default_factory=list)

    @property
    def n_floors(self) -> int:
        return len(set(self.floor_of.values()))


def _simulate_floor(members: list[str], sc: SimScenario, rng: StableRandom) -> list[Turn]:
    horizon = float(sc.duration_s)
    turns: list[Turn] = []
    speaker = rng.index(len(members))
    start = 0.0
    dur = sc.turn_dist.sample_s(rng)
    while start < horizon:
        end = start + dur
        turns.append(Turn(start, end, members[speaker]))
        listeners = [k for k in range(len(members)) if k != speaker]
        if listeners and rng.bernoulli(sc.within_overlap_prob):
            who = listeners[rng.index(len(listeners))]
            w = sc.within_overlap_dist.sample_s(rng)
            u = rng.uniform()
            if w < dur:
                at = start + u * (dur - w)
                turns.append(Turn(at, at + w, members[who]))
        nxt = listeners[rng.index(len(listeners))] if listeners else speaker
        next_dur = sc.turn_dist.sample_s(rng)
        overlap = 0.0
        if listeners and rng.bernoulli(sc.between_overlap_prob):
            overlap = sc.between_overlap_dist.sample_s(rng)
            if overlap >= min(dur, next_dur):
                overlap = 0.0
        if overlap > 0:
            start = end - overlap
        else:
            start = end + sc.gap_dist.sample_s(rng)
        speaker, dur = nxt, next_dur
    return turns


def simulate(scenario: SimScenario) -> tuple[SpeakingMatrix, FFormation, GroundTruth]:
    """Generate one seeded multi-floor F-formation.

    Turn times are quantised to the sample grid by rounding both edges;
    turns that collapse to zero samples vanish from the matrix.
    """
    scenario.validate()
    rng = StableRandom(scenario.seed)
    groups = scenario.participants
    pids = [p for g in groups for p in g]
    row = {p: i for i, p in enumerate(pids)}
    n = scenario.duration_s * scenario.rate_hz
    samples = np.zeros((len(pids), n), dtype=np.int8)
    truth = GroundTruth({p: f for f, g in enumerate(groups) for p in g})
    for members in groups:
        turns = _simulate_floor(members, scenario, rng)
        truth.turns.append(turns)
        for t in turns:
            a = int(round(t.start_s * scenario.rate_hz))
            b = min(int(round(t.end_s * scenario.rate_hz)), n)
            if b > a:
                samples[row[t.participant], a:b] = 1
    matrix = SpeakingMatrix(scenario.rate_hz, tuple(pids), samples)
    ff = FFormation("S0", frozenset(pids), 0, scenario.duration_s)
    return matrix, ff, truth


def recovery_rate(scenario: SimScenario, cfg: WindowConfig, n_runs: int) -> float:
    """Fraction of runs whose max-floor count equals ``scenario.n_floors``.

    Run ``k`` uses seed ``scenario.seed + k``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    hits = 0
    for k in range(n_runs):
        matrix, ff, _ = simulate(scenario.with_seed(scenario.seed + k))
        obs = max_floors(ff, matrix, cfg)
        hits += obs is not None and obs.y == scenario.n_floors
    return hits / n_runs


_INT_KEYS = ("n_floors", "participants_per_floor", "duration_s", "rate_hz", "seed")
_FLOAT_KEYS = ("within_overlap_prob", "between_overlap_prob")
_DIST_KEYS = {"turn": "turn_dist", "gap": "gap_dist", "within": "within_overlap_dist",
              "between": "between_overlap_dist"}


def scenario_to_ini(sc: SimScenario) -> str:
    lines = ["[scenario]"]
    for k in _INT_KEYS + _FLOAT_KEYS:
        lines.append(f"{k} = {getattr(sc, k)}")
    for label, attr in _DIST_KEYS.items():
        d = getattr(sc, attr)
        lines.append(f"{label}_median_ms = {d.median_ms}")
        lines.append(f"{label}_mean_ms = {d.mean_ms}")
    return "\n".join(lines) + "\n"


def parse_scenario(source: str | TextIO) -> SimScenario:
    """Read a ``[scenario]`` key/value file; missing keys take defaults.

    All problems are collected and raised together as :class:`ScenarioError`.
    """
    text = source if isinstance(source, str) else source.read()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError([f"unreadable scenario file: {exc}"]) from None
    if not cp.has_section("scenario"):
        raise ScenarioError(["missing [scenario] section"])
    sec = cp["scenario"]
    default = SimScenario()
    values: dict = {}
    problems = []
    known = set(_INT_KEYS) | set(_FLOAT_KEYS) | {f"{l}_{s}" for l in _DIST_KEYS
                                                  for s in ("median_ms", "mean_ms")}
    for key in sec:
        if key not in known:
            problems.append(f"unknown field {key}")
    for key in _INT_KEYS:
        if key in sec:
            try:
                values[key] = int(sec[key])
            except ValueError:
                problems.append(f"{key} must be an integer")
    for key in _FLOAT_KEYS:
        if key in sec:
            try:
                values[key] = float(sec[key])
            except ValueError:
                problems.append(f"{key} must be a number")
    for label, attr in _DIST_KEYS.items():
        base = asdict(getattr(default, attr))
        for part in ("median_ms", "mean_ms"):
            key = f"{label}_{part}"
            if key in sec:
                try:
                    base[part] = float(sec[key])
                except ValueError:
                    problems.append(f"{key} must be a number")
        values[attr] = LogNormal(**base)
    if problems:
        raise ScenarioError(problems)
    sc = SimScenario(**values)
    sc.validate()
    return sc
