"""Shared domain types, transcript validation, and transcript persistence.

A transcript is the sole input an auditor gets: one record per round holding
the posted price (as a grid index), the allocation observed at that price,
and the sparse price distribution the price was drawn from.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np

# Support probabilities below this are rejected outright: support membership
# is load-bearing for the pessimistic estimator, so it must never be inferred
# from float noise.
MIN_SUPPORT_PROB = 1e-15

PROB_SUM_TOL = 1e-12


class TranscriptParseError(ValueError):
    """Raised when a transcript file cannot be parsed; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TranscriptValidationError(ValueError):
    """Raised when a parsed transcript breaches a type invariant."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"invalid transcript: {lines}{more}")


@dataclass(frozen=True)
class Violation:
    """One invariant breach, naming the round (None for grid-level issues) and field."""

    round: int | None
    field: str
    message: str

    def __str__(self) -> str:
        where = "grid" if self.round is None else f"round {self.round}"
        return f"{where}: {self.field}: {self.message}"


@dataclass(frozen=True)
class PriceGrid:
    """Ordered discrete price levels, optionally embedded in a continuum [0, h]."""

    levels: tuple[float, ...]
    continuum_upper: float | None = None

    def __init__(self, levels: Iterable[float], continuum_upper: float | None = None):
        object.__setattr__(self, "levels", tuple(float(v) for v in levels))
        object.__setattr__(
            self, "continuum_upper", None if continuum_upper is None else float(continuum_upper)
        )

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def max_level(self) -> float:
        return self.levels[-1]

    def violations(self) -> list[Violation]:
        out: list[Violation] = []
        if not self.levels:
            out.append(Violation(None, "levels", "grid is empty"))
            return out
        if any(v < 0 for v in self.levels):
            out.append(Violation(None, "levels", "negative price level"))
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            out.append(Violation(None, "levels", "levels not strictly increasing"))
        if self.continuum_upper is not None and self.levels[-1] > self.continuum_upper:
            out.append(
                Violation(None, "continuum_upper", "max level exceeds continuum upper bound")
            )
        return out


@dataclass(frozen=True)
class PriceDistribution:
    """Sparse distribution over grid indices: positive probability on `support` only."""

    support: tuple[int, ...]
    probs: tuple[float, ...]

    def __init__(self, support: Iterable[int], probs: Iterable[float]):
        sup = tuple(int(i) for i in support)
        pr = tuple(float(p) for p in probs)
        if len(sup) != len(pr):
            raise ValueError("support and probs have different lengths")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)

    @staticmethod
    def point_mass(index: int) -> "PriceDistribution":
        return PriceDistribution((index,), (1.0,))

    @staticmethod
    def from_dense(probs: Sequence[float], keep_above: float = 0.0) -> "PriceDistribution":
        """Build from a dense vector, keeping entries strictly above `keep_above`."""
        support = [i for i, p in enumerate(probs) if p > keep_above]
        kept = [probs[i] for i in support]
        total = sum(kept)
        return PriceDistribution(support, [p / total for p in kept])

    def prob_of(self, index: int) -> float:
        for i, p in zip(self.support, self.probs):
            if i == index:
                return p
        return 0.0

    def dense(self, k: int) -> np.ndarray:
        out = np.zeros(k)
        out[list(self.support)] = self.probs
        return out

    def violations(self, round_no: int, k: int) -> list[Violation]:
        out: list[Violation] = []
        if not self.support:
            out.append(Violation(round_no, "support", "empty support"))
            return out
        if any(i < 0 or i >= k for i in self.support):
            out.append(Violation(round_no, "support", f"index outside grid of size {k}"))
        if len(set(self.support)) != len(self.support):
            out.append(Violation(round_no, "support", "duplicate indices"))
        if any(b <= a for a, b in zip(self.support, self.support[1:])):
            out.append(Violation(round_no, "support", "indices not sorted"))
        if any(p <= 0 for p in self.probs):
            out.append(Violation(round_no, "probs", "non-positive probability"))
        elif any(p < MIN_SUPPORT_PROB for p in self.probs):
            out.append(
                Violation(round_no, "probs", f"probability below {MIN_SUPPORT_PROB:g} rejected")
            )
        if abs(math.fsum(self.probs) - 1.0) > PROB_SUM_TOL:
            out.append(Violation(round_no, "probs", "probabilities do not sum to 1"))
        return out


@dataclass(frozen=True, slots=True)
class TranscriptRecord:
    """One round: posted price index, observed allocation there, and the distribution used."""

    round: int
    posted_index: int
    allocation: float
    distribution: PriceDistribution

    def violations(self, k: int) -> list[Violation]:
        out = self.distribution.violations(self.round, k)
        if self.round < 1:
            out.append(Violation(self.round, "round", "round numbers start at 1"))
        if self.posted_index not in self.distribution.support:
            out.append(Violation(self.round, "posted_index", "posted price outside support"))
        if not (0.0 <= self.allocation <= 1.0):
            out.append(Violation(self.round, "allocation", "allocation out of [0,1]"))
        return out


@dataclass(frozen=True)
class Transcript:
    """A grid plus the per-round records for rounds 1..T."""

    grid: PriceGrid
    records: tuple[TranscriptRecord, ...]

    def __init__(self, grid: PriceGrid, records: Iterable[TranscriptRecord]):
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "records", tuple(records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TranscriptRecord]:
        return iter(self.records)


@dataclass(frozen=True)
class CostRange:
    """Closed interval of plausible per-unit costs."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi):
            raise ValueError(f"cost range requires 0 <= lo <= hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class AuditConfig:
    """Knobs of the audit: cost range, regret threshold r, confidence, grid mode."""

    cost_range: CostRange
    threshold_r: float
    confidence_alpha: float
    endogenous: bool = False

    def __post_init__(self):
        if self.threshold_r <= 0:
            raise ValueError("threshold_r must be positive")
        if not (0 < self.confidence_alpha < 1):
            raise ValueError("confidence_alpha must be in (0, 1)")


def validate(transcript: Transcript) -> list[Violation]:
    """Check every invariant; returns violations as data, never raises.

    An empty list means the transcript is well-formed. T=0 transcripts are
    valid here (the audit rejects them separately).
    """
    out = transcript.grid.violations()
    k = len(transcript.grid)
    for pos, rec in enumerate(transcript.records):
        if rec.round != pos + 1:
            out.append(
                Violation(rec.round, "round", f"expected round {pos + 1}, rounds must be contiguous")
            )
        out.extend(rec.violations(k))
    return out


# ---------------------------------------------------------------------------
# Persistence: line-oriented JSON, one record per line, floats with 17
# significant digits so that read(write(x)) == x bit-exactly.
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if math.isinf(x) or math.isnan(x):
        raise ValueError("non-finite float in transcript")
    return format(float(x), ".17g")


def _header_line(grid: PriceGrid) -> str:
    levels = ", ".join(_fmt(v) for v in grid.levels)
    h = "null" if grid.continuum_upper is None else _fmt(grid.continuum_upper)
    return f'{{"grid": [{levels}], "continuum_upper": {h}}}'


def _record_line(rec: TranscriptRecord) -> str:
    sup = ", ".join(str(i) for i in rec.distribution.support)
    pr = ", ".join(_fmt(p) for p in rec.distribution.probs)
    return (
        f'{{"t": {rec.round}, "posted": {rec.posted_index}, "alloc": {_fmt(rec.allocation)}, '
        f'"support": [{sup}], "probs": [{pr}]}}'
    )


def write_transcript(transcript: Transcript, sink: Union[str, IO[str]]) -> None:
    """Serialize to the line-oriented JSON format. Caller guarantees validity."""
    if isinstance(sink, (str, bytes)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_transcript(transcript, fh)
        return
    sink.write(_header_line(transcript.grid))
    sink.write("\n")
    for rec in transcript.records:
        sink.write(_record_line(rec))
        sink.write("\n")


def dumps_transcript(transcript: Transcript) -> str:
    buf = io.StringIO()
    write_transcript(transcript, buf)
    return buf.getvalue()


def _parse_header(line: str, line_no: int) -> PriceGrid:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise TranscriptParseError(line_no, f"bad JSON: {e.msg}") from e
    if not isinstance(obj, dict) or "grid" not in obj:
        raise TranscriptParseError(line_no, 'header must be an object with a "grid" key')
    levels = obj["grid"]
    if not isinstance(levels, list) or not all(isinstance(v, (int, float)) for v in levels):
        raise TranscriptParseError(line_no, '"grid" must be a list of numbers')
    h = obj.get("continuum_upper")
    if h is not None and not isinstance(h, (int, float)):
        raise TranscriptParseError(line_no, '"continuum_upper" must be a number or null')
    return PriceGrid(levels, h)


def _parse_record(line: str, line_no: int) -> TranscriptRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise TranscriptParseError(line_no, f"bad JSON: {e.msg}") from e
    if not isinstance(obj, dict):
        raise TranscriptParseError(line_no, "record must be a JSON object")
    try:
        t = obj["t"]
        posted = obj["posted"]
        alloc = obj["alloc"]
        support = obj["support"]
        probs = obj["probs"]
    except KeyError as e:
        raise TranscriptParseError(line_no, f"record missing key {e.args[0]!r}") from e
    if not isinstance(t, int) or not isinstance(posted, int):
        raise TranscriptParseError(line_no, '"t" and "posted" must be integers')
    if not isinstance(alloc, (int, float)):
        raise TranscriptParseError(line_no, '"alloc" must be a number')
    if not isinstance(support, list) or not all(isinstance(i, int) for i in support):
        raise TranscriptParseError(line_no, '"support" must be a list of integers')
    if not isinstance(probs, list) or not all(isinstance(p, (int, float)) for p in probs):
        raise TranscriptParseError(line_no, '"probs" must be a list of numbers')
    try:
        dist = PriceDistribution(support, probs)
    except ValueError as e:
        raise TranscriptParseError(line_no, str(e)) from e
    return TranscriptRecord(t, posted, float(alloc), dist)


def read_transcript(source: Union[str, IO[str]]) -> Transcript:
    """Parse and validate a transcript file.

    Raises TranscriptParseError (with line number) on malformed input and
    TranscriptValidationError on invariant breaches. An empty record section
    yields a valid T=0 transcript.
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_transcript(fh)
    lines = [ln for ln in (raw.rstrip("\n") for raw in source) if ln.strip()]
    if not lines:
        raise TranscriptParseError(1, "missing header line")
    grid = _parse_header(lines[0], 1)
    records = [_parse_record(ln, i + 2) for i, ln in enumerate(lines[1:])]
    transcript = Transcript(grid, records)
    violations = validate(transcript)
    if violations:
        raise TranscriptValidationError(violations)
    return transcript


def loads_transcript(text: str) -> Transcript:
    return read_transcript(io.StringIO(text))
