"""
Loading, validation and inclusion filtering of per-unit election files.

An input file holds one row per electoral unit (polling station) with five
columns: unit id, neighborhood id, electors, ballots cast and votes for the
winner. Records are validated one by one, neighborhoods with fewer than ten
surviving units are dropped, and the remainder must still hold more than
1,000 units in more than 100 neighborhoods.
"""

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from errors import ElectionRejected, RecordMalformed, SchemaMismatch
from utils import read_table, write_csv

logger = logging.getLogger(__name__)

MIN_UNITS = 1000  # strictly more than this many units
MIN_NEIGHBORHOODS = 100  # strictly more than this many neighborhoods
MIN_UNITS_PER_NEIGHBORHOOD = 10


class Reason(str, Enum):
    INCOMPATIBLE_COUNTS = "incompatible-counts"
    ZERO_ELECTORS = "zero-electors"
    ZERO_BALLOTS = "zero-ballots"
    SMALL_NEIGHBORHOOD = "small-neighborhood"


class ColumnMapping(BaseModel):
    """Header names of the five logical input columns."""

    unit_id: str = "unit_id"
    neighborhood_id: str = "neighborhood_id"
    electors: str = "electors"
    ballots_cast: str = "ballots_cast"
    winner_votes: str = "winner_votes"

    def headers(self) -> Dict[str, str]:
        return {
            "unit_id": self.unit_id,
            "neighborhood_id": self.neighborhood_id,
            "electors": self.electors,
            "ballots_cast": self.ballots_cast,
            "winner_votes": self.winner_votes,
        }


@dataclass(frozen=True)
class RawRecord:
    unit_id: str
    neighborhood_id: str
    electors: int
    ballots_cast: int
    winner_votes: int


@dataclass(frozen=True)
class ElectoralUnit:
    unit_id: str
    neighborhood_id: str
    electors: int
    ballots_cast: int
    winner_votes: int

    @property
    def turnout_pct(self) -> float:
        return 100.0 * self.ballots_cast / self.electors

    @property
    def winner_pct(self) -> float:
        return 100.0 * self.winner_votes / self.ballots_cast


@dataclass(frozen=True)
class Exclusion:
    subject: str
    kind: str  # "unit" or "neighborhood"
    reason: str
    line: Optional[int] = None


def _readonly(values) -> np.ndarray:
    arr = np.asarray(values)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Election:
    """A named, immutable collection of retained units.

    ``neighborhoods`` and the numeric arrays are derived from ``units`` and
    cached on first access.
    """

    name: str
    units: Tuple[ElectoralUnit, ...]
    exclusion_log: Tuple[Exclusion, ...] = field(default=())

    @cached_property
    def neighborhoods(self) -> Dict[str, Tuple[int, ...]]:
        groups: Dict[str, List[int]] = {}
        for idx, unit in enumerate(self.units):
            groups.setdefault(unit.neighborhood_id, []).append(idx)
        return {key: tuple(members) for key, members in groups.items()}

    @cached_property
    def electors(self) -> np.ndarray:
        return _readonly([u.electors for u in self.units])

    @cached_property
    def ballots_cast(self) -> np.ndarray:
        return _readonly([u.ballots_cast for u in self.units])

    @cached_property
    def winner_votes(self) -> np.ndarray:
        return _readonly([u.winner_votes for u in self.units])

    @cached_property
    def turnout_pct(self) -> np.ndarray:
        return _readonly(100.0 * self.ballots_cast / self.electors)

    @cached_property
    def winner_pct(self) -> np.ndarray:
        return _readonly(100.0 * self.winner_votes / self.ballots_cast)

    @cached_property
    def neighborhood_codes(self) -> np.ndarray:
        """Integer code per unit, numbering neighborhoods in first-appearance order."""
        order = {key: code for code, key in enumerate(self.neighborhoods)}
        return _readonly(np.array([order[u.neighborhood_id] for u in self.units], dtype=np.int64))


@dataclass(frozen=True)
class ElectionSummary:
    name: str
    N: int
    mu_n: float
    sigma_n: float
    neighborhoods: int
    excluded_units: int
    cv_n: float


def validate_record(rec: RawRecord) -> Optional[Reason]:
    """Return None for a usable record, otherwise the reason it is excluded."""
    if rec.electors <= 0:
        return Reason.ZERO_ELECTORS
    if rec.winner_votes > rec.ballots_cast or rec.ballots_cast > rec.electors:
        return Reason.INCOMPATIBLE_COUNTS
    if rec.ballots_cast <= 0:
        return Reason.ZERO_BALLOTS
    return None


def build_election(
    records: Sequence[RawRecord],
    name: str,
    lines: Optional[Sequence[int]] = None,
) -> Election:
    """Apply record validation and the inclusion criteria to in-memory records.

    Neighborhoods below the ten-unit floor are dropped before the global
    unit and neighborhood gates are checked.
    """
    if lines is None:
        lines = [None] * len(records)

    seen: Dict[str, int] = {}
    duplicates: List[int] = []
    for idx, rec in enumerate(records):
        if rec.unit_id in seen:
            duplicates.append(lines[idx] if lines[idx] is not None else idx)
        else:
            seen[rec.unit_id] = idx
    if duplicates:
        raise RecordMalformed(
            f"{name}: duplicate unit ids at lines {duplicates[:10]}",
            duplicates,
            {"election": name},
        )

    exclusions: List[Exclusion] = []
    by_neighborhood: Dict[str, List[int]] = {}
    for idx, rec in enumerate(records):
        reason = validate_record(rec)
        if reason is not None:
            exclusions.append(Exclusion(rec.unit_id, "unit", reason.value, lines[idx]))
            logger.debug("%s: unit %s excluded (%s)", name, rec.unit_id, reason.value)
            continue
        by_neighborhood.setdefault(rec.neighborhood_id, []).append(idx)

    n_bad = len(exclusions)
    if n_bad:
        logger.warning("%s: %d records failed validation", name, n_bad)

    kept_idx: List[int] = []
    dropped_neighborhoods = 0
    for key, members in by_neighborhood.items():
        if len(members) < MIN_UNITS_PER_NEIGHBORHOOD:
            dropped_neighborhoods += 1
            exclusions.append(Exclusion(key, "neighborhood", Reason.SMALL_NEIGHBORHOOD.value))
            for idx in members:
                exclusions.append(
                    Exclusion(records[idx].unit_id, "unit", Reason.SMALL_NEIGHBORHOOD.value, lines[idx])
                )
            continue
        kept_idx.extend(members)
    if dropped_neighborhoods:
        logger.warning(
            "%s: dropped %d neighborhoods with fewer than %d units",
            name, dropped_neighborhoods, MIN_UNITS_PER_NEIGHBORHOOD,
        )

    kept_idx.sort()
    units = tuple(
        ElectoralUnit(
            unit_id=records[i].unit_id,
            neighborhood_id=records[i].neighborhood_id,
            electors=int(records[i].electors),
            ballots_cast=int(records[i].ballots_cast),
            winner_votes=int(records[i].winner_votes),
        )
        for i in kept_idx
    )
    n_neighborhoods = len(by_neighborhood) - dropped_neighborhoods

    if len(units) <= MIN_UNITS or n_neighborhoods <= MIN_NEIGHBORHOODS:
        raise ElectionRejected(
            f"{name}: {len(units)} units in {n_neighborhoods} neighborhoods after filtering; "
            f"need more than {MIN_UNITS} units and more than {MIN_NEIGHBORHOODS} neighborhoods",
            {"election": name, "N": len(units), "neighborhoods": n_neighborhoods},
        )

    logger.info("%s: %d units in %d neighborhoods retained", name, len(units), n_neighborhoods)
    return Election(name=name, units=units, exclusion_log=tuple(exclusions))


def _malformed_rows(frame, headers: Dict[str, str]) -> List[int]:
    bad_rows: List[int] = []
    for key in ("electors", "ballots_cast", "winner_votes"):
        ok = frame[headers[key]].str.fullmatch(r"\d+")
        bad_rows.extend(int(i) for i in np.flatnonzero(~ok.to_numpy()))
    for key in ("unit_id", "neighborhood_id"):
        empty = frame[headers[key]] == ""
        bad_rows.extend(int(i) for i in np.flatnonzero(empty.to_numpy()))
    return sorted(set(bad_rows))


def load_election(
    path: str,
    name: Optional[str] = None,
    columns: Optional[ColumnMapping] = None,
    delimiter: str = ",",
) -> Election:
    """Read a delimited election file and apply the inclusion criteria.

    The election name defaults to the file name without extension.
    """
    columns = columns or ColumnMapping()
    name = name or os.path.splitext(os.path.basename(path))[0]
    headers = columns.headers()

    frame, first_line = read_table(path, delimiter)
    missing = [col for col in headers.values() if col not in frame.columns]
    if missing:
        raise SchemaMismatch(
            f"{path}: missing columns {missing}",
            {"path": str(path), "missing": missing, "found": list(frame.columns)},
        )

    frame = frame[list(headers.values())].fillna("").apply(lambda s: s.str.strip())
    blank = (frame == "").all(axis=1).to_numpy()
    frame = frame[~blank]
    line_numbers = [int(first_line + i) for i in np.flatnonzero(~blank)]
    frame = frame.reset_index(drop=True)

    bad_rows = _malformed_rows(frame, headers)
    if bad_rows:
        bad_lines = [line_numbers[i] for i in bad_rows]
        raise RecordMalformed(
            f"{path}: malformed records at lines {bad_lines[:10]}"
            + (" ..." if len(bad_lines) > 10 else ""),
            bad_lines,
            {"path": str(path)},
        )

    records = [
        RawRecord(
            unit_id=uid,
            neighborhood_id=nid,
            electors=int(n),
            ballots_cast=int(cast),
            winner_votes=int(win),
        )
        for uid, nid, n, cast, win in zip(
            frame[headers["unit_id"]],
            frame[headers["neighborhood_id"]],
            frame[headers["electors"]],
            frame[headers["ballots_cast"]],
            frame[headers["winner_votes"]],
        )
    ]
    logger.debug("%s: parsed %d records from %s", name, len(records), path)
    return build_election(records, name, line_numbers)


def write_election_csv(
    e: Election,
    path: str,
    delimiter: str = ",",
    columns: Optional[ColumnMapping] = None,
    prov=None,
) -> None:
    """Write the retained units in the input format read by load_election."""
    headers = (columns or ColumnMapping()).headers()
    rows = (
        (u.unit_id, u.neighborhood_id, u.electors, u.ballots_cast, u.winner_votes)
        for u in e.units
    )
    order = ["unit_id", "neighborhood_id", "electors", "ballots_cast", "winner_votes"]
    write_csv(path, [headers[k] for k in order], rows, prov, delimiter=delimiter)


def summarize(e: Election) -> ElectionSummary:
    """Unit count, mean and sample standard deviation (divisor N-1) of electors."""
    electors = e.electors.astype(float)
    n = int(electors.size)
    mu = float(electors.mean()) if n else 0.0
    sigma = float(electors.std(ddof=1)) if n > 1 else 0.0
    excluded = sum(1 for x in e.exclusion_log if x.kind == "unit")
    return ElectionSummary(
        name=e.name,
        N=n,
        mu_n=mu,
        sigma_n=sigma,
        neighborhoods=len(e.neighborhoods),
        excluded_units=excluded,
        cv_n=sigma / mu if mu > 0 else 0.0,
    )


def summary_table(summaries: Iterable[ElectionSummary]) -> List[Tuple[str, int, float, float, float]]:
    return [(s.name, s.N, s.mu_n, s.sigma_n, s.cv_n) for s in summaries]
