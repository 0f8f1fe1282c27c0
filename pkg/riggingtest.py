"""
Comparative test for voter rigging in small electoral units.

For every election and every size percentile p, units are split into small
(fewer electors than the p-th percentile) and large ones, and the distance D
between the median centers of their Z-score clouds is computed. Across
elections, the modified Thompson Tau test flags atypical D values at each p;
elections that are rarely flagged form the reference set, against which
every D is standardized into the effect size delta.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import (
    EmptyInput,
    EmptyReferenceSet,
    InvalidConfig,
    TooFewElections,
    TooFewObservations,
    ZeroReferenceSpread,
)
from sef import (
    DEFAULT_BINS,
    DEFAULT_RANGE,
    SefHistogram,
    ZScores,
    ZScoreTable,
    as_table,
    sef_histogram,
    smooth_histogram,
)
from utils import write_csv, write_json

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
MIN_SPLIT_SIZE = 10
MIN_ELECTIONS = 3
THREE_SIGMA = 3.0

VERDICT_RIGGING = "consistent-with-rigging"
VERDICT_CLEAN = "no-anomaly"
VERDICT_INDETERMINATE = "indeterminate"


def default_p_grid() -> Tuple[float, ...]:
    """0.5, 1.0, ..., 90.0"""
    return tuple(0.5 * k for k in range(1, 181))


def parse_p_grid(text: str) -> Tuple[float, ...]:
    """Parse ``start:step:end`` (end inclusive) into a percentile grid."""
    try:
        start, step, end = (float(part) for part in text.split(":"))
    except ValueError as e:
        raise InvalidConfig(f"p-grid must look like start:step:end, got {text!r}") from e
    if step <= 0 or not 0 < start <= end < 100:
        raise InvalidConfig(f"p-grid {text!r} must satisfy 0 < start <= end < 100 and step > 0")
    count = int(math.floor((end - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))


def _p_key(p: float) -> str:
    return f"{p:g}"


@dataclass(frozen=True, eq=False)
class SizeSplit:
    p: float
    threshold: int
    small: ZScoreTable
    large: ZScoreTable

    @property
    def valid(self) -> bool:
        return len(self.small) >= MIN_SPLIT_SIZE and len(self.large) >= MIN_SPLIT_SIZE


@dataclass(frozen=True)
class SplitCenters:
    m_t_S: float
    m_vw_S: float
    m_t_L: float
    m_vw_L: float
    D: float

    @property
    def upper_right(self) -> bool:
        """Small-unit center lies strictly above and right of the large-unit center."""
        return self.m_t_S > self.m_t_L and self.m_vw_S > self.m_vw_L


@dataclass(frozen=True)
class TauResult:
    outlier_indices: Tuple[int, ...]
    thresholds: Tuple[float, ...]
    alpha: float
    survivors: Tuple[int, ...] = ()
    center: float = 0.0
    spread: float = 0.0

    @property
    def final_threshold(self) -> float:
        return self.thresholds[-1] if self.thresholds else float("nan")


@dataclass(frozen=True, eq=False)
class DistanceCurve:
    election: str
    p_grid: Tuple[float, ...]
    centers: Tuple[Optional[SplitCenters], ...]

    def distances(self) -> np.ndarray:
        return np.array([c.D if c is not None else np.nan for c in self.centers])

    def valid(self) -> np.ndarray:
        return np.array([c is not None for c in self.centers])


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    members: frozenset
    alpha: float
    p_grid: Tuple[float, ...]
    tau: Tuple[Optional[TauResult], ...]
    tested: Dict[str, np.ndarray]
    flagged: Dict[str, np.ndarray]

    def flagged_share(self, election: str) -> float:
        n = int(self.tested[election].sum())
        return float(self.flagged[election].sum()) / n if n else 0.0


@dataclass(frozen=True)
class PResult:
    D: Optional[float]
    delta: Optional[float]
    tau_threshold: Optional[float]
    is_outlier: bool
    upper_right: bool
    valid: bool
    self_referential: bool = False


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    election: str
    per_p: Dict[float, PResult]
    in_reference_set: bool
    verdict: str
    flagged_share: float = 0.0
    rigging_share: float = 0.0


@dataclass(frozen=True, eq=False)
class EnsembleReport:
    p_grid: Tuple[float, ...]
    alpha: float
    reports: Tuple[TestReport, ...]
    reference_set: Tuple[str, ...]
    boundary_lower: Tuple[Optional[float], ...]
    boundary_upper: Tuple[Optional[float], ...]
    reference_line: float = THREE_SIGMA
    curves: Tuple[DistanceCurve, ...] = field(default=())

    def report(self, election: str) -> TestReport:
        for r in self.reports:
            if r.election == election:
                return r
        raise KeyError(election)


def _nearest_rank(m: int, p: float) -> int:
    rank = math.ceil(p * m / 100.0 - 1e-9)
    return min(max(rank, 1), m)


def nearest_rank_threshold(electors: np.ndarray, p: float) -> int:
    """Value at rank ceil(p/100 * M) of the ascending elector counts."""
    values = np.sort(np.asarray(electors))
    return int(values[_nearest_rank(values.size, p) - 1])


def split_by_percentile(z: ZScores, p: float) -> SizeSplit:
    """Small units have strictly fewer electors than the nearest-rank p-th percentile."""
    table = as_table(z)
    if len(table) == 0:
        raise EmptyInput("Cannot split an empty Z-score set")
    if not 0 < p < 100:
        raise InvalidConfig(f"Percentile must lie in (0, 100), got {p}")
    threshold = nearest_rank_threshold(table.electors, p)
    small = table.electors < threshold
    split = SizeSplit(p=p, threshold=threshold, small=table.subset(small), large=table.subset(~small))
    if not split.valid:
        logger.debug("p=%s: invalid split (%d small, %d large)", _p_key(p), len(split.small), len(split.large))
    return split


def median_center(z: ZScores) -> Tuple[float, float]:
    table = as_table(z)
    if len(table) == 0:
        raise EmptyInput("Median center of an empty Z-score set")
    return float(np.median(table.z_t)), float(np.median(table.z_vw))


def distance(small_center: Tuple[float, float], large_center: Tuple[float, float]) -> float:
    return math.hypot(small_center[0] - large_center[0], small_center[1] - large_center[1])


def split_centers(split: SizeSplit) -> SplitCenters:
    small = median_center(split.small)
    large = median_center(split.large)
    return SplitCenters(small[0], small[1], large[0], large[1], distance(small, large))


def distance_curve(z: ZScores, p_grid: Sequence[float], election: str = "") -> DistanceCurve:
    """D over the percentile grid; None where the split is invalid.

    Same partition as split_by_percentile, computed on one ascending sort.
    """
    table = as_table(z)
    if len(table) == 0:
        raise EmptyInput(f"{election}: no Z-scores to split")
    order = np.argsort(table.electors, kind="stable")
    sizes = table.electors[order]
    z_t = table.z_t[order]
    z_vw = table.z_vw[order]
    m = sizes.size

    centers: List[Optional[SplitCenters]] = []
    for p in p_grid:
        if not 0 < p < 100:
            raise InvalidConfig(f"Percentile must lie in (0, 100), got {p}")
        threshold = sizes[_nearest_rank(m, p) - 1]
        k = int(np.searchsorted(sizes, threshold, side="left"))
        if k < MIN_SPLIT_SIZE or m - k < MIN_SPLIT_SIZE:
            centers.append(None)
            continue
        small = (float(np.median(z_t[:k])), float(np.median(z_vw[:k])))
        large = (float(np.median(z_t[k:])), float(np.median(z_vw[k:])))
        centers.append(SplitCenters(small[0], small[1], large[0], large[1], distance(small, large)))
    n_valid = sum(c is not None for c in centers)
    logger.info("%s: %d of %d percentiles give valid splits", election, n_valid, len(centers))
    return DistanceCurve(election=election, p_grid=tuple(p_grid), centers=tuple(centers))


def tau_threshold(n: int, alpha: float) -> float:
    """Rejection threshold r for n observations at significance alpha."""
    t = stats.t.ppf(1.0 - alpha / 2.0, n - 2)
    return float(t * (n - 1) / math.sqrt(n * (n - 2 + t * t)))


def thompson_tau(x: Sequence[float], alpha: float = DEFAULT_ALPHA) -> TauResult:
    """Modified Thompson Tau test, removing one outlier per step.

    Each step compares the largest standardized deviation with the threshold
    r for the current sample size; it stops once nothing exceeds r or fewer
    than three observations remain. Zero spread means no outliers.
    """
    values = np.asarray(x, dtype=float)
    if values.size < 3:
        raise TooFewObservations(f"Thompson Tau needs at least 3 observations, got {values.size}")
    if not 0 < alpha < 1:
        raise InvalidConfig(f"alpha must lie in (0, 1), got {alpha}")

    active = np.arange(values.size)
    outliers: List[int] = []
    thresholds: List[float] = []
    while active.size >= 3:
        sample = values[active]
        mean = sample.mean()
        sd = sample.std(ddof=1)
        r = tau_threshold(sample.size, alpha)
        thresholds.append(r)
        if sd <= 1e-12 * max(1.0, float(np.abs(sample).max())):
            break
        deviation = np.abs(sample - mean) / sd
        worst = int(np.argmax(deviation))
        if deviation[worst] <= r:
            break
        outliers.append(int(active[worst]))
        active = np.delete(active, worst)

    survivors = values[active]
    return TauResult(
        outlier_indices=tuple(outliers),
        thresholds=tuple(thresholds),
        alpha=alpha,
        survivors=tuple(int(i) for i in active),
        center=float(survivors.mean()),
        spread=float(survivors.std(ddof=1)) if survivors.size > 1 else 0.0,
    )


def _check_curves(curves: Sequence[DistanceCurve]) -> Tuple[float, ...]:
    if len(curves) < MIN_ELECTIONS:
        raise TooFewElections(
            f"The rigging test needs at least {MIN_ELECTIONS} elections, got {len(curves)}",
            {"elections": [c.election for c in curves]},
        )
    names = [c.election for c in curves]
    if len(set(names)) != len(names):
        raise InvalidConfig(f"Election names must be unique, got {names}")
    grid = curves[0].p_grid
    for c in curves[1:]:
        if c.p_grid != grid:
            raise InvalidConfig(f"{c.election}: percentile grid differs from {curves[0].election}")
    return grid


def build_reference_set(curves: Sequence[DistanceCurve], alpha: float = DEFAULT_ALPHA) -> ReferenceSet:
    """Elections not flagged by the per-p Tau runs on at least (1 - alpha) of their valid p."""
    grid = _check_curves(curves)
    tested = {c.election: np.zeros(len(grid), dtype=bool) for c in curves}
    flagged = {c.election: np.zeros(len(grid), dtype=bool) for c in curves}
    taus: List[Optional[TauResult]] = []

    for j, p in enumerate(grid):
        present = [c for c in curves if c.centers[j] is not None]
        if len(present) < MIN_ELECTIONS:
            logger.debug("p=%s: only %d elections with valid splits, no Tau run", _p_key(p), len(present))
            taus.append(None)
            continue
        result = thompson_tau([c.centers[j].D for c in present], alpha)
        taus.append(result)
        for c in present:
            tested[c.election][j] = True
        for idx in result.outlier_indices:
            flagged[present[idx].election][j] = True

    share = 1.0 - alpha
    members = set()
    for c in curves:
        n = int(tested[c.election].sum())
        if n == 0:
            logger.warning("%s: never tested, left out of the reference set", c.election)
            continue
        clean = n - int(flagged[c.election].sum())
        if clean >= share * n - 1e-9:
            members.add(c.election)

    if not members:
        raise EmptyReferenceSet(
            "No election qualifies as a trusted reference",
            {"alpha": alpha, "elections": [c.election for c in curves]},
        )
    logger.info("reference set: %d of %d elections", len(members), len(curves))
    return ReferenceSet(
        members=frozenset(members),
        alpha=alpha,
        p_grid=grid,
        tau=tuple(taus),
        tested=tested,
        flagged=flagged,
    )


def delta(d_k: float, reference_d: Sequence[float]) -> float:
    """(D_k - mean of reference D) / sample std of reference D."""
    ref = np.asarray(reference_d, dtype=float)
    if ref.size < 2:
        raise TooFewObservations(f"delta needs at least 2 reference values, got {ref.size}")
    sd = float(ref.std(ddof=1))
    if sd <= 0.0:
        raise ZeroReferenceSpread("Reference distances have zero spread", {"mean": float(ref.mean())})
    return (d_k - float(ref.mean())) / sd


def _reference_values(curves: Sequence[DistanceCurve], members: frozenset, j: int) -> np.ndarray:
    return np.array([c.centers[j].D for c in curves if c.election in members and c.centers[j] is not None])


def _delta_or_none(d_k: float, ref: np.ndarray) -> Optional[float]:
    try:
        return delta(d_k, ref)
    except (TooFewObservations, ZeroReferenceSpread):
        return None


def accepted_boundary(tau: Optional[TauResult], ref: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    """The Tau acceptance interval at one p, mapped into delta units."""
    if tau is None or ref.size < 2:
        return None, None
    sd = float(ref.std(ddof=1))
    if sd <= 0.0:
        return None, None
    mean = float(ref.mean())
    reach = tau.final_threshold * tau.spread
    return (tau.center - reach - mean) / sd, (tau.center + reach - mean) / sd


def classify(
    curves: Sequence[DistanceCurve],
    reference: ReferenceSet,
) -> EnsembleReport:
    """Per-p outlier flags, direction and delta for every election, plus verdicts.

    Members of the reference set are reported with self-referential deltas
    and always get the no-anomaly verdict.
    """
    grid = _check_curves(curves)
    refs = [_reference_values(curves, reference.members, j) for j in range(len(grid))]
    bounds = [accepted_boundary(reference.tau[j], refs[j]) for j in range(len(grid))]

    reports = []
    for c in curves:
        member = c.election in reference.members
        per_p: Dict[float, PResult] = {}
        n_valid = 0
        n_rigged = 0
        for j, p in enumerate(grid):
            centers = c.centers[j]
            tested = bool(reference.tested[c.election][j])
            if centers is None:
                per_p[p] = PResult(None, None, None, False, False, False)
                continue
            outlier = bool(reference.flagged[c.election][j])
            tau = reference.tau[j]
            per_p[p] = PResult(
                D=centers.D,
                delta=_delta_or_none(centers.D, refs[j]),
                tau_threshold=tau.final_threshold if tau is not None else None,
                is_outlier=outlier,
                upper_right=centers.upper_right,
                valid=tested,
                self_referential=member,
            )
            if tested:
                n_valid += 1
                if outlier and centers.upper_right:
                    n_rigged += 1

        rigging_share = n_rigged / n_valid if n_valid else 0.0
        if member:
            verdict = VERDICT_CLEAN
        elif n_valid and n_rigged > n_valid / 2:
            verdict = VERDICT_RIGGING
        else:
            verdict = VERDICT_INDETERMINATE
        logger.info("%s: %s (rigging pattern at %.0f%% of valid p)", c.election, verdict, 100 * rigging_share)
        reports.append(
            TestReport(
                election=c.election,
                per_p=per_p,
                in_reference_set=member,
                verdict=verdict,
                flagged_share=reference.flagged_share(c.election),
                rigging_share=rigging_share,
            )
        )

    return EnsembleReport(
        p_grid=grid,
        alpha=reference.alpha,
        reports=tuple(reports),
        reference_set=tuple(sorted(reference.members)),
        boundary_lower=tuple(b[0] for b in bounds),
        boundary_upper=tuple(b[1] for b in bounds),
        curves=tuple(curves),
    )


def run_rigging_test(curves: Sequence[DistanceCurve], alpha: float = DEFAULT_ALPHA) -> EnsembleReport:
    reference = build_reference_set(curves, alpha)
    return classify(curves, reference)


@dataclass(frozen=True, eq=False)
class SplitSef:
    p: float
    threshold: int
    valid: bool
    small: SefHistogram
    large: SefHistogram
    centers: Optional[SplitCenters]


def split_sef(
    z: ZScores,
    p: float = 20.0,
    bins: int = DEFAULT_BINS,
    value_range: Tuple[float, float] = DEFAULT_RANGE,
) -> SplitSef:
    """Smoothed SEFs of small and large units at percentile p, with their centers."""
    split = split_by_percentile(z, p)
    centers = split_centers(split) if len(split.small) and len(split.large) else None
    return SplitSef(
        p=p,
        threshold=split.threshold,
        valid=split.valid,
        small=smooth_histogram(sef_histogram(split.small, bins, value_range)),
        large=smooth_histogram(sef_histogram(split.large, bins, value_range)),
        centers=centers,
    )


def _p_result_dict(r: PResult) -> Dict[str, Any]:
    return {
        "D": r.D,
        "delta": r.delta,
        "tau_threshold": r.tau_threshold,
        "is_outlier": r.is_outlier,
        "upper_right": r.upper_right,
        "valid": r.valid,
        "self_referential": r.self_referential,
    }


def report_to_dict(report: TestReport) -> Dict[str, Any]:
    return {
        "election": report.election,
        "in_reference_set": report.in_reference_set,
        "verdict": report.verdict,
        "flagged_share": report.flagged_share,
        "rigging_share": report.rigging_share,
        "per_p": {_p_key(p): _p_result_dict(r) for p, r in report.per_p.items()},
    }


def ensemble_to_dict(ensemble: EnsembleReport) -> Dict[str, Any]:
    per_election = {}
    for r in ensemble.reports:
        ordered = [r.per_p[p] for p in ensemble.p_grid]
        per_election[r.election] = {
            "D": [x.D for x in ordered],
            "delta": [x.delta for x in ordered],
            "is_outlier": [x.is_outlier for x in ordered],
            "upper_right": [x.upper_right for x in ordered],
            "verdict": r.verdict,
            "in_reference_set": r.in_reference_set,
        }
    return {
        "p_grid": list(ensemble.p_grid),
        "alpha": ensemble.alpha,
        "per_election": per_election,
        "reference_set": list(ensemble.reference_set),
        "accepted_region_boundary": {
            "lower": list(ensemble.boundary_lower),
            "upper": list(ensemble.boundary_upper),
        },
        "reference_line": {"lower": -ensemble.reference_line, "upper": ensemble.reference_line},
    }


def write_test_report(report: TestReport, path: str, prov: Optional[Dict[str, Any]] = None) -> None:
    write_json(path, report_to_dict(report), prov)


def write_ensemble(ensemble: EnsembleReport, path: str, prov: Optional[Dict[str, Any]] = None) -> None:
    write_json(path, ensemble_to_dict(ensemble), prov)


def write_delta_csv(ensemble: EnsembleReport, path: str, prov: Optional[Dict[str, Any]] = None) -> None:
    """One row per p: delta of every election, then the accepted-region boundary."""
    names = [r.election for r in ensemble.reports]
    columns = ["p"] + names + ["boundary_lower", "boundary_upper"]
    rows = []
    for j, p in enumerate(ensemble.p_grid):
        row = [p] + [ensemble.reports[i].per_p[p].delta for i in range(len(names))]
        row += [ensemble.boundary_lower[j], ensemble.boundary_upper[j]]
        rows.append(row)
    write_csv(path, columns, rows, prov)
