"""
Standardized election fingerprints.

Turnout and winner share of every unit are standardized against the other
units of its neighborhood, giving a cloud of (z_t, z_vw) points per
election. The cloud can be trimmed to its 95% confidence ellipse, binned
into a 2D histogram and smoothed with a double 10x10 box filter.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import ndimage, stats

from errors import (
    DegenerateStratum,
    EmptyInput,
    GridTooSmall,
    InvalidConfig,
    SchemaMismatch,
    SingularCovariance,
    TooFewObservations,
)
from ingest import Election
from utils import read_table, write_csv

logger = logging.getLogger(__name__)

DEFAULT_BINS = 100
DEFAULT_RANGE = (-5.0, 5.0)
KERNEL_SIZE = 10
KERNEL = np.full((KERNEL_SIZE, KERNEL_SIZE), 0.01)

# stratum spreads below this (in percentage points) count as zero
_SIGMA_FLOOR = 1e-9
# leave-one-out variances below this fraction of the stratum sum of squares are rounding residue
_RELATIVE_VAR_FLOOR = 1e-10


@dataclass(frozen=True)
class ZScorePair:
    unit_id: str
    z_t: float
    z_vw: float
    electors: int


@dataclass(frozen=True, eq=False)
class ZScoreTable:
    """Column-oriented store of ZScorePairs; iterating yields ZScorePair objects."""

    unit_ids: np.ndarray
    z_t: np.ndarray
    z_vw: np.ndarray
    electors: np.ndarray
    skipped: Tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return int(self.z_t.size)

    def __iter__(self) -> Iterator[ZScorePair]:
        for uid, zt, zv, n in zip(self.unit_ids, self.z_t, self.z_vw, self.electors):
            yield ZScorePair(str(uid), float(zt), float(zv), int(n))

    def __getitem__(self, idx: int) -> ZScorePair:
        return ZScorePair(str(self.unit_ids[idx]), float(self.z_t[idx]), float(self.z_vw[idx]), int(self.electors[idx]))

    @classmethod
    def from_pairs(cls, pairs: Sequence[ZScorePair]) -> "ZScoreTable":
        pairs = list(pairs)
        return cls(
            unit_ids=np.array([p.unit_id for p in pairs], dtype=object),
            z_t=np.array([p.z_t for p in pairs], dtype=float),
            z_vw=np.array([p.z_vw for p in pairs], dtype=float),
            electors=np.array([p.electors for p in pairs], dtype=np.int64),
        )

    def subset(self, mask: np.ndarray) -> "ZScoreTable":
        return ZScoreTable(self.unit_ids[mask], self.z_t[mask], self.z_vw[mask], self.electors[mask])

    def points(self) -> np.ndarray:
        return np.column_stack([self.z_t, self.z_vw])


ZScores = Union[ZScoreTable, Sequence[ZScorePair]]


def as_table(z: ZScores) -> ZScoreTable:
    return z if isinstance(z, ZScoreTable) else ZScoreTable.from_pairs(z)


@dataclass(frozen=True)
class NeighborhoodStats:
    neighborhood_id: str
    mu_t: float
    sigma_t: float
    mu_vw: float
    sigma_vw: float
    member_count: int


@dataclass(frozen=True, eq=False)
class SefHistogram:
    """Rows bin z_vw (vertical axis), columns bin z_t (horizontal axis)."""

    bins_x: int
    bins_y: int
    range: Tuple[float, float]
    counts: np.ndarray
    overflow: int = 0
    smoothed: bool = False

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class CloudSummary:
    center: Tuple[float, float]
    mean: Tuple[float, float]
    covariance: Tuple[Tuple[float, float], Tuple[float, float]]
    correlation: float


def neighborhood_stats(e: Election) -> List[NeighborhoodStats]:
    """Inclusive mean and sample standard deviation of t and vw per neighborhood.

    Neighborhoods come out in first-appearance order; a single-unit
    neighborhood has zero spread.
    """
    if not e.units:
        return []
    frame = pd.DataFrame(
        {
            "neighborhood_id": [u.neighborhood_id for u in e.units],
            "t": e.turnout_pct,
            "vw": e.winner_pct,
        }
    )
    grouped = frame.groupby("neighborhood_id", sort=False).agg(
        mu_t=("t", "mean"),
        sigma_t=("t", "std"),
        mu_vw=("vw", "mean"),
        sigma_vw=("vw", "std"),
        member_count=("t", "size"),
    )
    grouped = grouped.fillna({"sigma_t": 0.0, "sigma_vw": 0.0})
    return [
        NeighborhoodStats(
            neighborhood_id=str(key),
            mu_t=float(row.mu_t),
            sigma_t=float(row.sigma_t),
            mu_vw=float(row.mu_vw),
            sigma_vw=float(row.sigma_vw),
            member_count=int(row.member_count),
        )
        for key, row in grouped.iterrows()
    ]


def _strata(x: np.ndarray, codes: np.ndarray, leave_one_out: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-unit stratum mean and sample std of ``x``, and a degeneracy mask."""
    counts = np.bincount(codes).astype(float)
    mean = np.bincount(codes, weights=x) / counts
    d = x - mean[codes]
    ss = np.bincount(codes, weights=d * d)[codes]
    m = counts[codes]

    with np.errstate(divide="ignore", invalid="ignore"):
        if leave_one_out:
            mu = mean[codes] - d / (m - 1)
            var = (ss - d * d * m / (m - 1)) / (m - 2)
            degenerate = (m < 3) | (var <= _RELATIVE_VAR_FLOOR * ss)
        else:
            mu = mean[codes]
            var = ss / (m - 1)
            degenerate = m < 2
        sigma = np.sqrt(np.clip(var, 0.0, None))
    degenerate = degenerate | ~np.isfinite(sigma) | (sigma <= _SIGMA_FLOOR)
    return mu, sigma, degenerate


def compute_zscores(e: Election, leave_one_out: bool = True) -> ZScoreTable:
    """Z-scores of turnout and winner share against each unit's neighborhood.

    With ``leave_one_out`` the stratum statistics of unit i are taken over the
    other units of its neighborhood. Units whose stratum has zero spread in
    either variable are skipped; their ids are kept in ``skipped``.
    """
    if not e.units:
        return ZScoreTable(np.array([], dtype=object), np.array([]), np.array([]), np.array([], dtype=np.int64))

    codes = e.neighborhood_codes
    mu_t, sd_t, bad_t = _strata(e.turnout_pct, codes, leave_one_out)
    mu_vw, sd_vw, bad_vw = _strata(e.winner_pct, codes, leave_one_out)
    bad = bad_t | bad_vw

    unit_ids = np.array([u.unit_id for u in e.units], dtype=object)
    if bad.any():
        skipped = tuple(str(u) for u in unit_ids[bad])
        hoods = sorted({e.units[i].neighborhood_id for i in np.flatnonzero(bad)})
        logger.warning(
            "%s: %s, skipped %d units in %d neighborhoods",
            e.name, DegenerateStratum.code, len(skipped), len(hoods),
        )
        logger.debug("%s: degenerate neighborhoods %s", e.name, hoods)
    else:
        skipped = ()

    ok = ~bad
    with np.errstate(divide="ignore", invalid="ignore"):
        z_t = (e.turnout_pct - mu_t) / sd_t
        z_vw = (e.winner_pct - mu_vw) / sd_vw
    return ZScoreTable(
        unit_ids=unit_ids[ok],
        z_t=z_t[ok],
        z_vw=z_vw[ok],
        electors=np.asarray(e.electors, dtype=np.int64)[ok],
        skipped=skipped,
    )


def squared_mahalanobis(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    diff = np.atleast_2d(points) - mean
    return np.einsum("ij,ij->i", diff @ np.linalg.inv(cov), diff)


def remove_ellipse_outliers(z: ZScores, confidence: float = 0.95) -> Tuple[ZScoreTable, ZScoreTable]:
    """Split the cloud into points inside and outside its confidence ellipse.

    The ellipse is the ``confidence`` region of the bivariate Gaussian with
    the cloud's sample mean and sample covariance.
    """
    table = as_table(z)
    if len(table) < 3:
        raise TooFewObservations(f"Ellipse outlier removal needs at least 3 points, got {len(table)}")
    pts = table.points()
    mean = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, ddof=1)
    scale = float(np.trace(cov))
    if not np.all(np.isfinite(cov)) or scale <= 0 or np.linalg.det(cov) <= 1e-12 * scale * scale:
        raise SingularCovariance(
            "Z-score cloud is collinear; covariance matrix is singular",
            {"covariance": cov.tolist()},
        )
    d2 = squared_mahalanobis(pts, mean, cov)
    outside = d2 > stats.chi2.ppf(confidence, df=2)
    logger.info(
        "ellipse %.2f: removed %d of %d points (%.1f%%)",
        confidence, int(outside.sum()), len(table), 100.0 * outside.mean(),
    )
    return table.subset(~outside), table.subset(outside)


def cloud_summary(z: ZScores) -> CloudSummary:
    table = as_table(z)
    if len(table) < 2:
        raise EmptyInput("Cloud summary needs at least 2 points")
    pts = table.points()
    cov = np.cov(pts, rowvar=False, ddof=1)
    denom = float(np.sqrt(cov[0, 0] * cov[1, 1]))
    return CloudSummary(
        center=(float(np.median(table.z_t)), float(np.median(table.z_vw))),
        mean=(float(pts[:, 0].mean()), float(pts[:, 1].mean())),
        covariance=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        correlation=float(cov[0, 1] / denom) if denom > 0 else 0.0,
    )


def _histogram(x: np.ndarray, y: np.ndarray, bins: int, value_range: Tuple[float, float]) -> SefHistogram:
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < KERNEL_SIZE:
        raise GridTooSmall(f"Histogram needs at least {KERNEL_SIZE} bins per axis, got {bins}")
    if not lo < hi:
        raise InvalidConfig(f"Histogram range must satisfy lo < hi, got {value_range}")
    inside = (x >= lo) & (x <= hi) & (y >= lo) & (y <= hi)
    counts, _, _ = np.histogram2d(y[inside], x[inside], bins=bins, range=[[lo, hi], [lo, hi]])
    return SefHistogram(
        bins_x=bins,
        bins_y=bins,
        range=(lo, hi),
        counts=counts,
        overflow=int((~inside).sum()),
    )


def sef_histogram(
    z: ZScores,
    bins: int = DEFAULT_BINS,
    value_range: Tuple[float, float] = DEFAULT_RANGE,
) -> SefHistogram:
    table = as_table(z)
    return _histogram(table.z_t, table.z_vw, bins, value_range)


def fingerprint_histogram(e: Election, bins: int = DEFAULT_BINS) -> SefHistogram:
    """Unstandardized fingerprint: winner share (rows) against turnout (columns) on [0, 100]."""
    return _histogram(np.asarray(e.turnout_pct), np.asarray(e.winner_pct), bins, (0.0, 100.0))


def smooth_histogram(h: SefHistogram, passes: int = 2) -> SefHistogram:
    """Convolve the counts with the constant 10x10 kernel, zero padded, same size.

    Output cell (r, c) sums input cells [r-5, r+4] x [c-5, c+4].
    """
    rows, cols = h.counts.shape
    if rows < KERNEL_SIZE or cols < KERNEL_SIZE:
        raise GridTooSmall(f"Smoothing needs at least a {KERNEL_SIZE}x{KERNEL_SIZE} grid, got {rows}x{cols}")
    counts = np.asarray(h.counts, dtype=float)
    for _ in range(passes):
        counts = ndimage.correlate(counts, KERNEL, mode="constant", cval=0.0, origin=0)
    return SefHistogram(
        bins_x=h.bins_x,
        bins_y=h.bins_y,
        range=h.range,
        counts=counts,
        overflow=h.overflow,
        smoothed=True,
    )


def contour_levels(grid_max: float, levels: int) -> List[float]:
    return [grid_max * k / (levels + 1) for k in range(1, levels + 1)]


def export_contour_grid(h: SefHistogram, levels: int = 10) -> Dict[str, Any]:
    """Grid plus ``levels`` equally spaced thresholds strictly between 0 and the grid maximum."""
    grid_max = float(h.counts.max()) if h.counts.size else 0.0
    if not h.smoothed:
        logger.warning("exporting contours of an unsmoothed histogram")
    return {
        "bins": [h.bins_x, h.bins_y],
        "range": [h.range[0], h.range[1]],
        "counts": h.counts.tolist(),
        "overflow": h.overflow,
        "max": grid_max,
        "levels": contour_levels(grid_max, levels),
        "empty": grid_max <= 0.0,
        "smoothed": h.smoothed,
    }


ZSCORE_COLUMNS = ["unit_id", "z_t", "z_vw", "electors"]


def write_zscores_csv(z: ZScores, path: str, prov: Optional[Dict[str, Any]] = None) -> None:
    table = as_table(z)
    rows = ((p.unit_id, p.z_t, p.z_vw, p.electors) for p in table)
    write_csv(path, ZSCORE_COLUMNS, rows, prov)


def read_zscores_csv(path: str, delimiter: str = ",") -> ZScoreTable:
    frame, _ = read_table(path, delimiter)
    missing = [c for c in ZSCORE_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns {missing}", {"path": str(path), "missing": missing})
    try:
        return ZScoreTable(
            unit_ids=frame["unit_id"].to_numpy(dtype=object),
            z_t=frame["z_t"].astype(float).to_numpy(),
            z_vw=frame["z_vw"].astype(float).to_numpy(),
            electors=frame["electors"].astype(np.int64).to_numpy(),
        )
    except ValueError as e:
        raise SchemaMismatch(f"{path}: non-numeric z-score values: {e}", {"path": str(path)}) from e
