'''
End-to-end pipeline: election files in, standardized fingerprints and the
multi-election rigging test out.
'''
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from election_store import load_election_json
from ingest import ColumnMapping, Election, load_election
from riggingtest import (
    DEFAULT_ALPHA,
    EnsembleReport,
    SplitSef,
    default_p_grid,
    distance_curve,
    run_rigging_test,
    split_sef,
)
from sef import (
    DEFAULT_BINS,
    DEFAULT_RANGE,
    SefHistogram,
    ZScoreTable,
    compute_zscores,
    export_contour_grid,
    read_zscores_csv,
    remove_ellipse_outliers,
    sef_histogram,
    smooth_histogram,
)
from utils import read_table

logger = logging.getLogger(__name__)


class PipelineSettings(BaseModel):
    alpha: float = Field(DEFAULT_ALPHA, gt=0.0, lt=1.0)
    leave_one_out: bool = True
    ellipse: bool = True
    confidence: float = Field(0.95, gt=0.0, lt=1.0)
    p_grid: Tuple[float, ...] = default_p_grid()
    bins: int = Field(DEFAULT_BINS, ge=10)
    value_range: Tuple[float, float] = DEFAULT_RANGE
    levels: int = Field(10, ge=1)
    split_p: Optional[float] = Field(None, gt=0.0, lt=100.0)
    delimiter: str = ","
    columns: ColumnMapping = ColumnMapping()

    @field_validator("value_range")
    @classmethod
    def _ordered_range(cls, v):
        if not v[0] < v[1]:
            raise ValueError("range must satisfy lo < hi")
        return v

    @field_validator("p_grid")
    @classmethod
    def _percentiles(cls, v):
        if not v or any(not 0 < p < 100 for p in v):
            raise ValueError("percentiles must lie in (0, 100)")
        return v


@dataclass(frozen=True, eq=False)
class SefResult:
    election: str
    zscores: ZScoreTable
    kept: ZScoreTable
    removed: ZScoreTable
    histogram: SefHistogram
    smoothed: SefHistogram
    split: Optional[SplitSef] = None

    def contour(self, levels: int) -> Dict[str, Any]:
        return export_contour_grid(self.smoothed, levels)


def compute_election_sef(e: Election, settings: Optional[PipelineSettings] = None) -> SefResult:
    """
    Z-scores, ellipse outlier removal and the smoothed SEF of one election.
    """
    settings = settings or PipelineSettings()
    zscores = compute_zscores(e, leave_one_out=settings.leave_one_out)
    if settings.ellipse:
        kept, removed = remove_ellipse_outliers(zscores, settings.confidence)
    else:
        kept, removed = zscores, zscores.subset(np.zeros(len(zscores), dtype=bool))

    histogram = sef_histogram(kept, settings.bins, settings.value_range)
    split = None
    if settings.split_p is not None:
        split = split_sef(kept, settings.split_p, settings.bins, settings.value_range)
    return SefResult(
        election=e.name,
        zscores=zscores,
        kept=kept,
        removed=removed,
        histogram=histogram,
        smoothed=smooth_histogram(histogram),
        split=split,
    )


def load_any_election(path: str, settings: PipelineSettings, name: Optional[str] = None) -> Election:
    """Election from an ingest-format delimited file or a saved election JSON."""
    if path.endswith(".json"):
        e = load_election_json(path)
        return e if name is None else Election(name=name, units=e.units, exclusion_log=e.exclusion_log)
    return load_election(path, name=name, columns=settings.columns, delimiter=settings.delimiter)


def election_name(path: str) -> str:
    base = os.path.basename(path)
    for suffix in (".zscores.csv", ".election.json"):
        if base.endswith(suffix):
            return base[: -len(suffix)]
    return os.path.splitext(base)[0]


def load_zscore_source(path: str, settings: PipelineSettings) -> Tuple[str, ZScoreTable]:
    """Test-ready Z-scores from either a Z-score file or a raw election file."""
    name = election_name(path)
    if not path.endswith(".json"):
        frame, _ = read_table(path, settings.delimiter)
        if "z_t" in frame.columns:
            logger.info("%s: reading Z-scores from %s", name, path)
            return name, read_zscores_csv(path, settings.delimiter)
    e = load_any_election(path, settings, name)
    return name, compute_election_sef(e, settings).kept


def ensemble_from_zscores(
    sources: Sequence[Tuple[str, ZScoreTable]],
    settings: Optional[PipelineSettings] = None,
) -> EnsembleReport:
    settings = settings or PipelineSettings()
    curves = [distance_curve(z, settings.p_grid, name) for name, z in sources]
    return run_rigging_test(curves, settings.alpha)


def ensemble_from_elections(
    elections: Sequence[Election],
    settings: Optional[PipelineSettings] = None,
) -> EnsembleReport:
    settings = settings or PipelineSettings()
    sources = [(e.name, compute_election_sef(e, settings).kept) for e in elections]
    return ensemble_from_zscores(sources, settings)


def run_ensemble(
    paths: Sequence[str],
    settings: Optional[PipelineSettings] = None,
    jobs: int = 1,
) -> EnsembleReport:
    """
    Run the complete rigging test over election or Z-score files.
    """
    settings = settings or PipelineSettings()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            sources: List[Tuple[str, ZScoreTable]] = list(
                pool.map(lambda p: load_zscore_source(p, settings), paths)
            )
    else:
        sources = [load_zscore_source(p, settings) for p in paths]
    return ensemble_from_zscores(sources, settings)
