"""
Diagnostics: the descending-size cumulative winner-share curve, and a
generator of synthetic elections, clean or with voter rigging injected into
small units, for tests, calibration and demos.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from scipy import stats

from errors import InvalidSpec
from ingest import Election, RawRecord, build_election
from riggingtest import nearest_rank_threshold
from utils import parse_structured_file, write_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CumulativeCurve:
    ranks: np.ndarray
    electors: np.ndarray
    cum_vw: np.ndarray


def cumulative_winner_share(e: Election) -> CumulativeCurve:
    """Winner share over the i largest units, for i = 1..N.

    Units are ranked by electors descending, ties by unit id ascending; the
    denominator is ballots cast.
    """
    order = sorted(range(len(e.units)), key=lambda i: (-e.units[i].electors, e.units[i].unit_id))
    order = np.asarray(order, dtype=np.int64)
    winners = np.cumsum(np.asarray(e.winner_votes, dtype=np.int64)[order])
    cast = np.cumsum(np.asarray(e.ballots_cast, dtype=np.int64)[order])
    return CumulativeCurve(
        ranks=np.arange(1, order.size + 1),
        electors=np.asarray(e.electors, dtype=np.int64)[order],
        cum_vw=100.0 * winners / cast,
    )


def write_cumulative_csv(curve: CumulativeCurve, path: str, prov: Optional[Dict[str, Any]] = None) -> None:
    rows = zip(curve.ranks.tolist(), curve.electors.tolist(), curve.cum_vw.tolist())
    write_csv(path, ["rank", "electors", "cum_vw"], rows, prov)


class ElectorSizeSpec(BaseModel):
    log_mean: float = math.log(500.0)
    log_sigma: float = Field(0.5, ge=0.0)
    min_size: int = Field(50, ge=1)


class BetaLocation(BaseModel):
    """Beta distribution for a neighborhood's latent propensity, by mean and concentration."""

    mean: float = Field(gt=0.0, lt=1.0)
    concentration: float = Field(20.0, gt=0.0)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.beta(self.mean * self.concentration, (1.0 - self.mean) * self.concentration, size=size)


class RiggingSpec(BaseModel):
    size_percentile_q: float = Field(10.0, gt=0.0, lt=100.0)
    shift_t: float = 1.5
    shift_vw: float = 1.5
    fraction_affected: float = Field(1.0, ge=0.0, le=1.0)


class SynthSpec(BaseModel):
    name: str = "synthetic"
    n_neighborhoods: int = Field(120, ge=1)
    units_per_neighborhood: int = Field(12, ge=10)
    electors: ElectorSizeSpec = ElectorSizeSpec()
    base_turnout: BetaLocation = BetaLocation(mean=0.6)
    base_winner_share: BetaLocation = BetaLocation(mean=0.5)
    rigging: Optional[RiggingSpec] = None
    seed: int = 0


def make_synth_spec(**fields) -> SynthSpec:
    try:
        return SynthSpec.model_validate(fields)
    except ValidationError as e:
        raise InvalidSpec(f"Invalid synthetic election spec: {e}", {"errors": e.errors(include_url=False)}) from e


def load_synth_spec(path: str, **overrides) -> SynthSpec:
    """SynthSpec from a JSON or YAML file; keyword overrides replace top-level fields."""
    fields = parse_structured_file(path)
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return make_synth_spec(**fields)


def _group_std(x: np.ndarray, codes: np.ndarray) -> np.ndarray:
    counts = np.bincount(codes).astype(float)
    mean = np.bincount(codes, weights=x) / counts
    d = x - mean[codes]
    return np.sqrt(np.bincount(codes, weights=d * d) / np.maximum(counts - 1, 1))


def _binomial(u: np.ndarray, n: np.ndarray, p: np.ndarray) -> np.ndarray:
    # inverse-CDF draws: a fixed uniform per unit keeps draws coupled across parameter changes
    return np.clip(stats.binom.ppf(u, n, p), 0, n).astype(np.int64)


def generate_synthetic(spec: SynthSpec) -> Election:
    """Draw a synthetic election from a binomial micro-model.

    Each neighborhood gets beta-distributed turnout and winner-share
    propensities; each unit draws its electors from a log-normal, its ballots
    from Binomial(electors, turnout) and its winner votes from
    Binomial(ballots, winner share). With rigging, units below the q-th size
    percentile are affected with probability ``fraction_affected``: both
    propensities move up by the given multiples of the neighborhood's
    standard deviation (clamped to [0, 1]) before the draws. All uniforms are
    drawn before any rigging is applied, so unaffected units are identical to
    the clean election with the same seed.
    """
    if not isinstance(spec, SynthSpec):
        spec = make_synth_spec(**dict(spec))
    rng = np.random.default_rng(spec.seed)
    n_hoods = spec.n_neighborhoods
    n_units = n_hoods * spec.units_per_neighborhood
    hood = np.repeat(np.arange(n_hoods), spec.units_per_neighborhood)

    p_t = spec.base_turnout.draw(rng, n_hoods)[hood]
    p_vw = spec.base_winner_share.draw(rng, n_hoods)[hood]
    sizes = rng.lognormal(spec.electors.log_mean, spec.electors.log_sigma, size=n_units)
    electors = np.maximum(spec.electors.min_size, np.rint(sizes)).astype(np.int64)
    u_t = rng.random(n_units)
    u_vw = rng.random(n_units)
    u_affect = rng.random(n_units)

    ballots = _binomial(u_t, electors, p_t)
    winners = _binomial(u_vw, ballots, p_vw)

    rig = spec.rigging
    if rig is not None:
        threshold = nearest_rank_threshold(electors, rig.size_percentile_q)
        affected = (electors < threshold) & (u_affect < rig.fraction_affected)
        with np.errstate(divide="ignore", invalid="ignore"):
            sd_t = _group_std(ballots / electors, hood)
            sd_vw = _group_std(np.where(ballots > 0, winners / np.maximum(ballots, 1), 0.0), hood)
        p_t = np.where(affected, np.clip(p_t + rig.shift_t * sd_t[hood], 0.0, 1.0), p_t)
        p_vw = np.where(affected, np.clip(p_vw + rig.shift_vw * sd_vw[hood], 0.0, 1.0), p_vw)
        ballots = _binomial(u_t, electors, p_t)
        winners = _binomial(u_vw, ballots, p_vw)
        logger.info(
            "%s: rigging %d units below %d electors (shift t %.2f, vw %.2f std)",
            spec.name, int(affected.sum()), threshold, rig.shift_t, rig.shift_vw,
        )

    records = [
        RawRecord(
            unit_id=f"u{i:06d}",
            neighborhood_id=f"n{int(hood[i]):04d}",
            electors=int(electors[i]),
            ballots_cast=int(ballots[i]),
            winner_votes=int(winners[i]),
        )
        for i in range(n_units)
    ]
    return build_election(records, spec.name)
