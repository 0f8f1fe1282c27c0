import numpy as np
import pytest

from diagnostics import RiggingSpec, generate_synthetic, make_synth_spec
from ingest import Election, ElectoralUnit

HEADER = ["unit_id", "neighborhood_id", "electors", "ballots_cast", "winner_votes"]


def write_rows(path, rows, header=HEADER, delimiter=","):
    lines = [delimiter.join(header)] + [delimiter.join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def grid_rows(n_hoods=101, per_hood=10, electors=100, cast=60, winner=40):
    return [
        (f"u{h:03d}_{i:02d}", f"n{h:03d}", electors, cast, winner)
        for h in range(n_hoods)
        for i in range(per_hood)
    ]


def hand_election(neighborhoods, name="hand"):
    """Election from {neighborhood: [(electors, cast, winner), ...]}, no inclusion gates."""
    units = []
    for hood, rows in neighborhoods.items():
        for i, (n, cast, win) in enumerate(rows):
            units.append(ElectoralUnit(f"{hood}-{i}", hood, n, cast, win))
    return Election(name=name, units=tuple(units))


def synth(seed, rigging=None, name=None, **fields):
    spec = make_synth_spec(name=name or f"e{seed:02d}", seed=seed, rigging=rigging, **fields)
    return generate_synthetic(spec)


RIGGED = RiggingSpec(size_percentile_q=10.0, shift_t=1.5, shift_vw=1.5, fraction_affected=1.0)


@pytest.fixture
def csv_file(tmp_path):
    def _make(rows, name="election.csv", **kw):
        return write_rows(tmp_path / name, rows, **kw)

    return _make


@pytest.fixture(scope="session")
def clean_election():
    return synth(7, name="clean")


@pytest.fixture(scope="session")
def rigged_election():
    return synth(7, rigging=RIGGED, name="rigged")


@pytest.fixture(scope="session")
def rigged_ensemble():
    """Twenty clean synthetic elections plus one rigged, as (elections, rigged name)."""
    elections = [synth(seed) for seed in range(1, 21)]
    elections.append(synth(21, rigging=RIGGED, name="rigged"))
    return elections, "rigged"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
