import numpy as np
import pytest

from conftest import RIGGED, hand_election, synth
from diagnostics import (
    RiggingSpec,
    SynthSpec,
    cumulative_winner_share,
    generate_synthetic,
    load_synth_spec,
    make_synth_spec,
    write_cumulative_csv,
)
from election_store import election_to_dict
from errors import InvalidSpec
from pipeline import compute_election_sef
from riggingtest import median_center, nearest_rank_threshold, split_by_percentile, split_centers
from sef import compute_zscores


def test_cumulative_three_unit_example():
    e = hand_election({"a": [(500, 400, 300), (100, 100, 90), (1000, 800, 400)]})
    curve = cumulative_winner_share(e)
    assert list(curve.electors) == [1000, 500, 100]
    assert curve.cum_vw == pytest.approx([50.0, 58.33, 60.77], abs=0.01)


def test_cumulative_single_unit():
    e = hand_election({"a": [(300, 200, 50)]})
    assert cumulative_winner_share(e).cum_vw.tolist() == [25.0]


def test_cumulative_constant_curve():
    e = hand_election({"a": [(100 * k, 50 * k, 20 * k) for k in range(1, 8)]})
    assert np.allclose(cumulative_winner_share(e).cum_vw, 40.0)


def test_cumulative_ties_break_on_unit_id():
    e = hand_election({"a": [(100, 50, 10), (100, 50, 40)]})
    curve = cumulative_winner_share(e)
    assert curve.cum_vw[0] == pytest.approx(20.0)


def test_cumulative_final_value_is_election_share(clean_election):
    curve = cumulative_winner_share(clean_election)
    total = 100.0 * clean_election.winner_votes.sum() / clean_election.ballots_cast.sum()
    assert curve.cum_vw[-1] == pytest.approx(total, abs=1e-9)
    assert len(curve.ranks) == len(clean_election.units)


def test_small_unit_rigging_pushes_the_tail_up(rigged_election):
    curve = cumulative_winner_share(rigged_election)
    n = len(curve.cum_vw)
    assert curve.cum_vw[-1] > curve.cum_vw[int(0.9 * n) - 1]


def test_write_cumulative_csv(tmp_path, clean_election):
    path = tmp_path / "clean.cumulative.csv"
    prov = {"tool": "t", "version": "1", "config_hash": "h", "inputs": {"clean.csv": "abc"}}
    write_cumulative_csv(cumulative_winner_share(clean_election), str(path), prov)
    lines = path.read_text().splitlines()
    assert lines[3] == "# input: clean.csv sha256=abc"
    assert lines[4] == "rank,electors,cum_vw"
    assert len(lines) == 5 + len(clean_election.units)


def test_clean_generation_passes_inclusion_gates(clean_election):
    assert len(clean_election.units) == 1440
    assert len(clean_election.neighborhoods) == 120


def test_generation_is_deterministic():
    a = election_to_dict(synth(42, rigging=RIGGED))
    b = election_to_dict(synth(42, rigging=RIGGED))
    assert a == b


def test_zero_shift_reproduces_the_clean_election(clean_election):
    noop = RiggingSpec(size_percentile_q=10.0, shift_t=0.0, shift_vw=0.0, fraction_affected=1.0)
    assert synth(7, rigging=noop, name="clean").units == clean_election.units


def test_only_small_units_are_touched(clean_election, rigged_election):
    threshold = nearest_rank_threshold(clean_election.electors, 10.0)
    changed = [a.electors < threshold for a, b in zip(clean_election.units, rigged_election.units) if a != b]
    assert changed and all(changed)


def test_rigged_small_units_sit_up_and_right(rigged_election):
    centers = split_centers(split_by_percentile(compute_zscores(rigged_election), 10.0))
    assert centers.upper_right
    assert centers.m_t_S > centers.m_t_L + 0.5
    assert centers.m_vw_S > centers.m_vw_L + 0.5


def test_invalid_spec():
    with pytest.raises(InvalidSpec):
        make_synth_spec(units_per_neighborhood=5)
    with pytest.raises(InvalidSpec):
        make_synth_spec(rigging={"fraction_affected": 1.5})


def test_load_synth_spec_with_overrides(tmp_path):
    path = tmp_path / "spec.yaml"
    path.write_text("name: from-file\nn_neighborhoods: 110\nrigging:\n  shift_t: 2.0\n")
    spec = load_synth_spec(str(path), seed=9, name=None)
    assert isinstance(spec, SynthSpec)
    assert (spec.name, spec.n_neighborhoods, spec.seed) == ("from-file", 110, 9)
    assert spec.rigging.shift_t == 2.0
    assert spec.rigging.shift_vw == 1.5


def test_generate_from_plain_mapping():
    e = generate_synthetic({"name": "m", "seed": 3, "n_neighborhoods": 101, "units_per_neighborhood": 10})
    assert e.name == "m"
    assert len(e.units) == 1010


@pytest.mark.slow
def test_clean_small_unit_medians_center_on_zero():
    medians = []
    for seed in range(100):
        split = split_by_percentile(compute_zscores(synth(300 + seed)), 10.0)
        medians.append(median_center(split.small)[0])
    assert abs(np.mean(medians)) < 0.05


@pytest.mark.slow
def test_rigged_small_unit_center_moves_up_and_right():
    up_right = 0
    for seed in range(100):
        kept = compute_election_sef(synth(500 + seed, rigging=RIGGED)).kept
        up_right += split_centers(split_by_percentile(kept, 10.0)).upper_right
    assert up_right >= 99
