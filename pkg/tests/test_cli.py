import json

import pytest
from typer.testing import CliRunner

from cli import app
from conftest import grid_rows, write_rows

runner = CliRunner()


def _synth(tmp_path, seed, *extra):
    path = tmp_path / f"e{seed}.csv"
    result = runner.invoke(app, ["synth", "--seed", str(seed), "--out", str(path), *extra])
    assert result.exit_code == 0, result.output
    return path


def test_synth_then_validate(tmp_path):
    path = _synth(tmp_path, 42)
    assert path.read_text().startswith("# tool: sef-forensics\n")
    result = runner.invoke(app, ["validate", str(path), "--out", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    assert "accepted" in result.stdout
    assert "N=1440" in result.stdout
    doc = json.loads((tmp_path / "out" / "e42.election.json").read_text())
    assert len(doc["units"]) == 1440
    assert doc["provenance"]["inputs"]["e42.csv"]


def test_rejected_election_exit_status(tmp_path):
    path = write_rows(tmp_path / "small.csv", grid_rows(n_hoods=100))
    result = runner.invoke(app, ["validate", str(path)])
    assert result.exit_code == 6
    error = json.loads(result.stderr.strip().splitlines()[-1])
    assert error["error"] == "election-rejected"


def test_malformed_file_exit_status(tmp_path):
    rows = grid_rows()
    rows[4] = ("u", "n000", "x", 1, 1)
    path = write_rows(tmp_path / "bad.csv", rows)
    result = runner.invoke(app, ["validate", str(path)])
    assert result.exit_code == 5
    assert json.loads(result.stderr.strip().splitlines()[-1])["details"]["lines"] == [6]


def test_summarize_several_files(tmp_path):
    paths = [_synth(tmp_path, seed) for seed in (1, 2)]
    out = tmp_path / "out"
    result = runner.invoke(app, ["summarize", *map(str, paths), "--out", str(out)])
    assert result.exit_code == 0, result.output
    doc = json.loads((out / "summary.json").read_text())
    assert [e["name"] for e in doc["elections"]] == ["e1", "e2"]
    assert (out / "summary.csv").read_text().splitlines()[-1].startswith("e2,1440,")


def test_sef_outputs_are_byte_identical_across_runs(tmp_path):
    path = _synth(tmp_path, 5)
    for run in ("a", "b"):
        result = runner.invoke(app, ["sef", str(path), "--out", str(tmp_path / run), "--split-p", "20"])
        assert result.exit_code == 0, result.output
    for name in ("e5.zscores.csv", "e5.removed.csv", "e5.sef.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    doc = json.loads((tmp_path / "a" / "e5.sef.json").read_text())
    assert len(doc["sef"]["levels"]) == 10
    assert doc["split"]["p"] == 20.0
    assert doc["kept"] + doc["removed"] == doc["zscores"]
    assert len(doc["neighborhoods"]) == 120
    assert sum(n["units"] for n in doc["neighborhoods"]) == doc["units"]


def test_sef_rejects_a_tiny_grid(tmp_path):
    path = _synth(tmp_path, 5)
    result = runner.invoke(app, ["sef", str(path), "--out", str(tmp_path), "--bins", "5"])
    assert result.exit_code == 2


def test_test_needs_three_elections(tmp_path):
    paths = [_synth(tmp_path, seed) for seed in (1, 2)]
    result = runner.invoke(app, ["test", *map(str, paths), "--out", str(tmp_path / "out")])
    assert result.exit_code == 15
    assert json.loads(result.stderr.strip().splitlines()[-1])["error"] == "too-few-elections"


def test_test_writes_reports(tmp_path):
    paths = [_synth(tmp_path, seed) for seed in (1, 2, 3)]
    paths.append(_synth(tmp_path, 4, "--rig-q", "10", "--shift-t", "1.5", "--shift-vw", "1.5"))
    out = tmp_path / "out"
    result = runner.invoke(app, ["test", *map(str, paths), "--out", str(out), "--p-grid", "5:5:30", "--jobs", "2"])
    assert result.exit_code == 0, result.output

    ensemble = json.loads((out / "ensemble.json").read_text())
    assert ensemble["p_grid"] == [5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
    assert sorted(ensemble["per_election"]) == ["e1", "e2", "e3", "e4"]
    for seed in (1, 2, 3, 4):
        report = json.loads((out / f"e{seed}.report.json").read_text())
        assert set(report["per_p"]) == {"5", "10", "15", "20", "25", "30"}
    header = [line for line in (out / "delta_curves.csv").read_text().splitlines() if not line.startswith("#")][0]
    assert header == "p,e1,e2,e3,e4,boundary_lower,boundary_upper"


def test_test_reads_zscore_files(tmp_path):
    paths = []
    for seed in (1, 2, 3):
        election = _synth(tmp_path, seed)
        result = runner.invoke(app, ["sef", str(election), "--out", str(tmp_path / "z")])
        assert result.exit_code == 0, result.output
        paths.append(tmp_path / "z" / f"e{seed}.zscores.csv")
    result = runner.invoke(app, ["test", *map(str, paths), "--out", str(tmp_path / "out"), "--p-grid", "10:10:50"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "e3.report.json").exists()


def test_cumulative_command(tmp_path):
    path = _synth(tmp_path, 8)
    result = runner.invoke(app, ["cumulative", str(path), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "e8.cumulative.csv").read_text().splitlines()
    assert "rank,electors,cum_vw" in lines
    assert lines[-1].startswith("1440,")


def test_synth_from_config_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "cfg", "n_neighborhoods": 105, "units_per_neighborhood": 11}))
    out = tmp_path / "cfg.csv"
    result = runner.invoke(app, ["synth", "--config", str(spec), "--out", str(out), "--seed", "3"])
    assert result.exit_code == 0, result.output
    assert "1155 units" in result.stdout
    assert "input: spec.json sha256=" in out.read_text()


@pytest.mark.parametrize("args, code", [(["synth", "--units", "4"], 14), (["test", "a", "b", "c", "--p-grid", "bad"], 2)])
def test_configuration_errors(tmp_path, args, code):
    result = runner.invoke(app, [*args, "--out", str(tmp_path / "x")])
    assert result.exit_code == code


def test_test_outputs_are_byte_identical_across_runs(tmp_path):
    paths = [_synth(tmp_path, seed) for seed in (1, 2, 3)]
    for run in ("a", "b"):
        result = runner.invoke(app, ["test", *map(str, paths), "--out", str(tmp_path / run), "--p-grid", "5:5:30"])
        assert result.exit_code == 0, result.output
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert {"ensemble.json", "delta_curves.csv", "e1.report.json"} <= set(names)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _saved_election(tmp_path, seed):
    path = _synth(tmp_path, seed)
    result = runner.invoke(app, ["validate", str(path), "--out", str(tmp_path / "saved")])
    assert result.exit_code == 0, result.output
    return tmp_path / "saved" / f"e{seed}.election.json"


def test_validate_rejects_a_small_saved_election(tmp_path):
    doc = json.loads(_saved_election(tmp_path, 6).read_text())
    doc["units"] = doc["units"][:5]
    path = tmp_path / "tiny.election.json"
    path.write_text(json.dumps(doc))
    result = runner.invoke(app, ["validate", str(path)])
    assert result.exit_code == 6
    assert json.loads(result.stderr.strip().splitlines()[-1])["error"] == "election-rejected"


def test_validate_excludes_zero_ballot_units_from_saved_election(tmp_path):
    doc = json.loads(_saved_election(tmp_path, 6).read_text())
    doc["units"][0]["ballots_cast"] = 0
    doc["units"][0]["winner_votes"] = 0
    path = tmp_path / "edited.election.json"
    path.write_text(json.dumps(doc))
    result = runner.invoke(app, ["validate", str(path), "--out", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    assert "N=1439" in result.stdout
    assert "1 units excluded" in result.stdout
    again = json.loads((tmp_path / "out" / "e6.election.json").read_text())
    assert len(again["units"]) == 1439
    assert again["exclusion_log"][-1]["reason"] == "zero-ballots"


def test_synth_seed_is_part_of_the_config_hash(tmp_path):
    def config_line(path):
        return [line for line in path.read_text().splitlines() if line.startswith("# config_hash:")][0]

    a = _synth(tmp_path, 11)
    b = tmp_path / "again.csv"
    assert runner.invoke(app, ["synth", "--seed", "11", "--out", str(b)]).exit_code == 0
    c = _synth(tmp_path, 12)
    assert config_line(a) == config_line(b)
    assert config_line(a) != config_line(c)
