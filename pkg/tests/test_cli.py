import json

import pytest

from sievekit import dgp
from sievekit.cli import main
from sievekit.data import CountTable, expand_counts, write_time_fixed, write_time_to_event


@pytest.fixture
def table_csv(tmp_path):
    p = tmp_path / "trial.csv"
    write_time_fixed(expand_counts(CountTable.from_counts((900, 40, 60), (800, 100, 100))), p)
    return p


@pytest.fixture(scope="module")
def tte_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("tte") / "events.csv"
    write_time_to_event(dgp.sample(dgp.builtin_scenario("tte_rare"), 20_000, 1), p)
    return p


@pytest.fixture(scope="module")
def null_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("null") / "events.csv"
    write_time_to_event(dgp.sample(dgp.builtin_scenario("tte_rare").with_multipliers(0.5, 0.5), 40_000, 2), p)
    return p


def run(argv, out, capsys):
    code = main([*argv, "--out-dir", str(out)])
    return code, capsys.readouterr()


def report(out, name):
    return json.loads((out / f"{name}.json").read_text())


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert run(["analyze", "--bogus"], tmp_path, capsys)[0] == 1


def test_unknown_estimand_is_usage_error(table_csv, tmp_path, capsys):
    assert run(["analyze", "--data", str(table_csv), "--estimand", "xyz"], tmp_path, capsys)[0] == 1


def test_missing_file_is_data_error(tmp_path, capsys):
    assert run(["analyze", "--data", str(tmp_path / "none.csv")], tmp_path, capsys)[0] == 2


def test_missing_outcome_column(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("a,e\n1,0\n")
    code, io = run(["analyze", "--data", str(p)], tmp_path, capsys)
    assert code == 2 and "'y'" in io.err


def test_degenerate_counts_exit_three(tmp_path, capsys):
    p = tmp_path / "zero.csv"
    write_time_fixed(expand_counts(CountTable.from_counts((900, 40, 60), (800, 0, 100))), p)
    assert run(["analyze", "--data", str(p)], tmp_path, capsys)[0] == 3


def test_analyze_ccs(table_csv, tmp_path, capsys):
    code, io = run(["analyze", "--data", str(table_csv), "--estimand", "ccs,eet"], tmp_path, capsys)
    assert code == 0
    rep = json.loads(io.out)
    ccs_row = rep["estimates"][0]
    assert ccs_row["point"] == pytest.approx(2 / 3) and ccs_row["method"] == "katz_c"
    assert rep["estimates"][1]["method"] == "trinomial_f"
    assert (tmp_path / "analyze.csv").read_text().startswith("estimand")


def test_analyze_stratified(tmp_path, capsys):
    p = tmp_path / "s.csv"
    lines = ["a,y,g"] + [f"{a},{y},{g}" for g in ("x", "z") for a, y, k in
                         ((1, 0, 450), (1, 1, 20), (1, 2, 30), (0, 0, 400), (0, 1, 50), (0, 2, 50)) for _ in range(k)]
    p.write_text("\n".join(lines) + "\n")
    code, _ = run(["analyze", "--data", str(p), "--estimand", "eie", "--stratify", "g"], tmp_path, capsys)
    rep = report(tmp_path, "analyze")
    assert code == 0 and [r["stratum"] for r in rep["estimates"]] == ["g=x", "g=z"]
    assert not rep["heterogeneity"]["warn"]


def test_tte_nelson_aalen(tte_csv, tmp_path, capsys):
    code, _ = run(["tte", "--data", str(tte_csv), "--method", "nelson-aalen"], tmp_path, capsys)
    rows = report(tmp_path, "tte")["estimates"]
    assert code == 0 and rows[0]["estimand"] == "cumulative_hazard_ratio"
    assert rows[0]["ci"][0] < rows[0]["point"] < rows[0]["ci"][1]


def test_tte_bootstrap_is_seeded(tte_csv, tmp_path, capsys):
    argv = ["tte", "--data", str(tte_csv), "--method", "nonparam", "--boot-reps", "50", "--seed", "4"]
    run(argv, tmp_path / "a", capsys)
    run(argv + ["--workers", "3"], tmp_path / "b", capsys)
    assert (tmp_path / "a/tte.json").read_bytes() == (tmp_path / "b/tte.json").read_bytes()


def test_bounds(tmp_path, capsys):
    code, _ = run(["bounds", "--p", "0.10,0.05,0.20,0.10"], tmp_path, capsys)
    b = report(tmp_path, "bounds")["bounds"]
    assert code == 0 and (b["lo"], b["hi"]) == pytest.approx((0.10, 5.0))


def test_bounds_out_of_regime(tmp_path, capsys):
    assert run(["bounds", "--p", "0.05,0.10,0.20,0.10"], tmp_path, capsys)[0] == 3


def test_h0w_on_exchangeable_data(null_csv, tmp_path, capsys):
    code, _ = run(["test", "--data", str(null_csv), "--null", "h0w", "--windows", "1:10,11:20,21:30"],
                  tmp_path, capsys)
    res = report(tmp_path, "test")["test"]
    assert code == 0 and not res["reject"] and "composite" in res["notes"]


def test_h0w_needs_windows(null_csv, tmp_path, capsys):
    assert run(["test", "--data", str(null_csv), "--null", "h0w"], tmp_path, capsys)[0] == 1


def test_manifest_and_replay(tte_csv, tmp_path, capsys):
    out = tmp_path / "first"
    code, _ = run(["tte", "--data", str(tte_csv), "--boot-reps", "30", "--seed", "9"], out, capsys)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 9 and str(tte_csv) in man["inputs"] and len(man["inputs"][str(tte_csv)]) == 64
    before = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"}
    assert main(["replay", str(out / "manifest.json")]) == 0
    capsys.readouterr()
    after = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"}
    assert before == after


def test_replay_detects_changed_input(table_csv, tmp_path, capsys):
    run(["analyze", "--data", str(table_csv)], tmp_path, capsys)
    table_csv.write_text(table_csv.read_text() + "1,0\n")
    assert main(["replay", str(tmp_path / "manifest.json")]) == 2


def test_simulate_and_svg_determinism(tmp_path, capsys):
    argv = ["simulate", "--scenario", "d3", "--n-grid", "2000,4000", "--reps", "3", "--plot", "conv.svg"]
    run(argv, tmp_path / "a", capsys)
    run(argv + ["--workers", "2"], tmp_path / "b", capsys)
    for name in ("results.csv", "conv.svg", "simulate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_export(tmp_path, capsys):
    code, _ = run(["simulate", "--scenario", "d1", "--export", "d1.csv", "--n", "500"], tmp_path, capsys)
    assert code == 0 and len((tmp_path / "d1.csv").read_text().splitlines()) == 501


def test_validate_strict(tmp_path, capsys):
    p = tmp_path / "v.csv"
    p.write_text("a,y,e\n1,2,1\n0,0,0\n")
    assert run(["validate", "--data", str(p)], tmp_path, capsys)[0] == 0
    assert run(["validate", "--data", str(p), "--strict"], tmp_path, capsys)[0] == 2
