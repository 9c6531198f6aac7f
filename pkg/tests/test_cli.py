import csv
import json

import pytest

from bounds import geometric_new_bound_series
from conftest import write_config
from main import load_config, main
from errors import ConfigError
from models import GeometricSpec
from settings import get_settings

GEOMETRIC = """
seed = 4
processes = 20
replicates = 5
lags = [1, 2]
k_grid = {{ start = 0, stop = 10 }}
bound_method = "{method}"

[kernel]
family = "geometric"
p = 0.5
"""

ORACLE = """
seed = 8
processes = 10
replicates = 2
lags = [1, 2]
k_grid = { start = 0, stop = 12 }
bound_method = "exact"

[kernel]
family = "discrete"
matrix = [[0.95, 0.05], [0.05, 0.95]]
initial = [1.0, 0.0]
"""

SLOW_RRV = """
seed = 1
processes = 40
replicates = 2
lags = [1]
k_grid = { start = 0, stop = 0 }
bootstrap = 50
h = ["indicator:1"]

[kernel]
family = "discrete"
matrix = [[0.9, 0.1], [0.1, 0.9]]
initial = [0.5, 0.5]

[[estimators]]
kind = "cv"
k = 0

[[estimators]]
kind = "backward"
k = 2
"""

CHAIN = """
seed = 3
processes = 16
replicates = 3
lags = [1, 2]
k_grid = { start = 0, stop = 8 }
bootstrap = 40
h = ["indicator:0", "identity"]

[kernel]
family = "discrete"
matrix = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]
initial = [0.2, 0.3, 0.5]

[[estimators]]
kind = "cv"
k = 1

[[estimators]]
kind = "timeavg_cv"
k = 1
r = 6
"""

VALIDATE = """
seed = 21
lags = [1]
k_grid = {{ start = 0, stop = 0 }}

[kernel]
family = "discrete"
matrix = {matrix}

[validate]
battery_size = 40
faithfulness_draws = 3000
"""


def read_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_sha256=")
    return lines[0], list(csv.DictReader(lines[1:]))


def test_bounds_geometric_exact(tmp_path):
    config = write_config(tmp_path / "geo.toml", GEOMETRIC.format(method="exact"))
    assert main(["bounds", "--config", str(config), "--out", str(tmp_path / "out")]) == 0

    header, rows = read_rows(tmp_path / "out" / "bounds.csv")
    assert header.endswith("seed=4")
    assert len(rows) == 2 * 11
    for row in rows:
        spec = GeometricSpec(0.5, int(row["k"]), int(row["L"]))
        assert abs(float(row["new_bound"]) - geometric_new_bound_series(spec)) <= 1e-10
        assert row["vacuous_flag"] in ("none", "old", "new", "old+new")
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["meta"]["seed"] == 4


def test_bounds_oracle_chain_has_exact_columns(tmp_path):
    config = write_config(tmp_path / "oracle.toml", ORACLE)
    assert main(["bounds", "--config", str(config), "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "bounds.csv")
    assert "tv_exact" in rows[0]
    for row in rows:
        tv, new, old = (float(row[c]) for c in ("tv_exact", "new_bound", "old_bound"))
        assert tv <= new + 1e-9 <= old + 2e-9


def test_seed_override_and_thread_count_keep_data_identical(tmp_path):
    config = write_config(tmp_path / "chain.toml", CHAIN)
    outputs = []
    for threads in ("1", "2", "8"):
        out = tmp_path / f"t{threads}"
        for command in ("bounds", "estimate"):
            argv = [command, "--config", str(config), "--out", str(out), "--threads", threads, "--seed", "99"]
            assert main(argv) == 0
        outputs.append([(out / name).read_text() for name in ("bounds.csv", "estimates.csv", "rrv.csv")])
    assert outputs[0] == outputs[1] == outputs[2]
    assert "seed=99" in outputs[0][0].splitlines()[0]


def test_empty_k_grid_is_a_config_error(tmp_path):
    text = GEOMETRIC.format(method="exact").replace("start = 0, stop = 10", "start = 5, stop = 2")
    config = write_config(tmp_path / "bad.toml", text)
    assert main(["bounds", "--config", str(config), "--out", str(tmp_path)]) == 1
    assert not (tmp_path / "bounds.csv").exists()


def test_unknown_keys_are_rejected(tmp_path):
    config = write_config(tmp_path / "bad.toml", "chains = 3\n" + GEOMETRIC.format(method="exact"))
    with pytest.raises(ConfigError, match="chains"):
        load_config(config)
    assert main(["geometric", "--config", str(config)]) == 1


def test_missing_config_file(tmp_path):
    assert main(["bounds", "--config", str(tmp_path / "nope.toml")]) == 1


def test_usage_errors_exit_one():
    assert main(["bounds"]) == 1
    assert main(["plot", "--config", "x.toml"]) == 1


def test_single_process_plan_is_invalid(tmp_path):
    text = GEOMETRIC.format(method="empirical").replace("processes = 20", "processes = 1")
    config = write_config(tmp_path / "one.toml", text)
    assert main(["bounds", "--config", str(config), "--out", str(tmp_path)]) == 1


def test_cap_exceeded_exits_two(tmp_path):
    text = ORACLE.replace("[[0.95, 0.05], [0.05, 0.95]]", "[[0.0, 1.0], [1.0, 0.0]]").replace(
        'bound_method = "exact"', 'bound_method = "empirical"\nmax_sweeps = 30'
    ).replace("lags = [1, 2]", "lags = [1]")
    config = write_config(tmp_path / "flip.toml", text)
    assert main(["bounds", "--config", str(config), "--out", str(tmp_path)]) == 2


def test_geometric_table(tmp_path):
    text = GEOMETRIC.format(method="exact") + "\n[geometric]\np_values = [0.1, 0.5, 0.9]\n"
    config = write_config(tmp_path / "geo.toml", text)
    assert main(["geometric", "--config", str(config), "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "geometric.csv")
    assert len(rows) == 3 * 2 * 11
    for row in rows:
        assert abs(float(row["new_bound"]) - float(row["new_bound_series"])) <= 1e-10
        assert float(row["new_bound"]) <= float(row["old_bound"]) + 1e-12


def test_estimate_writes_estimates_and_rrv(tmp_path):
    config = write_config(tmp_path / "rrv.toml", SLOW_RRV)
    assert main(["estimate", "--config", str(config), "--out", str(tmp_path)]) == 0
    _, estimates = read_rows(tmp_path / "estimates.csv")
    assert {row["estimator"] for row in estimates} == {"cv", "backward"}
    for row in estimates:
        assert int(row["n"]) == 80
        assert float(row["se"]) > 0.0
    _, rrv = read_rows(tmp_path / "rrv.csv")
    assert [row["baseline"] for row in rrv] == ["backward"]


def test_estimate_without_requests(tmp_path):
    config = write_config(tmp_path / "none.toml", ORACLE)
    assert main(["estimate", "--config", str(config), "--out", str(tmp_path)]) == 1


def test_validate_default_battery_passes(tmp_path, capsys):
    config = write_config(
        tmp_path / "ok.toml", VALIDATE.format(matrix="[[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]")
    )
    assert main(["validate", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
    table = capsys.readouterr().out
    assert "FAIL" not in table
    assert "bound_forms_agree" in table

    # same seed, same battery
    assert main(["validate", "--config", str(config), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "validation.csv").read_text() == (tmp_path / "b" / "validation.csv").read_text()


def test_validate_flags_corrupted_matrix(tmp_path):
    config = write_config(tmp_path / "bad.toml", VALIDATE.format(matrix="[[0.5, 0.6], [0.5, 0.5]]"))
    assert main(["validate", "--config", str(config), "--out", str(tmp_path)]) == 1
    _, rows = read_rows(tmp_path / "validation.csv")
    results = {row["check"]: row["passed"] for row in rows}
    assert results["matrix_row_sums"] == "False"
    assert results["bound_forms_agree"] == "True"


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("LLAG_THREADS", "3")
    monkeypatch.setenv("LLAG_BACKEND", "loky")
    settings = get_settings()
    assert settings.threads == 3 and settings.backend == "loky"
    assert get_settings(threads=5).threads == 5
