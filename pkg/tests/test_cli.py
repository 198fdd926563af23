import csv
import json

import numpy as np
import pytest

from wfem_gp.cli import build_parser, config_from_args, main, x_grid
from wfem_gp.environments import SinusoidEnvParams, build_meta_dataset, save_meta_dataset

FAST = ["--iterations", "3", "--svgd-iterations", "2", "--n-test-tasks", "2", "--n-tasks", "4"]


def test_x_grid_is_inclusive():
    np.testing.assert_allclose(x_grid("-1:1:0.5"), [-1, -0.5, 0, 0.5, 1])


@pytest.mark.parametrize("text", ["1:2", "0:1:0", "2:1:0.5", "a:b:c"])
def test_x_grid_rejects_bad_input(text):
    with pytest.raises(Exception):
        x_grid(text)


def test_regression_flags_map_to_config():
    args = build_parser().parse_args(
        ["regression", "--sweep", "deviation", "--grid", "0,0.25", "--alpha", "0.3", "--beta", "0.4",
         "--mu-c", "0.1", "--n-tasks", "12", "--samples", "4", "--sigma", "0.2", "--schemes", "gp,wfem",
         "--approx", "svgd", "--particles", "3", "--seeds", "0,1,2"])
    cfg = config_from_args(args)
    assert cfg.grid == (0.0, 0.25) and cfg.alpha == 0.3 and cfg.beta == 0.4 and cfg.mu_c == 0.1
    assert cfg.n_tasks == 12 and cfg.samples == 4 and cfg.sigma == 0.2
    assert cfg.schemes == ("gp", "wfem") and cfg.approx == "svgd" and cfg.particles == 3
    assert cfg.seeds == (0, 1, 2)


def test_classification_flags_map_to_config():
    cfg = config_from_args(build_parser().parse_args(["classification", "--shift", "0.4", "--shots", "3"]))
    assert cfg.problem == "classification" and cfg.deviation == 0.4 and cfg.samples == 3 and cfg.n_tasks == 20


def test_unknown_scheme_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["regression", "--schemes", "gp,maml"])
    assert info.value.code == 2


def test_regression_run_writes_csv(tmp_path):
    out = tmp_path / "r.csv"
    code = main(["regression", "--schemes", "gp,wfem", "--sweep", "alpha", "--grid", "0,1",
                 "--out", str(out), *FAST])
    rows = list(csv.DictReader(open(out)))
    assert code == 0 and len(rows) == 4
    assert [r["alpha"] for r in rows] == ["0.0", "0.0", "1.0", "1.0"]


def test_stdout_when_no_out(capsys):
    assert main(["classification", "--schemes", "gp", *FAST]) == 0
    out = capsys.readouterr().out
    assert out.startswith("scheme,approx") and "mean_accuracy" in out


def test_curve_command(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["curve", "--schemes", "gp", "--x-grid=-1:1:1", "--out", str(out), *FAST]) == 0
    assert len(out.read_text().splitlines()) == 4


def test_meta_data_ingestion_and_error_exit(tmp_path, capsys):
    meta = build_meta_dataset(4, 0.5, SinusoidEnvParams(), SinusoidEnvParams(0.5), 5, 0.1, 0)
    good = tmp_path / "good.json"
    save_meta_dataset(meta, good)
    assert main(["regression", "--meta-data", str(good), "--schemes", "wfem", *FAST]) == 0
    bad = json.loads(good.read_text())
    bad["tasks"][1]["y"] = [1e200, -1e200, 0, 0, 0]
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    code = main(["regression", "--meta-data", str(tmp_path / "bad.json"), "--schemes", "gp,wfem", *FAST])
    assert code == 1
    assert "error: wfem" in capsys.readouterr().err


def test_malformed_meta_data_reports_error(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert main(["regression", "--meta-data", str(p), "--schemes", "gp", *FAST]) == 1


def test_test_data_file(tmp_path):
    meta = build_meta_dataset(3, 0.0, SinusoidEnvParams(), SinusoidEnvParams(), 10, 0.1, 5)
    p = tmp_path / "test.json"
    save_meta_dataset(meta, p)
    out = tmp_path / "r.csv"
    assert main(["regression", "--test-data", str(p), "--schemes", "gp", "--out", str(out), *FAST]) == 0
    assert float(list(csv.DictReader(open(out)))[0]["value"]) > 0
