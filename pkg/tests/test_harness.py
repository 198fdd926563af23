import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wfem_gp.environments import SinusoidEnvParams, build_meta_dataset, meta_dataset_to_dict, sample_test_tasks
from wfem_gp.gp import LikelihoodConfig, PosteriorCache, TaskDataset
from wfem_gp.harness import (
    ExperimentConfig,
    ResultRow,
    SchemeSpec,
    export_posterior_curve,
    fit_scheme,
    initial_ensemble,
    mean_accuracy,
    predictive_mean_ensemble,
    prepare_cell,
    rmse,
    rows_to_csv,
    run_scheme,
    summarize,
    sweep,
)
from wfem_gp.inference import ParticleEnsemble
from wfem_gp.meta import MetaDataset

from helpers import linear_theta, small_theta

TINY = dict(hidden_layers=(6, 6), map_iterations=8, svgd_iterations=4, n_test_tasks=3, n_tasks=6, particles=2)


@pytest.mark.parametrize("p,y,expected", [([1, 2], [1, 2], 0.0), ([3, 4], [1, 2], 2.0), ([3, 4], [0, 0], math.sqrt(12.5))])
def test_rmse_examples(p, y, expected):
    assert rmse(p, y) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("p,y,expected", [([1, 0], [1, 0], 1.0), ([1, 1], [1, 0], 0.5), ([0, 1], [1, 0], 0.0)])
def test_mean_accuracy_examples(p, y, expected):
    assert mean_accuracy(p, y) == expected


@pytest.mark.parametrize("metric", [rmse, mean_accuracy])
def test_metrics_reject_empty(metric):
    with pytest.raises(ValueError):
        metric([], [])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10))
def test_metric_ranges(values):
    assert rmse(values, np.zeros(len(values))) >= 0
    labels = (np.array(values) > 0).astype(float)
    assert 0.0 <= mean_accuracy(labels, np.ones(len(values))) <= 1.0


def test_single_particle_ensemble_equals_map(rng):
    theta = small_theta(1)
    data = TaskDataset(rng.uniform(-2, 2, (4, 1)), rng.standard_normal(4))
    x = rng.uniform(-3, 3, (6, 1))
    a = predictive_mean_ensemble(theta, data, x)
    b = predictive_mean_ensemble(ParticleEnsemble.from_point(theta), data, x)
    np.testing.assert_array_equal(a, b)
    assert isinstance(predictive_mean_ensemble(theta, data, np.array([0.3])), float)


def test_identical_particles_and_averaging():
    data = TaskDataset(np.zeros((0, 1)), [])
    one = linear_theta([1.0], mean_bias=1.0)
    three = linear_theta([1.0], mean_bias=3.0)
    x = np.array([[0.0]])
    same = ParticleEnsemble(np.stack([one.values, one.values]), one.layout)
    np.testing.assert_allclose(predictive_mean_ensemble(same, data, x), predictive_mean_ensemble(one, data, x))
    pair = ParticleEnsemble(np.stack([one.values, three.values]), one.layout)
    np.testing.assert_allclose(predictive_mean_ensemble(pair, data, x), [2.0])


def test_scheme_spec_validation():
    with pytest.raises(ValueError):
        SchemeSpec("maml")
    with pytest.raises(ValueError):
        SchemeSpec("gp", "mcmc")


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=())
    with pytest.raises(ValueError):
        ExperimentConfig(sweep="deviation", grid=())
    with pytest.raises(ValueError):
        ExperimentConfig(sweep="sigma", grid=(1.0,))


def test_wfem_without_source_tasks_equals_pacoh():
    cfg = ExperimentConfig(beta=0.0, alpha=0.5, deviation=0.5, **TINY)
    meta, full, tests = prepare_cell(cfg, 0)
    wfem = run_scheme(SchemeSpec("wfem"), meta, tests, cfg, 0, full)[0]
    part = run_scheme(SchemeSpec("pacoh_partial_target"), meta, tests, cfg, 0, full)[0]
    assert wfem.value == part.value and not wfem.error


def test_gp_scheme_ignores_meta_training_data():
    cfg = ExperimentConfig(**TINY)
    meta, full, tests = prepare_cell(cfg, 0)
    noisy = MetaDataset([TaskDataset(t.x, t.y + 100.0, t.environment, t.id) for t in meta.tasks])
    a = run_scheme(SchemeSpec("gp"), meta, tests, cfg, 0, full)[0]
    b = run_scheme(SchemeSpec("gp"), noisy, tests, cfg, 0, full)[0]
    assert a.value == b.value


def test_full_target_data_shares_task_seeds():
    cfg = ExperimentConfig(beta=0.5, deviation=0.0, **TINY)
    meta, full, _ = prepare_cell(cfg, 0)
    for a, b in zip(meta.tasks, full.tasks):
        np.testing.assert_array_equal(a.y, b.y)


def test_partial_target_at_beta_one_is_untrained():
    cfg = ExperimentConfig(beta=1.0, **TINY)
    meta, full, tests = prepare_cell(cfg, 0)
    assert len(meta.target) == 0
    part = run_scheme(SchemeSpec("pacoh_partial_target"), meta, tests, cfg, 0, full)[0]
    gp = run_scheme(SchemeSpec("gp"), meta, tests, cfg, 0, full)[0]
    assert part.value == gp.value


def test_initial_ensemble_row_zero_is_map_start():
    layout = ExperimentConfig(**TINY).layout(1)
    np.testing.assert_array_equal(initial_ensemble(layout, 3, 4)[0], initial_ensemble(layout, 3, 1)[0])


def test_svgd_schemes_run():
    cfg = ExperimentConfig(approx="svgd", **TINY)
    rows = sweep(cfg)
    assert [r.scheme for r in rows] == list(cfg.schemes)
    assert all(r.approx == "svgd" and r.value >= 0 and not r.error for r in rows)


def test_classification_schemes_run():
    cfg = ExperimentConfig(problem="classification", deviation=0.3, class_samples=50,
                           **{**TINY, "map_iterations": 3})
    rows = sweep(cfg)
    assert all(r.metric == "mean_accuracy" and 0.0 <= r.value <= 1.0 for r in rows)


def test_sweep_order_and_alpha_tie(tmp_path):
    cfg = ExperimentConfig(sweep="beta", grid=(0.2, 0.6), seeds=(0, 1), alpha_equals_beta=True,
                           schemes=("gp", "wfem"), **{**TINY, "n_tasks": 10})
    rows = sweep(cfg, tmp_path / "out.csv")
    keys = [(r.beta, r.scheme, r.seed) for r in rows]
    assert keys == [(b, s, seed) for b in (0.2, 0.6) for s in ("gp", "wfem") for seed in (0, 1)]
    assert all(r.alpha == r.beta for r in rows)
    parsed = list(csv.DictReader(open(tmp_path / "out.csv")))
    assert len(parsed) == 8 and parsed[0]["wall_time"] == ""
    # the realized source fraction is recorded, not the requested one
    odd = sweep(ExperimentConfig(beta=0.2, schemes=("gp",), **TINY))
    assert odd[0].beta == 1 / 6
    assert set(summarize(rows, "beta")) == {(b, s) for b in (0.2, 0.6) for s in ("gp", "wfem")}


def test_sweep_byte_identical_across_runs_and_workers(tmp_path):
    cfg = ExperimentConfig(sweep="deviation", grid=(0.0, 0.5), seeds=(0, 1), **TINY)
    sweep(cfg, tmp_path / "a.csv", workers=1)
    sweep(cfg, tmp_path / "b.csv", workers=1)
    sweep(cfg, tmp_path / "c.csv", workers=2)
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_failures_become_error_rows(tmp_path):
    meta = build_meta_dataset(4, 0.5, SinusoidEnvParams(), SinusoidEnvParams(), 5, 0.1, 0)
    doc = meta_dataset_to_dict(meta)
    doc["tasks"][0]["y"] = [1e200, -1e200, 0, 0, 0]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    cfg = ExperimentConfig(meta_data=str(path), schemes=("gp", "wfem", "pacoh_full_target"), **TINY)
    rows = sweep(cfg, tmp_path / "out.csv")
    by = {r.scheme: r for r in rows}
    assert not by["gp"].error
    assert "FitError" in by["wfem"].error and math.isnan(by["wfem"].value)
    assert "generated" in by["pacoh_full_target"].error
    assert (tmp_path / "out.csv").exists()


def test_csv_layout():
    text = rows_to_csv([ResultRow("gp", "map", 0.5, 0.5, 0.0, 0, "rmse", 0.25)])
    assert text == ("scheme,approx,alpha,beta,deviation,seed,metric,value,wall_time,error\n"
                    "gp,map,0.5,0.5,0.0,0,rmse,0.25,,\n")


def test_posterior_curve(tmp_path):
    cfg = ExperimentConfig(alpha=0.2, beta=0.2, deviation=0.5, schemes=("gp", "wfem"), **TINY)
    grid = np.linspace(-5, 5, 11)
    rows = export_posterior_curve(cfg, grid, tmp_path / "curve.csv")
    assert len(rows) == 22
    task = sample_test_tasks(SinusoidEnvParams(0.5), 1, 5, 0.1, 0)[0]
    gp_rows = [r for r in rows if r["scheme"] == "gp"]
    np.testing.assert_allclose([r["truth"] for r in gp_rows], task.truth(grid))
    assert all(r["std"] >= 0 for r in rows)
    assert (tmp_path / "curve.csv").read_text().startswith("scheme,x,mean,std,truth\n")


def test_far_from_data_curve_reverts_to_prior():
    # a linear feature map decays the kernel with distance
    theta = linear_theta([1.0], mean_bias=0.7)
    data = TaskDataset([[0.0], [0.5]], [3.0, 2.0])
    pred = PosteriorCache.build(theta, data, LikelihoodConfig()).predict(np.array([[40.0]]))
    assert pred.mean[0] == pytest.approx(0.7, abs=1e-9)
    assert pred.variance[0] == pytest.approx(0.5, abs=1e-9)
