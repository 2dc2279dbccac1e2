import logging
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hamvi.data import ConfigurationError
from hamvi.experiment import (AGGREGATE_FIELDS, RESULT_FIELDS, ExperimentSpec, MethodSpec, ResultRow, aggregate,
                              build_method, cell_seed, emit_plot, generate_dataset, parameter_errors, read_aggregate,
                              read_results, run_experiment, write_aggregate)
from hamvi.models import make_true_params
from hamvi.rng import make_rng
from hamvi.trainer import TrainConfig

QUICK = TrainConfig(epochs=30)


def test_dataset_is_seeded():
    a, b = generate_dataset(3, 50, 7), generate_dataset(3, 50, 7)
    assert a.checksum() == b.checksum()
    assert generate_dataset(3, 50, 8).checksum() != a.checksum()
    assert generate_dataset(3, 50, 7, 1).checksum() != generate_dataset(3, 50, 7, 2).checksum()


def test_dataset_moments():
    d, n = 3, 100_000
    data = generate_dataset(d, n, 11)
    p = make_true_params(d)
    z = make_rng(11).standard_normal(d)
    sd = np.sqrt(p.sigma_sq / n)
    assert np.all(np.abs(data.mean - (z + p.delta)) < 5 * sd)
    assert np.allclose(data.scatter / (n - 1), p.sigma_sq, rtol=0.05)


def test_dataset_validation():
    with pytest.raises(ConfigurationError):
        generate_dataset(0, 10, 0)
    with pytest.raises(ConfigurationError):
        ExperimentSpec(runs=0)
    with pytest.raises(ConfigurationError):
        ExperimentSpec(dims=[])
    with pytest.raises(ConfigurationError):
        MethodSpec("mcmc")


def test_parameter_errors():
    d = 4
    p = make_true_params(d)
    assert parameter_errors(p.to_theta(), d) == (0.0, 0.0, 0.0)
    theta = p.to_theta()
    theta[0] += 0.5
    err, e_delta, e_sigma = parameter_errors(theta, d)
    assert e_delta == pytest.approx(0.25) and e_sigma == 0.0 and err == pytest.approx(0.25)


def test_methods_build():
    for spec, n_phi in ((MethodSpec("hvae", K=4), 3 + 1), (MethodSpec("hvae", tempering="free", K=4), 3 + 4),
                        (MethodSpec("hvae", tempering="none"), 3), (MethodSpec("vb"), 6), (MethodSpec("nf"), 7)):
        model, obj, theta0, phi0 = build_method(spec, 3)
        assert theta0.shape == (6,) and phi0.shape == (n_phi,) and obj.n_phi == n_phi
    assert MethodSpec("hvae", tempering="none").label == "hvae-none"


def test_single_cell(tmp_path):
    spec = ExperimentSpec(dims=[2], methods=[MethodSpec("vb")], runs=1, N=100, out=str(tmp_path), train=QUICK)
    rows, agg = run_experiment(spec, workers=1)
    assert len(rows) == 1 and rows[0].status == "ok"
    assert rows[0].err_theta == pytest.approx(rows[0].err_delta + rows[0].err_sigma_sq)
    assert min(rows[0].err_theta, rows[0].err_delta, rows[0].err_sigma_sq) >= 0
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header.split(",") == RESULT_FIELDS
    assert (tmp_path / "aggregate.csv").read_text().splitlines()[0].split(",") == AGGREGATE_FIELDS
    back = read_results(tmp_path / "results.csv")
    assert back[0] == rows[0]


def test_sweep_reproducible_and_seeded():
    spec = ExperimentSpec(dims=[1, 2], methods=[MethodSpec("vb"), MethodSpec("hvae", K=2)], runs=2, N=50,
                          train=QUICK)
    a, _ = run_experiment(spec, workers=1)
    b, _ = run_experiment(spec, workers=1)
    assert [r.err_theta for r in a] == [r.err_theta for r in b]
    assert len({r.seed for r in a}) == len(a) == 8
    c, _ = run_experiment(spec, workers=2)
    assert [r.err_theta for r in c] == [r.err_theta for r in a]


def test_methods_share_datasets_runs_do_not():
    assert cell_seed(0, 0, 5, 1) != cell_seed(0, 1, 5, 1) != cell_seed(0, 0, 5, 2)
    # the dataset of a run is keyed by (base seed, d, run) only
    assert generate_dataset(5, 10, 0, 5, 1).checksum() != generate_dataset(5, 10, 0, 5, 2).checksum()


def test_failed_cell_is_recorded(caplog):
    bad = MethodSpec("hvae", eps_init=0.9, xi=0.5)
    spec = ExperimentSpec(dims=[2], methods=[bad, MethodSpec("vb")], runs=1, N=50, train=QUICK)
    with caplog.at_level(logging.WARNING):
        rows, agg = run_experiment(spec, workers=1)
    status = {r.method: r.status for r in rows}
    assert status["vb"] == "ok" and status["hvae-fixed"].startswith("failed")
    assert [a["method"] for a in agg] == ["vb"]


def test_aggregate_matches_hand_average(tmp_path):
    rng = np.random.default_rng(0)
    rows = [ResultRow(m, d, i, *(lambda a, b: (a + b, a, b))(*rng.uniform(0, 3, 2)), -rng.uniform(), 10, 0.1)
            for m in ("vb", "nf") for d in (1, 5) for i in range(4)]
    agg = aggregate(rows)
    for a in agg:
        mine = [r.err_theta for r in rows if r.method == a["method"] and r.d == a["d"]]
        assert abs(a["mean_err_theta"] - sum(mine) / len(mine)) <= 1e-12
        assert abs(a["sd_err_theta"] - np.std(mine, ddof=1)) <= 1e-12
    write_aggregate(agg, tmp_path / "agg.csv")
    assert read_aggregate(tmp_path / "agg.csv") == agg


def test_plot(tmp_path, caplog):
    rows = [ResultRow("vb", 3, 0, 1.0, 0.5, 0.5, -1.0, 10, 0.1)]
    write_aggregate(aggregate(rows), tmp_path / "agg.csv")
    out = emit_plot(tmp_path / "agg.csv", tmp_path / "fig.svg")
    root = ET.parse(out).getroot()
    assert root.tag.endswith("svg")
    text = out.read_text()
    assert "dimension d" in text
    write_aggregate([], tmp_path / "empty.csv")
    with caplog.at_level(logging.WARNING):
        assert emit_plot(tmp_path / "empty.csv", tmp_path / "none.svg") is None
    assert not (tmp_path / "none.svg").exists()
    assert "nothing to plot" in caplog.text
