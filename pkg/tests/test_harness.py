import csv
import json
from pathlib import Path

import numpy as np
import pytest

from agglio.activations import SIGMOID
from agglio.data import load_csv_regression
from agglio.errors import ConfigError, InvalidArgumentError
from agglio.harness import (
    Experiment,
    ResultRow,
    ResultTable,
    build_run_config,
    config_from_dict,
    default_grids,
    emit_summary,
    load_config,
    run_experiment,
)
from agglio.objective import GraduatedObjective
from agglio.optimizer import SGD, Adam


def small_config(tmp_path, **overrides):
    raw = {
        "experiment": "convergence",
        "data": {"n": 200, "d": 5, "activation": "sigmoid"},
        "seeds": [0, 1],
        "T": 20,
        "output": str(tmp_path / "out"),
        "methods": [
            {"name": "agglio-gd", "grid": {"eta": [50.0, 100.0], "tau0": [0.1], "beta": [1.5]}},
            {"name": "gd", "grid": {"eta": [50.0]}},
        ],
    }
    raw.update(overrides)
    return raw


def rows(n):
    return ResultTable([ResultRow("convergence", "gd", {"eta": 1.0 + i}, i, final_recovery_error=0.1 * i,
                                  final_loss=0.5, validation_loss=0.25, trace_path=f"t{i}.csv")
                        for i in range(n)])


class TestDefaultGrids:
    def test_agglio_step_grid(self):
        eta = default_grids()["agglio"]["eta"]
        assert (eta[0], eta[-1], len(eta)) == (1.0, 500.0, 10)
        np.testing.assert_allclose(np.diff(eta), 499 / 9)

    def test_agglio_increment_grid(self):
        np.testing.assert_allclose(default_grids()["agglio"]["beta"], [1.01, 1.2575, 1.505, 1.7525, 2.0],
                                   rtol=1e-15)

    def test_agglio_temperature_grid(self):
        assert default_grids()["agglio"]["tau0"] == [1e-1, 1e-2, 1e-3, 1e-4]

    def test_adaptive_grids(self):
        for name in ("adam", "yogi"):
            g = default_grids()[name]
            np.testing.assert_allclose(g["alpha"], [0.01, 0.0575, 0.105, 0.1525, 0.2], rtol=1e-14)
            np.testing.assert_allclose(g["beta1"], [0.01, 0.2325, 0.455, 0.6775, 0.9], rtol=1e-14)
            assert g["beta2"] == g["beta1"]
            assert g["eps"] == [1e-3, 1e-5, 1e-8]

    def test_ngd_grid(self):
        step = default_grids()["ngd"]["step"]
        assert (len(step), step[0], step[-1]) == (20, 0.01, 10.0)

    def test_fresh_copies(self):
        default_grids()["agglio"]["eta"].append(7)
        assert len(default_grids()["agglio"]["eta"]) == 10


class TestConfig:
    def test_minimal(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path))
        assert cfg.experiment is Experiment.CONVERGENCE
        assert cfg.validation_fraction == 0.2
        assert len(cfg.methods[0].points()) == 2

    def test_default_grid_keyword(self, tmp_path):
        cfg = config_from_dict(small_config(tmp_path, methods=[{"name": "ngd", "grid": "default"}]))
        assert len(cfg.methods[0].points()) == 20

    def test_noisy_default_budget(self, tmp_path):
        raw = small_config(tmp_path)
        del raw["T"]
        assert config_from_dict(raw).T == 500
        raw["data"]["noise"] = {"regime": "pre_activation", "sigma": 0.1}
        assert config_from_dict(raw).T == 2000

    def test_yaml_scientific_strings(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: convergence\nthreshold: 1e-6\nmethods:\n"
                        "  - name: agglio-gd\n    grid: {tau0: [1e-2], eta: [10]}\n")
        cfg = load_config(path)
        assert cfg.threshold == 1e-6
        assert cfg.methods[0].grid["tau0"] == [0.01]

    @pytest.mark.parametrize("change", [
        {"seeds": []},
        {"validation_fraction": 0.6},
        {"experiment": "bogus"},
        {"methods": [{"name": "lbfgs"}]},
        {"methods": [{"name": "gd", "grid": {"eta": []}}]},
        {"methods": [{"name": "gd", "grid": {"tau0": [0.1]}}]},
        {"methods": []},
        {"surprise": 1},
        {"experiment": "consistency"},
        {"experiment": "real_data"},
    ])
    def test_invalid(self, tmp_path, change):
        with pytest.raises(ConfigError):
            config_from_dict(small_config(tmp_path, **change))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("experiment: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestBuildRunConfig:
    def test_baseline_runs_at_full_temperature(self):
        cfg = build_run_config("sgd", {"eta": 3.0}, {}, 10)
        assert (cfg.tau0, cfg.tau_max, cfg.eta) == (1.0, 1.0, 3.0)
        assert cfg.strategy == SGD(batch_size=50)

    def test_adaptive_aliases(self):
        cfg = build_run_config("adam", {"alpha": 0.1, "beta1": 0.5, "beta2": 0.9, "eps": 1e-5}, {}, 10)
        assert cfg.eta == 0.1
        assert cfg.strategy == Adam(beta1=0.5, beta2=0.9, eps=1e-5, batch_size=50)

    def test_agglio_keys(self):
        cfg = build_run_config("agglio-gd", {"tau0": 1e-3, "beta": 2.0}, {"eta_mode": "tau_scaled"}, 7)
        assert (cfg.tau0, cfg.beta, cfg.eta_mode, cfg.T) == (1e-3, 2.0, "tau_scaled", 7)

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            build_run_config("agglio-gd", {"beta": 0.5}, {}, 10)


class TestRunExperiment:
    def test_one_row_per_cell_with_traces(self, tmp_path):
        table = run_experiment(config_from_dict(small_config(tmp_path)))
        assert len(table) == 2 * (2 + 1)
        for r in table.rows:
            assert r.status == "ok"
            assert Path(r.trace_path).is_file()
            assert r.validation_loss is not None
        header = Path(table.rows[0].trace_path).read_text().splitlines()[0]
        assert header.startswith("t,inner_iter,tau")

    def test_selection_picks_lowest_validation_loss(self, tmp_path):
        table = run_experiment(config_from_dict(small_config(tmp_path)))
        for seed in (0, 1):
            cands = [r for r in table.rows if r.method == "agglio-gd" and r.seed == seed]
            best = min(cands, key=lambda r: r.validation_loss)
            assert [r.selected for r in cands] == [r is best for r in cands]
        assert len(table.selected()) == 4

    def test_reproducible(self, tmp_path):
        a = run_experiment(config_from_dict(small_config(tmp_path)))
        b = run_experiment(config_from_dict(small_config(tmp_path)))
        assert a.deterministic() == b.deterministic()

    def test_threads_keep_order(self, tmp_path):
        a = run_experiment(config_from_dict(small_config(tmp_path)))
        b = run_experiment(config_from_dict(small_config(tmp_path, threads=2)))
        assert a.deterministic() == b.deterministic()

    def test_sensitivity_singleton_grid(self, tmp_path):
        raw = small_config(tmp_path, experiment="sensitivity", seeds=[0, 1, 2],
                           methods=[{"name": "agglio-gd", "grid": {"eta": [50.0]}},
                                    {"name": "sgd", "grid": {"eta": [5.0]}}])
        table = run_experiment(config_from_dict(raw))
        for name in ("agglio-gd", "sgd"):
            assert sum(r.method == name for r in table.rows) == 3

    def test_sensitivity_one_at_a_time(self, tmp_path):
        raw = small_config(tmp_path, experiment="sensitivity", seeds=[0],
                           methods=[{"name": "agglio-gd",
                                     "grid": {"eta": [10.0, 20.0, 30.0], "beta": [1.2, 1.5]}}])
        table = run_experiment(config_from_dict(raw))
        assert [r.hyperparameters for r in table.rows] == [
            {"eta": 10.0, "beta": 1.2}, {"eta": 20.0, "beta": 1.2},
            {"eta": 30.0, "beta": 1.2}, {"eta": 10.0, "beta": 1.5}]

    def test_failure_is_recorded(self, tmp_path):
        raw = small_config(tmp_path, data={"n": 100, "d": 5, "activation": "softplus"},
                           methods=[{"name": "agglio-gd", "grid": {"tau0": [1.0]},
                                     "params": {"eta_mode": "gd_bound"}},
                                    {"name": "gd", "grid": {"eta": [1.0]}}])
        table = run_experiment(config_from_dict(raw))
        failed = [r for r in table.rows if r.method == "agglio-gd"]
        assert failed and all(r.status.startswith("failed: ElscFailureError") for r in failed)
        assert all(r.status == "ok" for r in table.rows if r.method == "gd")
        assert not any(r.selected for r in failed)

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ConfigError):
            run_experiment(config_from_dict(small_config(tmp_path, output=str(blocker / "out"))))

    def test_consistency_error_decreases(self, tmp_path):
        raw = {
            "experiment": "consistency",
            "data": {"d": 20, "activation": "sigmoid",
                     "noise": {"regime": "post_activation", "distribution": "bounded_uniform", "sigma": 0.05}},
            "sweep": {"values": [1000, 4000, 16000]},
            "seeds": [0, 1, 2],
            "validation_fraction": 0.0,
            "T": 500,
            "output": str(tmp_path / "out"),
            "methods": [{"name": "agglio-gd", "grid": {"eta": [200.0], "tau0": [0.01], "beta": [1.5]}}],
        }
        table = run_experiment(config_from_dict(raw))
        med = [np.median([r.final_recovery_error for r in table.rows if r.x == n]) for n in (1000, 4000, 16000)]
        assert med[0] > med[1] > med[2]
        emit_summary(table, "csv", tmp_path / "out")
        with (tmp_path / "out" / "tidy.csv").open() as fh:
            tidy = list(csv.DictReader(fh))
        assert [float(r["x"]) for r in tidy] == [1000.0, 4000.0, 16000.0]
        np.testing.assert_allclose([float(r["median_recovery_error"]) for r in tidy], med)

    def test_real_data(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(120, 3))
        target = X @ [1.0, -2.0, 0.5] + 0.1 * rng.normal(size=120)
        path = tmp_path / "d.csv"
        np.savetxt(path, np.column_stack([X, target]), delimiter=",", header="a,b,c,t", comments="")
        raw = small_config(tmp_path, experiment="real_data", seeds=[0],
                           data={"activation": "sigmoid", "path": str(path)},
                           methods=[{"name": "agglio-gd", "grid": {"eta": [1.0, 3.0], "tau0": [0.1]}},
                                    {"name": "gd", "grid": {"eta": [1.0]}}], T=200)
        table = run_experiment(config_from_dict(raw))
        assert all(r.status == "ok" and r.final_recovery_error is None for r in table.rows)
        ds = load_csv_regression(path, SIGMOID)
        zero = GraduatedObjective(ds).loss(np.zeros(3))
        # targets carry an offset the model cannot fit, so only improvement on zero is expected
        best = [r for r in table.selected() if r.method == "agglio-gd"]
        assert len(best) == 1
        assert best[0].hyperparameters["eta"] == 3.0
        assert best[0].final_loss < zero

    def test_spectrum_map(self, tmp_path):
        raw = {"experiment": "spectrum_map", "data": {"n": 500, "d": 5, "scale": "unit"}, "seeds": [0],
               "spectrum": {"taus": [0.05, 1.0], "radii": [1.0], "num_samples": 10},
               "output": str(tmp_path / "out")}
        table = run_experiment(config_from_dict(raw))
        assert len(table) == 2
        with (tmp_path / "out" / "spectrum_heatmap.csv").open() as fh:
            heat = list(csv.DictReader(fh))
        assert len(heat) == 2
        assert all(float(h["lambda_min"]) <= float(h["lambda_max"]) for h in heat)


@pytest.fixture(scope="module")
def convergence_table(tmp_path_factory):
    raw = {
        "experiment": "convergence",
        "data": {"n": 1000, "d": 50, "activation": "sigmoid"},
        "seeds": [0, 1, 2],
        "T": 3,
        "output": str(tmp_path_factory.mktemp("conv")),
        "methods": [{"name": "agglio-sgd", "grid": "default", "params": {"eta_mode": "tau_scaled"}},
                    {"name": "sgd", "grid": "default"}],
    }
    return run_experiment(config_from_dict(raw))


class TestConvergenceOrdering:
    def selected_errors(self, table, method):
        return [r.final_recovery_error for r in sorted(table.selected(), key=lambda r: r.seed)
                if r.method == method]

    def test_graduated_well_ahead_of_plain_sgd(self, convergence_table):
        table = convergence_table
        graduated = self.selected_errors(table, "agglio-sgd")
        plain = self.selected_errors(table, "sgd")
        assert all(g <= 0.2 * p for g, p in zip(graduated, plain))

    def test_graduated_reaches_threshold_first(self, convergence_table):
        table = convergence_table
        graduated = self.selected_errors(table, "agglio-sgd")
        plain = self.selected_errors(table, "sgd")
        assert all(g <= 1e-6 for g in graduated), graduated
        assert all(p > 1e-6 for p in plain), plain


class TestEmitSummary:
    def test_empty_table(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            emit_summary(ResultTable(), "csv", tmp_path)

    def test_csv_line_count(self, tmp_path):
        path = emit_summary(rows(3), "csv", tmp_path)
        assert len(path.read_text().splitlines()) == 4
        assert not (tmp_path / "tidy.csv").exists()

    def test_json_round_trip(self, tmp_path):
        table = rows(3)
        path = emit_summary(table, "json", tmp_path)
        assert ResultTable.from_json(path.read_text()) == table

    def test_bad_format(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            emit_summary(rows(1), "xml", tmp_path)

    def test_deterministic_drops_wall_clock(self):
        row = rows(1).rows[0]
        row.time_to_threshold = 1.5
        assert "time_to_threshold" not in row.deterministic()
        assert json.loads(json.dumps(row.deterministic()))["seed"] == 0
