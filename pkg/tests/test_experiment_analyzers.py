import json
import math

import numpy as np
import pytest
from numpy.random import SeedSequence

from poisson_cs.algo.stats.sqjsd_stats import EpsilonMode
from poisson_cs.analyzers.experiment_analyzers import (
    ExperimentAnalyzer,
    ExperimentKind,
    ExperimentSpec,
    GridCell,
    LambdaMode,
    SolverName,
)
from poisson_cs.exceptions import InvalidParam, NotConverged
from poisson_cs.utils.dataset_helpers import write_pgm
from poisson_cs.utils.result_helpers import STATS_COLUMNS
from poisson_cs.utils.sensing_helpers import load_sensing_matrix, sample_sensing_matrix


def tiny_sweep_spec(**overrides):
    settings = {
        "kind": "intensity",
        "grid": {"intensity": [1e6, 1e8], "measurements": [20], "sparsity": [2], "dimension": [30]},
        "trials": 2,
        "master_seed": 3,
        "max_iters": 500,
    }
    settings.update(overrides)

    return ExperimentSpec(**settings)


def smooth_image(size):
    rows, cols = np.mgrid[0:size, 0:size] / size
    return 100 + 80 * np.sin(3 * rows) * np.cos(2 * cols) + 60 * np.exp(-((rows - 0.5) ** 2 + (cols - 0.4) ** 2) * 8)


@pytest.fixture
def image_path(tmp_path):
    path = tmp_path / "input.pgm"
    write_pgm(path, smooth_image(13))
    return path


class TestExperimentSpec:

    def test_defaults(self):
        spec = ExperimentSpec("intensity")

        assert spec.kind is ExperimentKind.SWEEP_INTENSITY
        assert spec.solver is SolverName.P2
        assert spec.trials == 10
        assert spec.grid["intensity"] == [1e4, 1e6, 1e8]
        assert spec.epsilon_mode is EpsilonMode.THEORY

    def test_kind_specific_defaults(self):
        assert ExperimentSpec("image").solver is SolverName.P4
        assert ExperimentSpec("image").trials == 1
        assert ExperimentSpec("verify-stats").trials == 1000

    def test_string_values_are_converted(self):
        spec = ExperimentSpec("sparsity", solver="p5", lambda_mode="fixed", lambda_value=0.1,
                              epsilon_mode="percentile")

        assert spec.solver is SolverName.P5
        assert spec.lambda_mode is LambdaMode.FIXED
        assert spec.epsilon_mode is EpsilonMode.PERCENTILE

    def test_derived_sizes(self):
        assert ExperimentSpec("dimension").cells()[1] == GridCell(1e8, 100, 10, 200)
        assert ExperimentSpec("verify-stats").cells()[0] == GridCell(1e3, 50, None, 100)

    def test_cell_order(self):
        cells = ExperimentSpec("verify-stats").cells()
        assert len(cells) == 9
        assert [cell.measurements for cell in cells[:3]] == [50, 100, 500]
        assert cells[3].intensity == 1e4

    def test_paper_scale(self):
        spec = ExperimentSpec("verify-stats", grid={"intensity": [1e4]}).with_paper_scale()

        assert spec.trials == 10000
        assert spec.grid["dimension"] == [1000]
        assert spec.grid["measurements"] == [25, 50, 100, 200, 400, 500]

        image_spec = ExperimentSpec("image").with_paper_scale()
        assert image_spec.crop is None
        assert image_spec.stride == 1

    def test_from_json(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"kind": "sparsity", "trials": 3, "grid": {"sparsity": [1, 2]}}))

        spec = ExperimentSpec.from_json(path, master_seed=9, trials=None)

        assert spec.trials == 3
        assert spec.master_seed == 9
        assert spec.grid["sparsity"] == [1, 2]
        assert spec.grid["dimension"] == [100]

    def test_from_json_rejects_unknown_settings(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"kind": "sparsity", "iterations": 3}))

        with pytest.raises(InvalidParam, match="iterations"):
            ExperimentSpec.from_json(path)

    @pytest.mark.parametrize("kwargs, message", [
        ({"grid": {"noise": [1]}}, "noise"),
        ({"grid": {"intensity": []}}, "empty"),
        ({"trials": 0}, "trials"),
        ({"lambda_mode": "fixed"}, "lambda_value"),
        ({"workers": 0}, "workers"),
    ])
    def test_validation(self, kwargs, message):
        with pytest.raises(InvalidParam, match=message):
            ExperimentSpec("intensity", **kwargs)

    def test_image_takes_one_measurements_value(self):
        with pytest.raises(InvalidParam, match="single measurements value"):
            ExperimentSpec("image", grid={"measurements": [25, 30]})

    def test_verify_stats_needs_two_trials(self):
        with pytest.raises(InvalidParam, match="2 trials"):
            ExperimentSpec("verify-stats", trials=1)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ExperimentSpec("noise")


class TestSweeps:

    @pytest.mark.parametrize("solver", ["P2", "P4"])
    def test_sweep_is_deterministic(self, tmp_path, solver):
        spec = tiny_sweep_spec(solver=solver, lambda_grid_size=3)
        written = []

        for run in ("first", "second"):
            analyzer = ExperimentAnalyzer(spec)
            analyzer.run()
            written.append(analyzer.save_results(tmp_path / run)[0].read_text())

        assert written[0] == written[1]

    def test_sweep_summary(self):
        analyzer = ExperimentAnalyzer(tiny_sweep_spec(solver="P4", lambda_grid_size=3))
        manifest = analyzer.run()
        cells = analyzer.get_results_data_frame()

        assert len(cells) == 2
        assert cells.trials.tolist() == [2, 2]
        assert len(manifest.records) == 4
        assert [record["trial"] for record in manifest.records] == [0, 1, 0, 1]
        assert all(record["lambda_used"] > 0 for record in manifest.records)
        assert np.all(cells.rrmse_median.notna())

    def test_parallel_workers_match_serial(self):
        serial = ExperimentAnalyzer(tiny_sweep_spec(solver="P4", lambda_grid_size=2))
        parallel = ExperimentAnalyzer(tiny_sweep_spec(solver="P4", lambda_grid_size=2, workers=2))
        serial.run()
        parallel.run()

        assert serial.get_results_data_frame().equals(parallel.get_results_data_frame())

    def test_percentile_epsilon(self):
        manifest = ExperimentAnalyzer(tiny_sweep_spec(epsilon_mode="percentile", epsilon_trials=100)).run()
        assert all(record["epsilon"] > 0 for record in manifest.records if record["error"] is None)

    def test_dimension_sweep_reports_timing(self):
        spec = ExperimentSpec("dimension", grid={"dimension": [20], "sparsity": [2]}, trials=1, solver="P4",
                              lambda_mode="fixed", lambda_value=1e-3, max_iters=300)
        analyzer = ExperimentAnalyzer(spec)
        analyzer.run()

        cells = analyzer.get_results_data_frame()

        assert cells.measurements.tolist() == [10]
        assert cells.time_median.iloc[0] >= 0

    def test_failures_raise_not_converged(self):
        analyzer = ExperimentAnalyzer(tiny_sweep_spec(solver="P4", lambda_mode="fixed", lambda_value=1.0,
                                                      max_iters=1))
        manifest = analyzer.run()

        assert manifest.n_failed == 4

        with pytest.raises(NotConverged, match="4 trials"):
            analyzer.raise_for_failures()

    def test_saved_manifest(self, tmp_path):
        analyzer = ExperimentAnalyzer(tiny_sweep_spec(solver="P6", lambda_grid_size=2))
        analyzer.run()
        paths = analyzer.save_results(tmp_path)

        assert [path.name for path in paths] == ["sweep_intensity.csv", "sweep_intensity.json"]

        payload = json.loads(paths[1].read_text())

        assert set(payload) == {"spec", "records", "cells", "seeds", "wall_clock_seconds", "version"}
        assert payload["spec"]["solver"] == "P6"
        assert payload["seeds"]["master_seed"] == 3

    def test_saved_sensing_matrices(self, tmp_path):
        analyzer = ExperimentAnalyzer(tiny_sweep_spec(solver="P4", lambda_grid_size=2, save_matrices=True))
        analyzer.run()
        paths = analyzer.save_results(tmp_path)

        assert [path.name for path in paths[2:]] == [
            "cell0_trial0.npz", "cell0_trial1.npz", "cell1_trial0.npz", "cell1_trial1.npz"]

        used = sample_sensing_matrix(20, 30, seed=SeedSequence([3, 1, 0]).spawn(4)[1])
        loaded = load_sensing_matrix(tmp_path / "matrices" / "cell1_trial0.npz")

        assert np.array_equal(loaded.entries, used.entries)

    def test_save_before_run(self, tmp_path):
        with pytest.raises(InvalidParam, match="run an experiment"):
            ExperimentAnalyzer(tiny_sweep_spec()).save_results(tmp_path)

        with pytest.raises(InvalidParam, match="run an experiment"):
            ExperimentAnalyzer(tiny_sweep_spec()).get_sensing_matrices()


class TestVerifyStats:

    def test_small_grid(self, tmp_path):
        spec = ExperimentSpec("verify-stats", grid={"intensity": [1e4], "measurements": [10, 20]}, trials=50)
        analyzer = ExperimentAnalyzer(spec)
        manifest = analyzer.run()
        rows = analyzer.get_results_data_frame()

        assert list(rows.columns) == STATS_COLUMNS
        assert rows.m.tolist() == [20, 40]
        assert np.all(rows["mean"] <= rows.mean_bound)
        assert rows.ks_critical.notna().all()
        assert len(manifest.extras["scaling"]) == 1

        paths = analyzer.save_results(tmp_path)
        assert paths[0].name == "verify_stats.csv"
        assert "scaling" in json.loads(paths[1].read_text())

    def test_no_ks_verdict_below_thirty_trials(self):
        spec = ExperimentSpec("verify-stats", grid={"intensity": [1e4], "measurements": [10]}, trials=10)
        rows = ExperimentAnalyzer(spec).run().cells

        assert math.isnan(rows[0]["ks_statistic"])
        assert rows[0]["ks_pass"] is None


class TestImageReconstruction:

    def test_small_image(self, image_path, tmp_path):
        spec = ExperimentSpec("image", grid={"intensity": [1e6]}, patch=7, stride=3, max_iters=300,
                              lambda_grid_size=3)
        analyzer = ExperimentAnalyzer(spec)
        manifest = analyzer.run(image_path)

        assert manifest.invalid_input is None
        assert manifest.cells[0]["patches"] == 9
        assert manifest.cells[0]["rrmse"] < 1.0
        assert analyzer.get_images()[1e6].shape == (13, 13)
        assert len(analyzer.get_sensing_matrices()) == 9
        assert analyzer.get_sensing_matrices()["I1e+06_patch4"].shape == (25, 49)

        names = [path.name for path in analyzer.save_results(tmp_path / "out")]
        assert names == ["image.csv", "image.json", "original.pgm", "reconstruction_I1e+06.pgm"]

    def test_zero_image(self, tmp_path):
        path = tmp_path / "zero.pgm"
        write_pgm(path, np.zeros((9, 9)))

        analyzer = ExperimentAnalyzer(ExperimentSpec("image", grid={"intensity": [1e4]}))
        manifest = analyzer.run(path)

        assert manifest.invalid_input is not None
        assert math.isnan(manifest.cells[0]["rrmse"])
        assert np.all(analyzer.get_images()[1e4] == 0)
        assert analyzer.get_sensing_matrices() == {}
        assert "error" in manifest.to_dict()

    def test_needs_an_image(self):
        with pytest.raises(InvalidParam, match="input image"):
            ExperimentAnalyzer(ExperimentSpec("image")).run()


@pytest.mark.slow
class TestReconstructionBehaviour:

    def median_rrmse(self, **settings):
        analyzer = ExperimentAnalyzer(ExperimentSpec(**settings))
        analyzer.run()
        return analyzer.get_results_data_frame().rrmse_median.to_numpy()

    def test_error_decreases_with_intensity(self):
        medians = self.median_rrmse(kind="intensity")

        assert medians[0] > medians[1] > medians[2]
        assert medians[2] < 0.1

    def test_error_is_flat_in_measurements(self):
        medians = self.median_rrmse(kind="measurements")
        assert medians.max() / medians.min() <= 2.0

    def test_penalized_estimators_agree(self):
        medians = [self.median_rrmse(kind="intensity", grid={"intensity": [1e8]}, solver=solver)[0]
                   for solver in ("P4", "P5", "P6")]

        assert max(medians) - min(medians) <= 0.05
        assert max(medians) < 0.1

    def test_near_noiseless_regime(self):
        medians = self.median_rrmse(kind="intensity", grid={"intensity": [1e10]}, solver="P4", trials=3)
        assert medians[0] < 1e-2

    def test_image_error_drops_with_intensity(self, tmp_path):
        path = tmp_path / "scene.pgm"
        write_pgm(path, smooth_image(64))

        analyzer = ExperimentAnalyzer(ExperimentSpec("image", workers=-1))
        manifest = analyzer.run(path)
        low, high = [cell["rrmse"] for cell in manifest.cells]

        assert low > 3 * high
        assert high < 0.1
