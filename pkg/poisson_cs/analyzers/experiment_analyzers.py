import json
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from itertools import product
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from joblib import Parallel, delayed
from numpy.random import SeedSequence, default_rng
from pandas import DataFrame

from poisson_cs import __version__
from poisson_cs.algo.core.solvers import ESTIMATOR_FIT_KINDS, FitKind, FitTerm, SolverConfig, lambda_max, rrmse, \
    solve_p2, solve_penalized, solve_penalized_path
from poisson_cs.algo.stats.sqjsd_stats import MIN_KS_TRIALS, EpsilonMode, choose_epsilon, ks_gaussian_test, \
    log_log_slope, monte_carlo_sqjsd, theorem1_bounds
from poisson_cs.exceptions import DegenerateSamples, InvalidParam, NotConverged, PoissonCSError
from poisson_cs.utils.dataset_helpers import crop_center, generate_dense_signal, generate_sparse_signal, read_pgm, \
    rescale_to_intensity, write_pgm
from poisson_cs.utils.measurement_helpers import measure
from poisson_cs.utils.result_helpers import STATS_COLUMNS, save_json, save_results_data_frame_as_csv, \
    summarize_sweep_records
from poisson_cs.utils.sensing_helpers import compose_effective, sample_sensing_matrix, save_sensing_matrix
from poisson_cs.utils.transform_helpers import OrthonormalBasis, PatchGrid, extract_patches, reassemble


logger = logging.getLogger(__name__)


class ExperimentKind(Enum):
    SWEEP_INTENSITY = "intensity"
    SWEEP_MEASUREMENTS = "measurements"
    SWEEP_SPARSITY = "sparsity"
    SWEEP_DIMENSION = "dimension"
    VERIFY_STATS = "verify-stats"
    IMAGE_RECON = "image"


SWEEP_KINDS = frozenset({ExperimentKind.SWEEP_INTENSITY, ExperimentKind.SWEEP_MEASUREMENTS,
                         ExperimentKind.SWEEP_SPARSITY, ExperimentKind.SWEEP_DIMENSION})


class SolverName(Enum):
    P2 = "P2"
    P4 = "P4"
    P5 = "P5"
    P6 = "P6"


class LambdaMode(Enum):
    OMNISCIENT = "omniscient"
    FIXED = "fixed"


"""
Desk-scale parameter grids per experiment kind. A missing measurements value is derived as m // 2
in sweeps; a missing dimension is derived as 2 N when verifying the SQJSD statistics.
"""
DEFAULT_GRIDS = {
    ExperimentKind.SWEEP_INTENSITY: {
        "intensity": [1e4, 1e6, 1e8], "measurements": [50], "sparsity": [5], "dimension": [100]},
    ExperimentKind.SWEEP_MEASUREMENTS: {
        "intensity": [1e8], "measurements": [20, 50, 100], "sparsity": [5], "dimension": [100]},
    ExperimentKind.SWEEP_SPARSITY: {
        "intensity": [1e8], "measurements": [50], "sparsity": [1, 5, 10, 15], "dimension": [100]},
    ExperimentKind.SWEEP_DIMENSION: {
        "intensity": [1e8], "measurements": [None], "sparsity": [10], "dimension": [100, 200, 400]},
    ExperimentKind.VERIFY_STATS: {
        "intensity": [1e3, 1e4, 1e6], "measurements": [50, 100, 500], "dimension": [None]},
    ExperimentKind.IMAGE_RECON: {
        "intensity": [1e4, 1e8], "measurements": [25]},
}

DEFAULT_TRIALS = {
    ExperimentKind.VERIFY_STATS: 1000,
    ExperimentKind.IMAGE_RECON: 1,
}

SWEEP_TRIALS = 10

"""
Settings restored by --paper-scale: full grids, the full image and stride 1.
"""
PAPER_SCALE_OVERRIDES = {
    ExperimentKind.SWEEP_INTENSITY: {"grid": {"intensity": [1e4, 1e5, 1e6, 1e7, 1e8, 1e9]}},
    ExperimentKind.SWEEP_MEASUREMENTS: {"grid": {"measurements": [20, 30, 40, 50, 60, 70, 80, 90, 100]}},
    ExperimentKind.SWEEP_SPARSITY: {"grid": {"sparsity": [1, 5, 10, 15, 20, 25]}},
    ExperimentKind.SWEEP_DIMENSION: {"grid": {"dimension": [100, 500, 1000, 2000, 4000]}},
    ExperimentKind.VERIFY_STATS: {
        "grid": {"intensity": [1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8], "measurements": [25, 50, 100, 200, 400, 500],
                 "dimension": [1000]},
        "trials": 10000},
    ExperimentKind.IMAGE_RECON: {
        "grid": {"intensity": [1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10]}, "crop": None, "stride": 1},
}

GRID_AXES = ("intensity", "measurements", "sparsity", "dimension")

# Omniscient lambda grid, as exponents of ten relative to lambda_max
OMNISCIENT_EXPONENTS = (-7.0, -1.0)


class GridCell(NamedTuple):
    intensity: float
    measurements: Optional[int]
    sparsity: Optional[int]
    dimension: Optional[int]


@dataclass(frozen=True)
class ExperimentSpec:
    """
    Declarative description of one experiment run. Grids missing from :attr grid are taken from
    DEFAULT_GRIDS; a None trials count from DEFAULT_TRIALS.
    """

    kind: ExperimentKind
    grid: dict = field(default_factory=dict)
    trials: Optional[int] = None
    master_seed: int = 0
    solver: Optional[SolverName] = None
    lambda_mode: LambdaMode = LambdaMode.OMNISCIENT
    lambda_value: Optional[float] = None
    lambda_grid_size: int = 10
    epsilon_mode: EpsilonMode = EpsilonMode.THEORY
    epsilon_trials: int = 200
    bernoulli_p: float = 0.5
    beta: float = 0.0
    enforce_intensity: bool = False
    max_iters: int = 5000
    alpha: float = 0.01
    patch: int = 7
    stride: int = 3
    crop: Optional[int] = 64
    bit_depth: int = 8
    workers: int = 1
    save_matrices: bool = False

    def __post_init__(self):
        kind = ExperimentKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "lambda_mode", LambdaMode(self.lambda_mode))
        object.__setattr__(self, "epsilon_mode", EpsilonMode(self.epsilon_mode))

        default_solver = SolverName.P4 if kind is ExperimentKind.IMAGE_RECON else SolverName.P2
        object.__setattr__(self, "solver", SolverName(self.solver.upper() if isinstance(self.solver, str)
                                                      else self.solver or default_solver))

        unknown_axes = set(self.grid) - set(GRID_AXES)

        if unknown_axes:
            raise InvalidParam("unknown grid axes: {0}".format(", ".join(sorted(unknown_axes))))

        grid = dict(DEFAULT_GRIDS[kind])
        grid.update({axis: list(values) for axis, values in self.grid.items()})
        object.__setattr__(self, "grid", grid)

        for axis, values in grid.items():
            if len(values) == 0:
                raise InvalidParam("grid axis {0} is empty".format(axis))

        if self.trials is None:
            object.__setattr__(self, "trials", DEFAULT_TRIALS.get(kind, SWEEP_TRIALS))

        if self.trials < 1:
            raise InvalidParam("trials must be at least 1, got {0}".format(self.trials))

        if kind is ExperimentKind.VERIFY_STATS and self.trials < 2:
            raise InvalidParam("verifying the SQJSD statistics needs at least 2 trials")

        if self.lambda_mode is LambdaMode.FIXED and not (self.lambda_value or 0) > 0:
            raise InvalidParam("a fixed lambda mode needs a positive lambda_value")

        if self.lambda_grid_size < 1:
            raise InvalidParam("lambda_grid_size must be at least 1")

        if self.workers == 0:
            raise InvalidParam("workers must be non-zero")

        if kind is ExperimentKind.IMAGE_RECON and len(grid["measurements"]) != 1:
            raise InvalidParam("the image experiment takes a single measurements value, got {0}".format(
                grid["measurements"]))

    @classmethod
    def from_json(cls, path, **overrides):
        """
        Loads a spec from a JSON object whose keys are ExperimentSpec field names. Overrides that
        are not None replace the file values.

        :param path: JSON config path.
        :param overrides: Field values, typically from command-line flags.
        :return: ExperimentSpec.
        """

        with open(path, encoding='utf-8') as json_file:
            values = json.load(json_file)

        if not isinstance(values, dict):
            raise InvalidParam("{0} must hold a JSON object".format(path))

        values.update({key: value for key, value in overrides.items() if value is not None})

        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values):
        known = {spec_field.name for spec_field in fields(cls)}
        unknown = set(values) - known

        if unknown:
            raise InvalidParam("unknown experiment settings: {0}".format(", ".join(sorted(unknown))))

        return cls(**values)

    def with_paper_scale(self):
        overrides = dict(PAPER_SCALE_OVERRIDES[self.kind])
        grid = dict(self.grid)
        grid.update(overrides.pop("grid", {}))

        return replace(self, grid=grid, **overrides)

    def cells(self):
        """
        Enumerates the Cartesian product of the grid axes in GRID_AXES order, with derived sizes
        filled in.
        """

        axes = [self.grid.get(axis, [None]) for axis in GRID_AXES]
        cells = []

        for intensity, measurements, sparsity, dimension in product(*axes):
            if self.kind in SWEEP_KINDS and measurements is None:
                measurements = dimension // 2

            if self.kind is ExperimentKind.VERIFY_STATS and dimension is None:
                dimension = 2 * measurements

            cells.append(GridCell(float(intensity), measurements, sparsity, dimension))

        return cells

    def solver_config(self, intensity, nonneg_signal=True):
        return SolverConfig(max_iters=self.max_iters, nonneg_signal=nonneg_signal,
                            enforce_intensity=intensity if self.enforce_intensity else None)


@dataclass
class RunManifest:
    """
    Reproducibility record of one run: the spec echo, one record per (cell, trial), one summary
    row per cell, the seed rule and the wall-clock time.
    """

    spec: ExperimentSpec
    records: list
    cells: list
    seeds: dict
    wall_clock_seconds: float
    version: str = __version__
    extras: dict = field(default_factory=dict)
    invalid_input: Optional[str] = None

    @property
    def n_failed(self):
        return int(sum(cell.get("n_failed", 0) for cell in self.cells))

    def to_dict(self):
        payload = {
            "spec": self.spec,
            "records": self.records,
            "cells": self.cells,
            "seeds": self.seeds,
            "wall_clock_seconds": self.wall_clock_seconds,
            "version": self.version,
        }
        payload.update(self.extras)

        if self.invalid_input is not None:
            payload["error"] = self.invalid_input

        return payload


def sweep_trial_seeds(spec, cell_index, trial):
    """
    Signal, matrix, measurement and Monte-Carlo seeds of one (cell, trial) of a sweep.
    """

    return SeedSequence([spec.master_seed, cell_index, trial]).spawn(4)


def stats_cell_seeds(spec, cell_index):
    return SeedSequence([spec.master_seed, cell_index]).spawn(3)


def patch_seeds(spec, intensity_index, patch_index):
    return SeedSequence([spec.master_seed, intensity_index, patch_index]).spawn(3)


def choose_trial_epsilon(spec, phi, x, seed):
    """
    Constraint radius for one constrained solve: the theory value, or the percentile of fresh
    Monte-Carlo SQJSD draws around the trial's own matrix and signal.
    """

    samples = None

    if spec.epsilon_mode is EpsilonMode.PERCENTILE:
        samples = monte_carlo_sqjsd(phi, x, spec.epsilon_trials, seed)

    return choose_epsilon(spec.epsilon_mode, phi.shape[0], samples)


def reconstruct(spec, A, basis, y, x, cfg, epsilon=None):
    """
    Solves one instance with the estimator named by spec.solver.

    :param spec: ExperimentSpec.
    :param A: Effective matrix Phi Psi.
    :param basis: OrthonormalBasis.
    :param y: MeasurementVector.
    :param x: True signal, used only by the omniscient lambda selection.
    :param cfg: SolverConfig.
    :param epsilon: Constraint radius, required for P2.
    :return: SolveResult.
    """

    if spec.solver is SolverName.P2:
        return solve_p2(A, basis, y, epsilon, cfg, fit=FitTerm(FitKind.JSD, spec.beta))

    fit = FitTerm(ESTIMATOR_FIT_KINDS[spec.solver.value], spec.beta)

    if spec.lambda_mode is LambdaMode.FIXED:
        return solve_penalized(A, basis, y, fit, spec.lambda_value, cfg)

    lambdas = lambda_max(A, basis, y, fit, cfg) * np.logspace(*OMNISCIENT_EXPONENTS, spec.lambda_grid_size)
    path = solve_penalized_path(A, basis, y, fit, list(lambdas), cfg)

    # Oracle selection against the true signal
    errors = [np.linalg.norm(x - basis.synthesize(result.theta_star)) for result in path]

    return path[int(np.argmin(errors))]


def run_sweep_trial(spec, cell_index, cell, trial):
    """
    One (cell, trial) task of a reconstruction sweep. Owns its random streams, derived from
    SeedSequence([master_seed, cell_index, trial]) spawned into signal, matrix, measurement and
    Monte-Carlo children. Solver failures are recorded, not raised.
    """

    signal_seed, matrix_seed, measurement_seed, epsilon_seed = sweep_trial_seeds(spec, cell_index, trial)

    record = {"kind": spec.kind.value, "cell": cell_index, **cell._asdict(), "trial": trial, "rrmse": math.nan,
              "converged": False, "iterations": 0, "lambda_used": None, "epsilon": None, "error": None}

    if spec.kind is ExperimentKind.SWEEP_DIMENSION:
        record["solve_seconds"] = math.nan

    try:
        x = generate_sparse_signal(cell.dimension, cell.sparsity, cell.intensity, default_rng(signal_seed))
        phi = sample_sensing_matrix(cell.measurements, cell.dimension, spec.bernoulli_p, matrix_seed)
        y = measure(phi, x, measurement_seed)
        basis = OrthonormalBasis.identity(cell.dimension)
        A = compose_effective(phi, basis).effective

        epsilon = choose_trial_epsilon(spec, phi, x, epsilon_seed) if spec.solver is SolverName.P2 else None

        start = time.perf_counter()
        result = reconstruct(spec, A, basis, y, x, spec.solver_config(cell.intensity), epsilon)
        elapsed = time.perf_counter() - start

        record.update(rrmse=rrmse(x, basis.synthesize(result.theta_star)), converged=result.converged,
                      iterations=result.iterations, lambda_used=result.lambda_used, epsilon=epsilon)

        if spec.kind is ExperimentKind.SWEEP_DIMENSION:
            record["solve_seconds"] = elapsed
    except PoissonCSError as error:
        logger.warning("Cell %d trial %d failed: %s", cell_index, trial, error)
        record["error"] = "{0}: {1}".format(type(error).__name__, error)

    return record


def run_stats_cell(spec, cell_index, cell):
    """
    Monte-Carlo SQJSD statistics and concentration bounds for one (I, N, m) cell, with a dense
    positive signal and streams derived from SeedSequence([master_seed, cell_index]).
    """

    signal_seed, matrix_seed, sample_seed = stats_cell_seeds(spec, cell_index)

    x = generate_dense_signal(cell.dimension, cell.intensity, default_rng(signal_seed))
    phi = sample_sensing_matrix(cell.measurements, cell.dimension, spec.bernoulli_p, matrix_seed)

    sample_set = monte_carlo_sqjsd(phi, x, spec.trials, sample_seed)
    bounds = theorem1_bounds(phi, x)

    ks_statistic, ks_critical, ks_pass = math.nan, math.nan, None

    if sample_set.trials >= MIN_KS_TRIALS:
        try:
            ks_result = ks_gaussian_test(sample_set, spec.alpha)
            ks_statistic, ks_critical, ks_pass = ks_result.statistic, ks_result.critical, ks_result.passed
        except DegenerateSamples as error:
            logger.warning("No KS verdict for cell %d: %s", cell_index, error)

    row = {
        "N": cell.measurements, "m": cell.dimension, "I": cell.intensity, "trials": sample_set.trials,
        "mean": sample_set.mean, "var": sample_set.var, "p99": sample_set.percentile(99),
        "ks_statistic": ks_statistic, "ks_critical": ks_critical, "ks_pass": ks_pass,
        "mean_bound": bounds.mean_bound, "var_bound": bounds.var_bound, "tail_epsilon": bounds.tail_epsilon,
        "tail_prob": bounds.tail_prob, "s_min": bounds.s_min,
    }

    logger.info("Stats cell %d (N=%d, m=%d, I=%.3g): mean %.4f, var %.4f", cell_index, cell.measurements,
                cell.dimension, cell.intensity, row["mean"], row["var"])

    return row


def fit_scaling(stats_data_frame):
    """
    Log-log slopes of the mean and the 99th percentile of sqrt(J) versus N, per intensity with
    at least two distinct N.
    """

    rows = []

    for intensity, intensity_data_frame in stats_data_frame.groupby("I", sort=True):
        if intensity_data_frame["N"].nunique() < 2:
            continue

        rows.append({
            "I": float(intensity),
            "mean_slope": log_log_slope(intensity_data_frame["N"], intensity_data_frame["mean"]),
            "p99_slope": log_log_slope(intensity_data_frame["N"], intensity_data_frame["p99"]),
        })

    return rows


def reconstruct_patch(spec, intensity_index, patch_index, patch_vector, basis, cfg, measurements):
    """
    Measures and reconstructs one vectorised patch with its own sensing matrix, seeded by
    SeedSequence([master_seed, intensity_index, patch_index]).

    :return: Tuple (reconstructed patch, converged, error message or None).
    """

    matrix_seed, measurement_seed, epsilon_seed = patch_seeds(spec, intensity_index, patch_index)

    try:
        phi = sample_sensing_matrix(measurements, basis.dim, spec.bernoulli_p, matrix_seed)
        y = measure(phi, patch_vector, measurement_seed)
        A = compose_effective(phi, basis).effective

        epsilon = choose_trial_epsilon(spec, phi, patch_vector, epsilon_seed) if spec.solver is SolverName.P2 else None
        result = reconstruct(spec, A, basis, y, patch_vector, cfg, epsilon)

        return basis.synthesize(result.theta_star), result.converged, None
    except PoissonCSError as error:
        return np.zeros(basis.dim), False, "{0}: {1}".format(type(error).__name__, error)


class ExperimentAnalyzer:
    """
    Runs the experiment described by an ExperimentSpec and keeps its manifest and result tables
    until they are saved.
    """

    def __init__(self, experiment_spec):
        self.__spec = experiment_spec
        self.__manifest = None
        self.__results_data_frame = DataFrame()
        self.__images = {}
        self.__measured_patches = {}

    def get_spec(self):
        return self.__spec

    def get_manifest(self):
        return self.__manifest

    def get_results_data_frame(self):
        return self.__results_data_frame

    def get_images(self):
        return dict(self.__images)

    def get_sensing_matrices(self):
        """
        Regenerates the sensing matrices of the last run from their derived seeds: one per
        (cell, trial) of a sweep, one per cell of a statistics run and one per measured patch of
        an image run.

        :return: Dict {file stem: SensingMatrix}.
        """

        if self.__manifest is None:
            raise InvalidParam("no sensing matrices; run an experiment first")

        spec = self.__spec
        matrices = {}

        if spec.kind in SWEEP_KINDS:
            for cell_index, cell in enumerate(spec.cells()):
                for trial in range(spec.trials):
                    matrix_seed = sweep_trial_seeds(spec, cell_index, trial)[1]
                    matrices["cell{0}_trial{1}".format(cell_index, trial)] = sample_sensing_matrix(
                        cell.measurements, cell.dimension, spec.bernoulli_p, matrix_seed)
        elif spec.kind is ExperimentKind.VERIFY_STATS:
            for cell_index, cell in enumerate(spec.cells()):
                matrix_seed = stats_cell_seeds(spec, cell_index)[1]
                matrices["cell{0}".format(cell_index)] = sample_sensing_matrix(
                    cell.measurements, cell.dimension, spec.bernoulli_p, matrix_seed)
        else:
            measurements = spec.grid["measurements"][0]

            for intensity_index, patch_count in self.__measured_patches.items():
                intensity = spec.grid["intensity"][intensity_index]

                for patch_index in range(patch_count):
                    matrix_seed = patch_seeds(spec, intensity_index, patch_index)[0]
                    matrices["I{0:g}_patch{1}".format(intensity, patch_index)] = sample_sensing_matrix(
                        measurements, spec.patch ** 2, spec.bernoulli_p, matrix_seed)

        return matrices

    def run(self, image_path=None):
        kind = self.__spec.kind

        if kind in SWEEP_KINDS:
            return self.run_sweep()
        elif kind is ExperimentKind.VERIFY_STATS:
            return self.run_verify_stats()
        elif kind is ExperimentKind.IMAGE_RECON:
            if image_path is None:
                raise InvalidParam("the image experiment needs an input image")

            return self.run_image_recon(image_path)

        raise InvalidParam("unsupported experiment kind {0}".format(kind))

    def _seeds(self, rule):
        return {"master_seed": self.__spec.master_seed, "rule": rule}

    def run_sweep(self):
        """
        Reconstruction sweep over the spec grid: a fresh signal, matrix and measurement per
        (cell, trial), solved by spec.solver, with RRMSE quantiles summarised per cell.

        :return: RunManifest.
        """

        spec = self.__spec

        if spec.kind not in SWEEP_KINDS:
            raise InvalidParam("{0} is not a sweep".format(spec.kind.value))

        cells = spec.cells()
        start = time.perf_counter()

        logger.info("Sweep %s: %d cells x %d trials with %s", spec.kind.value, len(cells), spec.trials,
                    spec.solver.value)

        records = Parallel(n_jobs=spec.workers)(
            delayed(run_sweep_trial)(spec, cell_index, cell, trial)
            for cell_index, cell in enumerate(cells) for trial in range(spec.trials))

        records_data_frame = DataFrame(records)
        self.__results_data_frame = summarize_sweep_records(
            records_data_frame, with_timing=spec.kind is ExperimentKind.SWEEP_DIMENSION)

        for row in self.__results_data_frame.itertuples():
            logger.info("Cell %d: median RRMSE %.4g, %d failed", row.cell, row.rrmse_median, row.n_failed)

        self.__manifest = RunManifest(
            spec=spec,
            records=records,
            cells=self.__results_data_frame.to_dict(orient="records"),
            seeds=self._seeds("SeedSequence([master_seed, cell, trial]).spawn(4)"),
            wall_clock_seconds=time.perf_counter() - start,
        )

        return self.__manifest

    def run_verify_stats(self):
        """
        Monte-Carlo verification of the SQJSD statistics over the (I, N, m) grid, with the
        concentration bounds, a KS verdict per cell and the log-log scaling fits.

        :return: RunManifest.
        """

        spec = self.__spec
        cells = spec.cells()
        start = time.perf_counter()

        rows = Parallel(n_jobs=spec.workers)(
            delayed(run_stats_cell)(spec, cell_index, cell) for cell_index, cell in enumerate(cells))

        self.__results_data_frame = DataFrame(rows, columns=STATS_COLUMNS)

        self.__manifest = RunManifest(
            spec=spec,
            records=rows,
            cells=rows,
            seeds=self._seeds("SeedSequence([master_seed, cell]).spawn(3)"),
            wall_clock_seconds=time.perf_counter() - start,
            extras={"scaling": fit_scaling(self.__results_data_frame)},
        )

        return self.__manifest

    def run_image_recon(self, image_path):
        """
        Patch-based image reconstruction: the (optionally cropped) image is rescaled to every
        intensity of the grid, each patch is measured with its own matrix and reconstructed in
        the 2-D DCT basis, and overlapping patches are averaged.

        :param image_path: Grayscale PGM path.
        :return: RunManifest. A zero image gives zero reconstructions and sets invalid_input.
        """

        spec = self.__spec
        start = time.perf_counter()

        image = read_pgm(image_path)

        if spec.crop is not None:
            image = crop_center(image, spec.crop, spec.crop)

        grid = PatchGrid(image.shape[0], image.shape[1], spec.patch, spec.stride)
        basis = OrthonormalBasis.dct2(spec.patch)
        measurements = spec.grid["measurements"][0]

        records = []
        invalid_input = None
        self.__images = {"original": image}
        self.__measured_patches = {}

        for intensity_index, intensity in enumerate(spec.grid["intensity"]):
            record = {"kind": spec.kind.value, "cell": intensity_index, "intensity": float(intensity),
                      "measurements": measurements, "patches": len(grid), "n_failed": 0, "rrmse": math.nan}

            if not image.sum() > 0:
                invalid_input = "RRMSE is undefined for a zero image"
                logger.error("%s: %s", image_path, invalid_input)
                self.__images[intensity] = np.zeros_like(image)
                records.append(record)
                continue

            target, scale = rescale_to_intensity(image, intensity)
            cfg = spec.solver_config(None, nonneg_signal=False)

            outcomes = Parallel(n_jobs=spec.workers)(
                delayed(reconstruct_patch)(spec, intensity_index, patch_index, patch_vector, basis, cfg, measurements)
                for patch_index, patch_vector in enumerate(extract_patches(target, grid)))

            self.__measured_patches[intensity_index] = len(grid)
            reconstruction = reassemble([outcome[0] for outcome in outcomes], grid)
            record["n_failed"] = sum(1 for _, converged, _ in outcomes if not converged)
            record["rrmse"] = rrmse(target, reconstruction)

            errors = [error for _, _, error in outcomes if error is not None]

            if errors:
                logger.warning("%d patches failed at I=%.3g, first: %s", len(errors), intensity, errors[0])

            logger.info("Image at I=%.3g: RRMSE %.4g over %d patches", intensity, record["rrmse"], len(grid))

            self.__images[intensity] = reconstruction / scale
            records.append(record)

        self.__results_data_frame = DataFrame(records)

        self.__manifest = RunManifest(
            spec=spec,
            records=records,
            cells=records,
            seeds=self._seeds("SeedSequence([master_seed, intensity, patch]).spawn(3)"),
            wall_clock_seconds=time.perf_counter() - start,
            extras={"input": str(image_path), "image_shape": list(image.shape)},
            invalid_input=invalid_input,
        )

        return self.__manifest

    def save_results(self, out_dir):
        """
        Writes the CSV table and the JSON manifest of the last run into :param out_dir, plus the
        reconstructed images of an image run and, with :attr save_matrices, every sensing matrix
        under matrices/.

        :param out_dir: Output directory, created when missing.
        :return: List of written paths.
        """

        if self.__manifest is None:
            raise InvalidParam("nothing to save; run an experiment first")

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        kind = self.__spec.kind

        if kind in SWEEP_KINDS:
            stem = "sweep_{0}".format(kind.value)
        elif kind is ExperimentKind.VERIFY_STATS:
            stem = "verify_stats"
        else:
            stem = "image"

        written = [out_dir / "{0}.csv".format(stem), out_dir / "{0}.json".format(stem)]

        save_results_data_frame_as_csv(self.__results_data_frame, written[0])
        save_json(self.__manifest.to_dict(), written[1])

        for label, image in self.__images.items():
            name = "original.pgm" if label == "original" else "reconstruction_I{0:g}.pgm".format(label)
            write_pgm(out_dir / name, image, self.__spec.bit_depth)
            written.append(out_dir / name)

        if self.__spec.save_matrices:
            matrix_dir = out_dir / "matrices"
            matrix_dir.mkdir(exist_ok=True)

            for name, phi in self.get_sensing_matrices().items():
                path = matrix_dir / "{0}.npz".format(name)
                save_sensing_matrix(path, phi)
                written.append(path)

        return written

    def raise_for_failures(self):
        """
        Raises NotConverged when any trial of the last run failed or did not converge.
        """

        if self.__manifest is not None and self.__manifest.n_failed > 0:
            raise NotConverged("{0} trials failed or did not converge".format(self.__manifest.n_failed))
