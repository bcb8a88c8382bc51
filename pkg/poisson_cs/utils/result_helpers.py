import json
import logging
import math
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from pandas import DataFrame, set_option


logger = logging.getLogger(__name__)

# Pandas settings
set_option('display.width', 1000)
set_option('display.max_columns', 20)

"""
Quantile columns reported per sweep cell.
"""
RRMSE_QUANTILE_COLUMNS = {
    'rrmse_min': 0.0,
    'rrmse_q25': 0.25,
    'rrmse_median': 0.5,
    'rrmse_q75': 0.75,
    'rrmse_max': 1.0,
}

SWEEP_CELL_COLUMNS = ['kind', 'cell', 'intensity', 'measurements', 'sparsity', 'dimension']

STATS_COLUMNS = ['N', 'm', 'I', 'trials', 'mean', 'var', 'p99', 'ks_statistic', 'ks_critical', 'ks_pass',
                 'mean_bound', 'var_bound', 'tail_epsilon', 'tail_prob', 's_min']

# Floats are rounded to this many significant digits in CSV files
CSV_FLOAT_FORMAT = '%.12g'


def summarize_sweep_records(records_data_frame, with_timing=False):
    """
    Reduces per-trial sweep records to one row per grid cell with RRMSE quantiles computed from
    the successful trials of that cell.

    :param records_data_frame: Data frame with one row per (cell, trial), as produced by the
    experiment analyzer.
    :param with_timing: Adds the median solve time column (dimension sweeps).
    :return: Data frame with the sweep CSV columns.
    """

    rows = []

    for _, cell_data_frame in records_data_frame.groupby('cell', sort=True):
        first_row = cell_data_frame.iloc[0]
        successful = cell_data_frame['rrmse'].dropna()
        failed = cell_data_frame['error'].notna() | ~cell_data_frame['converged'].astype(bool)

        row = {column: first_row[column] for column in SWEEP_CELL_COLUMNS}
        row['trials'] = len(cell_data_frame)
        row['n_failed'] = int(failed.sum())

        for column, quantile in RRMSE_QUANTILE_COLUMNS.items():
            row[column] = float(successful.quantile(quantile)) if len(successful) else math.nan

        if with_timing:
            row['time_median'] = float(cell_data_frame['solve_seconds'].median())

        rows.append(row)

    return DataFrame(rows)


def save_results_data_frame_as_csv(results_data_frame, path):
    """
    Creates a .csv file containing the results.

    :param results_data_frame: Dataframe containing the results.
    :param path: Destination path; parent directories are created.
    :return: void
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    results_data_frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding='utf-8')

    logger.info("Wrote %d rows to %s", len(results_data_frame), path)


def to_serializable(value):
    """
    Converts dataclasses, enums, numpy scalars/arrays and non-finite floats into JSON-friendly
    values. Non-finite floats become strings ("inf", "nan").
    """

    if is_dataclass(value) and not isinstance(value, type):
        return to_serializable(asdict(value))

    if isinstance(value, Enum):
        return value.value

    if isinstance(value, dict):
        return {str(key): to_serializable(item) for key, item in value.items()}

    if isinstance(value, (list, tuple)):
        return [to_serializable(item) for item in value]

    if isinstance(value, np.ndarray):
        return to_serializable(value.tolist())

    if isinstance(value, np.generic):
        return to_serializable(value.item())

    if isinstance(value, float) and not math.isfinite(value):
        return str(value)

    if isinstance(value, Path):
        return str(value)

    return value


def save_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, 'w', encoding='utf-8') as json_file:
        json.dump(to_serializable(payload), json_file, indent=2, sort_keys=True)

    logger.info("Wrote %s", path)
