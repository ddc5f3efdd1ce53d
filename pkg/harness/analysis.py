"""Network-size studies: optimal width per sweep and its power-law trend in the correlation length."""

import json
import os
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd


def optimal_size(frame: pd.DataFrame, metric: str = 'eps_K') -> Dict:
    """Width with the smallest mean error per method (ties go to the smaller std).

    ``frame`` holds the per-seed rows of a width sweep.
    """
    rows = frame[(frame['status'] == 'ok') & ~frame['seed'].isin(['mean', 'std'])]
    result = {}
    for method, group in rows.groupby('method', sort=False):
        stats = (group.groupby('axis_value', sort=False)
                 .agg(mean=(metric, lambda s: float(np.mean(s))),
                      std=(metric, lambda s: float(np.std(s))),
                      n_params=('n_params', 'first'),
                      architecture=('architecture', 'first'))
                 .reset_index())
        best = stats.sort_values(['mean', 'std'], kind='mergesort').iloc[0]
        result[method] = {
            'width': int(best['axis_value']),
            'architecture': best['architecture'],
            'n_params': int(best['n_params']),
            f'mean_{metric}': float(best['mean']),
            f'std_{metric}': float(best['std']),
        }
    return result


def fit_power_law(lengths: Sequence[float], n_params: Sequence[float]) -> Tuple[float, float]:
    """Least-squares fit of n_params = a * length^b in log-log space; returns (a, b)."""
    lengths = np.asarray(lengths, dtype=np.float64)
    n_params = np.asarray(n_params, dtype=np.float64)
    if lengths.size < 2 or lengths.size != n_params.size:
        raise ValueError('power-law fit needs at least two (length, size) pairs')
    if np.any(lengths <= 0) or np.any(n_params <= 0):
        raise ValueError('power-law fit needs positive values')
    slope, intercept = np.polyfit(np.log(lengths), np.log(n_params), 1)
    return float(np.exp(intercept)), float(slope)


def fit_optimal_sizes(paths: Sequence[str], method: str = 'data_driven') -> Dict:
    """Power law through the optimal sizes stored in several ``optimal_size.json`` files."""
    lengths, sizes = [], []
    for path in paths:
        with open(os.path.expanduser(path), encoding='utf-8') as f:
            summary = json.load(f)
        if method not in summary:
            raise KeyError(f'{path}: no optimal size for method {method!r}')
        lengths.append(summary['correlation_length'])
        sizes.append(summary[method]['n_params'])
    a, b = fit_power_law(lengths, sizes)
    return {'method': method, 'correlation_length': lengths, 'n_params': sizes,
            'a': a, 'b': b}
