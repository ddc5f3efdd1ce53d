from typing import Callable, Union

import numpy as np

from refsolver.grid import FieldGrid

Estimate = Union[FieldGrid, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def relative_error(reference: FieldGrid, estimate: Estimate) -> float:
    """Squared-norm ratio sum((g - g_hat)^2 A) / sum(g^2 A) over the cells (no square root)."""
    if isinstance(estimate, FieldGrid):
        values = estimate.values
    elif callable(estimate):
        values = np.asarray(estimate(reference.points()), dtype=np.float64)
    else:
        values = np.asarray(estimate, dtype=np.float64)
    values = values.reshape(reference.values.shape)
    area = reference.cell_area
    norm = np.sum(reference.values ** 2) * area
    if norm == 0.0:
        raise ValueError('relative error is undefined for an identically zero reference')
    return float(np.sum((reference.values - values) ** 2) * area / norm)


def rooted(error: float) -> float:
    return float(np.sqrt(error))
