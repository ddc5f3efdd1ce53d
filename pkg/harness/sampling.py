"""Seeded selection of measurement locations and residual (collocation) points."""

import numpy as np

from fields.conductivity import bilinear_sample
from physics.parameters import DomainSpec, MeasurementSet, ResidualPointSet
from refsolver.grid import FieldGrid

# distance of boundary points from the corners, relative to the segment length
CORNER_INSET = 1e-6


def select_measurements(field: FieldGrid, n: int, seed: int, strategy: str = 'uniform_random',
                        variable: str = 'K') -> MeasurementSet:
    """Measurements of ``field`` at n locations.

    uniform_random takes the first n cells of a seeded permutation, so a smaller
    n with the same seed selects a subset of the same wells.
    """
    total = field.nx * field.ny
    if n < 0 or n > total:
        raise ValueError(f'cannot select {n} measurements from {total} cells')
    if strategy == 'uniform_random':
        order = np.random.default_rng(seed).permutation(total)[:n]
        return MeasurementSet(field.points()[order], field.values.ravel()[order], variable)
    if strategy == 'grid':
        if n == 0:
            return MeasurementSet(np.zeros((0, 2)), np.zeros(0), variable)
        l1, l2 = field.domain.l1, field.domain.l2
        n1 = max(1, int(round(np.sqrt(n * l1 / l2))))
        n2 = int(np.ceil(n / n1))
        x1 = (np.arange(n1) + 0.5) * l1 / n1
        x2 = (np.arange(n2) + 0.5) * l2 / n2
        g1, g2 = np.meshgrid(x1, x2)
        points = np.column_stack([g1.ravel(), g2.ravel()])[:n]
        return MeasurementSet(points, bilinear_sample(field, points), variable)
    raise ValueError(f'unknown sampling strategy {strategy!r}')


def _segment(n: int, length: float) -> np.ndarray:
    inset = CORNER_INSET * length
    return np.linspace(inset, length - inset, n)


def _interior(rng: np.random.Generator, n: int, domain: DomainSpec) -> np.ndarray:
    low = np.array([domain.l1, domain.l2]) * 1e-12
    return rng.uniform(low, [domain.l1, domain.l2], size=(n, 2))


def _lateral(n: int, domain: DomainSpec) -> np.ndarray:
    x1 = _segment(n, domain.l1)
    bottom = np.column_stack([x1, np.zeros(n)])
    top = np.column_stack([x1, np.full(n, domain.l2)])
    return np.vstack([bottom, top])


def _vertical(n: int, domain: DomainSpec, x1: float) -> np.ndarray:
    return np.column_stack([np.full(n, x1), _segment(n, domain.l2)])


def select_residual_points(domain: DomainSpec, n_interior_h: int, n_interior_c: int = 0,
                           n_boundary_h: int = 0, n_boundary_c: int = 0,
                           seed: int = 0) -> ResidualPointSet:
    """Interior points uniform in the open domain, boundary points equally spaced per segment."""
    counts = (n_interior_h, n_interior_c, n_boundary_h, n_boundary_c)
    if any(n < 0 for n in counts):
        raise ValueError(f'point counts must be non-negative, got {counts}')
    rng = np.random.default_rng(seed)
    interior_h = _interior(rng, n_interior_h, domain)
    interior_c = _interior(rng, n_interior_c, domain)
    return ResidualPointSet(
        interior_h=interior_h,
        interior_c=interior_c,
        n1_h=_vertical(n_boundary_h, domain, 0.0),
        n2_h=_lateral(n_boundary_h, domain),
        b_h=_vertical(n_boundary_h, domain, domain.l1),
        n1_c=_vertical(n_boundary_c, domain, domain.l1),
        n2_c=_lateral(n_boundary_c, domain),
        b_c=_vertical(n_boundary_c, domain, 0.0),
    )
