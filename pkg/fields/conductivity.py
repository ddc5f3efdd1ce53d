"""Reference conductivity fields and point sampling of grid fields."""

from dataclasses import dataclass

import numpy as np

from harness.logs import logger
from physics.parameters import DomainSpec
from refsolver.grid import FieldGrid

COVARIANCE_FORMS = ('literal', 'squared')


class EmbeddingError(RuntimeError):
    pass


def analytic_k(points) -> np.ndarray:
    """K(x) = 0.5 sin(4 pi x1) sin(4 pi x2) + 1."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return 0.5 * np.sin(4.0 * np.pi * points[:, 0]) * np.sin(4.0 * np.pi * points[:, 1]) + 1.0


def analytic_k_grid(nx: int, ny: int, domain: DomainSpec) -> FieldGrid:
    grid = FieldGrid(nx, ny, domain, np.zeros(nx * ny))
    return FieldGrid.like(grid, analytic_k(grid.points()))


@dataclass(frozen=True)
class GrfSpec:
    correlation_length: float
    sigma2: float = 1.0
    seed: int = 0
    # literal: sigma2 exp(-r / (2 lambda^2)); squared: sigma2 exp(-r^2 / (2 lambda^2))
    covariance_form: str = 'literal'

    def __post_init__(self):
        if self.correlation_length <= 0.0:
            raise ValueError(f'correlation length must be positive, got {self.correlation_length}')
        if self.sigma2 < 0.0:
            raise ValueError(f'variance must be non-negative, got {self.sigma2}')
        if self.covariance_form not in COVARIANCE_FORMS:
            raise ValueError(f'unknown covariance form {self.covariance_form!r}')

    def covariance(self, r: np.ndarray) -> np.ndarray:
        two_lam2 = 2.0 * self.correlation_length ** 2
        if self.covariance_form == 'literal':
            return self.sigma2 * np.exp(-r / two_lam2)
        return self.sigma2 * np.exp(-r * r / two_lam2)


def embedding_eigenvalues(nx: int, ny: int, dx: float, dy: float, spec: GrfSpec,
                          padding: int = 1) -> np.ndarray:
    """Eigenvalues of the block-circulant covariance on a (2 ny p) x (2 nx p) torus."""
    mx, my = 2 * nx * padding, 2 * ny * padding
    lag_x = np.minimum(np.arange(mx), mx - np.arange(mx)) * dx
    lag_y = np.minimum(np.arange(my), my - np.arange(my)) * dy
    r = np.hypot(lag_x[None, :], lag_y[:, None])
    return np.fft.fft2(spec.covariance(r)).real


def sample_grf(nx: int, ny: int, domain: DomainSpec, spec: GrfSpec,
               max_doublings: int = 3, tolerance: float = 1e-6) -> FieldGrid:
    """Zero-mean stationary Gaussian field Y on the cell centers (circulant embedding)."""
    grid = FieldGrid(nx, ny, domain, np.zeros(nx * ny))
    if spec.sigma2 == 0.0:
        return grid

    padding = 1
    for attempt in range(max_doublings + 1):
        eig = embedding_eigenvalues(nx, ny, grid.dx, grid.dy, spec, padding)
        if eig.min() >= -tolerance * eig.max():
            break
        logger.debug(f'embedding with padding {padding} not positive definite '
                     f'(min eigenvalue {eig.min():.3e}), doubling')
        padding *= 2
    else:
        raise EmbeddingError(
            f'circulant embedding not positive definite after {max_doublings} doublings')
    eig = np.clip(eig, 0.0, None)

    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(eig.shape) + 1j * rng.standard_normal(eig.shape)
    z = np.fft.fft2(np.sqrt(eig / eig.size) * noise)
    return FieldGrid.like(grid, z.real[:ny, :nx])


def lognormal_k(y: FieldGrid) -> FieldGrid:
    return FieldGrid.like(y, np.exp(y.values))


def bilinear_sample(field: FieldGrid, points, tol: float = 1e-12) -> np.ndarray:
    """Bilinear interpolation of cell-centered values; constant within half a cell of the edges."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not field.domain.contains(points, tol).all():
        raise ValueError('bilinear_sample: points outside the domain')

    def locate(coord, n, h):
        f = np.clip(coord / h - 0.5, 0.0, n - 1)
        i0 = np.minimum(np.floor(f).astype(int), max(n - 2, 0))
        return i0, np.minimum(i0 + 1, n - 1), f - i0

    i0, i1, tx = locate(points[:, 0], field.nx, field.dx)
    j0, j1, ty = locate(points[:, 1], field.ny, field.dy)
    v = field.values
    bottom = (1.0 - tx) * v[j0, i0] + tx * v[j0, i1]
    top = (1.0 - tx) * v[j1, i0] + tx * v[j1, i1]
    return (1.0 - ty) * bottom + ty * top
