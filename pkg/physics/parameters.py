"""Physical constants, geometry, boundary data and point sets of the flow and transport problem."""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

VARIABLES = ('K', 'h', 'C')


class LossAssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    phi: float = 0.317       # porosity
    d_w: float = 0.09        # diffusion coefficient, m^2/hr
    tau: float = 0.681       # tortuosity, phi**(1/3)
    alpha_l: float = 0.01    # longitudinal dispersivity, m
    alpha_t: float = 0.001   # transverse dispersivity, m

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f'porosity must lie in (0, 1), got {self.phi}')
        for name in ('d_w', 'tau'):
            if getattr(self, name) <= 0.0:
                raise ValueError(f'{name} must be positive, got {getattr(self, name)}')
        # zero dispersivities are allowed: they switch the mechanical dispersion off
        for name in ('alpha_l', 'alpha_t'):
            if getattr(self, name) < 0.0:
                raise ValueError(f'{name} must be non-negative, got {getattr(self, name)}')

    @property
    def molecular(self) -> float:
        return self.d_w * self.tau


@dataclass(frozen=True)
class DomainSpec:
    l1: float = 1.0
    l2: float = 0.5

    def __post_init__(self):
        if self.l1 <= 0.0 or self.l2 <= 0.0:
            raise ValueError(f'domain lengths must be positive, got ({self.l1}, {self.l2})')

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Mask of points inside the closed domain."""
        x1, x2 = points[:, 0], points[:, 1]
        return ((x1 >= -tol) & (x1 <= self.l1 + tol) & (x2 >= -tol) & (x2 <= self.l2 + tol))


@dataclass(frozen=True)
class BoundarySpec:
    h2: float = 0.0          # head at the outlet x1 = L1, m
    q: float = 1.0           # inflow flux at x1 = 0, m/hr
    c0_amp: float = 1.0      # inlet concentration amplitude, kg/m^3
    c0_width: float = 0.25   # inlet profile width, m

    def __post_init__(self):
        if self.c0_width <= 0.0:
            raise ValueError(f'c0_width must be positive, got {self.c0_width}')

    def inlet_concentration(self, x2, l2: float):
        """C0(x2) = c * exp(-(x2 - L2/2)^2 / eps^2)."""
        x2 = np.asarray(x2, dtype=np.float64)
        return self.c0_amp * np.exp(-(x2 - 0.5 * l2) ** 2 / self.c0_width ** 2)


@dataclass(frozen=True)
class LossWeights:
    omega_f: float = 1.0
    omega_b: float = 1.0

    def __post_init__(self):
        if self.omega_f < 0.0 or self.omega_b < 0.0:
            raise ValueError('loss weights must be non-negative')


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return np.zeros((0, 2))
    if points.ndim != 2 or points.shape[1] != 2:
        raise LossAssemblyError(f'points must have shape (n, 2), got {points.shape}')
    return points


@dataclass
class MeasurementSet:
    points: np.ndarray
    values: np.ndarray
    variable: str

    def __post_init__(self):
        self.points = _as_points(self.points)
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.variable not in VARIABLES:
            raise ValueError(f'unknown variable {self.variable!r}')
        if len(self.points) != len(self.values):
            raise ValueError(
                f'{len(self.points)} measurement points but {len(self.values)} values')

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, index: np.ndarray) -> 'MeasurementSet':
        return MeasurementSet(self.points[index], self.values[index], self.variable)


def _empty_points() -> np.ndarray:
    return np.zeros((0, 2))


@dataclass
class ResidualPointSet:
    """Collocation points of every PDE and boundary term.

    h terms: interior_h, n1_h (x1 = 0, inflow flux), n2_h (x2 = 0 or L2, no flow),
    b_h (x1 = L1, fixed head). C terms: interior_c, n1_c (x1 = L1, zero gradient),
    n2_c (x2 = 0 or L2, zero gradient), b_c (x1 = 0, inlet concentration).
    """
    interior_h: np.ndarray = field(default_factory=_empty_points)
    interior_c: np.ndarray = field(default_factory=_empty_points)
    n1_h: np.ndarray = field(default_factory=_empty_points)
    n2_h: np.ndarray = field(default_factory=_empty_points)
    b_h: np.ndarray = field(default_factory=_empty_points)
    n1_c: np.ndarray = field(default_factory=_empty_points)
    n2_c: np.ndarray = field(default_factory=_empty_points)
    b_c: np.ndarray = field(default_factory=_empty_points)

    SETS = ('interior_h', 'interior_c', 'n1_h', 'n2_h', 'b_h', 'n1_c', 'n2_c', 'b_c')

    def __post_init__(self):
        for name in self.SETS:
            setattr(self, name, _as_points(getattr(self, name)))

    @property
    def is_empty(self) -> bool:
        return all(len(getattr(self, name)) == 0 for name in self.SETS)

    def counts(self) -> Tuple[int, ...]:
        return tuple(len(getattr(self, name)) for name in self.SETS)

    def has_flow_terms(self) -> bool:
        return any(len(getattr(self, name)) for name in ('interior_h', 'n1_h', 'n2_h', 'b_h'))

    def has_transport_terms(self) -> bool:
        return any(len(getattr(self, name)) for name in ('interior_c', 'n1_c', 'n2_c', 'b_c'))

    def check_inside(self, domain: DomainSpec) -> None:
        for name in self.SETS:
            pts = getattr(self, name)
            if len(pts) and not domain.contains(pts).all():
                raise ValueError(f'{name}: points outside the domain')
        for name in ('interior_h', 'interior_c'):
            pts = getattr(self, name)
            if len(pts) and not ((pts[:, 0] > 0) & (pts[:, 0] < domain.l1)
                                 & (pts[:, 1] > 0) & (pts[:, 1] < domain.l2)).all():
                raise ValueError(f'{name}: interior points must lie strictly inside the domain')
