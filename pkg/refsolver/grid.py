"""Cell-centered fields on the rectangular domain and their text file format.

File layout: a header line ``nx ny l1 l2`` followed by the nx*ny values in
row-major order (rows of constant x2, bottom row first), written with 17
significant digits so a save/load round trip is exact.
"""

import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from physics.parameters import DomainSpec


class GridFormatError(ValueError):
    pass


@dataclass
class FieldGrid:
    nx: int
    ny: int
    domain: DomainSpec
    values: np.ndarray

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise GridFormatError(f'grid needs at least one cell per direction, got {self.nx}x{self.ny}')
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.nx * self.ny:
            raise GridFormatError(
                f'{self.nx}x{self.ny} grid needs {self.nx * self.ny} values, got {values.size}')
        self.values = values.reshape(self.ny, self.nx)

    @classmethod
    def like(cls, other: 'FieldGrid', values: np.ndarray) -> 'FieldGrid':
        return cls(other.nx, other.ny, other.domain, values)

    @property
    def dx(self) -> float:
        return self.domain.l1 / self.nx

    @property
    def dy(self) -> float:
        return self.domain.l2 / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """1-D center coordinates along x1 (nx,) and x2 (ny,)."""
        return ((np.arange(self.nx) + 0.5) * self.dx, (np.arange(self.ny) + 0.5) * self.dy)

    def points(self) -> np.ndarray:
        """All cell centers as (ny*nx, 2), in the order of ``values.ravel()``."""
        x1, x2 = self.cell_centers()
        g1, g2 = np.meshgrid(x1, x2)
        return np.column_stack([g1.ravel(), g2.ravel()])

    def save(self, path: str) -> None:
        path = os.path.expanduser(path)
        with open(path, 'w') as f:
            f.write(f'{self.nx} {self.ny} {self.domain.l1!r} {self.domain.l2!r}\n')
            np.savetxt(f, self.values, fmt='%.17g')

    @classmethod
    def load(cls, path: str) -> 'FieldGrid':
        path = os.path.expanduser(path)
        with open(path) as f:
            header = f.readline().split()
            body = f.read().split()
        if len(header) != 4:
            raise GridFormatError(f'{path}: header must be "nx ny l1 l2", got {header}')
        try:
            nx, ny = int(header[0]), int(header[1])
            domain = DomainSpec(float(header[2]), float(header[3]))
            values = np.array([float(v) for v in body])
        except ValueError as e:
            raise GridFormatError(f'{path}: {e}')
        if values.size != nx * ny:
            raise GridFormatError(f'{path}: expected {nx * ny} values, found {values.size}')
        return cls(nx, ny, domain, values)


@dataclass
class VelocityField:
    """Face-normal pore velocities: vx on x-faces (ny, nx+1), vy on y-faces (ny+1, nx)."""
    vx: np.ndarray
    vy: np.ndarray
    domain: DomainSpec

    def __post_init__(self):
        self.vx = np.asarray(self.vx, dtype=np.float64)
        self.vy = np.asarray(self.vy, dtype=np.float64)
        ny, nx1 = self.vx.shape
        if self.vy.shape != (ny + 1, nx1 - 1):
            raise GridFormatError(f'face arrays {self.vx.shape} and {self.vy.shape} do not match')

    @property
    def nx(self) -> int:
        return self.vx.shape[1] - 1

    @property
    def ny(self) -> int:
        return self.vx.shape[0]

    def divergence(self) -> np.ndarray:
        """Net outflow (velocity times face length) of every cell, shape (ny, nx)."""
        dx, dy = self.domain.l1 / self.nx, self.domain.l2 / self.ny
        return (self.vx[:, 1:] - self.vx[:, :-1]) * dy + (self.vy[1:, :] - self.vy[:-1, :]) * dx

    def cell_vx(self) -> np.ndarray:
        return 0.5 * (self.vx[:, 1:] + self.vx[:, :-1])

    def cell_vy(self) -> np.ndarray:
        return 0.5 * (self.vy[1:, :] + self.vy[:-1, :])
