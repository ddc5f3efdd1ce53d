"""Cell-centered finite-volume solvers for steady Darcy flow and solute transport.

Both solvers work on the grid of the conductivity field. Unknown p of cell
(row j, column i) has index j * nx + i.
"""

from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from harness.logs import logger
from physics.parameters import BoundarySpec, DomainSpec, PhysicalParams
from physics.residuals import dispersion
from refsolver.grid import FieldGrid, GridFormatError, VelocityField
from refsolver.linear_solve import linear_solve


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


class _Assembler:
    """Collects coo triplets and a right-hand side for an (n x n) system."""

    def __init__(self, nx: int, ny: int):
        self.nx, self.ny = nx, ny
        self.index = np.arange(nx * ny).reshape(ny, nx)
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(nx * ny)

    def add(self, rows, cols, vals) -> None:
        rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())

    def couple(self, a, b, g) -> None:
        """Symmetric exchange g * (u_a - u_b) between cells a and b."""
        self.add(a, a, g)
        self.add(b, b, g)
        self.add(a, b, -g)
        self.add(b, a, -g)

    def upwind(self, a, b, flux) -> None:
        """Advective flux ``flux`` from a to b (negative: from b to a), upwinded."""
        out_a, in_a = np.maximum(flux, 0.0), np.minimum(flux, 0.0)
        self.add(a, a, out_a)
        self.add(a, b, in_a)
        self.add(b, b, -in_a)
        self.add(b, a, -out_a)

    def matrix(self) -> sp.csr_matrix:
        n = self.nx * self.ny
        return sp.coo_matrix((np.concatenate(self.vals),
                              (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=(n, n)).tocsr()


def _check_grid(k: FieldGrid, domain: DomainSpec) -> None:
    if not np.all(k.values > 0.0):
        raise ValueError('conductivity must be strictly positive')
    if not (np.isclose(k.domain.l1, domain.l1) and np.isclose(k.domain.l2, domain.l2)):
        raise GridFormatError(f'grid domain {k.domain} differs from {domain}')


def solve_darcy(k: FieldGrid, domain: DomainSpec, bc: BoundarySpec,
                params: PhysicalParams = PhysicalParams(),
                tol: float = 1e-10) -> Tuple[FieldGrid, VelocityField]:
    """Head and pore velocity of -div(K grad h) = 0 with inflow q at x1 = 0,
    fixed head H2 at x1 = L1 and no flow across x2 = 0, L2."""
    _check_grid(k, domain)
    nx, ny, dx, dy = k.nx, k.ny, k.dx, k.dy
    kv = k.values
    asm = _Assembler(nx, ny)
    idx = asm.index

    tx = _harmonic(kv[:, :-1], kv[:, 1:]) * dy / dx
    ty = _harmonic(kv[:-1, :], kv[1:, :]) * dx / dy
    asm.couple(idx[:, :-1], idx[:, 1:], tx)
    asm.couple(idx[:-1, :], idx[1:, :], ty)
    # outlet: half-cell distance to the fixed head
    t_out = 2.0 * kv[:, -1] * dy / dx
    asm.add(idx[:, -1], idx[:, -1], t_out)
    asm.rhs[idx[:, -1]] += t_out * bc.h2
    asm.rhs[idx[:, 0]] += bc.q * dy

    logger.debug(f'solve_darcy: {nx}x{ny} grid')
    h = linear_solve(asm.matrix(), asm.rhs, tol=tol).reshape(ny, nx)

    # Darcy flux per face, divided by face length and porosity
    vx = np.zeros((ny, nx + 1))
    vx[:, 0] = bc.q
    vx[:, 1:-1] = tx * (h[:, :-1] - h[:, 1:]) / dy
    vx[:, -1] = t_out * (h[:, -1] - bc.h2) / dy
    vy = np.zeros((ny + 1, nx))
    vy[1:-1, :] = ty * (h[:-1, :] - h[1:, :]) / dx
    return FieldGrid.like(k, h), VelocityField(vx / params.phi, vy / params.phi, domain)


def _face_speeds(v: VelocityField) -> Tuple[np.ndarray, np.ndarray]:
    """|v| on x-faces (ny, nx+1) and y-faces (ny+1, nx) from face-normal components."""
    cvx, cvy = v.cell_vx(), v.cell_vy()
    # transverse component averaged from the neighbouring cells, boundary faces take the edge cell
    vy_on_x = np.concatenate([cvy[:, :1], 0.5 * (cvy[:, :-1] + cvy[:, 1:]), cvy[:, -1:]], axis=1)
    vx_on_y = np.concatenate([cvx[:1, :], 0.5 * (cvx[:-1, :] + cvx[1:, :]), cvx[-1:, :]], axis=0)
    return np.hypot(v.vx, vy_on_x), np.hypot(vx_on_y, v.vy)


def solve_ade(v: VelocityField, k: FieldGrid, domain: DomainSpec, bc: BoundarySpec,
              params: PhysicalParams = PhysicalParams(), tol: float = 1e-10,
              outlet_concentration: Optional[float] = None) -> FieldGrid:
    """Concentration of v . grad C = div(D grad C).

    Inlet C = C0(x2) at x1 = 0; zero gradient elsewhere, or a fixed outlet
    concentration at x1 = L1 when ``outlet_concentration`` is given.
    """
    _check_grid(k, domain)
    nx, ny, dx, dy = k.nx, k.ny, k.dx, k.dy
    if v.vx.shape != (ny, nx + 1):
        raise GridFormatError(f'velocity field {v.vx.shape} does not match the {nx}x{ny} grid')
    div = v.divergence()
    scale = max(np.abs(v.vx).max() * dy, np.abs(v.vy).max() * dx, 1e-300)
    if np.abs(div).max() > 1e-8 * scale:
        raise ValueError(f'velocity field is not divergence-free (max {np.abs(div).max():.3e})')

    speed_x, speed_y = _face_speeds(v)
    d11, _ = dispersion(speed_x, params)
    _, d22 = dispersion(speed_y, params)
    asm = _Assembler(nx, ny)
    idx = asm.index

    # interior faces: central dispersion and upwind advection
    asm.couple(idx[:, :-1], idx[:, 1:], d11[:, 1:-1] * dy / dx)
    asm.couple(idx[:-1, :], idx[1:, :], d22[1:-1, :] * dx / dy)
    asm.upwind(idx[:, :-1], idx[:, 1:], v.vx[:, 1:-1] * dy)
    asm.upwind(idx[:-1, :], idx[1:, :], v.vy[1:-1, :] * dx)

    # inlet: Dirichlet C0 at half a cell
    _, x2 = k.cell_centers()
    c_in = bc.inlet_concentration(x2, domain.l2)
    first = idx[:, 0]
    g_in = 2.0 * d11[:, 0] * dy / dx
    f_in = v.vx[:, 0] * dy
    asm.add(first, first, g_in + np.maximum(-f_in, 0.0))
    asm.rhs[first] += (g_in + np.maximum(f_in, 0.0)) * c_in

    last = idx[:, -1]
    f_out = v.vx[:, -1] * dy
    if outlet_concentration is None:
        # zero gradient: the outflow carries the edge cell value
        asm.add(last, last, f_out)
    else:
        g_out = 2.0 * d11[:, -1] * dy / dx
        asm.add(last, last, g_out + np.maximum(f_out, 0.0))
        asm.rhs[last] += (g_out + np.maximum(-f_out, 0.0)) * outlet_concentration

    logger.debug(f'solve_ade: {nx}x{ny} grid')
    c = linear_solve(asm.matrix(), asm.rhs, tol=tol)
    return FieldGrid.like(k, c)
