"""Pointwise residuals of steady Darcy flow and advection-dispersion.

All operators take ``EvalBundle`` channels and record onto the bundles' tape,
so the residuals can be differentiated with respect to network weights.
"""

from enum import Enum
from typing import Optional, Tuple

from autodiff.tape import Node, ShapeError
from network.mlp import EvalBundle
from physics.parameters import BoundarySpec, LossAssemblyError, PhysicalParams



class NeumannSide(Enum):
    H_INLET = 'h_inlet'        # -K dh/dx1 = q on x1 = 0
    H_LATERAL = 'h_lateral'    # -K dh/dx2 = 0 on x2 = 0, L2
    C_OUTLET = 'c_outlet'      # dC/dx1 = 0 on x1 = L1
    C_LATERAL = 'c_lateral'    # dC/dx2 = 0 on x2 = 0, L2


def _check_batches(*bundles: Optional[EvalBundle]) -> None:
    sizes = {b.batch_size for b in bundles if b is not None}
    if len(sizes) > 1:
        raise ShapeError(f'bundles evaluated on different batch sizes {sorted(sizes)}')


def darcy_residual(k_eval: EvalBundle, h_eval: EvalBundle) -> Node:
    """f^h = div(K grad h) expanded with the product rule."""
    _check_batches(k_eval, h_eval)
    return (k_eval.d1 * h_eval.d1 + k_eval.d2 * h_eval.d2
            + k_eval.u * (h_eval.d11 + h_eval.d22))


def velocity_norm_and_gradient(k_eval: EvalBundle, h_eval: EvalBundle, params: PhysicalParams,
                               delta: float = 1e-8) -> Tuple[Node, Node, Node]:
    """|v| = (K / phi) * sqrt(h1^2 + h2^2 + delta^2) and its spatial derivatives."""
    if delta <= 0.0:
        raise ValueError(f'delta must be positive, got {delta}')
    _check_batches(k_eval, h_eval)
    tape = h_eval.u.tape
    h1, h2 = h_eval.d1, h_eval.d2
    s = tape.sqrt(tape.square(h1) + tape.square(h2) + delta * delta)
    # d/dx_k sqrt(...) = (h1 h1k + h2 h2k) / s
    ds1 = (h1 * h_eval.d11 + h2 * h_eval.d12) / s
    ds2 = (h1 * h_eval.d12 + h2 * h_eval.d22) / s
    inv_phi = 1.0 / params.phi
    norm = (k_eval.u * s) * inv_phi
    dnorm1 = (k_eval.d1 * s + k_eval.u * ds1) * inv_phi
    dnorm2 = (k_eval.d2 * s + k_eval.u * ds2) * inv_phi
    return norm, dnorm1, dnorm2


def dispersion(v_norm, params: PhysicalParams):
    """Diagonal dispersion D11, D22; accepts numpy arrays or tape nodes."""
    molecular = params.molecular
    return v_norm * params.alpha_l + molecular, v_norm * params.alpha_t + molecular


def ade_residual(k_eval: EvalBundle, h_eval: EvalBundle, c_eval: EvalBundle,
                 params: PhysicalParams, mode: str = 'full', delta: float = 1e-8) -> Node:
    """f^C = v . grad C - div(D grad C) with v = -(K / phi) grad h.

    mode='frozen' leaves out the gradient of D.
    """
    if mode not in ('full', 'frozen'):
        raise ValueError(f'unknown dispersion mode {mode!r}')
    _check_batches(k_eval, h_eval, c_eval)
    norm, dnorm1, dnorm2 = velocity_norm_and_gradient(k_eval, h_eval, params, delta)
    d11, d22 = dispersion(norm, params)
    advection = (k_eval.u * (h_eval.d1 * c_eval.d1 + h_eval.d2 * c_eval.d2)) * (-1.0 / params.phi)
    spreading = d11 * c_eval.d11 + d22 * c_eval.d22
    if mode == 'full':
        spreading = spreading + (dnorm1 * c_eval.d1) * params.alpha_l \
            + (dnorm2 * c_eval.d2) * params.alpha_t
    return advection - spreading


def neumann_residuals(k_eval: Optional[EvalBundle], h_eval: Optional[EvalBundle],
                      c_eval: Optional[EvalBundle], side, bc: BoundarySpec) -> Node:
    try:
        side = NeumannSide(side)
    except ValueError:
        raise LossAssemblyError(f'unknown boundary segment {side!r}')
    _check_batches(k_eval, h_eval, c_eval)
    if side is NeumannSide.H_INLET:
        return -(k_eval.u * h_eval.d1) - bc.q
    if side is NeumannSide.H_LATERAL:
        return -(k_eval.u * h_eval.d2)
    if side is NeumannSide.C_OUTLET:
        return c_eval.d1
    return c_eval.d2
