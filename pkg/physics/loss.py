"""Composite losses of the data-driven, PINN-Darcy and MPINN methods.

Every term is a weighted mean of squared residuals. Terms are recorded in a
fixed order and summed left to right, so the returned total equals the sum of
the returned term values.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.tape import Node, Tape
from network.mlp import (BoundNetwork, EvalBundle, MlpArchitecture, ParameterVector, bind,
                         forward, forward_with_spatial, log_transform_bundle, param_count)
from physics.parameters import (BoundarySpec, DomainSpec, LossWeights, MeasurementSet,
                                PhysicalParams, ResidualPointSet)
from physics.residuals import (LossAssemblyError, NeumannSide, ade_residual, darcy_residual,
                               neumann_residuals)

METHODS = ('data_driven', 'pinn_darcy', 'mpinn')

TERM_ORDER = ('data_K', 'data_h', 'data_C', 'pde_h', 'pde_C',
              'neumann1_h', 'neumann2_h', 'dirichlet_h',
              'neumann1_C', 'neumann2_C', 'dirichlet_C')

REQUIRED_VARIABLES = {
    'pinn_darcy': ('K', 'h'),
    'mpinn': ('K', 'h', 'C'),
}


@dataclass(frozen=True)
class PhysicsContext:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    domain: DomainSpec = field(default_factory=DomainSpec)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    delta: float = 1e-8
    dispersion_mode: str = 'full'
    log_k: bool = False   # the K network outputs log K


Nets = Mapping[str, Union[ParameterVector, BoundNetwork]]


def active_variables(method: str, nets: Nets) -> Tuple[str, ...]:
    if method not in METHODS:
        raise LossAssemblyError(f'unknown method {method!r}')
    if method == 'data_driven':
        variables = tuple(v for v in ('K', 'h', 'C') if v in nets)
        if not variables:
            raise LossAssemblyError('data_driven needs at least one network')
        return variables
    missing = [v for v in REQUIRED_VARIABLES[method] if v not in nets]
    if missing:
        raise LossAssemblyError(f'{method} needs networks for {missing}')
    return REQUIRED_VARIABLES[method]


def _mean_square(tape: Tape, residual: Node, weight: float) -> Node:
    return tape.scale(tape.mean(tape.square(residual)), weight)


class _Evaluator:
    """Caches spatial bundles per (variable, point set) within one tape."""

    def __init__(self, nets: Dict[str, BoundNetwork], tape: Tape, context: PhysicsContext):
        self.nets = nets
        self.tape = tape
        self.context = context
        self.cache: Dict[Tuple[str, str], EvalBundle] = {}

    def bundle(self, variable: str, set_name: str, points: np.ndarray) -> EvalBundle:
        key = (variable, set_name)
        if key not in self.cache:
            b = forward_with_spatial(self.nets[variable], points, self.tape)
            if variable == 'K' and self.context.log_k:
                b = log_transform_bundle(b)
            self.cache[key] = b
        return self.cache[key]


def assemble_loss_terms(method: str, nets: Nets, data: Mapping[str, MeasurementSet],
                        pts: Optional[ResidualPointSet], w: LossWeights, tape: Tape,
                        context: Optional[PhysicsContext] = None,
                        batch: Optional[Mapping[str, np.ndarray]] = None
                        ) -> Tuple[Node, 'OrderedDict[str, Node]']:
    """Build the loss on ``tape``; returns the total and the non-skipped terms in order.

    ``batch`` optionally maps a variable to indices of its measurements; residual
    terms always use their full point sets.
    """
    context = context or PhysicsContext()
    pts = pts if pts is not None else ResidualPointSet()
    variables = active_variables(method, nets)
    bound = {v: n if isinstance(n, BoundNetwork) else bind(n, tape)
             for v, n in nets.items() if v in variables}
    terms: 'OrderedDict[str, Node]' = OrderedDict()

    for v in variables:
        measurements = data.get(v)
        if measurements is None or len(measurements) == 0:
            raise LossAssemblyError(f'{method}: no measurements of {v}')
        if batch is not None and v in batch:
            measurements = measurements.subset(batch[v])
        targets = measurements.values
        if v == 'K' and context.log_k:
            targets = np.log(targets)
        predicted = forward(bound[v], measurements.points, tape)
        residual = predicted - tape.constant(targets.reshape(-1, 1))
        terms['data_' + v] = _mean_square(tape, residual, 1.0)

    if method != 'data_driven':
        ev = _Evaluator(bound, tape, context)
        params, bc, l2 = context.params, context.boundary, context.domain.l2
        flow = []
        transport = []
        if len(pts.interior_h):
            flow.append(('pde_h', w.omega_f, lambda: darcy_residual(
                ev.bundle('K', 'interior_h', pts.interior_h),
                ev.bundle('h', 'interior_h', pts.interior_h))))
        if len(pts.n1_h):
            flow.append(('neumann1_h', w.omega_b, lambda: neumann_residuals(
                ev.bundle('K', 'n1_h', pts.n1_h), ev.bundle('h', 'n1_h', pts.n1_h), None,
                NeumannSide.H_INLET, bc)))
        if len(pts.n2_h):
            flow.append(('neumann2_h', w.omega_b, lambda: neumann_residuals(
                ev.bundle('K', 'n2_h', pts.n2_h), ev.bundle('h', 'n2_h', pts.n2_h), None,
                NeumannSide.H_LATERAL, bc)))
        if len(pts.b_h):
            flow.append(('dirichlet_h', w.omega_b,
                         lambda: forward(bound['h'], pts.b_h, tape) - bc.h2))
        if method == 'mpinn':
            if len(pts.interior_c):
                transport.append(('pde_C', w.omega_f, lambda: ade_residual(
                    ev.bundle('K', 'interior_c', pts.interior_c),
                    ev.bundle('h', 'interior_c', pts.interior_c),
                    ev.bundle('C', 'interior_c', pts.interior_c),
                    params, context.dispersion_mode, context.delta)))
            if len(pts.n1_c):
                transport.append(('neumann1_C', w.omega_b, lambda: neumann_residuals(
                    None, None, ev.bundle('C', 'n1_c', pts.n1_c), NeumannSide.C_OUTLET, bc)))
            if len(pts.n2_c):
                transport.append(('neumann2_C', w.omega_b, lambda: neumann_residuals(
                    None, None, ev.bundle('C', 'n2_c', pts.n2_c), NeumannSide.C_LATERAL, bc)))
            if len(pts.b_c):
                inlet = bc.inlet_concentration(pts.b_c[:, 1], l2).reshape(-1, 1)
                transport.append(('dirichlet_C', w.omega_b, lambda: (
                    forward(bound['C'], pts.b_c, tape) - tape.constant(inlet))))
        for name, weight, build in flow + transport:
            # zero-weighted terms are left out of the tape entirely
            if weight == 0.0:
                continue
            terms[name] = _mean_square(tape, build(), weight)

    ordered = OrderedDict((name, terms[name]) for name in TERM_ORDER if name in terms)
    total = None
    for node in ordered.values():
        total = node if total is None else total + node
    return total, ordered


def assemble_loss(method: str, nets: Nets, data: Mapping[str, MeasurementSet],
                  pts: Optional[ResidualPointSet], w: LossWeights, tape: Tape,
                  context: Optional[PhysicsContext] = None) -> Node:
    total, _ = assemble_loss_terms(method, nets, data, pts, w, tape, context)
    return total


class LossProblem:
    """The loss of one method as a function of the concatenated parameter vector.

    Calling the problem evaluates loss, flat gradient and per-term values on a
    fresh tape.
    """

    def __init__(self, method: str, archs: Mapping[str, MlpArchitecture],
                 data: Mapping[str, MeasurementSet], points: Optional[ResidualPointSet] = None,
                 weights: LossWeights = LossWeights(), context: Optional[PhysicsContext] = None,
                 variables: Optional[Sequence[str]] = None):
        self.method = method
        self.variables = tuple(variables) if variables else active_variables(method, archs)
        if method != 'data_driven' and self.variables != REQUIRED_VARIABLES[method]:
            raise LossAssemblyError(f'{method} trains {REQUIRED_VARIABLES[method]}')
        self.archs = {v: archs[v] for v in self.variables}
        self.data = dict(data)
        self.points = points if points is not None else ResidualPointSet()
        self.weights = weights
        self.context = context or PhysicsContext()
        self.sizes = [param_count(self.archs[v]) for v in self.variables]

    @property
    def n_params(self) -> int:
        return sum(self.sizes)

    def split(self, x: np.ndarray) -> Dict[str, ParameterVector]:
        x = np.asarray(x, dtype=np.float64)
        if x.size != self.n_params:
            raise LossAssemblyError(f'expected {self.n_params} parameters, got {x.size}')
        out = {}
        offset = 0
        for v, size in zip(self.variables, self.sizes):
            out[v] = ParameterVector(self.archs[v], x[offset:offset + size].copy())
            offset += size
        return out

    def join(self, nets: Mapping[str, ParameterVector]) -> np.ndarray:
        return np.concatenate([nets[v].flat for v in self.variables])

    def data_sizes(self) -> Dict[str, int]:
        return {v: len(self.data[v]) for v in self.variables if v in self.data}

    def is_decoupled(self) -> bool:
        """True when no physics term survives, so each network only sees its own data."""
        if self.method == 'data_driven':
            return True
        pts, w = self.points, self.weights
        flow = w.omega_f > 0 and len(pts.interior_h) or w.omega_b > 0 and any(
            len(p) for p in (pts.n1_h, pts.n2_h, pts.b_h))
        if self.method == 'pinn_darcy':
            return not flow
        transport = w.omega_f > 0 and len(pts.interior_c) or w.omega_b > 0 and any(
            len(p) for p in (pts.n1_c, pts.n2_c, pts.b_c))
        return not (flow or transport)

    def __call__(self, x: np.ndarray, batch: Optional[Mapping[str, np.ndarray]] = None
                 ) -> Tuple[float, np.ndarray, Dict[str, float]]:
        tape = Tape()
        nets = {v: bind(p, tape) for v, p in self.split(x).items()}
        total, terms = assemble_loss_terms(self.method, nets, self.data, self.points,
                                           self.weights, tape, self.context, batch)
        grads = tape.backward(total)
        gradient = np.concatenate([nets[v].flat_gradient(grads) for v in self.variables])
        return float(total.value), gradient, {k: float(t.value) for k, t in terms.items()}


