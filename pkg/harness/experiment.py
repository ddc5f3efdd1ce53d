"""Reference generation, method comparison runs and sweeps.

Outputs of one experiment (all under ``[Experiment] output_dir``):
    reference/{K,h,C}.txt        reference fields (FieldGrid format)
    results.csv                  one row per (method, seed) plus mean/std rows
    report.json                  per-seed errors, aggregates, wall times, config echo
    networks/<method>_seed<s>_<var>.bin
    histories/<method>_seed<s>.csv
"""

import functools
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from fields.conductivity import (EmbeddingError, GrfSpec, analytic_k_grid, lognormal_k,
                                 sample_grf)
from harness.analysis import optimal_size
from harness.config import (ConfigError, ExperimentConfig, apply_axis, normalize_axis,
                            with_overrides)
from harness.logs import logger
from harness.metrics import relative_error, rooted
from harness.sampling import select_measurements, select_residual_points
from network.mlp import ParameterVector, param_count, predict
from optimize.report import TrainingAbortedError, TrainReport
from optimize.training import (SeedResult, TrainingProblem, TrainingStrategy, final_networks,
                               replicate, train)
from physics.loss import PhysicsContext
from physics.parameters import MeasurementSet, ResidualPointSet
from physics.residuals import LossAssemblyError
from refsolver.finite_volume import solve_ade, solve_darcy
from refsolver.grid import FieldGrid
from refsolver.linear_solve import SolverError

CODE_VERSION = '1.0.0'

CSV_COLUMNS = ['experiment', 'method', 'field', 'axis_value', 'seed',
               'eps_K', 'eps_h', 'eps_C', 'eps_K_rooted', 'eps_h_rooted', 'eps_C_rooted',
               'final_loss', 'iters', 'wall_time_s', 'architecture', 'n_params', 'status']

METRICS = ['eps_K', 'eps_h', 'eps_C', 'eps_K_rooted', 'eps_h_rooted', 'eps_C_rooted',
           'final_loss', 'iters', 'wall_time_s']

# failures of one experiment that a sweep records and moves past
RUN_FAILURES = (SolverError, EmbeddingError, TrainingAbortedError, LossAssemblyError,
                FloatingPointError)


@dataclass
class ReferenceFields:
    k: FieldGrid
    h: FieldGrid
    c: FieldGrid

    def grids(self) -> Dict[str, FieldGrid]:
        return {'K': self.k, 'h': self.h, 'C': self.c}

    def save(self, directory: str) -> None:
        directory = os.path.expanduser(directory)
        os.makedirs(directory, exist_ok=True)
        for name, grid in self.grids().items():
            grid.save(os.path.join(directory, f'{name}.txt'))

    @classmethod
    def load(cls, directory: str) -> 'ReferenceFields':
        directory = os.path.expanduser(directory)
        return cls(*(FieldGrid.load(os.path.join(directory, f'{name}.txt'))
                     for name in ('K', 'h', 'C')))


def build_conductivity(cfg: ExperimentConfig) -> FieldGrid:
    f = cfg.field
    if f.source == 'analytic':
        return analytic_k_grid(f.nx, f.ny, cfg.domain)
    if f.source == 'grf':
        spec = GrfSpec(f.correlation_length, f.sigma2, f.seed, f.covariance_form)
        return lognormal_k(sample_grf(f.nx, f.ny, cfg.domain, spec))
    return FieldGrid.load(os.path.join(os.path.expanduser(f.input_dir), 'K.txt'))


def build_reference(cfg: ExperimentConfig) -> ReferenceFields:
    """Reference K with the head and concentration the finite-volume solvers produce for it."""
    f = cfg.field
    if f.source == 'file':
        directory = os.path.expanduser(f.input_dir)
        if all(os.path.isfile(os.path.join(directory, f'{n}.txt')) for n in ('K', 'h', 'C')):
            logger.info(f'Loading reference fields from {directory}')
            return ReferenceFields.load(directory)
    k = build_conductivity(cfg)
    logger.info(f'Solving reference flow and transport on {k.nx}x{k.ny} cells ({f.label})')
    h, v = solve_darcy(k, cfg.domain, cfg.boundary, cfg.physics)
    c = solve_ade(v, k, cfg.domain, cfg.boundary, cfg.physics)
    return ReferenceFields(k, h, c)


def generate(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> ReferenceFields:
    """Build the reference fields and write them to ``<out>/reference``."""
    out_dir = out_dir or cfg.experiment.output_dir
    ref = build_reference(cfg)
    ref.save(os.path.join(out_dir, 'reference'))
    logger.info(f'Reference fields written to {os.path.join(out_dir, "reference")}')
    return ref


def sample_data(cfg: ExperimentConfig, ref: ReferenceFields) -> Dict[str, MeasurementSet]:
    d = cfg.data
    data = {
        'K': select_measurements(ref.k, d.n_k, d.measurement_seed, d.layout, 'K'),
        # wells measure K and h at the same locations
        'h': select_measurements(ref.h, d.n_h, d.measurement_seed, d.layout, 'h'),
    }
    if d.n_c > 0:
        data['C'] = select_measurements(ref.c, d.n_c, d.measurement_seed + 1, d.layout, 'C')
    return data


def sample_points(cfg: ExperimentConfig) -> ResidualPointSet:
    d = cfg.data
    return select_residual_points(
        cfg.domain, d.n_f_h, d.n_f_c,
        n_boundary_h=d.n_boundary if d.n_f_h > 0 else 0,
        n_boundary_c=d.n_boundary if d.n_f_c > 0 else 0,
        seed=d.residual_seed)


def method_strategy(cfg: ExperimentConfig, method: str) -> TrainingStrategy:
    t = cfg.training
    if method == 'data_driven':
        kind = 'data_only'
    elif method == 'pinn_darcy' or cfg.data.n_c == 0:
        # MPINN without concentration data is PINN-Darcy
        kind = 'pinn_darcy'
    else:
        kind = 'mpinn_' + t.mpinn_training
    return TrainingStrategy(kind, t.optimizer, t.hybrid_switch_loss)


@dataclass
class SeedTask:
    """Everything one seed of one method needs; picklable for worker processes."""
    cfg: ExperimentConfig
    method: str
    reference: ReferenceFields
    data: Dict[str, MeasurementSet]
    points: ResidualPointSet

    def problem(self) -> TrainingProblem:
        cfg = self.cfg
        context = PhysicsContext(cfg.physics, cfg.domain, cfg.boundary, cfg.loss.velocity_delta,
                                 cfg.loss.dispersion_mode, cfg.networks.log_k)
        return TrainingProblem(cfg.networks.architectures(), self.data, self.points,
                               cfg.loss.weights, context, tuple(self.data))


def estimate_errors(ref: ReferenceFields, nets: Dict[str, ParameterVector],
                    log_k: bool = False) -> Dict[str, float]:
    errors = {}
    for variable, grid in ref.grids().items():
        if variable in nets:
            values = predict(nets[variable], grid.points(), log_output=log_k and variable == 'K')
            eps = relative_error(grid, values)
        else:
            eps = float('nan')
        errors[f'eps_{variable}'] = eps
        errors[f'eps_{variable}_rooted'] = rooted(eps)
    return errors


def final_loss(reports: Sequence[TrainReport]) -> float:
    """Sum of the final losses of the reports whose networks were not retrained later."""
    covered = set()
    total = 0.0
    for report in reversed(reports):
        variables = set(report.final_params or {})
        if variables - covered:
            total += report.final_loss
        covered |= variables
    return total


def train_seed(task: SeedTask, seed: int) -> SeedResult:
    cfg = task.cfg
    strategy = method_strategy(cfg, task.method)
    reports = train(strategy, task.problem(), seed, cfg.adam, cfg.lbfgs, cfg.training.progress)
    nets = final_networks(reports)
    metrics = estimate_errors(task.reference, nets, cfg.networks.log_k)
    metrics['final_loss'] = final_loss(reports)
    metrics['iters'] = float(sum(r.iterations_used for r in reports))
    metrics['wall_time_s'] = float(sum(r.wall_time_s for r in reports))
    return SeedResult(seed, metrics, {'reports': reports,
                                      'networks': {v: p.flat for v, p in nets.items()}})


@dataclass
class ExperimentReport:
    config_text: str
    rows: List[Dict] = field(default_factory=list)
    aggregates: List[Dict] = field(default_factory=list)
    histories: Dict[Tuple[str, int], pd.DataFrame] = field(default_factory=dict)
    networks: Dict[Tuple[str, int], Dict[str, ParameterVector]] = field(default_factory=dict)
    failures: Dict[str, Dict[int, str]] = field(default_factory=dict)
    version: str = CODE_VERSION

    @property
    def partial(self) -> bool:
        return any(self.failures.values())

    def frame(self, wall_time: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows + self.aggregates, columns=CSV_COLUMNS)
        if not wall_time:
            frame['wall_time_s'] = None
        return frame

    def to_json(self) -> Dict:
        return {
            'version': self.version,
            'config': self.config_text,
            'per_seed': self.rows,
            'aggregates': self.aggregates,
            'failures': self.failures,
            'partial': self.partial,
        }

    def write(self, out_dir: str, wall_time: bool = False) -> None:
        out_dir = os.path.expanduser(out_dir)
        os.makedirs(os.path.join(out_dir, 'networks'), exist_ok=True)
        os.makedirs(os.path.join(out_dir, 'histories'), exist_ok=True)
        self.frame(wall_time).to_csv(os.path.join(out_dir, 'results.csv'), index=False,
                                     float_format='%.10g')
        with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8') as f:
            json.dump(self.to_json(), f, default=str, indent=2)
        for (method, seed), nets in self.networks.items():
            for variable, params in nets.items():
                params.save(os.path.join(out_dir, 'networks', f'{method}_seed{seed}_{variable}.bin'))
        for (method, seed), history in self.histories.items():
            history.to_csv(os.path.join(out_dir, 'histories', f'{method}_seed{seed}.csv'),
                           index=False, float_format='%.10g')


def _row(cfg: ExperimentConfig, method: str, axis_value: str, seed, metrics: Dict[str, float],
         status: str) -> Dict:
    k_arch = cfg.networks.architectures()['K']
    row = {'experiment': cfg.experiment.name, 'method': method, 'field': cfg.field.label,
           'axis_value': axis_value, 'seed': seed, 'architecture': k_arch.label,
           'n_params': param_count(k_arch), 'status': status}
    for key in METRICS:
        row[key] = metrics.get(key, float('nan'))
    return row


def run_experiment(cfg: ExperimentConfig, axis_value: str = '',
                   reference: Optional[ReferenceFields] = None,
                   write: bool = True) -> ExperimentReport:
    """Train every configured method over all seeds and evaluate the errors on the full grid."""
    e = cfg.experiment
    ref = reference or build_reference(cfg)
    if write:
        ref.save(os.path.join(e.output_dir, 'reference'))
    data = sample_data(cfg, ref)
    points = sample_points(cfg)
    report = ExperimentReport(cfg.to_ini())
    archs = cfg.networks.architectures()

    for method in e.methods:
        logger.info(f'{e.name}: {method} over seeds {list(e.seeds)}')
        task = SeedTask(cfg, method, ref, data, points)
        try:
            summary = replicate(functools.partial(train_seed, task), seeds=e.seeds,
                                threads=e.threads)
        except TrainingAbortedError as err:
            logger.error(f'{method}: every seed aborted ({err})')
            report.failures[method] = {s: str(err) for s in e.seeds}
            report.rows += [_row(cfg, method, axis_value, s, {}, 'failed') for s in e.seeds]
            continue
        report.failures[method] = dict(summary.failures)
        by_seed = {r.seed: r for r in summary.results}
        for seed in e.seeds:
            result = by_seed.get(seed)
            if result is None:
                report.rows.append(_row(cfg, method, axis_value, seed, {}, 'failed'))
                continue
            report.rows.append(_row(cfg, method, axis_value, seed, result.metrics, 'ok'))
            report.networks[(method, seed)] = {
                v: ParameterVector(archs[v], flat) for v, flat in result.extras['networks'].items()}
            rows = [row for r in result.extras['reports'] for row in r.history_rows()]
            report.histories[(method, seed)] = pd.DataFrame(rows)
        status = 'partial' if summary.partial else 'ok'
        report.aggregates.append(_row(cfg, method, axis_value, 'mean', summary.mean, status))
        report.aggregates.append(_row(cfg, method, axis_value, 'std', summary.std, status))
        logger.info(f'{method}: mean eps_K {summary.mean["eps_K"]:.4g}, '
                    f'eps_h {summary.mean["eps_h"]:.4g}, eps_C {summary.mean["eps_C"]:.4g}')

    if write:
        report.write(e.output_dir, e.csv_wall_time)
        logger.info(f'Results written to {e.output_dir}')
    return report


def sweep(cfg: ExperimentConfig, axis: Optional[str] = None,
          values: Optional[Sequence[str]] = None) -> Tuple[List[ExperimentReport], pd.DataFrame]:
    """One experiment per axis value; writes ``sweep.csv`` with every row of every cell."""
    axis = normalize_axis(axis or cfg.sweep.axis)
    values = [str(v) for v in (values if values is not None else cfg.sweep.values)]
    if not axis or not values:
        raise ConfigError('sweep needs an axis and at least one value')
    out_dir = cfg.experiment.output_dir
    # every value is checked before the first cell trains
    cells = [(value, with_overrides(apply_axis(cfg, axis, value),
                                    output_dir=os.path.join(out_dir, f'{axis}_{value}')))
             for value in values]
    ref = build_reference(cfg)
    ref.save(os.path.join(out_dir, 'reference'))

    reports, frames = [], []
    for value, cell in tqdm(cells, desc=f'Sweep {axis}'):
        try:
            report = run_experiment(cell, axis_value=value, reference=ref)
        except RUN_FAILURES as err:
            logger.exception(f'sweep {axis}={value} failed: {err}')
            report = ExperimentReport(cell.to_ini())
            report.rows = [_row(cell, m, value, s, {}, 'failed')
                           for m in cell.experiment.methods for s in cell.experiment.seeds]
            report.failures = {m: {s: str(err) for s in cell.experiment.seeds}
                               for m in cell.experiment.methods}
        reports.append(report)
        frames.append(report.frame(cfg.experiment.csv_wall_time))

    combined = pd.concat(frames, ignore_index=True)
    os.makedirs(out_dir, exist_ok=True)
    combined.to_csv(os.path.join(out_dir, 'sweep.csv'), index=False, float_format='%.10g')
    if axis == 'm_h':
        summary = optimal_size(combined)
        summary['correlation_length'] = cfg.field.correlation_length
        summary['field'] = cfg.field.label
        with open(os.path.join(out_dir, 'optimal_size.json'), 'w', encoding='utf-8') as f:
            json.dump(summary, f, default=str, indent=2)
    return reports, combined


def evaluate_saved(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> pd.DataFrame:
    """Errors of the networks saved under ``<out>/networks`` against ``<out>/reference``."""
    out_dir = os.path.expanduser(out_dir or cfg.experiment.output_dir)
    ref = ReferenceFields.load(os.path.join(out_dir, 'reference'))
    net_dir = os.path.join(out_dir, 'networks')
    if not os.path.isdir(net_dir):
        raise FileNotFoundError(f'no saved networks in {net_dir}')
    rows = []
    for method in cfg.experiment.methods:
        for seed in cfg.experiment.seeds:
            nets = {}
            for variable in ('K', 'h', 'C'):
                path = os.path.join(net_dir, f'{method}_seed{seed}_{variable}.bin')
                if os.path.isfile(path):
                    nets[variable] = ParameterVector.load(path)
            if not nets:
                continue
            metrics = estimate_errors(ref, nets, cfg.networks.log_k)
            rows.append(_row(cfg, method, '', seed, metrics, 'ok'))
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    frame['wall_time_s'] = None
    frame.to_csv(os.path.join(out_dir, 'eval.csv'), index=False, float_format='%.10g')
    return frame
