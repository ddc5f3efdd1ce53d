"""Training strategies built on the minimizers, plus multi-seed replication."""

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from harness.logs import logger
from network.mlp import MlpArchitecture, ParameterVector, init_xavier
from optimize.adam import AdamConfig, adam_minimize
from optimize.lbfgs import LbfgsConfig, lbfgs_minimize
from optimize.report import LossRecord, TrainingAbortedError, TrainReport
from physics.loss import LossProblem, PhysicsContext
from physics.parameters import LossWeights, MeasurementSet, ResidualPointSet

STRATEGY_KINDS = ('data_only', 'pinn_darcy', 'mpinn_simultaneous', 'mpinn_sequential', 'hybrid')
OPTIMIZERS = ('lbfgs', 'adam', 'hybrid')

# offsets of the per-variable network seeds
NETWORK_SEED_OFFSET = {'K': 0, 'h': 1, 'C': 2}


def network_seed(seed: int, variable: str) -> int:
    return seed * 1000 + NETWORK_SEED_OFFSET[variable]


@dataclass(frozen=True)
class TrainingStrategy:
    kind: str
    optimizer: str = 'lbfgs'
    hybrid_switch_loss: float = 5e-4

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f'unknown training strategy {self.kind!r}')
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f'unknown optimizer {self.optimizer!r}')
        if self.hybrid_switch_loss <= 0.0:
            raise ValueError('hybrid_switch_loss must be positive')

    @property
    def effective_optimizer(self) -> str:
        return 'hybrid' if self.kind == 'hybrid' else self.optimizer


@dataclass
class TrainingProblem:
    archs: Dict[str, MlpArchitecture]
    data: Dict[str, MeasurementSet]
    points: ResidualPointSet = field(default_factory=ResidualPointSet)
    weights: LossWeights = field(default_factory=LossWeights)
    context: PhysicsContext = field(default_factory=PhysicsContext)
    # variables trained by data_only
    variables: Tuple[str, ...] = ('K', 'h', 'C')


def _minimize(loss: LossProblem, x0: np.ndarray, optimizer: str, seed: int, adam: AdamConfig,
              lbfgs: LbfgsConfig, switch_loss: float, progress: bool) -> TrainReport:
    if optimizer == 'lbfgs':
        return lbfgs_minimize(loss, x0, lbfgs, progress=progress)
    if optimizer == 'adam':
        return adam_minimize(loss, x0, adam, seed, loss.data_sizes(), progress=progress)
    first = adam_minimize(loss, x0, adam, seed, loss.data_sizes(), stop_loss=switch_loss,
                          progress=progress)
    logger.debug(f'hybrid: switching to L-BFGS after {first.iterations_used} Adam iterations')
    second = lbfgs_minimize(loss, first.final_x, lbfgs, progress=progress)
    offset = first.iterations_used
    history = first.loss_history + [
        LossRecord(r.iteration + offset, r.total, r.terms, r.phase) for r in second.loss_history]
    return TrainReport(final_x=second.final_x, loss_history=history,
                       iterations_used=offset + second.iterations_used,
                       termination_reason=second.termination_reason,
                       wall_time_s=first.wall_time_s + second.wall_time_s)


def _init(loss: LossProblem, seed: int,
          start: Optional[Dict[str, ParameterVector]] = None) -> np.ndarray:
    start = start or {}
    nets = {v: start[v] if v in start else init_xavier(loss.archs[v], network_seed(seed, v))
            for v in loss.variables}
    return loss.join(nets)


def _run(loss: LossProblem, stage: str, seed: int, optimizer: str, adam: AdamConfig,
         lbfgs: LbfgsConfig, switch_loss: float, progress: bool,
         start: Optional[Dict[str, ParameterVector]] = None) -> TrainReport:
    logger.info(f'Training {stage} ({loss.n_params} parameters, optimizer {optimizer})')
    report = _minimize(loss, _init(loss, seed, start), optimizer, seed, adam, lbfgs,
                       switch_loss, progress)
    report.final_params = loss.split(report.final_x)
    report.stage = stage
    logger.info(f'{stage}: {report.termination_reason} after {report.iterations_used} '
                f'iterations, loss {report.final_loss:.4g}')
    return report


def _data_only(problem: TrainingProblem, variables: Sequence[str], run,
               trained: Sequence[str] = ()) -> List[TrainReport]:
    """One data-driven stage per variable; variables in ``trained`` keep their networks."""
    reports = []
    for v in variables:
        if v in trained or v not in problem.data or len(problem.data[v]) == 0:
            continue
        loss = LossProblem('data_driven', {v: problem.archs[v]}, {v: problem.data[v]},
                           context=problem.context)
        reports.append(run(loss, f'data_{v}'))
    if not reports and not trained:
        raise ValueError('data_only: no measurements for any trained variable')
    return reports


def _coupled(method: str, problem: TrainingProblem, run, stage: str,
             start: Optional[Dict[str, ParameterVector]] = None) -> List[TrainReport]:
    loss = LossProblem(method, problem.archs, problem.data, problem.points, problem.weights,
                       problem.context)
    if loss.is_decoupled():
        # no physics term couples the networks: train each on its own data
        logger.info(f'{method} has no active physics terms, training data-only')
        return _data_only(problem, loss.variables, run, trained=tuple(start or ()))
    return [run(loss, stage, start=start)]


def train(strategy: TrainingStrategy, problem: TrainingProblem, seed: int,
          adam: AdamConfig = AdamConfig(), lbfgs: LbfgsConfig = LbfgsConfig(),
          progress: bool = False) -> List[TrainReport]:
    """Train the networks of ``problem``; one report per stage (or per variable for data_only)."""
    run = functools.partial(_run, seed=seed, optimizer=strategy.effective_optimizer, adam=adam,
                            lbfgs=lbfgs, switch_loss=strategy.hybrid_switch_loss,
                            progress=progress)
    if strategy.kind == 'data_only':
        return _data_only(problem, problem.variables, run)
    if strategy.kind == 'pinn_darcy':
        return _coupled('pinn_darcy', problem, run, 'pinn_darcy')
    if strategy.kind in ('mpinn_simultaneous', 'hybrid'):
        return _coupled('mpinn', problem, run, 'mpinn')

    # sequential: PINN-Darcy first, then MPINN from its K and h with a fresh C
    stage1 = _coupled('pinn_darcy', problem, run, 'pinn_darcy')
    start = {}
    for report in stage1:
        start.update({v: p for v, p in report.final_params.items() if v in ('K', 'h')})
    stage2 = _coupled('mpinn', problem, run, 'mpinn', start=start)
    return stage1 + stage2


def final_networks(reports: Sequence[TrainReport]) -> Dict[str, ParameterVector]:
    """Networks of the last stage that trained each variable."""
    nets = {}
    for report in reports:
        nets.update(report.final_params or {})
    return nets


@dataclass
class SeedResult:
    seed: int
    metrics: Dict[str, float]
    extras: Dict = field(default_factory=dict)


@dataclass
class ReplicationSummary:
    seeds: List[int]
    results: List[SeedResult]
    failures: Dict[int, str]
    mean: Dict[str, float]
    std: Dict[str, float]

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def _guarded(run: Callable[[int], SeedResult], seed: int):
    try:
        return seed, run(seed), None
    except Exception as e:
        logger.exception(f'seed {seed} failed')
        return seed, None, f'{type(e).__name__}: {e}'


def summarize(results: Sequence[SeedResult]) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Mean and population standard deviation of every metric over seeds."""
    keys = [k for k in results[0].metrics] if results else []
    mean = {k: float(np.mean([r.metrics[k] for r in results])) for k in keys}
    std = {k: float(np.std([r.metrics[k] for r in results])) for k in keys}
    return mean, std


def replicate(run: Callable[[int], SeedResult], n_seeds: int = 5,
              seeds: Optional[Sequence[int]] = None, threads: int = 1) -> ReplicationSummary:
    """Run ``run(seed)`` for every seed; results keep seed order whatever ``threads`` is.

    With threads > 1 ``run`` must be picklable (a module-level function or partial).
    """
    seeds = list(seeds) if seeds is not None else list(range(1, n_seeds + 1))
    if len(seeds) < 2:
        raise ValueError(f'replication needs at least 2 seeds, got {len(seeds)}')
    guarded = functools.partial(_guarded, run)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as executor:
            # Wrapping in list(tqdm(...)) necessary to enable progress bar
            outcomes = list(tqdm(executor.map(guarded, seeds), total=len(seeds), desc='Seeds'))
    else:
        outcomes = [guarded(s) for s in tqdm(seeds, desc='Seeds')]

    results = [r for _, r, _ in outcomes if r is not None]
    failures = {s: msg for s, _, msg in outcomes if msg is not None}
    for s, msg in failures.items():
        logger.error(f'seed {s} failed: {msg}')
    if not results:
        raise TrainingAbortedError(f'all {len(seeds)} seeds failed')
    mean, std = summarize(results)
    return ReplicationSummary(seeds, results, failures, mean, std)
