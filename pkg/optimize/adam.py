"""Adam with bias correction; mini-batches are drawn over measurement terms only."""

import time
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from tqdm import tqdm

from autodiff.tape import NonFiniteError
from harness.logs import logger
from optimize.report import LossRecord, TrainingAbortedError, TrainReport, evaluate


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1000
    max_iters: int = 50000
    record_every: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f'learning_rate must be positive, got {self.learning_rate}')
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError('betas must lie in (0, 1)')
        if self.batch_size < 1 or self.max_iters < 0 or self.record_every < 1:
            raise ValueError('batch_size, max_iters and record_every must be positive')


class _BatchSampler:
    """Epoch-wise permutations of every measurement set larger than the batch size."""

    def __init__(self, sizes: Dict[str, int], batch_size: int, seed: int):
        self.rng = np.random.default_rng(seed)
        self.batch_size = batch_size
        self.sizes = {v: n for v, n in sizes.items() if n > batch_size}
        self.orders = {v: self.rng.permutation(n) for v, n in self.sizes.items()}
        self.cursors = {v: 0 for v in self.sizes}

    @property
    def active(self) -> bool:
        return bool(self.sizes)

    def next(self) -> Dict[str, np.ndarray]:
        batch = {}
        for v, n in self.sizes.items():
            if self.cursors[v] + self.batch_size > n:
                self.orders[v] = self.rng.permutation(n)
                self.cursors[v] = 0
            start = self.cursors[v]
            batch[v] = np.sort(self.orders[v][start:start + self.batch_size])
            self.cursors[v] = start + self.batch_size
        return batch


def adam_minimize(objective, x0: np.ndarray, cfg: AdamConfig = AdamConfig(), seed: int = 0,
                  data_sizes: Optional[Dict[str, int]] = None,
                  stop_loss: Optional[float] = None, progress: bool = False) -> TrainReport:
    """Minimize ``objective(x[, batch])`` with Adam.

    ``data_sizes`` enables mini-batching: the objective then receives a mapping
    from variable to measurement indices. With ``stop_loss`` set, the run ends
    (as converged) once the evaluated loss drops below it.
    """
    start_time = time.time()
    x = np.array(x0, dtype=np.float64).ravel()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    sampler = _BatchSampler(data_sizes or {}, cfg.batch_size, seed)
    history = []
    reason = 'max_iters'

    def call(point):
        try:
            if sampler.active:
                return evaluate(objective, point, sampler.next())
            return evaluate(objective, point)
        except NonFiniteError as e:
            raise TrainingAbortedError(f'Adam: {e}', history, point.copy())

    it = 0
    for it in tqdm(range(cfg.max_iters + 1), disable=not progress, desc='Adam'):
        loss, grad, terms = call(x)
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            raise TrainingAbortedError(f'Adam: non-finite loss at iteration {it}', history, x.copy())
        if it % cfg.record_every == 0:
            history.append(LossRecord(it, loss, terms, 'adam'))
        if stop_loss is not None and loss < stop_loss:
            reason = 'converged'
            break
        if it == cfg.max_iters:
            break
        t = it + 1
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        x = x - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)

    if not history or history[-1].iteration != it:
        history.append(LossRecord(it, loss, terms, 'adam'))
    logger.debug(f'Adam stopped after {it} iterations ({reason}), loss {loss:.6g}')
    return TrainReport(final_x=x, loss_history=history, iterations_used=it,
                       termination_reason=reason, wall_time_s=time.time() - start_time)
