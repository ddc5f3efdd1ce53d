"""Result records shared by the minimizers and training strategies."""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

TERMINATION_REASONS = ('converged', 'max_iters', 'line_search_failure')


@dataclass
class LossRecord:
    iteration: int
    total: float
    terms: Dict[str, float]
    phase: str = ''


@dataclass
class TrainReport:
    final_x: np.ndarray
    loss_history: List[LossRecord]
    iterations_used: int
    termination_reason: str
    final_params: Optional[Dict] = None   # variable -> ParameterVector, set by training
    stage: str = ''
    wall_time_s: float = 0.0

    def __post_init__(self):
        if self.termination_reason not in TERMINATION_REASONS:
            raise ValueError(f'unknown termination reason {self.termination_reason!r}')
        if not self.loss_history:
            raise ValueError('loss history must not be empty')

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1].total

    def history_rows(self) -> List[Dict]:
        """Flat rows for a pandas DataFrame."""
        rows = []
        for record in self.loss_history:
            row = {'stage': self.stage, 'phase': record.phase,
                   'iteration': record.iteration, 'total': record.total}
            row.update(record.terms)
            rows.append(row)
        return rows


class TrainingAbortedError(RuntimeError):
    """Raised when the loss turns non-finite; carries the history up to the failure."""

    def __init__(self, message: str, history: Optional[List[LossRecord]] = None,
                 last_x: Optional[np.ndarray] = None):
        super().__init__(message)
        self.history = history or []
        self.last_x = last_x


def evaluate(objective, x: np.ndarray, *args):
    """Call an objective returning (loss, grad) or (loss, grad, terms)."""
    out = objective(x, *args)
    if len(out) == 3:
        loss, grad, terms = out
    else:
        loss, grad = out
        terms = None
    loss = float(loss)
    grad = np.asarray(grad, dtype=np.float64)
    if terms is None:
        terms = {'objective': loss}
    return loss, grad, dict(terms)
