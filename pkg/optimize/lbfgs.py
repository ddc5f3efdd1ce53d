"""Limited-memory BFGS with a strong-Wolfe line search (bracketing and zoom)."""

import time
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Optional, Tuple

import numpy as np
from tqdm import tqdm

from autodiff.tape import NonFiniteError
from harness.logs import logger
from optimize.report import LossRecord, TrainingAbortedError, TrainReport, evaluate


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iters: int = 15000
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 2.22e-9
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search: int = 20
    record_every: int = 1

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError(f'memory must be at least 1, got {self.memory}')
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError('Wolfe constants must satisfy 0 < c1 < c2 < 1')
        if self.max_iters < 0 or self.max_line_search < 1 or self.record_every < 1:
            raise ValueError('iteration limits must be positive')


def _cubic_interpolate(x1: float, f1: float, g1: float, x2: float, f2: float, g2: float,
                       bounds: Optional[Tuple[float, float]] = None) -> float:
    """Minimizer of the cubic through two points with slopes, clipped to ``bounds``."""
    if bounds is not None:
        lo, hi = bounds
    else:
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)
    with np.errstate(all='ignore'):
        d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
        d2_square = d1 * d1 - g1 * g2
        if np.isfinite(d2_square) and d2_square >= 0.0:
            d2 = np.sqrt(d2_square)
            if x1 <= x2:
                pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
            else:
                pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
            if np.isfinite(pos):
                return float(min(max(pos, lo), hi))
    return 0.5 * (lo + hi)


@dataclass
class _Trial:
    alpha: float
    f: float
    g: Optional[np.ndarray]
    terms: Optional[Dict[str, float]]
    gtd: float


class _StrongWolfe:
    """One line search along ``d`` from ``x``; counts every objective evaluation."""

    def __init__(self, objective, x: np.ndarray, f0: float, gtd0: float, d: np.ndarray,
                 cfg: LbfgsConfig):
        self.objective = objective
        self.x = x
        self.f0 = f0
        self.gtd0 = gtd0
        self.d = d
        self.cfg = cfg
        self.trials = 0
        self.best: Optional[_Trial] = None

    def phi(self, alpha: float) -> _Trial:
        self.trials += 1
        try:
            f, g, terms = evaluate(self.objective, self.x + alpha * self.d)
        except NonFiniteError:
            f, g, terms = np.inf, None, None
        if not np.isfinite(f) or g is None or not np.isfinite(g).all():
            # overshooting into a non-finite region counts as a failed decrease
            return _Trial(alpha, np.inf, None, None, np.inf)
        trial = _Trial(alpha, f, g, terms, float(g @ self.d))
        if f < self.f0 and (self.best is None or f < self.best.f):
            self.best = trial
        return trial

    def armijo(self, t: _Trial) -> bool:
        return t.f <= self.f0 + self.cfg.wolfe_c1 * t.alpha * self.gtd0

    def curvature(self, t: _Trial) -> bool:
        return abs(t.gtd) <= -self.cfg.wolfe_c2 * self.gtd0

    def accept(self, t: _Trial) -> Tuple[bool, _Trial]:
        assert self.armijo(t) and self.curvature(t), 'accepted step violates the Wolfe conditions'
        return True, t

    def search(self, alpha: float) -> Tuple[bool, Optional[_Trial]]:
        prev = _Trial(0.0, self.f0, None, None, self.gtd0)
        while self.trials < self.cfg.max_line_search:
            t = self.phi(alpha)
            if not self.armijo(t) or (self.trials > 1 and t.f >= prev.f):
                return self.zoom(prev, t)
            if self.curvature(t):
                return self.accept(t)
            if t.gtd >= 0.0:
                return self.zoom(t, prev)
            next_alpha = _cubic_interpolate(prev.alpha, prev.f, prev.gtd, t.alpha, t.f, t.gtd,
                                            bounds=(t.alpha + 0.01 * (t.alpha - prev.alpha),
                                                    10.0 * t.alpha))
            prev, alpha = t, next_alpha
        return False, self.best

    def zoom(self, lo: _Trial, hi: _Trial) -> Tuple[bool, Optional[_Trial]]:
        d_norm = float(np.abs(self.d).max())
        while self.trials < self.cfg.max_line_search:
            if abs(hi.alpha - lo.alpha) * d_norm < 1e-16:
                break
            left, right = sorted((lo.alpha, hi.alpha))
            if np.isfinite(hi.f):
                alpha = _cubic_interpolate(lo.alpha, lo.f, lo.gtd, hi.alpha, hi.f, hi.gtd)
            else:
                alpha = 0.5 * (left + right)
            # stay away from the bracket ends
            margin = 0.1 * (right - left)
            if alpha - left < margin or right - alpha < margin:
                alpha = 0.5 * (left + right)
            t = self.phi(alpha)
            if not self.armijo(t) or t.f >= lo.f:
                hi = t
            else:
                if self.curvature(t):
                    return self.accept(t)
                if t.gtd * (hi.alpha - lo.alpha) >= 0.0:
                    hi = lo
                lo = t
        return False, self.best


def _two_loop(g: np.ndarray, s_hist: Deque[np.ndarray], y_hist: Deque[np.ndarray],
              rho_hist: Deque[float]) -> np.ndarray:
    """Search direction -H g from the stored curvature pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        y_last = y_hist[-1]
        q *= (s_hist[-1] @ y_last) / (y_last @ y_last)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(objective, x0: np.ndarray, cfg: LbfgsConfig = LbfgsConfig(),
                   progress: bool = False, phase: str = 'lbfgs') -> TrainReport:
    start_time = time.time()
    x = np.array(x0, dtype=np.float64).ravel()
    try:
        f, g, terms = evaluate(objective, x)
    except NonFiniteError as e:
        raise TrainingAbortedError(f'L-BFGS: {e}', [], x.copy())
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise TrainingAbortedError('L-BFGS: non-finite loss at the starting point', [], x.copy())

    history = [LossRecord(0, f, terms, phase)]
    s_hist: Deque[np.ndarray] = deque(maxlen=cfg.memory)
    y_hist: Deque[np.ndarray] = deque(maxlen=cfg.memory)
    rho_hist: Deque[float] = deque(maxlen=cfg.memory)
    reason = 'max_iters'
    it = 0

    if np.abs(g).max() <= cfg.gradient_tolerance:
        reason = 'converged'
    else:
        for it in tqdm(range(1, cfg.max_iters + 1), disable=not progress, desc='L-BFGS'):
            d = _two_loop(g, s_hist, y_hist, rho_hist)
            gtd = float(g @ d)
            if not gtd < 0.0:
                # not a descent direction: restart from steepest descent
                s_hist.clear()
                y_hist.clear()
                rho_hist.clear()
                d = -g
                gtd = float(g @ d)
            alpha = min(1.0, 1.0 / np.abs(g).sum()) if not s_hist else 1.0
            ok, trial = _StrongWolfe(objective, x, f, gtd, d, cfg).search(alpha)
            if not ok:
                if trial is not None:
                    x, f, g, terms = x + trial.alpha * d, trial.f, trial.g, trial.terms
                    history.append(LossRecord(it, f, terms, phase))
                reason = 'line_search_failure'
                break
            step = trial.alpha * d
            x_new = x + step
            y = trial.g - g
            sy = float(step @ y)
            if sy > 1e-10 * float(y @ y):
                s_hist.append(step)
                y_hist.append(y)
                rho_hist.append(1.0 / sy)
            x, f, g, terms = x_new, trial.f, trial.g, trial.terms
            if it % cfg.record_every == 0:
                history.append(LossRecord(it, f, terms, phase))
            if np.abs(g).max() <= cfg.gradient_tolerance:
                reason = 'converged'
                break
            if np.abs(step).max() <= cfg.step_tolerance * max(1.0, np.abs(x).max()):
                reason = 'converged'
                break

    if history[-1].iteration != it:
        history.append(LossRecord(it, f, terms, phase))
    logger.debug(f'L-BFGS stopped after {it} iterations ({reason}), loss {f:.6g}')
    return TrainReport(final_x=x, loss_history=history, iterations_used=it,
                       termination_reason=reason, wall_time_s=time.time() - start_time)
