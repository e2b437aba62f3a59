"""Optimizers: limited-memory BFGS with a strong-Wolfe line search, and
AdamW with cosine learning-rate decay.

Both operate on flat real parameter vectors and are deterministic for a
fixed evaluation order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LbfgsState:
    """Curvature-pair memory of L-BFGS.

    Pairs with non-positive curvature s.y are discarded; at most
    ``history_size`` pairs are retained.
    """

    history_size: int = 10
    s_list: list = field(default_factory=list)
    y_list: list = field(default_factory=list)
    rho_list: list = field(default_factory=list)

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        sy = float(np.dot(s, y))
        if sy <= 0.0:
            return False
        self.s_list.append(s)
        self.y_list.append(y)
        self.rho_list.append(1.0 / sy)
        if len(self.s_list) > self.history_size:
            self.s_list.pop(0)
            self.y_list.pop(0)
            self.rho_list.pop(0)
        return True

    def direction(self, grad: np.ndarray) -> np.ndarray:
        """Two-loop recursion; the initial inverse Hessian is gamma * I."""
        q = grad.copy()
        alphas = []
        for s, y, rho in zip(reversed(self.s_list), reversed(self.y_list),
                             reversed(self.rho_list)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if self.s_list:
            s, y = self.s_list[-1], self.y_list[-1]
            gamma = np.dot(s, y) / np.dot(y, y)
            q *= gamma
        for s, y, rho, a in zip(self.s_list, self.y_list, self.rho_list,
                                reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        return -q


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    history: list
    status: str  # 'max_steps' | 'gtol' | 'line_search_failed'
    n_evals: int


def _cubic_minimizer(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolant through (a, fa, da), (b, fb, db)."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t


def _zoom(phi, lo, hi, f0, d0, c1, c2, max_evals, evals_used):
    a_lo, f_lo, d_lo = lo
    a_hi, f_hi, d_hi = hi
    result = None
    for _ in range(max_evals - evals_used):
        a = _cubic_minimizer(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
        lo_, hi_ = min(a_lo, a_hi), max(a_lo, a_hi)
        margin = 0.1 * (hi_ - lo_)
        if a is None or not (lo_ + margin <= a <= hi_ - margin):
            a = 0.5 * (a_lo + a_hi)
        f, d, payload = phi(a)
        evals_used += 1
        if f > f0 + c1 * a * d0 or f >= f_lo:
            a_hi, f_hi, d_hi = a, f, d
        else:
            if abs(d) <= -c2 * d0:
                result = (a, f, d, payload, evals_used)
                break
            if d * (a_hi - a_lo) >= 0:
                a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
            a_lo, f_lo, d_lo = a, f, d
        if abs(a_hi - a_lo) < 1e-16:
            break
    return result


def _wolfe_search(phi, f0, d0, alpha0, c1, c2, max_evals=20):
    """Strong-Wolfe line search (bracket then zoom with cubic interpolation).

    phi(alpha) -> (f, dphi, payload).  Returns (alpha, f, dphi, payload,
    n_evals) or None on failure.
    """
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha0
    evals = 0
    for i in range(max_evals):
        f, d, payload = phi(a)
        evals += 1
        if f > f0 + c1 * a * d0 or (i > 0 and f >= f_prev):
            return _zoom(phi, (a_prev, f_prev, d_prev), (a, f, d),
                         f0, d0, c1, c2, max_evals, evals)
        if abs(d) <= -c2 * d0:
            return a, f, d, payload, evals
        if d >= 0:
            return _zoom(phi, (a, f, d), (a_prev, f_prev, d_prev),
                         f0, d0, c1, c2, max_evals, evals)
        a_prev, f_prev, d_prev = a, f, d
        a = min(2.0 * a, 1e6)
    return None


def lbfgs_minimize(x0: np.ndarray, objective, max_steps: int = 1000,
                   gtol: float = 0.0, history_size: int = 10,
                   c1: float = 1e-4, c2: float = 0.9, callback=None) -> LbfgsResult:
    """Minimize a smooth objective with L-BFGS.

    Parameters
    ----------
    objective : callable
        Maps a flat array to ``(value, gradient)``.  Must be deterministic.
    callback : callable, optional
        Called after each accepted iterate as ``callback(k, x, f, gnorm)``.

    Accepted objective values are monotone non-increasing.  On line-search
    failure the best iterate found so far is returned with status
    ``'line_search_failed'``.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = objective(x)
    n_evals = 1
    state = LbfgsState(history_size=history_size)
    history = []
    status = "max_steps"
    t_start = time.perf_counter()
    history.append({"iter": 0, "cost": f, "grad_norm": float(np.linalg.norm(g)),
                    "wall_ms": 0.0})
    if callback is not None:
        callback(0, x, f, float(np.linalg.norm(g)))

    for k in range(1, max_steps + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            status = "gtol"
            break
        d = state.direction(g)
        d0 = float(np.dot(g, d))
        if d0 >= 0:  # not a descent direction; restart from steepest descent
            state = LbfgsState(history_size=history_size)
            d = -g
            d0 = -gnorm**2

        def phi(alpha, _x=x, _d=d):
            fa, ga = objective(_x + alpha * _d)
            return fa, float(np.dot(ga, _d)), (fa, ga, alpha)

        hit = _wolfe_search(phi, f, d0, 1.0, c1, c2)
        if hit is None:
            status = "line_search_failed"
            break
        alpha, f_new, _, payload, evals = hit
        n_evals += evals
        _, g_new, _ = payload
        x_new = x + alpha * d
        state.push(x_new - x, g_new - g)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append({"iter": k, "cost": f, "grad_norm": gnorm,
                        "wall_ms": (time.perf_counter() - t_start) * 1e3})
        if callback is not None:
            callback(k, x, f, gnorm)
        if gnorm <= gtol:
            status = "gtol"
            break

    return LbfgsResult(x=x, fun=f, grad=g, history=history, status=status,
                       n_evals=n_evals)


def cosine_lr(lr0: float, step: int, t_max: int) -> float:
    """Cosine decay: lr0 at step 0, exactly 0 at step t_max."""
    t = min(max(step, 0), t_max)
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * t / t_max))


@dataclass
class TrainerState:
    """AdamW accumulator state (decoupled weight decay)."""

    lr0: float
    t_max: int
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def learning_rate(self) -> float:
        return cosine_lr(self.lr0, self.step_count, self.t_max)


def adamw_step(trainer: TrainerState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One AdamW update; weight decay shrinks parameters independently of
    the gradient.  Mutates ``trainer`` and returns the new parameters."""
    if trainer.m is None:
        trainer.m = np.zeros_like(params)
        trainer.v = np.zeros_like(params)
    if params.shape != grad.shape:
        raise ValueError("params and grad shapes differ")
    lr = trainer.learning_rate()
    t = trainer.step_count + 1
    trainer.m = trainer.beta1 * trainer.m + (1 - trainer.beta1) * grad
    trainer.v = trainer.beta2 * trainer.v + (1 - trainer.beta2) * grad**2
    m_hat = trainer.m / (1 - trainer.beta1**t)
    v_hat = trainer.v / (1 - trainer.beta2**t)
    new_params = params - lr * (m_hat / (np.sqrt(v_hat) + trainer.eps)
                                + trainer.weight_decay * params)
    trainer.step_count = t
    return new_params


__all__ = [
    "LbfgsState",
    "LbfgsResult",
    "lbfgs_minimize",
    "TrainerState",
    "adamw_step",
    "cosine_lr",
]
