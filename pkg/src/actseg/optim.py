"""Unconstrained maximization: L-BFGS and Polak-Ribiere nonlinear CG.

Objectives are callables ``fun(x) -> (value, gradient)`` that are to be
*maximized*.  Both optimizers share a strong Wolfe line search and the
same stopping rules:

* relative objective change ``|f_new - f_old| / max(|f_old|, |f_new|, 1)``
  below ``tol`` (status ``"converged"``),
* infinity-norm of the gradient at or below ``gtol`` (``"gradient"``),
* ``max_iter`` accepted steps (``"max_iter"``),
* a line search that cannot find an acceptable step (``"linesearch_failed"``).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    memory: int = 7
    max_iter: int = 500
    tol: float = 1e-5
    gtol: float = 1e-8
    c1: float = 1e-4
    c2: float | None = None  # None: 0.9 for L-BFGS, 0.1 for CG
    max_trials: int = 30

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("L-BFGS memory must be >= 1")
        c2 = 0.9 if self.c2 is None else self.c2
        if not 0 < self.c1 < c2 < 1:
            raise ValueError("line search constants must satisfy 0 < c1 < c2 < 1")
        if self.tol < 0 or self.gtol < 0:
            raise ValueError("tolerances must be non-negative")

    def curvature(self, default: float) -> float:
        return default if self.c2 is None else self.c2


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    iterations: int
    status: str
    history: list = field(default_factory=list)  # objective after each accepted step
    n_evals: int = 0

    def __iter__(self):
        return iter((self.x, self.value, self.iterations, self.status))


class _Negated:
    """Minimization view of a maximization objective, counting evaluations."""

    def __init__(self, fun):
        self.fun = fun
        self.n_evals = 0

    def __call__(self, x):
        self.n_evals += 1
        v, g = self.fun(x)
        v = float(v)
        g = np.asarray(g, dtype=float)
        if g.shape != x.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {x.shape}")
        return -v, -g


def _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
    # minimizer of the cubic through both points with their slopes
    d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    rad = d1 * d1 - d_lo * d_hi
    if not np.isfinite(rad) or rad < 0:
        return None
    d2 = np.sign(a_hi - a_lo) * np.sqrt(rad)
    den = d_hi - d_lo + 2.0 * d2
    if den == 0:
        return None
    return a_hi - (a_hi - a_lo) * (d_hi + d2 - d1) / den


def _line_search(fmin, x, d, f0, g0, alpha1, c1, c2, max_trials):
    """Strong Wolfe line search on ``fmin(x + a d)``.

    Close to an optimum the change in ``f`` drops below rounding error and
    the value-based sufficient-decrease test becomes meaningless.  Trials
    whose value is within ``eps_f = 1e-12 max(1, |f0|)`` of ``f0`` are then
    judged by the derivative form of that test (approximate Wolfe
    conditions), and the bracket is shrunk on the slope sign alone.  Such a
    step may raise ``f`` by at most ``eps_f``, i.e. by rounding noise.

    Returns ``(alpha, f, g, ok)``.  When no step satisfies the conditions,
    the best sufficient-decrease trial is returned with ``ok=False``, or
    ``alpha=0`` if none decreased the objective.
    """
    dphi0 = float(g0 @ d)
    eps_f = 1e-12 * max(1.0, abs(f0))
    best = (0.0, f0, g0)
    trials = 0

    def flat(f):
        return abs(f - f0) <= eps_f

    def armijo(a, f, da):
        if f <= f0 + c1 * a * dphi0:
            return True
        return flat(f) and da <= (2 * c1 - 1) * dphi0

    def phi(a):
        nonlocal trials, best
        trials += 1
        f, g = fmin(x + a * d)
        da = float(g @ d)
        if np.isfinite(f) and f < best[1] and armijo(a, f, da):
            best = (a, f, g)
        return f, g, da

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
        while trials < max_trials:
            a = None
            if np.isfinite(f_hi):
                a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            margin = 0.1 * (hi - lo)
            if a is None or not (lo + margin <= a <= hi - margin):
                a = 0.5 * (a_lo + a_hi)
            f, g, da = phi(a)
            if not np.isfinite(f):
                a_hi, f_hi, d_hi = a, f, da
            elif armijo(a, f, da) and abs(da) <= -c2 * dphi0:
                return a, f, g, True
            elif flat(f) and flat(f_lo):
                # values carry no information here; bisect on the slope
                if da * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a, f, da
                else:
                    a_lo, f_lo, d_lo = a, f, da
            elif not armijo(a, f, da) or f >= f_lo:
                a_hi, f_hi, d_hi = a, f, da
            else:
                if da * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, da
            if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
                break
        return (*best, False)

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha1
    while trials < max_trials:
        f, g, da = phi(a)
        if not np.isfinite(f) or not armijo(a, f, da) or (trials > 1 and f >= f_prev
                                                          and not flat(f)):
            return zoom(a_prev, f_prev, d_prev, a, f, da)
        if abs(da) <= -c2 * dphi0:
            return a, f, g, True
        if da >= 0:
            return zoom(a, f, da, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f, da
        a = 2.0 * a
    return (*best, False)


def _rel_change(f_old, f_new):
    return abs(f_new - f_old) / max(abs(f_old), abs(f_new), 1.0)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((a, rho))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (a, rho), s, y in zip(reversed(alphas), s_hist, y_hist):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_maximize(fun: Callable, x0, config: OptimConfig = OptimConfig(),
                   callback: Callable | None = None) -> OptimResult:
    """Maximize ``fun`` with limited-memory BFGS.

    ``callback(info)`` is called after every accepted step with a dict
    holding ``iteration``, ``x``, ``value``, ``gradient`` and ``direction``
    (all in the maximization orientation).
    """
    fmin = _Negated(fun)
    c2 = config.curvature(0.9)
    x = np.array(x0, dtype=float)
    f, g = fmin(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    s_hist, y_hist = deque(maxlen=config.memory), deque(maxlen=config.memory)
    history = [-f]
    status = "max_iter"
    it = 0
    while it < config.max_iter:
        if np.max(np.abs(g)) <= config.gtol:
            status = "gradient"
            break
        d = _two_loop(g, s_hist, y_hist)
        if g @ d >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
        alpha1 = 1.0 if s_hist else min(1.0, 1.0 / np.linalg.norm(g))
        alpha, f_new, g_new, ok = _line_search(fmin, x, d, f, g, alpha1, config.c1, c2,
                                               config.max_trials)
        if alpha == 0.0:
            status = "linesearch_failed"
            break
        s = alpha * d
        yv = g_new - g
        if s @ yv > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            s_hist.append(s)
            y_hist.append(yv)
        rel = _rel_change(f, f_new)
        x, f, g = x + s, f_new, g_new
        it += 1
        history.append(-f)
        if callback is not None:
            callback({"iteration": it, "x": x.copy(), "value": -f, "gradient": -g, "direction": d.copy()})
        if not ok:
            status = "linesearch_failed"
            break
        if rel < config.tol:
            status = "converged"
            break
    return OptimResult(x, -f, it, status, history, fmin.n_evals)


def cg_polak_ribiere_maximize(fun: Callable, x0, config: OptimConfig = OptimConfig(),
                              callback: Callable | None = None) -> OptimResult:
    """Maximize ``fun`` with Polak-Ribiere nonlinear conjugate gradients.

    A negative PR coefficient restarts the search along the gradient.  The
    callback info additionally carries ``beta`` and ``restart`` for the
    direction used in that step.
    """
    fmin = _Negated(fun)
    c2 = config.curvature(0.1)
    x = np.array(x0, dtype=float)
    f, g = fmin(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    d = -g
    beta, restart = 0.0, True
    df_prev = None
    history = [-f]
    status = "max_iter"
    it = 0
    while it < config.max_iter:
        if np.max(np.abs(g)) <= config.gtol:
            status = "gradient"
            break
        dphi0 = g @ d
        if df_prev is None:
            alpha1 = min(1.0, 1.0 / np.linalg.norm(g))
        else:
            alpha1 = min(1.0, 2.02 * df_prev / -dphi0) if df_prev > 0 else 1.0
        alpha, f_new, g_new, ok = _line_search(fmin, x, d, f, g, alpha1, config.c1, c2,
                                               config.max_trials)
        if alpha == 0.0:
            status = "linesearch_failed"
            break
        rel = _rel_change(f, f_new)
        df_prev = f - f_new
        x = x + alpha * d
        it += 1
        history.append(-f_new)
        if callback is not None:
            callback({"iteration": it, "x": x.copy(), "value": -f_new, "gradient": -g_new,
                      "direction": d.copy(), "beta": beta, "restart": restart})
        beta = float(g_new @ (g_new - g) / (g @ g))
        restart = beta < 0
        if restart:
            beta = 0.0
        d = -g_new + beta * d
        if g_new @ d >= 0:
            d = -g_new
            beta, restart = 0.0, True
        f, g = f_new, g_new
        if not ok:
            status = "linesearch_failed"
            break
        if rel < config.tol:
            status = "converged"
            break
    return OptimResult(x, -f, it, status, history, fmin.n_evals)


def grad_check(fun: Callable, x, step: float = 1e-4) -> float:
    """Largest componentwise relative error of ``fun``'s gradient against
    central differences ``(f(x + h e_k) - f(x - h e_k)) / 2h``.

    The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float)
    _, g = fun(x)
    g = np.asarray(g, dtype=float)
    worst = 0.0
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        num = (fun(x + e)[0] - fun(x - e)[0]) / (2 * step)
        den = max(abs(g[k]), abs(num), 1e-8)
        worst = max(worst, abs(g[k] - num) / den)
    return worst
