"""Quasi-Newton maximization over unconstrained parameter coordinates.

Constrained model parameters are mapped to R^k before optimization:
positives through log, correlations through a scaled logistic onto (-1, 1),
probabilities through logit, the three jump-cell probabilities through a
multinomial logit with p00 as reference, and each series' GARCH pair
(a1, a2) through a 2-simplex logit so that a1 + a2 < 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from .errors import NumericalError

logger = logging.getLogger(__name__)

GTOL = 1e-6
FTOL = 1e-10
MAX_ITER = 500


# ---------------------------------------------------------------------------
# transforms

def _softmax_ref(x: np.ndarray) -> np.ndarray:
    """Probabilities of the non-reference cells, reference logit fixed at 0."""
    top = max(0.0, float(np.max(x)))
    e = np.exp(x - top)
    return e / (np.exp(-top) + e.sum())


def _softmax_ref_inv(p: np.ndarray) -> np.ndarray:
    ref = 1.0 - p.sum()
    return np.log(p) - np.log(ref)


_KINDS = {
    "pos": (np.exp, np.log),
    "corr": (lambda x: 2.0 * expit(x) - 1.0, lambda r: logit((r + 1.0) / 2.0)),
    "prob": (expit, logit),
    "free": (lambda x: x, lambda v: v),
    "simplex": (_softmax_ref, _softmax_ref_inv),
}


@dataclass(frozen=True)
class ParamTransform:
    """Ordered groups of (kind, parameter names); ``fixed`` names are carried, not optimized."""

    groups: tuple
    fixed: tuple = ()
    # "jumpmean" groups optimize (mu0 + mu1 * center, mu1 * scale) per series
    mu_center: tuple = (0.0, 0.0)
    mu_scale: tuple = (1.0, 1.0)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for _, names in self.groups for n in names)

    @property
    def size(self) -> int:
        return len(self.names)

    def to_unconstrained(self, params: dict) -> np.ndarray:
        out = []
        for kind, names in self.groups:
            vals = np.array([params[n] for n in names], dtype=float)
            if kind == "jumpmean":
                mu0, mu1 = vals[:2], vals[2:]
                c, sc = np.array(self.mu_center), np.array(self.mu_scale)
                out.extend(np.concatenate([mu0 + mu1 * c, mu1 * sc]))
                continue
            inv = _KINDS[kind][1]
            out.extend(np.atleast_1d(inv(vals)) if kind == "simplex" else [float(inv(v)) for v in vals])
        return np.array(out, dtype=float)

    def to_params(self, x: np.ndarray, fixed_values: dict | None = None) -> dict:
        x = np.asarray(x, dtype=float)
        params = {}
        k = 0
        for kind, names in self.groups:
            fwd = _KINDS.get(kind, (None,))[0]
            chunk = x[k:k + len(names)]
            if kind == "jumpmean":
                mu1 = chunk[2:] / np.array(self.mu_scale)
                vals = np.concatenate([chunk[:2] - mu1 * np.array(self.mu_center), mu1])
            else:
                vals = fwd(chunk) if kind == "simplex" else [fwd(v) for v in chunk]
            params.update({n: float(v) for n, v in zip(names, vals)})
            k += len(names)
        if fixed_values:
            params.update({n: float(fixed_values[n]) for n in self.fixed})
        return params


# ---------------------------------------------------------------------------
# BFGS

@dataclass
class OptimizerReport:
    x: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    message: str
    n_evals: int = 0


def central_gradient(f: Callable, x: np.ndarray, fx: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def bfgs_maximize(objective: Callable, x0, gtol: float = GTOL, ftol: float = FTOL,
                  max_iter: int = MAX_ITER, max_step: float = 5.0) -> OptimizerReport:
    """Maximize ``objective`` with BFGS, central-difference gradients and Armijo backtracking.

    Stops when the gradient norm drops below ``gtol``, the relative objective
    change falls below ``ftol``, or after ``max_iter`` iterations. A failed
    line search returns the best point with ``converged=False``.
    """
    n_evals = 0

    def f(x):
        nonlocal n_evals
        n_evals += 1
        v = objective(x)
        return -v if np.isfinite(v) else np.inf

    x = np.array(x0, dtype=float)
    fx = f(x)
    if not np.isfinite(fx):
        raise NumericalError("objective is not finite at the starting point")
    g = central_gradient(f, x)
    n = x.size
    H = np.eye(n)
    scaled = False
    small_steps = 0
    message = "max iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            message = "gradient norm below tolerance"
            it -= 1
            break
        d = -H @ g
        if g @ d >= 0:
            H = np.eye(n)
            d = -g
        longest = np.max(np.abs(d))
        if longest > max_step:
            d *= max_step / longest
        slope = g @ d
        t = 1.0
        while True:
            x_new = x + t * d
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * t * slope:
                # a point next to the edge of the finite region can give an unusable gradient
                g_new = central_gradient(f, x_new)
                if np.all(np.isfinite(g_new)):
                    break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            if not np.allclose(H, np.eye(n)):
                H = np.eye(n)
                scaled = False
                continue
            message = "line search failed"
            break
        s = x_new - x
        y = g_new - g
        sy = s @ y
        rel = abs(fx - f_new) / max(abs(fx), 1.0)
        x, fx, g = x_new, f_new, g_new
        if sy > 1e-12:
            if not scaled:
                H = np.eye(n) * (sy / (y @ y))
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)
        # a single tiny step is common on flat ridges; require two in a row
        small_steps = small_steps + 1 if rel < ftol else 0
        if small_steps >= 2:
            message = "relative objective change below tolerance"
            break
    gnorm = float(np.linalg.norm(g))
    return OptimizerReport(x, -fx, it, gnorm, gnorm < gtol, message, n_evals)
