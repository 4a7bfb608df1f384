"""OLS and elastic-net estimation of the ARX mean equation.

The elastic net is solved on the standardized problem

    min ||y~ - X~ b||^2 + lam * ((1 - alpha)/2 * ||b||^2 + alpha * ||b||_1)

by cyclic coordinate descent, where every non-constant column and the
target are centered and scaled to unit (population) sd. The intercept is
absorbed by the centering, never penalized, and rebuilt on the original
scale afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import kvtext
from .design_matrix import DesignSpec, RegressionProblem, build_problem
from .errors import DataError
from .market_data import DailyBivariateSeries

DEFAULT_ALPHA = 0.5
CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StandardizationRecord:
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float
    constant: np.ndarray  # bool mask of columns excluded from scaling

    @classmethod
    def from_problem(cls, X: np.ndarray, y: np.ndarray) -> "StandardizationRecord":
        x_mean = X.mean(axis=0)
        x_sd = X.std(axis=0)
        scale = np.maximum(np.abs(X).max(axis=0), 1.0)
        constant = x_sd <= 1e-12 * scale
        x_sd = np.where(constant, 1.0, x_sd)
        y_sd = float(y.std())
        return cls(x_mean, x_sd, float(y.mean()), y_sd if y_sd > 0 else 1.0, constant)

    def transform(self, X: np.ndarray, y: np.ndarray | None = None):
        Xs = ((X - self.x_mean) / self.x_sd)[:, ~self.constant]
        if y is None:
            return Xs
        return Xs, (y - self.y_mean) / self.y_sd

    def inverse(self, Xs: np.ndarray, ys: np.ndarray, X_constant: np.ndarray):
        """Undo ``transform``; the excluded constant columns are supplied back."""
        X = np.array(X_constant, dtype=float, copy=True)
        X[:, ~self.constant] = Xs * self.x_sd[~self.constant] + self.x_mean[~self.constant]
        return X, ys * self.y_sd + self.y_mean

    def unscale(self, beta_scaled: np.ndarray, intercept_col: int) -> np.ndarray:
        p = self.x_mean.size
        beta = np.zeros(p)
        free = ~self.constant
        beta[free] = beta_scaled * self.y_sd / self.x_sd[free]
        beta[intercept_col] = (self.y_mean - beta[free] @ self.x_mean[free]) / self.x_mean[intercept_col]
        return beta


def _intercept_column(X: np.ndarray) -> int:
    const = np.flatnonzero(np.all(X == X[:1], axis=0) & (X[0] != 0))
    if const.size == 0:
        raise DataError("regression problem needs a non-zero constant (intercept) column")
    return int(const[0])


@njit(cache=True)
def _cd_kernel(G, c0, yy, lam, alpha, beta, tol, max_sweeps, history):
    # G = X'X, c0 = X'y; the running gradient c = X'r is updated per coordinate
    p = G.shape[0]
    c = c0 - G @ beta
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    denom = np.empty(p)
    for j in range(p):
        denom[j] = 2.0 * G[j, j] + l2
    sweeps = 0
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            sq = G[j, j]
            if sq == 0.0:
                continue
            bj = beta[j]
            z = 2.0 * (c[j] + sq * bj)
            if z > l1:
                new = (z - l1) / denom[j]
            elif z < -l1:
                new = (z + l1) / denom[j]
            else:
                new = 0.0
            delta = new - bj
            if delta != 0.0:
                # G is symmetric; its row is contiguous
                row = G[j]
                for k in range(p):
                    c[k] -= delta * row[k]
                beta[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        sweeps = sweep + 1
        if sweep < history.size:
            # ||y - Xb||^2 = y'y - 2 b'X'y + b'X'Xb
            rss = yy - 2.0 * (beta @ c0) + beta @ (G @ beta)
            history[sweep] = rss + 0.5 * l2 * (beta @ beta) + l1 * np.abs(beta).sum()
        if max_delta < tol:
            break
    return sweeps


def enet_objective(Xs, ys, beta, alpha, lam) -> float:
    r = ys - Xs @ beta
    return float(r @ r + lam * ((1 - alpha) / 2 * beta @ beta + alpha * np.abs(beta).sum()))


def coordinate_descent(Xs, ys, alpha, lam, beta0=None, tol=CD_TOL,
                       max_sweeps=CD_MAX_SWEEPS, record=0):
    """Run the CD solver on an already standardized problem.

    Returns ``(beta, sweeps, history)``; ``history`` holds the objective after
    each of the first ``record`` sweeps.
    """
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return _cd_gram(Xs.T @ Xs, Xs.T @ ys, float(ys @ ys), alpha, lam, beta0, tol, max_sweeps, record)


def _gram_objective(G, c0, yy, beta, l1, l2) -> float:
    return float(yy - 2.0 * beta @ c0 + beta @ G @ beta + 0.5 * l2 * beta @ beta + l1 * np.abs(beta).sum())


def _polish(G, c0, yy, beta, l1, l2):
    """Exact solve on the CD support with its signs held fixed.

    CD stops on a small step, which on ill-conditioned designs can still
    be far from the optimum. The candidate is kept only if it satisfies
    the optimality conditions and does not raise the objective.
    """
    active = np.flatnonzero(beta)
    if active.size == 0:
        return beta
    signs = np.sign(beta[active])
    A = 2.0 * G[np.ix_(active, active)] + l2 * np.eye(active.size)
    try:
        if np.linalg.cond(A) > 1e12:
            return beta
        sol = np.linalg.solve(A, 2.0 * c0[active] - l1 * signs)
    except np.linalg.LinAlgError:
        return beta
    if np.any(np.sign(sol) != signs):
        return beta
    cand = np.zeros_like(beta)
    cand[active] = sol
    grad = 2.0 * (c0 - G @ cand)
    inactive = np.ones(beta.size, bool)
    inactive[active] = False
    if np.any(np.abs(grad[inactive]) > l1 * (1 + 1e-9) + 1e-12):
        return beta
    old = _gram_objective(G, c0, yy, beta, l1, l2)
    if _gram_objective(G, c0, yy, cand, l1, l2) > old + 1e-12 * abs(old):
        return beta
    return cand


def _cd_gram(G, c0, yy, alpha, lam, beta0=None, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS, record=0):
    beta = np.zeros(G.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    history = np.full(record, np.nan)
    sweeps = _cd_kernel(np.ascontiguousarray(G), c0, yy, float(lam), float(alpha), beta,
                        float(tol), int(max_sweeps), history)
    beta = _polish(G, c0, yy, beta, lam * alpha, lam * (1.0 - alpha))
    return beta, sweeps, history[:min(sweeps, record)]


def lambda_max(Xs: np.ndarray, ys: np.ndarray, alpha: float) -> float:
    """Smallest penalty at which every scaled coefficient is exactly zero."""
    return float(2.0 * np.max(np.abs(Xs.T @ ys)) / max(alpha, 1e-3))


def lambda_grid(Xs, ys, alpha, n=100, ratio=1e-4) -> np.ndarray:
    top = lambda_max(Xs, ys, alpha)
    if top <= 0:
        return np.zeros(1)
    return np.geomspace(top, top * ratio, n)


def _check_finite(problem: RegressionProblem):
    if problem.X.size == 0 or problem.y.size == 0:
        raise DataError("empty regression problem")
    if not (np.all(np.isfinite(problem.X)) and np.all(np.isfinite(problem.y))):
        raise DataError("regression problem has non-finite entries")


def fit_ols(problem: RegressionProblem) -> np.ndarray:
    """Least squares; rank-deficient designs get the minimum-norm solution."""
    _check_finite(problem)
    beta, _, rank, _ = np.linalg.lstsq(problem.X, problem.y, rcond=None)
    if rank < problem.X.shape[1]:
        warnings.warn(f"design has rank {rank} < {problem.X.shape[1]}; using minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
    return beta


def fit_elastic_net(problem: RegressionProblem, alpha: float = DEFAULT_ALPHA, lam: float = 0.0,
                    tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS) -> np.ndarray:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    _check_finite(problem)
    icol = _intercept_column(problem.X)
    rec = StandardizationRecord.from_problem(problem.X, problem.y)
    Xs, ys = rec.transform(problem.X, problem.y)
    beta_s, _, _ = coordinate_descent(Xs, ys, alpha, lam, tol=tol, max_sweeps=max_sweeps)
    return rec.unscale(beta_s, icol)


def _path(X, y, alpha, lambdas, tol=CD_TOL):
    """Coefficients (original scale) along a decreasing lambda grid, warm-started."""
    icol = _intercept_column(X)
    rec = StandardizationRecord.from_problem(X, y)
    Xs, ys = rec.transform(X, y)
    G, c0, yy = Xs.T @ Xs, Xs.T @ ys, float(ys @ ys)
    beta_s = np.zeros(Xs.shape[1])
    out = np.empty((len(lambdas), X.shape[1]))
    for k, lam in enumerate(lambdas):
        beta_s, _, _ = _cd_gram(G, c0, yy, alpha, lam, beta0=beta_s, tol=tol)
        out[k] = rec.unscale(beta_s, icol)
    return out


def block_folds(n_rows: int, folds: int = 10, block_length: int = 7) -> np.ndarray:
    """Fold index per row: contiguous blocks dealt round-robin to folds."""
    return (np.arange(n_rows) // block_length) % folds


@dataclass(frozen=True)
class CVResult:
    lambdas: np.ndarray
    cv_error: np.ndarray
    chosen: float


def block_cv(problem: RegressionProblem, alpha: float = DEFAULT_ALPHA, folds: int = 10,
             block_length: int = 7, lambdas=None) -> CVResult:
    """Choose lambda by blocked K-fold CV on original-scale held-out squared error."""
    _check_finite(problem)
    n = len(problem)
    if n < folds * block_length:
        raise DataError(f"{n} rows cannot fill {folds} folds of {block_length}-day blocks")
    if lambdas is None:
        rec = StandardizationRecord.from_problem(problem.X, problem.y)
        lambdas = lambda_grid(*rec.transform(problem.X, problem.y), alpha)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    if lambdas.size == 0:
        raise ValueError("empty lambda grid")
    fold_of = block_folds(n, folds, block_length)
    sse = np.zeros(lambdas.size)
    for k in range(folds):
        test = fold_of == k
        coefs = _path(problem.X[~test], problem.y[~test], alpha, lambdas)
        pred = problem.X[test] @ coefs.T
        sse += ((problem.y[test][:, None] - pred) ** 2).sum(axis=0)
    err = sse / n
    best = np.flatnonzero(err == err.min())
    # ties go to the smallest lambda; the grid is descending
    chosen = float(lambdas[best[-1]])
    return CVResult(lambdas, err, chosen)


def block_cv_lambda(problem: RegressionProblem, alpha: float = DEFAULT_ALPHA, folds: int = 10,
                    block_length: int = 7, lambdas=None) -> float:
    return block_cv(problem, alpha, folds, block_length, lambdas).chosen


# ---------------------------------------------------------------------------
# two-series fits

@dataclass(frozen=True)
class MeanModelFit:
    method: str
    spec: DesignSpec
    coef: np.ndarray            # (2, p) on the original scale
    lambdas: tuple = (None, None)
    alpha: float | None = None
    residuals: np.ndarray = field(default=None, repr=False)   # (n, 2)
    dates: np.ndarray = field(default=None, repr=False)

    def predict(self, X: np.ndarray, target: int) -> np.ndarray:
        return X @ self.coef[target - 1]

    def to_dict(self) -> dict:
        out = {"method": self.method}
        out.update({f"spec.{k}": v for k, v in self.spec.to_dict().items()})
        if self.alpha is not None:
            out["alpha"] = float(self.alpha)
        for i in (1, 2):
            if self.lambdas[i - 1] is not None:
                out[f"lambda.{i}"] = float(self.lambdas[i - 1])
        for i in (1, 2):
            for label, b in zip(self.spec.labels, self.coef[i - 1]):
                out[f"beta.{i}.{label}"] = float(b)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MeanModelFit":
        spec = DesignSpec(int(d["spec.lags"]), int(d["spec.n_dow"]), bool(d["spec.wednesday_interactions"]))
        coef = np.array([[float(d[f"beta.{i}.{label}"]) for label in spec.labels] for i in (1, 2)])
        lambdas = tuple(d.get(f"lambda.{i}") for i in (1, 2))
        return cls(d["method"], spec, coef, lambdas, d.get("alpha"))

    def dumps(self) -> str:
        return kvtext.dumps(self.to_dict(), header="ARX mean-equation fit")

    @classmethod
    def loads(cls, text: str) -> "MeanModelFit":
        return cls.from_dict(kvtext.loads(text))


def residuals(fit: MeanModelFit, problem: RegressionProblem) -> np.ndarray:
    if problem.spec != fit.spec or problem.X.shape[1] != fit.coef.shape[1]:
        raise DataError("problem layout does not match the fit's design spec")
    return problem.y - fit.predict(problem.X, problem.target)


def fit_mean_model(series: DailyBivariateSeries, method: str = "enet", alpha: float = DEFAULT_ALPHA,
                   folds: int = 10, block_length: int = 7, spec: DesignSpec | None = None) -> MeanModelFit:
    """Fit both series' mean equations and attach in-sample residuals."""
    if method == "ols":
        spec = spec or DesignSpec.ols()
    elif method == "enet":
        spec = spec or DesignSpec.full()
    else:
        raise ValueError(f"unknown method {method!r}")
    problems = [build_problem(series, i, spec) for i in (1, 2)]
    coefs, lams = [], []
    for pr in problems:
        if method == "ols":
            coefs.append(fit_ols(pr))
            lams.append(None)
        else:
            lam = block_cv_lambda(pr, alpha, folds, block_length)
            coefs.append(fit_elastic_net(pr, alpha, lam))
            lams.append(lam)
    fit = MeanModelFit(method, spec, np.array(coefs), tuple(lams), alpha if method == "enet" else None)
    eps = np.column_stack([residuals(fit, pr) for pr in problems])
    return MeanModelFit(fit.method, spec, fit.coef, fit.lambdas, fit.alpha, eps, problems[0].dates)


def inclusion_mask(fit: MeanModelFit) -> np.ndarray:
    """Which coefficients are non-zero, shape (2, p)."""
    return fit.coef != 0
