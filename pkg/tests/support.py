"""Shared generators for the test suite."""

from __future__ import annotations

import numpy as np

from bijump.design_matrix import DesignSpec
from bijump.estimators import MeanModelFit
from bijump.market_data import DailyBivariateSeries
from bijump.residual_models import ResidualModelFit, components, draw_residuals
from bijump.simulator import simulate_paths

START = np.datetime64("2015-01-01")

# residual-model parameters used for simulation across the suite
TRUE_PARAMS = {
    "IJ": dict(sigma1=2.0, sigma2=3.0, rho=0.5, gamma1=10.0, gamma2=14.0,
               mu1=-3.0, mu2=5.0, lam1=0.06, lam2=0.08),
    "BIJ": dict(sigma1=2.0, sigma2=3.0, rho=0.5, gamma1=10.0, gamma2=14.0, varrho=0.6,
                p10=0.03, p01=0.04, p11=0.05, mu1=-3.0, mu2=5.0),
    "BIJ-MU": dict(sigma1=2.0, sigma2=3.0, rho=0.5, gamma1=10.0, gamma2=14.0, varrho=0.6,
                   p10=0.03, p01=0.04, p11=0.05, mu0_1=-2.0, mu0_2=4.0, mu1_1=0.1, mu1_2=-0.05),
    "GARCH": dict(a0_1=0.5, a1_1=0.1, a2_1=0.8, a0_2=1.0, a1_2=0.15, a2_2=0.75, rho=0.5,
                  s2init_1=5.0, s2init_2=10.0),
    "BIJ-MU-GARCH": dict(a0_1=0.4, a1_1=0.05, a2_1=0.85, a0_2=0.9, a1_2=0.05, a2_2=0.85, rho=0.5,
                         s2init_1=4.0, s2init_2=9.0, gamma1=10.0, gamma2=14.0, varrho=0.6,
                         p10=0.03, p01=0.04, p11=0.05, mu0_1=-2.0, mu0_2=4.0, mu1_1=0.1, mu1_2=-0.05),
}

# large bivariate jumps on small continuous noise, so the BiJ structure
# stands out inside a 120-day window
_Q = 0.10 / 3
SELF_CONSISTENCY_BIJ = dict(sigma1=0.5, sigma2=0.75, rho=0.5, gamma1=20.0, gamma2=30.0, varrho=0.6,
                            p10=0.8 * _Q, p01=0.8 * _Q, p11=0.10 - 1.6 * _Q, mu1=0.0, mu2=4.0)


def simulate_residuals(tag: str, params: dict, n: int, rng: np.random.Generator, prev_y=None):
    """Residual pairs from a tagged model, one day at a time.

    Lagged prices for state-dependent jump means are exogenous here
    (30 + 5 N(0, 1) per day unless given). GARCH starts as the likelihood
    does: pre-sample squared residual and variance both at s2init.
    """
    comp = components(tag, params)
    if prev_y is None:
        prev_y = 30.0 + 5.0 * rng.standard_normal((n, 2))
    s2 = np.array([params.get("s2init_1", 1.0), params.get("s2init_2", 1.0)])
    e = np.sqrt(s2)
    eps = np.empty((n, 2))
    for d in range(n):
        z = rng.standard_normal(4)
        u = rng.random(1)
        prev = {"eps": e[None], "sigma2": s2[None], "y": prev_y[d][None]}
        out, s2n = draw_residuals(comp, prev, z[None, :2], z[None, 2:], u)
        e, s2 = out[0], s2n[0]
        eps[d] = e
    return eps, prev_y


def toy_mean_fit(own: float = 0.55, cross: float = 0.15, ar7: float = 0.1) -> MeanModelFit:
    """A stationary ARX mean equation in the full layout."""
    spec = DesignSpec.full()
    labels = spec.labels
    coef = np.zeros((2, spec.p))
    for i, (own_lab, other_lab) in enumerate((("AR1,1", "AR1,2"), ("AR1,2", "AR1,1"))):
        coef[i, labels.index("cons")] = 8.0
        coef[i, labels.index(own_lab)] = own
        coef[i, labels.index(other_lab)] = cross
        coef[i, labels.index(f"AR7,{i + 1}")] = ar7
        coef[i, labels.index("Sat")] = -3.0
        coef[i, labels.index("Sun")] = -6.0
    return MeanModelFit("enet", spec, coef)


def toy_series(tag: str, params: dict, n_days: int, seed: int, burn: int = 50,
               mean_fit: MeanModelFit | None = None) -> DailyBivariateSeries:
    """Daily prices from an ARX mean equation plus a residual model, via one long simulated path."""
    history = DailyBivariateSeries(START + np.arange(8), np.full((8, 2), 30.0))
    fit = ResidualModelFit(tag, params, 0.0)
    ens = simulate_paths(mean_fit or toy_mean_fit(), fit, history, n_days + burn, 1, seed=seed)
    return DailyBivariateSeries(ens.dates[burn:], ens.paths[0, burn:])


def gaussian_series(n_days: int, seed: int) -> DailyBivariateSeries:
    return toy_series("GAUSS", dict(sigma1=3.0, sigma2=4.0, rho=0.7), n_days, seed)


def pg_oracle(Xs, ys, alpha, lam, iters=5000):
    """Accelerated projected gradient on beta = u - v with u, v >= 0."""
    p = Xs.shape[1]
    A = 2 * Xs.T @ Xs + lam * (1 - alpha) * np.eye(p)
    b = 2 * Xs.T @ ys
    step = 1.0 / (2 * np.linalg.eigvalsh(A)[-1])
    w = np.zeros(2 * p)
    z, t = w.copy(), 1.0
    for _ in range(iters):
        beta = z[:p] - z[p:]
        g = A @ beta - b
        grad = np.concatenate([g, -g]) + lam * alpha
        w_new = np.maximum(z - step * grad, 0.0)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = w_new + (t - 1) / t_new * (w_new - w)
        w, t = w_new, t_new
    return w[:p] - w[p:]


def write_hourly(path, dates, prices) -> None:
    """Hourly file: prices has shape (days, 24)."""
    with open(path, "w") as fh:
        fh.write("date,hour,price\n")
        for d, row in zip(dates, prices):
            for h, p in enumerate(row):
                fh.write(f"{d},{h},{float(p)!r}\n")
