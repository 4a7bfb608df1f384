"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary.
"""

import os
import time

import numpy as np
from scipy import stats

from bijump.backtest import BacktestConfig, resume, run_backtest
from bijump.design_matrix import DesignSpec, build_problem
from bijump.estimators import (
    StandardizationRecord, coordinate_descent, enet_objective, fit_elastic_net, fit_ols, lambda_max,
)
from bijump.fitting import fit_ladder
from bijump.market_data import DailyBivariateSeries, descriptive_stats, read_prices, standardized_moment
from bijump.residual_models import (
    ContCov, GarchParams, JumpCov, JumpMean, JumpOccurrence, components, draw_residuals,
    loglik_bij, loglik_ccc_garch, loglik_gauss, loglik_ij, unconditional_variance_ij,
)
from bijump.scoring import QUANTILE_GRID, dm_test, energy_score_day, pinball, pinball_day

from support import (
    SELF_CONSISTENCY_BIJ, TRUE_PARAMS, gaussian_series, pg_oracle, simulate_residuals, toy_mean_fit, toy_series,
)

EPEX_ENV = "BIJUMP_EPEX_FILE"

# published descriptive table of the 2014-2017 off-peak and peak series
TABLE_1 = {
    "mean": (28.30, 35.48), "sd": (8.74, 13.79), "median": (29.36, 35.09), "min": (-56.38, -45.27),
    "max": (73.66, 130.18), "cor": (0.80, 0.80), "skew": (-1.61, 0.48), "coskew": (-0.59, 0.01),
}


def series_of(values):
    values = np.asarray(values, dtype=float)
    return DailyBivariateSeries(np.datetime64("2016-01-01") + np.arange(len(values)), values)


# --- 1: descriptive statistics ----------------------------------------------------

def test_criterion_1_descriptive_statistics(verdict):
    t0 = time.perf_counter()
    path = os.environ.get(EPEX_ENV)
    if path:
        table = descriptive_stats(read_prices(path)[0])
        rows = dict(table.rows())
        worst = 0.0
        for k, col in enumerate(table.COLUMNS):
            for i, name in enumerate(("off-peak", "peak")):
                worst = max(worst, abs(rows[name][k] - TABLE_1[col][i]))
        ok = worst <= 0.01 + 1e-9
        detail = f"published table: largest cell deviation {worst:.4f} (limit 0.01)"
    else:
        rng = np.random.default_rng(11)
        x = rng.gamma(2.0, 5.0, size=(400, 2))
        x[:, 1] += 0.5 * x[:, 0]
        s = series_of(x)
        checks = [
            abs(standardized_moment(s, 2, 0) - 1) < 1e-12,
            abs(standardized_moment(s, 0, 2) - 1) < 1e-12,
            abs(standardized_moment(series_of(np.column_stack([x[:, 0], x[:, 0]])), 1, 1) - 1) < 1e-12,
            abs(standardized_moment(s, 1, 1) - np.corrcoef(x.T)[0, 1]) < 1e-12,
            abs(standardized_moment(s, 3, 0) - stats.skew(x[:, 0])) < 1e-12,
        ]
        two = descriptive_stats(series_of([[0.0, 0.0], [2.0, 2.0]]))
        checks += [np.allclose(two.mean, [1.0, 1.0]), abs(two.cor - 1) < 1e-12]
        ok = all(checks)
        detail = f"{EPEX_ENV} not set; {sum(checks)}/{len(checks)} moment examples hold"
    elapsed = time.perf_counter() - t0
    verdict(1, ok and elapsed < 1.0, f"{detail}; {elapsed:.2f} s (limit 1 s)")


# --- 2: estimator equivalences -------------------------------------------------------

def test_criterion_2_estimator_equivalences(verdict):
    t0 = time.perf_counter()
    gap = 0.0
    for target in (1, 2):
        pr = build_problem(gaussian_series(208, 30 + target), target, DesignSpec(n_dow=6))
        ols = fit_ols(pr)
        gap = max(gap, np.max(np.abs(fit_elastic_net(pr, 0.5, 0.0) - ols)) / max(1.0, np.abs(ols).max()))

    pr = build_problem(gaussian_series(208, 33), 1, DesignSpec.full())
    rec = StandardizationRecord.from_problem(pr.X, pr.y)
    Xs, ys = rec.transform(pr.X, pr.y)
    top = lambda_max(Xs, ys, 0.5)
    sparse = np.all(coordinate_descent(Xs, ys, 0.5, top * (1 + 1e-9))[0] == 0)
    sparse &= np.count_nonzero(coordinate_descent(Xs, ys, 0.5, top * 0.99)[0]) > 0

    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        n, p = rng.integers(30, 80), rng.integers(3, 8)
        X = rng.normal(size=(n, p)) @ np.diag(rng.uniform(0.5, 3, p))
        y = X @ rng.normal(size=p) + rng.normal(size=n)
        Xs, ys = (X - X.mean(0)) / X.std(0), (y - y.mean()) / y.std()
        alpha, lam = rng.uniform(0.1, 1.0), 10 ** rng.uniform(-2, 0.5)
        beta = coordinate_descent(Xs, ys, alpha, lam)[0]
        worst = max(worst, abs(enet_objective(Xs, ys, beta, alpha, lam)
                               - enet_objective(Xs, ys, pg_oracle(Xs, ys, alpha, lam), alpha, lam)))
    elapsed = time.perf_counter() - t0
    ok = gap <= 1e-6 and sparse and worst <= 1e-8 and elapsed < 30
    verdict(2, ok, f"lambda=0 vs OLS {gap:.1e} (1e-6); lambda_max sparsity {bool(sparse)}; "
                   f"objective vs oracle {worst:.1e} (1e-8); {elapsed:.1f} s (limit 30 s)")


# --- 3: likelihood degeneracies -----------------------------------------------------------

def test_criterion_3_likelihood_degeneracies(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        eps = rng.normal(size=(200, 2)) * rng.uniform(1, 6, 2)
        s1, s2, rho = rng.uniform(0.5, 5), rng.uniform(0.5, 5), rng.uniform(-0.9, 0.9)
        g1, g2, vr = rng.uniform(1, 15), rng.uniform(1, 15), rng.uniform(-0.9, 0.9)
        mu = rng.uniform(-5, 5, 2)
        cont = ContCov(s1, s2, rho)
        d1 = loglik_bij(eps, cont, JumpCov(g1, g2, vr), JumpOccurrence.from_jumps(0, 0, 0), JumpMean(mu))
        d1 -= loglik_gauss(eps, cont)
        l1, l2 = rng.uniform(0.01, 0.4, 2)
        d2 = loglik_bij(eps, ContCov(s1, s2, 0.0), JumpCov(g1, g2, 0.0), JumpOccurrence.independent(l1, l2),
                        JumpMean(mu))
        d2 -= loglik_ij(eps[:, 0], l1, mu[0], s1, g1) + loglik_ij(eps[:, 1], l2, mu[1], s2, g2)
        s0 = rng.uniform(1, 30, 2)
        g = GarchParams([s1 ** 2, s2 ** 2], [0.0, 0.0], [0.0, 0.0], rho, s0)
        d3 = loglik_ccc_garch(eps, g) - loglik_gauss(eps, cont)
        worst = max(worst, abs(d1), abs(d2), abs(d3))
    elapsed = time.perf_counter() - t0
    verdict(3, worst <= 1e-10 and elapsed < 5, f"largest gap {worst:.1e} (1e-10); {elapsed:.2f} s (limit 5 s)")


# --- 4: moment oracle -------------------------------------------------------------------

def test_criterion_4_variance_formula(verdict):
    t0 = time.perf_counter()
    n = 10 ** 6
    worst = 0.0
    for k in range(5):
        rng = np.random.default_rng(400 + k)
        p = dict(sigma1=rng.uniform(0.5, 4), sigma2=rng.uniform(0.5, 4), rho=rng.uniform(-0.9, 0.9),
                 gamma1=rng.uniform(1, 15), gamma2=rng.uniform(1, 15), mu1=rng.uniform(-8, 8),
                 mu2=rng.uniform(-8, 8), lam1=rng.uniform(0.01, 0.5), lam2=rng.uniform(0.01, 0.5))
        c = components("IJ", p)
        want = unconditional_variance_ij(c.cont, c.jump_cov, c.occ.lam, c.jump_mean.mu0)
        prev = {"eps": np.zeros((n, 2)), "sigma2": np.ones((n, 2)), "y": np.zeros((n, 2))}
        x = draw_residuals(c, prev, rng.standard_normal((n, 2)), rng.standard_normal((n, 2)), rng.random(n))[0]
        x = x - x.mean(axis=0)
        for i, j in ((0, 0), (1, 1), (0, 1)):
            prod = x[:, i] * x[:, j]
            worst = max(worst, abs(prod.mean() - want[i][j]) / (prod.std(ddof=1) / np.sqrt(n)))
    elapsed = time.perf_counter() - t0
    verdict(4, worst <= 3 and elapsed < 60,
            f"largest deviation {worst:.2f} Monte Carlo SE (limit 3); {elapsed:.1f} s (limit 60 s)")


# --- 5: parameter recovery ------------------------------------------------------------------

NESTED = (("GAUSS", "IJ"), ("IJ", "BIJ"), ("BIJ", "BIJ-MU"), ("GAUSS", "GARCH"), ("BIJ-MU", "BIJ-MU-GARCH"))


def test_criterion_5_parameter_recovery(verdict):
    t0 = time.perf_counter()
    reps, n = 20, 4000
    lines, ok = [], True
    for k, tag in enumerate(("IJ", "BIJ", "BIJ-MU", "GARCH", "BIJ-MU-GARCH")):
        truth = TRUE_PARAMS[tag]
        est = {name: [] for name in truth}
        drop = 0.0
        for r in range(reps):
            eps, prev_y = simulate_residuals(tag, truth, n, np.random.default_rng(5000 + 100 * k + r))
            fits = fit_ladder(["GAUSS", tag], eps, prev_y)
            for name in truth:
                est[name].append(fits[tag].params[name])
            for small, big in NESTED:
                if small in fits and big in fits:
                    drop = max(drop, fits[small].loglik - fits[big].loglik)
        # the pre-sample GARCH variance is set from the data, not estimated
        z = {name: abs(np.mean(v) - truth[name]) / (np.std(v, ddof=1) / np.sqrt(reps))
             for name, v in est.items() if not name.startswith("s2init")}
        name = max(z, key=z.get)
        good = z[name] <= 4 and drop <= 1e-6
        ok &= good
        lines.append(f"{tag}: worst {name} {z[name]:.2f} SE, largest nested shortfall {drop:.1e}")
    elapsed = time.perf_counter() - t0
    verdict(5, ok and elapsed < 1200, "; ".join(lines) + f"; {elapsed:.0f} s (limit 1200 s)")


# --- 6: scoring identities -----------------------------------------------------------------

def test_criterion_6_scoring_identities(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    identity = all(
        (lambda es: es[0] == es[1] - 0.5 * es[2])(energy_score_day(rng.normal(size=(m, 2)) * 10, rng.normal(size=2)))
        for m in rng.integers(1, 60, 200))
    example = energy_score_day([[0.0, 0.0], [3.0, 4.0]], [0.0, 0.0]) == (0.0, 2.5, 5.0)
    y, f = rng.normal(size=1000) * 20, rng.normal(size=1000) * 20
    median = np.max(np.abs(pinball(y, f, 0.5) - 0.5 * np.abs(y - f))) <= 1e-12
    # 20 independent M = 10^4 Gaussian ensembles, 50 observations each, against
    # Gaussian-quantile forecasts; a single observation's ES carries up to ~2%
    # Monte Carlo noise near the centre, so the relation is checked on the mean
    q = stats.norm.ppf(QUANTILE_GRID)
    es_sum = pb_sum = 0.0
    for _ in range(20):
        draws = rng.standard_normal(10_000)
        for obs in rng.standard_normal(50):
            es_sum += energy_score_day(draws, [obs])[0]
            pb_sum += pinball_day(obs, q)[1]
    crps = abs(es_sum / (2 * pb_sum) - 1)
    a, b = rng.gamma(2, size=300), rng.gamma(2.2, size=300)
    anti = dm_test(a, b).statistic == -dm_test(b, a).statistic
    inside = sum(abs(dm_test(rng.standard_normal(10_000), np.zeros(10_000)).statistic) < 1.96
                 for _ in range(1000))
    cover = abs(inside / 1000 - 0.95) <= 3 * np.sqrt(0.95 * 0.05 / 1000)
    elapsed = time.perf_counter() - t0
    ok = identity and example and median and crps <= 0.02 and anti and cover and elapsed < 120
    verdict(6, ok, f"ES identity {identity}; M=2 example {example}; q=0.5 pinball {median}; "
                   f"CRPS relation {crps:.3f} (0.02); DM antisymmetry {anti}; coverage {inside}/1000; "
                   f"{elapsed:.1f} s (limit 120 s)")


# --- 7: end-to-end self-consistency -----------------------------------------------------------

def test_criterion_7_bivariate_jumps_win_on_their_own_data(verdict):
    t0 = time.perf_counter()
    models = ("ARX-enet", "ARX-BiJ")
    wins, margins = 0, []
    sparse = toy_mean_fit(own=0.5, cross=0.0, ar7=0.0)
    for seed in range(10):
        data = toy_series("BIJ", SELF_CONSISTENCY_BIJ, 142, 1000 + seed, mean_fit=sparse)
        cfg = BacktestConfig(window=120, horizons=3, n_paths=200, models=models, seed=seed, n_windows=20)
        rep = run_backtest(data, cfg).report
        es = {m: np.mean([rep.mean(m, "ES", h) for h in (1, 2, 3)]) for m in models}
        wins += es["ARX-BiJ"] <= es["ARX-enet"]
        margins.append(es["ARX-enet"] - es["ARX-BiJ"])
    elapsed = time.perf_counter() - t0
    verdict(7, wins >= 8 and elapsed < 600,
            f"BiJ mean ES <= Gaussian in {wins}/10 seeds (need 8); mean margin {np.mean(margins):.3f}; "
            f"{elapsed:.0f} s (limit 600 s)")


# --- 8: determinism --------------------------------------------------------------------------

def report_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted((root / "report").rglob("*")) if p.is_file()}


def test_criterion_8_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    data = toy_series("BIJ", SELF_CONSISTENCY_BIJ, 127, 77)
    cfg = dict(window=120, horizons=3, n_paths=200, seed=5,
               models=("ARX-OLS", "ARX-enet", "ARX-BiJ", "ARX-GARCH"))
    first = run_backtest(data, BacktestConfig(outdir=str(tmp_path / "a"), **cfg))
    run_backtest(data, BacktestConfig(outdir=str(tmp_path / "b"), **cfg))
    run_backtest(data, BacktestConfig(outdir=str(tmp_path / "c"), **cfg), limit=3)
    resumed = resume(tmp_path / "c")
    a, b, c = (report_bytes(tmp_path / d) for d in "abc")
    same = a == b
    after_resume = a == c and resumed.complete
    elapsed = time.perf_counter() - t0
    verdict(8, same and after_resume and len(first.windows) == 5 and elapsed < 300,
            f"repeat bit-identical {same}; interrupt after 3 of 5 + resume bit-identical {after_resume} "
            f"({len(a)} report files); {elapsed:.0f} s (limit 300 s)")
