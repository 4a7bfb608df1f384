import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from bijump.errors import DataError
from bijump.scoring import (
    CRITERIA, QUANTILE_GRID, ScoreReport, ae, aggregate, dm_test, energy_score_day, pinball, pinball_day, se,
    window_losses,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_grid():
    assert QUANTILE_GRID.size == 99 and QUANTILE_GRID[0] == 0.01 and QUANTILE_GRID[-1] == 0.99
    assert np.all(np.diff(QUANTILE_GRID) > 0)


def test_point_losses():
    assert ae(12, 12) == se(12, 12) == 0
    assert ae(12, 10) == 2 and se(12, 10) == 4


def test_pinball_examples():
    assert pinball(12, 10, 0.5) == pytest.approx(1.0)
    assert pinball(12, 15, 0.9) == pytest.approx(0.3)
    losses, mean = pinball_day(7.0, np.full(99, 7.0))
    assert mean == 0 and np.all(losses == 0)
    with pytest.raises(ValueError):
        pinball_day(1.0, np.zeros(5))


@settings(max_examples=200, deadline=None)
@given(finite, finite)
def test_median_pinball_is_half_the_absolute_error(y, f):
    assert pinball(y, f, 0.5) == pytest.approx(0.5 * abs(y - f), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 40), st.just(2)), elements=finite), arrays(float, 2, elements=finite))
def test_energy_score_identity(draws, obs):
    es, ed, ei = energy_score_day(draws, obs)
    assert es == ed - 0.5 * ei
    assert ed >= 0 and ei >= 0


def test_energy_score_examples():
    assert energy_score_day([[0.0, 0.0], [3.0, 4.0]], [0.0, 0.0]) == (0.0, 2.5, 5.0)
    assert energy_score_day([[1.0, 2.0]], [1.0, 2.0]) == (0.0, 0.0, 0.0)
    assert energy_score_day(np.tile([[1.0, 1.0]], (9, 1)), [4.0, 5.0])[0] == pytest.approx(5.0)
    with pytest.raises(DataError):
        energy_score_day(np.empty((0, 2)), [0.0, 0.0])


def test_order_sensitivity_of_the_interaction_term():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2))
    perm = x[rng.permutation(50)]
    obs = [0.3, -0.2]
    assert energy_score_day(perm, obs)[1] == pytest.approx(energy_score_day(x, obs)[1], rel=1e-14)
    assert energy_score_day(perm, obs)[2] != energy_score_day(x, obs)[2]
    # sorted paths make neighbours close and shrink EI
    xs = np.sort(x, axis=0)
    assert energy_score_day(xs, obs)[2] < energy_score_day(x, obs)[2]


@pytest.mark.parametrize("obs", [-1.7, 0.0, 0.4, 2.5])
def test_crps_relation(obs):
    draws = np.random.default_rng(1).standard_normal(10_000)
    es = energy_score_day(draws, [obs])[0]
    _, pb = pinball_day(obs, stats.norm.ppf(QUANTILE_GRID))
    assert es == pytest.approx(2 * pb, rel=0.02)


def test_aggregate():
    assert aggregate([3.5]) == 3.5 and aggregate([1, 2, 3]) == 2
    with pytest.raises(DataError):
        aggregate([])


# --- Diebold-Mariano ------------------------------------------------------------------------

def test_dm_antisymmetry_and_p_values():
    rng = np.random.default_rng(2)
    a, b = rng.gamma(2, size=300), rng.gamma(2.2, size=300)
    ab, ba = dm_test(a, b), dm_test(b, a)
    assert ab.statistic == -ba.statistic
    assert ab.p_less == pytest.approx(ba.p_greater) and ab.p_less + ab.p_greater == pytest.approx(1)
    d = a - b
    assert ab.statistic == pytest.approx(d.mean() / (d.std(ddof=1) / np.sqrt(300)))
    assert ab.p_less == pytest.approx(stats.norm.cdf(ab.statistic))


def test_dm_degenerate_cases():
    x = np.random.default_rng(3).normal(size=20)
    assert dm_test(x, x).degenerate and dm_test(x, x).statistic is None
    assert dm_test(x + 1, x).degenerate
    with pytest.raises(DataError):
        dm_test([1.0], [2.0])
    with pytest.raises(ValueError):
        dm_test([1.0, 2.0], [1.0])


def test_dm_coverage_under_the_null():
    rng = np.random.default_rng(4)
    inside = 0
    for _ in range(1000):
        r = dm_test(rng.standard_normal(10_000), np.zeros(10_000))
        inside += abs(r.statistic) < 1.96
    # binomial(1000, 0.95): sd 6.9
    assert abs(inside / 1000 - 0.95) <= 3 * np.sqrt(0.95 * 0.05 / 1000)


def test_hac_variance_without_autocorrelation_is_close_to_plain():
    rng = np.random.default_rng(5)
    d = rng.normal(size=5000)
    plain = dm_test(d, np.zeros_like(d)).statistic
    hac = dm_test(d, np.zeros_like(d), hac_lags=5).statistic
    assert hac == pytest.approx(plain, rel=0.1)
    # positively autocorrelated differentials get a larger long-run variance
    ar = np.empty(5000)
    ar[0] = 0
    for t in range(1, 5000):
        ar[t] = 0.7 * ar[t - 1] + d[t]
    ar += 0.1
    assert abs(dm_test(ar, np.zeros(5000), hac_lags=10).statistic) < abs(dm_test(ar, np.zeros(5000)).statistic)


# --- window losses and reports -----------------------------------------------------------------

def test_window_losses_by_hand():
    rng = np.random.default_rng(6)
    paths = rng.normal(30, 5, size=(501, 3, 2))
    real = rng.normal(30, 5, size=(3, 2))
    out = window_losses(paths, real)
    for h in range(3):
        for i in range(2):
            v = paths[:, h, i]
            assert out["AE"][h, i] == pytest.approx(abs(real[h, i] - np.median(v)))
            assert out["SE"][h, i] == pytest.approx((real[h, i] - v.mean()) ** 2)
            q = np.quantile(v, QUANTILE_GRID)
            assert out["PB"][h, i] == pytest.approx(pinball_day(real[h, i], q)[1])
        assert (out["ES"][h], out["ED"][h], out["EI"][h]) == energy_score_day(paths[:, h], real[h])
    with pytest.raises(ValueError):
        window_losses(paths, real[:2])


def make_report(n=30, seed=7):
    rng = np.random.default_rng(seed)
    per_window = []
    for _ in range(n):
        real = rng.normal(size=(2, 2))
        wl = {"A": window_losses(rng.normal(size=(200, 2, 2)), real),
              "B": window_losses(rng.normal(size=(200, 2, 2)) * 1.5, real)}
        per_window.append(wl)
    return ScoreReport.from_windows(("A", "B"), 2, per_window)


def test_report_means_and_relative_rows():
    rep = make_report()
    assert rep.n_windows(1) == 30
    es = rep.series_of("A", "ES", 2)
    assert rep.mean("A", "ES", 2) == pytest.approx(es.mean())
    assert np.allclose(rep.series_of("A", "ES", 1),
                       rep.series_of("A", "ED", 1) - 0.5 * rep.series_of("A", "EI", 1), rtol=0, atol=1e-12)
    rows = rep.rows()
    assert len(rows) == 2 * 2 * 9
    rel = {(r["model"], r["horizon"], r["criterion"], r["series"]): r["value"] for r in rep.relative_rows("A")}
    assert all(v == 1.0 for k, v in rel.items() if k[0] == "A")
    assert rel[("B", 1, "PB", 2)] == pytest.approx(rep.mean("B", "PB", 1, 2) / rep.mean("A", "PB", 1, 2))
    with pytest.raises(ValueError):
        rep.series_of("A", "AE", 1)


def test_report_files(tmp_path):
    rep = make_report()
    rep.write_csv(tmp_path / "s.csv")
    rep.write_csv(tmp_path / "r.csv", baseline="A")
    assert (tmp_path / "r.csv").read_text().startswith("# value = Score(model) / Score(A)")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["value"]) == rep.rows()[0]["value"]
    doc = rep.to_json()
    assert doc["scores"]["B"]["h2"]["ES_joint"] == rep.mean("B", "ES", 2)
    rep.write_dm(tmp_path / "dm.csv", "ES", 1)
    lines = (tmp_path / "dm.csv").read_text().splitlines()
    assert lines[1] == "model_a,model_b,t,p_less,p_greater,n,degenerate"
    t_ab = float(lines[2].split(",")[2])
    assert t_ab == rep.dm("ES", 1)[("A", "B")].statistic
    assert set(CRITERIA) == {"AE", "SE", "PB", "ES", "ED", "EI"}
