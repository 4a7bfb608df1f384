"""Forecast evaluation: absolute and squared error, pinball loss, energy score, Diebold-Mariano."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DataError

QUANTILE_GRID = np.round(np.arange(1, 100) / 100, 2)


def ae(obs, median_forecast):
    return np.abs(np.asarray(obs, dtype=float) - np.asarray(median_forecast, dtype=float))


def se(obs, mean_forecast):
    return (np.asarray(obs, dtype=float) - np.asarray(mean_forecast, dtype=float)) ** 2


def pinball(obs, q_forecast, q):
    """Quantile loss of forecast(s) ``q_forecast`` at level(s) ``q``."""
    obs = np.asarray(obs, dtype=float)
    fc = np.asarray(q_forecast, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.where(fc >= obs, (1 - q) * (fc - obs), q * (obs - fc))


def pinball_day(obs: float, quantile_forecasts, grid=QUANTILE_GRID) -> tuple[np.ndarray, float]:
    """Per-level losses over the grid and their mean."""
    fc = np.asarray(quantile_forecasts, dtype=float)
    if fc.shape != np.shape(grid):
        raise ValueError("one forecast per grid level is required")
    losses = pinball(obs, fc, grid)
    return losses, float(losses.mean())


def energy_score_day(draws, obs) -> tuple[float, float, float]:
    """(ES, ED, EI) for one ensemble slice of shape (M, k) against one outcome.

    EI pairs each draw with the next one in generation order, the last with
    the first.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise DataError("empty ensemble")
    obs = np.asarray(obs, dtype=float).reshape(1, -1)
    ed = float(np.mean(np.linalg.norm(x - obs, axis=1)))
    ei = float(np.mean(np.linalg.norm(x - np.roll(x, -1, axis=0), axis=1)))
    return ed - 0.5 * ei, ed, ei


def aggregate(losses) -> float:
    v = np.asarray(losses, dtype=float)
    if v.size == 0:
        raise DataError("no losses to aggregate")
    return float(v.mean())


@dataclass(frozen=True)
class DMResult:
    statistic: float | None
    p_less: float | None         # evidence that A's loss is smaller
    p_greater: float | None      # evidence that A's loss is larger
    n: int
    degenerate: bool = False


def _hac_variance(d: np.ndarray, lags: int) -> float:
    c = d - d.mean()
    n = c.size
    v = c @ c / n
    for k in range(1, min(lags, n - 1) + 1):
        v += 2 * (1 - k / (lags + 1)) * (c[k:] @ c[:-k]) / n
    return v * n / (n - 1)


def dm_test(loss_a, loss_b, hac_lags: int | None = None) -> DMResult:
    """Diebold-Mariano statistic on the differential L_A - L_B.

    The variance is the plain sample variance unless ``hac_lags`` asks for a
    Bartlett-kernel long-run estimate.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("loss series must be one-dimensional and of equal length")
    n = a.size
    if n < 2:
        raise DataError("at least two loss pairs are needed")
    d = a - b
    var = float(d.var(ddof=1)) if hac_lags is None else _hac_variance(d, hac_lags)
    # exact zero or rounding-level spread both mean there is no information in the differential
    if not var > 1e-24 * max(1.0, float(np.mean(d * d))):
        return DMResult(None, None, None, n, True)
    t = float(d.mean() / np.sqrt(var / n))
    return DMResult(t, float(norm.cdf(t)), float(norm.sf(t)), n)


# ---------------------------------------------------------------------------
# per-window losses and reports

SERIES_CRITERIA = ("AE", "SE", "PB")
JOINT_CRITERIA = ("ES", "ED", "EI")
CRITERIA = SERIES_CRITERIA + JOINT_CRITERIA


def window_losses(paths: np.ndarray, realized: np.ndarray, grid=QUANTILE_GRID) -> dict:
    """All losses for one ensemble (M, H', 2) against realized values (H', 2).

    Returns arrays keyed by criterion: series criteria have shape (H', 2),
    joint ones (H',).
    """
    paths = np.asarray(paths, dtype=float)
    realized = np.asarray(realized, dtype=float)
    if paths.shape[0] == 0:
        raise DataError("empty ensemble")
    if paths.shape[1:] != realized.shape:
        raise ValueError("ensemble and realizations disagree on horizons")
    out = {k: np.empty(realized.shape) for k in SERIES_CRITERIA}
    out.update({k: np.empty(realized.shape[0]) for k in JOINT_CRITERIA})
    qs = np.quantile(paths, grid, axis=0, method="linear")        # (K, H', 2)
    med = np.median(paths, axis=0)
    mean = paths.mean(axis=0)
    out["AE"][:] = ae(realized, med)
    out["SE"][:] = se(realized, mean)
    out["PB"][:] = pinball(realized[None], qs, np.asarray(grid)[:, None, None]).mean(axis=0)
    for h in range(realized.shape[0]):
        out["ES"][h], out["ED"][h], out["EI"][h] = energy_score_day(paths[:, h], realized[h])
    return out


@dataclass
class ScoreReport:
    """Per-model, per-horizon loss series and their means, with DM comparisons.

    ``losses[model][criterion]`` is a list over horizons of per-window loss
    arrays: shape (N_h, 2) for series criteria and (N_h,) for joint ones.
    """

    models: tuple
    horizons: int
    losses: dict = field(default_factory=dict)
    hac_lags: int | None = None

    @classmethod
    def from_windows(cls, models, horizons: int, per_window: list, hac_lags: int | None = None) -> "ScoreReport":
        """``per_window`` holds ``{model: window_losses(...)}`` in window order."""
        losses = {m: {c: [[] for _ in range(horizons)] for c in CRITERIA} for m in models}
        for wl in per_window:
            for m in models:
                for c in CRITERIA:
                    for h, v in enumerate(wl[m][c]):
                        losses[m][c][h].append(v)
        for m in models:
            for c in CRITERIA:
                losses[m][c] = [np.array(v) for v in losses[m][c]]
        return cls(tuple(models), horizons, losses, hac_lags)

    def n_windows(self, h: int) -> int:
        return len(self.losses[self.models[0]]["ES"][h - 1])

    def series_of(self, model: str, criterion: str, h: int, series: int | None = None) -> np.ndarray:
        v = self.losses[model][criterion][h - 1]
        if criterion in SERIES_CRITERIA:
            if series is None:
                raise ValueError(f"{criterion} needs a series index")
            return v[:, series - 1]
        return v

    def mean(self, model: str, criterion: str, h: int, series: int | None = None) -> float:
        return aggregate(self.series_of(model, criterion, h, series))

    def cells(self):
        """(criterion, series) pairs reported per horizon; series 0 marks a joint criterion."""
        for c in SERIES_CRITERIA:
            for i in (1, 2):
                yield c, i
        for c in JOINT_CRITERIA:
            yield c, 0

    def rows(self) -> list[dict]:
        out = []
        for m in self.models:
            for h in range(1, self.horizons + 1):
                if self.n_windows(h) == 0:
                    continue
                for c, i in self.cells():
                    out.append({"model": m, "horizon": h, "criterion": c, "series": i or "joint",
                                "n": self.n_windows(h), "value": self.mean(m, c, h, i or None)})
        return out

    def dm(self, criterion: str, h: int, series: int | None = None) -> dict:
        """DM results for every ordered model pair (A, B)."""
        out = {}
        for a in self.models:
            for b in self.models:
                if a != b:
                    out[(a, b)] = dm_test(self.series_of(a, criterion, h, series),
                                          self.series_of(b, criterion, h, series), self.hac_lags)
        return out

    def relative_rows(self, baseline: str) -> list[dict]:
        base = {(r["horizon"], r["criterion"], r["series"]): r["value"]
                for r in self.rows() if r["model"] == baseline}
        out = []
        for r in self.rows():
            ref = base[(r["horizon"], r["criterion"], r["series"])]
            out.append({**r, "value": r["value"] / ref if ref != 0 else float("nan")})
        return out

    # export ------------------------------------------------------------------

    def write_csv(self, path, baseline: str | None = None) -> None:
        rows = self.rows() if baseline is None else self.relative_rows(baseline)
        with open(path, "w", newline="") as fh:
            if baseline is not None:
                fh.write(f"# value = Score(model) / Score({baseline}), per horizon, criterion and series\n")
            w = csv.DictWriter(fh, fieldnames=["model", "horizon", "criterion", "series", "n", "value"])
            w.writeheader()
            for r in rows:
                w.writerow({**r, "value": repr(float(r["value"]))})

    def to_json(self) -> dict:
        doc = {"models": list(self.models), "horizons": self.horizons, "hac_lags": self.hac_lags, "scores": {}}
        for r in self.rows():
            doc["scores"].setdefault(r["model"], {}).setdefault(f"h{r['horizon']}", {}) \
                [f"{r['criterion']}_{r['series']}"] = r["value"]
        return doc

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    def write_dm(self, path, criterion: str, h: int, series: int | None = None) -> None:
        """Matrix of t-statistics (row model A against column model B) with one-sided p-values."""
        res = self.dm(criterion, h, series)
        with open(path, "w", newline="") as fh:
            fh.write(f"# DM on L_A - L_B, criterion={criterion} series={series or 'joint'} horizon={h}; "
                     "p_less: A better, p_greater: B better\n")
            w = csv.writer(fh)
            w.writerow(["model_a", "model_b", "t", "p_less", "p_greater", "n", "degenerate"])
            for (a, b), r in res.items():
                w.writerow([a, b, "" if r.statistic is None else repr(r.statistic),
                            "" if r.p_less is None else repr(r.p_less),
                            "" if r.p_greater is None else repr(r.p_greater), r.n, r.degenerate])

