"""Regressor layout for the ARX mean equation.

Columns, in order: intercept; lags 1..8 of both series; seven day-of-week
dummies (1 = Monday); and for every weekday the dummy times each series'
lag-1 value. The OLS layout drops the Wednesday interaction pair, which
otherwise sums with the other six to the lag-1 columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError
from .market_data import DailyBivariateSeries, iso_weekday

DAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
WEDNESDAY = 3


@dataclass(frozen=True)
class DesignSpec:
    lags: int = 8
    n_dow: int = 7
    wednesday_interactions: bool = True

    @classmethod
    def full(cls) -> "DesignSpec":
        return cls()

    @classmethod
    def ols(cls) -> "DesignSpec":
        return cls(wednesday_interactions=False)

    @property
    def interaction_days(self) -> tuple[int, ...]:
        return tuple(k for k in range(1, self.n_dow + 1)
                     if self.wednesday_interactions or k != WEDNESDAY)

    @cached_property
    def labels(self) -> tuple[str, ...]:
        out = ["cons"]
        for k in range(1, self.lags + 1):
            out += [f"AR{k},1", f"AR{k},2"]
        out += [DAY_NAMES[k - 1] for k in range(1, self.n_dow + 1)]
        for k in self.interaction_days:
            out += [f"{DAY_NAMES[k - 1]} AR1,1", f"{DAY_NAMES[k - 1]} AR1,2"]
        return tuple(out)

    @property
    def p(self) -> int:
        return 1 + 2 * self.lags + self.n_dow + 2 * len(self.interaction_days)

    def to_dict(self) -> dict:
        return {"lags": self.lags, "n_dow": self.n_dow,
                "wednesday_interactions": self.wednesday_interactions}


@dataclass(frozen=True)
class RegressionProblem:
    X: np.ndarray
    y: np.ndarray
    dates: np.ndarray
    spec: DesignSpec
    target: int

    @property
    def labels(self) -> tuple[str, ...]:
        return self.spec.labels

    def __len__(self) -> int:
        return self.y.size


def _rows(lagged: np.ndarray, dow: np.ndarray, spec: DesignSpec) -> np.ndarray:
    """Regressor rows from lag blocks of shape (n, lags, 2), most recent last."""
    n = lagged.shape[0]
    X = np.empty((n, spec.p))
    X[:, 0] = 1.0
    # lag k is lagged[:, -k]
    recent_first = lagged[:, ::-1, :]
    X[:, 1:1 + 2 * spec.lags] = recent_first.reshape(n, 2 * spec.lags)
    col = 1 + 2 * spec.lags
    dummies = (dow[:, None] == np.arange(1, spec.n_dow + 1)[None, :]).astype(float)
    X[:, col:col + spec.n_dow] = dummies
    col += spec.n_dow
    last = lagged[:, -1, :]
    for k in spec.interaction_days:
        X[:, col] = dummies[:, k - 1] * last[:, 0]
        X[:, col + 1] = dummies[:, k - 1] * last[:, 1]
        col += 2
    return X


def build_problem(series: DailyBivariateSeries, target: int, spec: DesignSpec = DesignSpec()) -> RegressionProblem:
    """Stack ARX regression rows for target series 1 (off-peak) or 2 (peak)."""
    if target not in (1, 2):
        raise ValueError("target must be 1 (off-peak) or 2 (peak)")
    n = len(series)
    if n < spec.lags + 1:
        raise DataError(f"series of length {n} is too short for {spec.lags} lags")
    v = series.values
    windows = np.lib.stride_tricks.sliding_window_view(v, (spec.lags, 2))[:-1, 0]
    X = _rows(windows, series.dow[spec.lags:], spec)
    return RegressionProblem(X, v[spec.lags:, target - 1].copy(), series.dates[spec.lags:], spec, target)


def build_forecast_row(history, date, spec: DesignSpec = DesignSpec()) -> np.ndarray:
    """Regressor vector for ``date`` given the ``spec.lags`` preceding pairs."""
    history = np.asarray(history, dtype=float)
    if history.shape != (spec.lags, 2):
        raise DataError(f"history must have shape ({spec.lags}, 2), got {history.shape}")
    dow = iso_weekday(np.array([date], dtype="datetime64[D]"))
    return _rows(history[None], dow, spec)[0]


def build_forecast_rows(histories: np.ndarray, date, spec: DesignSpec) -> np.ndarray:
    """Vectorized ``build_forecast_row`` over a stack of histories (m, lags, 2)."""
    dow = np.full(histories.shape[0], iso_weekday(np.array([date], dtype="datetime64[D]"))[0])
    return _rows(histories, dow, spec)
