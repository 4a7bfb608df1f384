"""Monte Carlo price paths from a fitted mean equation and residual model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design_matrix import build_forecast_rows
from .errors import DataError
from .estimators import MeanModelFit
from .market_data import DailyBivariateSeries
from .residual_models import ResidualModelFit, ResidualState, draw_residuals

# paths are drawn in fixed-size chunks, each from its own child stream, so
# path m does not depend on how many paths are requested
CHUNK = 1024


def _seed_sequence(seed) -> np.random.SeedSequence:
    entropy = [int(s) for s in np.atleast_1d(seed)]
    return np.random.SeedSequence(entropy)


def standard_variates(seed, n_paths: int, horizons: int):
    """Normals (n_paths, horizons, 4) and uniforms (n_paths, horizons) for the paths."""
    root = _seed_sequence(seed)
    n_chunks = -(-n_paths // CHUNK)
    zs, us = [], []
    for c in range(n_chunks):
        child = np.random.SeedSequence(root.entropy, spawn_key=(c,))
        rng = np.random.Generator(np.random.PCG64(child))
        zs.append(rng.standard_normal((CHUNK, horizons, 4)))
        us.append(rng.random((CHUNK, horizons)))
    return np.concatenate(zs)[:n_paths], np.concatenate(us)[:n_paths]


@dataclass(frozen=True)
class PathEnsemble:
    paths: np.ndarray           # (M, H, 2)
    dates: np.ndarray           # (H,) target days
    seed: tuple = ()
    model: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def horizons(self) -> int:
        return self.paths.shape[1]

    def at(self, h: int) -> np.ndarray:
        """Bivariate draws for horizon h (1-based), shape (M, 2)."""
        if not 1 <= h <= self.horizons:
            raise IndexError(f"horizon {h} outside 1..{self.horizons}")
        return self.paths[:, h - 1, :]

    # persistence -----------------------------------------------------------

    def save(self, stem) -> None:
        """Write ``<stem>.bin`` (int64 dims then float64 values, little-endian) and ``<stem>.json``."""
        stem = Path(stem)
        with open(stem.with_suffix(".bin"), "wb") as fh:
            fh.write(np.asarray(self.paths.shape, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(self.paths, dtype="<f8").tobytes())
        meta = {"dates": [str(d) for d in self.dates], "seed": [int(s) for s in self.seed],
                "model": self.model, **self.meta}
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, stem) -> "PathEnsemble":
        stem = Path(stem)
        raw = stem.with_suffix(".bin").read_bytes()
        if len(raw) < 24:
            raise DataError(f"{stem}.bin: truncated header")
        dims = tuple(int(v) for v in np.frombuffer(raw[:24], dtype="<i8"))
        data = np.frombuffer(raw[24:], dtype="<f8")
        if dims[2] != 2 or data.size != dims[0] * dims[1] * dims[2]:
            raise DataError(f"{stem}.bin: size does not match header {dims}")
        meta = json.loads(stem.with_suffix(".json").read_text())
        dates = np.array(meta.pop("dates"), dtype="datetime64[D]")
        seed = tuple(meta.pop("seed"))
        model = meta.pop("model")
        return cls(data.reshape(dims).copy(), dates, seed, model, meta)

    def export_text(self, path, k: int = 50) -> None:
        """First ``k`` paths as delimited text for plotting."""
        with open(path, "w") as fh:
            fh.write(f"# model={self.model} paths={min(k, self.n_paths)}/{self.n_paths}\n")
            fh.write("path,horizon,date,offpeak,peak\n")
            for m in range(min(k, self.n_paths)):
                for h in range(self.horizons):
                    a, b = self.paths[m, h]
                    fh.write(f"{m + 1},{h + 1},{self.dates[h]},{float(a)!r},{float(b)!r}\n")


def simulate_paths(mean_fit: MeanModelFit, resid_fit: ResidualModelFit, history: DailyBivariateSeries,
                   horizons: int = 7, n_paths: int = 16000, seed=0,
                   state: ResidualState | None = None, model: str = "") -> PathEnsemble:
    """Recurse the mean equation forward, adding residual draws on every day.

    Each horizon's regressors use the path's own simulated prices as lags and
    the true calendar date; the GARCH state and the lagged price feeding a
    state-dependent jump mean are tracked per path.
    """
    lags = mean_fit.spec.lags
    if len(history) < lags:
        raise DataError(f"need at least {lags} days of history, got {len(history)}")
    if horizons < 1 or n_paths < 1:
        raise ValueError("horizons and n_paths must be positive")
    comp = resid_fit.components
    if state is None:
        state = resid_fit.terminal
    last_y = history.values[-1]
    if state is None:
        s2 = np.array([1.0, 1.0]) if comp.cont is None else np.array([comp.cont.sigma1, comp.cont.sigma2]) ** 2
        state = ResidualState(np.zeros(2), s2, last_y)
    prev = {"eps": np.tile(state.eps, (n_paths, 1)),
            "sigma2": np.tile(state.sigma2, (n_paths, 1)),
            "y": np.tile(last_y, (n_paths, 1))}

    z, u = standard_variates(seed, n_paths, horizons)
    hist = np.tile(history.values[-lags:], (n_paths, 1, 1))
    dates = history.dates[-1] + np.arange(1, horizons + 1)
    coef = mean_fit.coef
    out = np.empty((n_paths, horizons, 2))
    for h in range(horizons):
        X = build_forecast_rows(hist, dates[h], mean_fit.spec)
        mean = X @ coef.T
        eps, s2 = draw_residuals(comp, prev, z[:, h, :2], z[:, h, 2:], u[:, h])
        y = mean + eps
        out[:, h] = y
        hist = np.concatenate([hist[:, 1:], y[:, None, :]], axis=1)
        prev = {"eps": eps, "sigma2": s2, "y": y}
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("simulated paths contain non-finite values")
    return PathEnsemble(out, dates, tuple(int(s) for s in np.atleast_1d(seed)), model or resid_fit.tag)


def _check(ensemble: PathEnsemble, h: int, i: int) -> np.ndarray:
    if ensemble.n_paths == 0:
        raise DataError("empty ensemble")
    if i not in (1, 2):
        raise ValueError("series index must be 1 or 2")
    return ensemble.at(h)[:, i - 1]


def ensemble_quantile(ensemble: PathEnsemble, h: int, i: int, q) -> float | np.ndarray:
    """Sample quantile with linear interpolation at order-statistic position 1 + q(M - 1)."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    v = _check(ensemble, h, i)
    out = np.quantile(v, q, method="linear")
    return float(out) if out.ndim == 0 else out


def ensemble_mean(ensemble: PathEnsemble, h: int, i: int) -> float:
    return float(np.mean(_check(ensemble, h, i)))


def ensemble_median(ensemble: PathEnsemble, h: int, i: int) -> float:
    return float(np.median(_check(ensemble, h, i)))
