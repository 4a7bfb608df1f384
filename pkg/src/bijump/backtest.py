"""Rolling-window experiment: estimate, simulate, score and persist, one window per day.

Window ``w`` trains on days ``w .. w + window - 1`` and is scored on the
following ``H`` days. Every window is an independent job whose random
streams are keyed by (master seed, window, model), so the final report is a
pure function of the data and the configuration, whatever the worker count
and however often the run was interrupted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kvtext
from .errors import BijumpError, DataError, ManifestError, ParameterError
from .estimators import DEFAULT_ALPHA, MeanModelFit, RankDeficiencyWarning, fit_mean_model, inclusion_mask
from .fitting import fit_ladder, fit_residual_model
from .market_data import DailyBivariateSeries, read_prices, write_daily
from .residual_models import ResidualModelFit
from .scoring import CRITERIA, QUANTILE_GRID, ScoreReport, pinball, window_losses
from .simulator import simulate_paths

logger = logging.getLogger(__name__)

# model name -> (mean equation, residual model); None means "the configured residual source"
MODELS = {
    "ARX-OLS": ("ols", "GAUSS"),
    "ARX-enet": ("enet", "GAUSS"),
    "ARX-IJ": (None, "IJ"),
    "ARX-BiJ": (None, "BIJ"),
    "ARX-BiJ-mu": (None, "BIJ-MU"),
    "ARX-GARCH": (None, "GARCH"),
    "ARX-BiJ-mu-GARCH": (None, "BIJ-MU-GARCH"),
}
DEFAULT_MODELS = tuple(MODELS)
BASELINE = "ARX-OLS"
MAX_SKIPPED = 0.05

# settings that do not change any score are left out of the config hash
_UNHASHED = ("outdir", "workers", "save_ensembles")


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 730
    horizons: int = 7
    n_paths: int = 16000
    models: tuple = DEFAULT_MODELS
    residual_source: str = "enet"
    seed: int = 0
    outdir: str | None = None
    strict_ladder: bool = True
    workers: int = 1
    n_windows: int | None = None
    partial_horizons: bool = False
    save_ensembles: bool = False
    alpha: float = DEFAULT_ALPHA
    folds: int = 10
    block_length: int = 7
    hac_lags: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        unknown = [m for m in self.models if m not in MODELS]
        if unknown:
            raise ParameterError(f"unknown models {unknown}; choose from {list(MODELS)}")
        if len(set(self.models)) != len(self.models) or not self.models:
            raise ParameterError("model list must be non-empty and free of duplicates")
        if self.residual_source not in ("ols", "enet"):
            raise ParameterError("residual_source must be 'ols' or 'enet'")
        if self.horizons < 1 or self.n_paths < 1 or self.window < 9 or self.workers < 1:
            raise ParameterError("window >= 9, horizons >= 1, n_paths >= 1 and workers >= 1 are required")
        if self.n_windows is not None and self.n_windows < 1:
            raise ParameterError("n_windows must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = ",".join(self.models)
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ParameterError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("models"), str):
            d["models"] = tuple(m.strip() for m in d["models"].split(",") if m.strip())
        return cls(**d)

    def hash(self, series: DailyBivariateSeries) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        h = hashlib.sha256(json.dumps(d, sort_keys=True).encode())
        h.update(series.dates.astype("<i8").tobytes())
        h.update(np.ascontiguousarray(series.values, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def available_windows(self, n_days: int) -> int:
        return n_days - self.window - (0 if self.partial_horizons else self.horizons - 1)

    def window_count(self, n_days: int) -> int:
        avail = self.available_windows(n_days)
        if avail < 1:
            raise DataError(f"{n_days} days cannot hold a {self.window}-day window plus "
                            f"{1 if self.partial_horizons else self.horizons} scored days")
        if self.n_windows is None:
            return avail
        if self.n_windows > avail:
            raise DataError(f"only {avail} windows fit the data, {self.n_windows} requested")
        return self.n_windows


def model_key(model: str, residual_source: str = "enet") -> str:
    """What a model's draws depend on: its mean equation and residual model, not its name."""
    mean, tag = MODELS[model]
    return f"{mean or residual_source}:{tag}"


def model_seed(master: int, window: int, key: str) -> tuple:
    """Stream key for one model configuration in one window; independent of the model list."""
    return (int(master), int(window), zlib.crc32(key.encode()))


# ---------------------------------------------------------------------------
# one window

@dataclass
class WindowResult:
    window: int
    origin: str                       # last training day
    realized: np.ndarray              # (H', 2)
    losses: dict                      # model -> criterion -> array
    pb_levels: dict                   # model -> (K, 2) first-horizon pinball per level
    mean_fits: dict = field(default_factory=dict)
    resid_fits: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"window": self.window, "origin": self.origin, "realized": self.realized.tolist(),
                "losses": {m: {c: np.asarray(v).tolist() for c, v in lc.items()} for m, lc in self.losses.items()},
                "pb_levels": {m: v.tolist() for m, v in self.pb_levels.items()}}

    @classmethod
    def from_json(cls, d: dict) -> "WindowResult":
        return cls(d["window"], d["origin"], np.array(d["realized"], dtype=float),
                   {m: {c: np.array(v, dtype=float) for c, v in lc.items()} for m, lc in d["losses"].items()},
                   {m: np.array(v, dtype=float) for m, v in d["pb_levels"].items()})

    def fits_text(self) -> str:
        items = {}
        for key, fit in self.mean_fits.items():
            items.update({f"mean.{key}.{k}": v for k, v in fit.to_dict().items()})
        for key, fit in self.resid_fits.items():
            items.update({f"resid.{key}.{k}": v for k, v in fit.to_dict().items()})
        return kvtext.dumps(items, header=f"fits for window {self.window} (origin {self.origin})")


def load_window_fits(text: str) -> tuple[dict, dict]:
    """Inverse of ``WindowResult.fits_text``: (mean fits, residual fits)."""
    groups: dict = {}
    for key, value in kvtext.loads(text).items():
        kind, name, rest = key.split(".", 2)
        groups.setdefault((kind, name), {})[rest] = value
    means = {n: MeanModelFit.from_dict(d) for (k, n), d in groups.items() if k == "mean"}
    resids = {n: ResidualModelFit.from_dict(d) for (k, n), d in groups.items() if k == "resid"}
    return means, resids


def _ladder_order(tags) -> list:
    order = ("GAUSS", "IJ", "BIJ", "BIJ-MU", "GARCH", "BIJ-MU-GARCH")
    return [t for t in order if t in tags]


def _fit_residuals(tags, eps, prev_y, warm: dict | None) -> dict:
    if not warm:
        return fit_ladder(tags, eps, prev_y)
    fits: dict = {}
    for tag in _ladder_order(tags):
        if tag in warm:
            try:
                fits[tag] = fit_residual_model(tag, eps, prev_y, prior=fits, start=warm[tag].params)
                continue
            except BijumpError as exc:
                logger.info("warm start for %s failed (%s); using the ladder", tag, exc)
        fits = fit_ladder([tag], eps, prev_y, fits)
    return {t: fits[t] for t in tags}


def run_window(series: DailyBivariateSeries, config: BacktestConfig, w: int,
               warm: dict | None = None) -> tuple[WindowResult, dict]:
    """Fit, simulate and score window ``w``; also returns the simulated ensembles."""
    n_days = len(series)
    train = series.slice(w, w + config.window)
    stop = min(w + config.window + config.horizons, n_days)
    realized = series.values[w + config.window:stop]
    h_eff = realized.shape[0]

    need_means = {MODELS[m][0] or config.residual_source for m in config.models}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        means = {k: fit_mean_model(train, k, config.alpha, config.folds, config.block_length)
                 for k in sorted(need_means)}

    # residual models on each mean equation's residuals; lagged prices align with residual rows
    lags = next(iter(means.values())).spec.lags
    prev_y = train.values[lags - 1:-1]
    resid_fits: dict = {}
    for src in sorted(need_means):
        tags = {MODELS[m][1] for m in config.models if (MODELS[m][0] or config.residual_source) == src}
        fits = _fit_residuals(tags, means[src].residuals, prev_y,
                              None if warm is None else warm.get(src))
        resid_fits.update({f"{src}:{t}": f for t, f in fits.items()})

    losses, pb_levels, ensembles = {}, {}, {}
    for m in config.models:
        src = MODELS[m][0] or config.residual_source
        rfit = resid_fits[f"{src}:{MODELS[m][1]}"]
        ens = simulate_paths(means[src], rfit, train, config.horizons, config.n_paths,
                             model_seed(config.seed, w, model_key(m, config.residual_source)), model=m)
        losses[m] = window_losses(ens.paths[:, :h_eff], realized)
        pb_levels[m] = pinball(realized[0][None], ens_quantiles(ens.paths[:, 0]), QUANTILE_GRID[:, None])
        ensembles[m] = ens
    res = WindowResult(w, str(train.dates[-1]), realized, losses, pb_levels, means, resid_fits)
    return res, ensembles


def ens_quantiles(draws: np.ndarray) -> np.ndarray:
    """Grid quantiles of (M, 2) draws, shape (K, 2)."""
    return np.quantile(draws, QUANTILE_GRID, axis=0, method="linear")


def _job(args):
    series, config, w = args
    try:
        res, ens = run_window(series, config, w)
    except (BijumpError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return w, None, None, f"{type(exc).__name__}: {exc}"
    return w, res, ens if config.save_ensembles else None, None


# ---------------------------------------------------------------------------
# run directory

@dataclass
class BacktestResult:
    report: ScoreReport | None
    windows: list
    skipped: dict
    complete: bool
    valid: bool
    outdir: Path | None = None


class RunDirectory:
    """Manifest plus per-window files; the parent process is the only writer."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"

    def window_path(self, w: int, kind: str) -> Path:
        return self.root / "windows" / f"w{w:05d}.{kind}"

    def create(self, series, config: BacktestConfig, n_windows: int) -> dict:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "windows").mkdir(exist_ok=True)
        write_daily(series, self.root / "data.csv")
        kvtext.dump(config.to_dict(), self.root / "config.txt", header="backtest configuration")
        manifest = {"config_hash": config.hash(series), "seed": config.seed, "n_windows": n_windows,
                    "completed": [], "skipped": {}, "status": "running"}
        self.write_manifest(manifest)
        return manifest

    def read_manifest(self) -> dict:
        try:
            m = json.loads(self.manifest_path.read_text())
            for key in ("config_hash", "n_windows", "completed", "skipped", "status"):
                m[key]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{self.manifest_path}: unreadable manifest ({exc})") from exc
        return m

    def write_manifest(self, manifest: dict) -> None:
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, indent=1))
        os.replace(tmp, self.manifest_path)

    def load_config(self) -> BacktestConfig:
        d = kvtext.load(self.root / "config.txt")
        d["outdir"] = str(self.root)
        return BacktestConfig.from_dict(d)

    def save_window(self, res: WindowResult, ensembles: dict | None, keep_residuals: bool = False) -> None:
        self.window_path(res.window, "fits.txt").write_text(res.fits_text())
        if keep_residuals:
            arrays = {f"{k}_{n}": v for k, f in res.mean_fits.items() if f.residuals is not None
                      for n, v in (("residuals", f.residuals), ("dates", f.dates.astype("<i8")))}
            np.savez(self.window_path(res.window, "resid.npz"), **arrays)
        self.window_path(res.window, "scores.json").write_text(json.dumps(res.to_json()))
        if ensembles:
            (self.root / "ensembles").mkdir(exist_ok=True)
            for m, ens in ensembles.items():
                ens.save(self.root / "ensembles" / f"w{res.window:05d}_{m}")

    def load_window(self, w: int) -> WindowResult:
        res = WindowResult.from_json(json.loads(self.window_path(w, "scores.json").read_text()))
        res.mean_fits, res.resid_fits = load_window_fits(self.window_path(w, "fits.txt").read_text())
        extra = self.window_path(w, "resid.npz")
        if extra.exists():
            with np.load(extra) as z:
                for k, fit in list(res.mean_fits.items()):
                    if f"{k}_residuals" in z:
                        res.mean_fits[k] = replace(fit, residuals=z[f"{k}_residuals"],
                                                   dates=z[f"{k}_dates"].astype("datetime64[D]"))
        return res


# ---------------------------------------------------------------------------
# driver

def run_backtest(series: DailyBivariateSeries, config: BacktestConfig, limit: int | None = None,
                 _resume: bool = False) -> BacktestResult:
    """Run (or continue) the rolling-window experiment.

    ``limit`` caps how many new windows this call computes; the report is
    produced only once every window is done or skipped.
    """
    n_windows = config.window_count(len(series))
    rundir = RunDirectory(config.outdir) if config.outdir else None
    done: dict = {}
    skipped: dict = {}
    if rundir is not None:
        if _resume:
            manifest = rundir.read_manifest()
            if manifest["config_hash"] != config.hash(series):
                raise ManifestError("manifest was written for a different configuration or data set")
        elif rundir.manifest_path.exists():
            raise ManifestError(f"{rundir.root} already holds a run; resume it or choose another directory")
        else:
            manifest = rundir.create(series, config, n_windows)
        for w in manifest["completed"]:
            done[w] = None
        skipped = {int(k): v for k, v in manifest["skipped"].items()}

    todo = [w for w in range(n_windows) if w not in done and w not in skipped]
    if limit is not None:
        todo = todo[:limit]

    def record(w, res, ens, err):
        if err is not None:
            logger.warning("window %d skipped: %s", w, err)
            skipped[w] = err
        else:
            done[w] = res if rundir is None else None
            if rundir is not None:
                rundir.save_window(res, ens, keep_residuals=w in (0, n_windows - 1))
        if rundir is not None:
            manifest["completed"] = sorted(k for k in done)
            manifest["skipped"] = {str(k): v for k, v in sorted(skipped.items())}
            rundir.write_manifest(manifest)

    if config.strict_ladder and config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for out in pool.map(_job, [(series, config, w) for w in todo]):
                record(*out)
    else:
        warm = None
        for w in todo:
            if not config.strict_ladder and warm is None and w - 1 in done:
                warm = _warm_from(done[w - 1] or rundir.load_window(w - 1))
            try:
                res, ens = run_window(series, config, w, warm)
            except (BijumpError, FloatingPointError, np.linalg.LinAlgError) as exc:
                record(w, None, None, f"{type(exc).__name__}: {exc}")
                warm = None
                continue
            record(w, res, ens if config.save_ensembles else None, None)
            warm = _warm_from(res) if not config.strict_ladder else None

    complete = len(done) + len(skipped) >= n_windows
    valid = len(skipped) <= MAX_SKIPPED * n_windows
    if not complete:
        return BacktestResult(None, [], skipped, False, valid, rundir.root if rundir else None)

    windows = [done[w] if done[w] is not None else rundir.load_window(w) for w in sorted(done)]
    if not windows:
        raise DataError("every window failed; nothing to report")
    report = ScoreReport.from_windows(config.models, config.horizons, [r.losses for r in windows], config.hac_lags)
    if rundir is not None:
        write_reports(rundir.root / "report", report, windows, config)
        manifest["status"] = "complete" if valid else "invalid"
        rundir.write_manifest(manifest)
    if not valid:
        logger.error("%d of %d windows skipped; run marked invalid", len(skipped), n_windows)
    return BacktestResult(report, windows, skipped, True, valid, rundir.root if rundir else None)


def _warm_from(res: WindowResult) -> dict:
    out: dict = {}
    for key, fit in res.resid_fits.items():
        src, tag = key.split(":")
        out.setdefault(src, {})[tag] = fit
    return out


def resume(outdir, limit: int | None = None, workers: int | None = None) -> BacktestResult:
    """Continue an interrupted run from its directory; a finished run is reported again unchanged."""
    rundir = RunDirectory(outdir)
    rundir.read_manifest()
    config = rundir.load_config()
    if workers is not None:
        config = BacktestConfig.from_dict({**config.to_dict(), "workers": workers, "outdir": str(rundir.root)})
    series, _ = read_prices(rundir.root / "data.csv", normalize_clock_change=False)
    return run_backtest(series, config, limit=limit, _resume=True)


# ---------------------------------------------------------------------------
# reports

def inclusion_frequencies(windows: list) -> dict:
    """Per mean-equation method: labels and the percentage of windows each coefficient is non-zero."""
    out = {}
    for key in ("enet", "ols"):
        fits = [r.mean_fits[key] for r in windows if key in r.mean_fits]
        if fits:
            masks = np.array([inclusion_mask(f) for f in fits])
            out[key] = (fits[0].spec.labels, 100.0 * masks.mean(axis=0))
    return out


_PLOTS = {
    "mae": (("AE", 1), ("AE", 2)),
    "mse": (("SE", 1), ("SE", 2)),
    "pb": (("PB", 1), ("PB", 2)),
    "edei": (("ED", 0), ("EI", 0)),
    "es": (("ES", 0),),
}


def write_reports(root, report: ScoreReport, windows: list, config: BacktestConfig) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    report.write_csv(root / "scores.csv")
    report.write_json(root / "scores.json")
    has_base = BASELINE in report.models
    if has_base:
        report.write_csv(root / "relative_scores.csv", baseline=BASELINE)

    dm_dir = root / "dm"
    dm_dir.mkdir(exist_ok=True)
    for h in range(1, report.horizons + 1):
        if report.n_windows(h) < 2:
            continue
        for c, i in report.cells():
            tag = f"{c}_{i or 'joint'}_h{h}"
            report.write_dm(dm_dir / f"{tag}.csv", c, h, i or None)

    for key, (labels, pct) in inclusion_frequencies(windows).items():
        with open(root / f"inclusion_{key}.csv", "w") as fh:
            fh.write(f"# percentage of {len(windows)} windows with a non-zero coefficient\n")
            fh.write("label,offpeak,peak\n")
            for j, lab in enumerate(labels):
                fh.write(f"{lab},{_num(pct[0, j])},{_num(pct[1, j])}\n")

    _write_plot_data(root / "plots", report, windows, has_base)


def _num(x) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(x))


def _write_plot_data(root: Path, report: ScoreReport, windows: list, has_base: bool) -> None:
    root.mkdir(exist_ok=True)
    # residual scatter for the first and the last window
    for name, res in (("first", windows[0]), ("last", windows[-1])):
        for key, fit in res.mean_fits.items():
            if fit.residuals is None:
                continue
            with open(root / f"residuals_{key}_{name}.csv", "w") as fh:
                fh.write(f"# residuals of the {key} mean equation, window origin {res.origin}\n")
                fh.write("offpeak,peak\n")
                for a, b in fit.residuals:
                    fh.write(f"{_num(a)},{_num(b)}\n")
    # score per model and horizon, absolute and relative to the baseline
    for fig, cells in _PLOTS.items():
        with open(root / f"{fig}.csv", "w") as fh:
            if has_base:
                fh.write(f"# relative = Score(model) / Score({BASELINE})\n")
            fh.write("model,horizon,criterion,series,value,relative\n")
            for m in report.models:
                for h in range(1, report.horizons + 1):
                    if report.n_windows(h) == 0:
                        continue
                    for c, i in cells:
                        v = report.mean(m, c, h, i or None)
                        rel = v / report.mean(BASELINE, c, h, i or None) if has_base else float("nan")
                        fh.write(f"{m},{h},{c},{i or 'joint'},{_num(v)},{_num(rel)}\n")
    # first-horizon pinball per quantile level, minus the baseline
    levels = {m: np.mean([r.pb_levels[m] for r in windows], axis=0) for m in report.models}
    with open(root / "quantile_h1.csv", "w") as fh:
        fh.write(f"# first-horizon pinball loss per level; diff = PB(model) - PB({BASELINE})\n")
        fh.write("model,q,series,value,diff\n")
        for m in report.models:
            for k, q in enumerate(QUANTILE_GRID):
                for i in (0, 1):
                    v = levels[m][k, i]
                    d = v - levels[BASELINE][k, i] if has_base else float("nan")
                    fh.write(f"{m},{_num(q)},{i + 1},{_num(v)},{_num(d)}\n")


__all__ = ["BacktestConfig", "BacktestResult", "WindowResult", "MODELS", "DEFAULT_MODELS", "run_backtest",
           "run_window", "resume", "model_key", "model_seed", "inclusion_frequencies", "CRITERIA"]
