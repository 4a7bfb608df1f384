"""Command-line entry point: ``bijump stats|fit|simulate|score|backtest|resume``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import kvtext
from .backtest import DEFAULT_MODELS, BacktestConfig, resume, run_backtest
from .errors import DataError, ManifestError, NumericalError, ParameterError
from .estimators import MeanModelFit, RankDeficiencyWarning, fit_mean_model
from .fitting import fit_ladder
from .market_data import descriptive_stats, read_prices
from .residual_models import TAGS, ResidualModelFit
from .scoring import CRITERIA, SERIES_CRITERIA, window_losses
from .simulator import PathEnsemble, simulate_paths

WORKERS_ENV = "BIJUMP_WORKERS"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("bijump")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _tag(text: str) -> str:
    tag = text.upper()
    if tag not in TAGS:
        raise argparse.ArgumentTypeError(f"unknown residual model {text!r}; choose from {', '.join(TAGS)}")
    return tag


def _load_series(path):
    series, report = read_prices(path)
    if report.normalized_days:
        log.info("clock-change days normalized: %s", ", ".join(str(d) for d in report.normalized_days))
    return series


# ---------------------------------------------------------------------------
# subcommands

def cmd_stats(args) -> int:
    table = descriptive_stats(_load_series(args.input))
    print(table.format(args.digits))
    if args.output:
        with open(args.output, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", *table.COLUMNS])
            for name, vals in table.rows():
                w.writerow([name, *(repr(v) for v in vals)])
    return EXIT_OK


def cmd_fit(args) -> int:
    series = _load_series(args.input)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        if args.method == "ols":
            warnings.simplefilter("ignore", RankDeficiencyWarning)
        mean = fit_mean_model(series, args.method)
    (out / "mean_fit.txt").write_text(mean.dumps())
    print(f"{args.method}: lambda = {mean.lambdas}, non-zero coefficients = {(mean.coef != 0).sum(axis=1)}")
    if args.model:
        lags = mean.spec.lags
        fits = fit_ladder(args.model, mean.residuals, series.values[lags - 1:-1],
                          restarts=args.restarts, restart_seed=args.restart_seed)
        for tag in args.model:
            fit = fits[tag]
            (out / f"resid_{tag}.txt").write_text(fit.dumps())
            flag = "" if fit.converged else "  (not converged)"
            print(f"{tag}: loglik = {fit.loglik:.4f}{flag}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    mean = MeanModelFit.loads(Path(args.mean).read_text())
    resid = ResidualModelFit.loads(Path(args.resid).read_text())
    history = _load_series(args.history)
    ens = simulate_paths(mean, resid, history, args.horizons, args.paths, args.seed)
    ens.save(args.out)
    if args.text:
        ens.export_text(Path(args.out).with_suffix(".csv"), args.text)
    print(f"{ens.n_paths} paths x {ens.horizons} horizons from {history.dates[-1]} written to {args.out}.bin")
    return EXIT_OK


def cmd_score(args) -> int:
    ens = PathEnsemble.load(args.ensemble)
    series = _load_series(args.realized)
    pos = np.searchsorted(series.dates, ens.dates)
    have = (pos < len(series)) & (series.dates[np.minimum(pos, len(series) - 1)] == ens.dates)
    n_have = int(np.argmin(have)) if not have.all() else have.size
    if n_have == 0:
        raise DataError("no realized values for the ensemble's first target day")
    realized = series.values[pos[:n_have]]
    losses = window_losses(ens.paths[:, :n_have], realized)
    rows = []
    for h in range(n_have):
        for c in CRITERIA:
            if c in SERIES_CRITERIA:
                rows += [(h + 1, c, i + 1, losses[c][h, i]) for i in (0, 1)]
            else:
                rows.append((h + 1, c, "joint", losses[c][h]))
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# model={ens.model} origin={ens.dates[0] - 1}\n")
        w = csv.writer(fh)
        w.writerow(["horizon", "criterion", "series", "value"])
        for r in rows:
            w.writerow([*r[:3], repr(float(r[3]))])
    for r in rows:
        print(f"h{r[0]} {r[1]:<3} {r[2]!s:<6} {r[3]:.4f}")
    return EXIT_OK


def _config_from(args) -> tuple[BacktestConfig, str]:
    values = kvtext.load(args.config) if args.config else {}
    source = args.input or values.pop("input", None)
    values.pop("input", None)
    overrides = {"window": args.window, "horizons": args.horizons, "n_paths": args.paths,
                 "seed": args.seed, "outdir": args.outdir, "workers": args.workers,
                 "n_windows": args.n_windows, "residual_source": args.residual_source,
                 "models": args.models}
    values.update({k: v for k, v in overrides.items() if v is not None})
    for flag in ("partial_horizons", "save_ensembles"):
        if getattr(args, flag):
            values[flag] = True
    if args.warm_start:
        values["strict_ladder"] = False
    if "workers" not in values and os.environ.get(WORKERS_ENV):
        values["workers"] = int(os.environ[WORKERS_ENV])
    if source is None:
        raise UsageError("no input data: give INPUT or an 'input' key in the config file")
    if "outdir" not in values:
        raise UsageError("no output directory: give --outdir or an 'outdir' key in the config file")
    return BacktestConfig.from_dict(values), source


def _summarize(result) -> int:
    if not result.complete:
        print(f"run interrupted; {len(result.skipped)} windows skipped so far; continue with 'resume'")
        return EXIT_OK
    rep = result.report
    print(f"windows: {len(result.windows)} scored, {len(result.skipped)} skipped"
          + ("" if result.valid else "  RUN INVALID (too many skipped windows)"))
    print(f"{'model':<18}" + "".join(f"{'ES h' + str(h):>10}" for h in range(1, rep.horizons + 1)))
    for m in rep.models:
        vals = [rep.mean(m, "ES", h) if rep.n_windows(h) else float("nan") for h in range(1, rep.horizons + 1)]
        print(f"{m:<18}" + "".join(f"{v:>10.4f}" for v in vals))
    print(f"reports in {result.outdir / 'report'}")
    return EXIT_OK if result.valid else EXIT_NUMERIC


def cmd_backtest(args) -> int:
    config, source = _config_from(args)
    series = _load_series(source)
    return _summarize(run_backtest(series, config, limit=args.limit))


def cmd_resume(args) -> int:
    workers = args.workers
    if workers is None and os.environ.get(WORKERS_ENV):
        workers = int(os.environ[WORKERS_ENV])
    return _summarize(resume(args.outdir, limit=args.limit, workers=workers))


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bijump", description="Bivariate jump models for peak and off-peak electricity prices.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("stats", help="descriptive statistics of the daily series")
    s.add_argument("input")
    s.add_argument("-o", "--output", help="write the table as CSV")
    s.add_argument("--digits", type=int, default=2)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("fit", help="fit the mean equation and residual models on the whole file")
    s.add_argument("input")
    s.add_argument("--method", choices=("ols", "enet"), default="enet")
    s.add_argument("--model", type=_tag, nargs="*", default=[], help=f"residual models: {', '.join(TAGS)}")
    s.add_argument("--restarts", type=int, default=0, help="extra randomly jittered optimizer starts per model")
    s.add_argument("--restart-seed", type=int, default=0)
    s.add_argument("-o", "--outdir", default="fit")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate price paths from persisted fits")
    s.add_argument("--mean", required=True, help="mean-equation fit file")
    s.add_argument("--resid", required=True, help="residual-model fit file")
    s.add_argument("--history", required=True, help="price file; its last days seed the recursion")
    s.add_argument("--horizons", type=int, default=7)
    s.add_argument("--paths", type=int, default=16000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--text", type=int, default=0, metavar="K", help="also export the first K paths as CSV")
    s.add_argument("-o", "--out", default="ensemble", help="output stem (.bin and .json)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("score", help="score a persisted ensemble against realized prices")
    s.add_argument("--ensemble", required=True, help="ensemble stem")
    s.add_argument("--realized", required=True, help="price file covering the target days")
    s.add_argument("-o", "--out", default="scores.csv")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("backtest", help="rolling-window experiment")
    s.add_argument("input", nargs="?")
    s.add_argument("-c", "--config", help="key = value configuration file; flags override it")
    s.add_argument("-o", "--outdir")
    s.add_argument("--window", type=int)
    s.add_argument("--horizons", type=int)
    s.add_argument("--paths", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, help=f"default from ${WORKERS_ENV}, else 1")
    s.add_argument("--n-windows", type=int)
    s.add_argument("--models", help=f"comma-separated subset of {','.join(DEFAULT_MODELS)}")
    s.add_argument("--residual-source", choices=("ols", "enet"))
    s.add_argument("--warm-start", action="store_true", help="start fits from the previous window")
    s.add_argument("--partial-horizons", action="store_true", help="also score windows with fewer than H days left")
    s.add_argument("--save-ensembles", action="store_true")
    s.add_argument("--limit", type=int, help="stop after this many windows (continue with resume)")
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("resume", help="continue an interrupted backtest")
    s.add_argument("outdir")
    s.add_argument("--workers", type=int)
    s.add_argument("--limit", type=int)
    s.set_defaults(func=cmd_resume)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"bijump: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bijump: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"bijump: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ManifestError, OSError, KeyError) as exc:
        print(f"bijump: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"bijump: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
