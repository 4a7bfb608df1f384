"""Bivariate jump-diffusion forecasting of peak and off-peak day-ahead electricity prices.

Two-step model: an autoregressive mean equation per series (OLS or elastic
net), then a bivariate residual model (Gaussian, independent jumps,
bivariate jumps with constant or price-dependent jump means, CCC-GARCH, or
jumps plus GARCH) fitted by maximum likelihood. Forecast distributions come
from Monte Carlo paths and are scored with pinball loss, the energy score
and Diebold-Mariano tests in a rolling-window backtest.
"""

from .backtest import BacktestConfig, resume, run_backtest
from .errors import BijumpError, DataError, ManifestError, NumericalError, ParameterError
from .estimators import fit_elastic_net, fit_mean_model, fit_ols
from .fitting import fit_ladder, fit_residual_model
from .market_data import DailyBivariateSeries, descriptive_stats, read_prices
from .simulator import PathEnsemble, simulate_paths

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig", "BijumpError", "DailyBivariateSeries", "DataError", "ManifestError",
    "NumericalError", "ParameterError", "PathEnsemble", "descriptive_stats", "fit_elastic_net",
    "fit_ladder", "fit_mean_model", "fit_ols", "fit_residual_model", "read_prices", "resume",
    "run_backtest", "simulate_paths",
]
