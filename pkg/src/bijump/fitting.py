"""Maximum-likelihood fits of the residual models along the initialization ladder.

Start values follow a fixed ladder: independent jumps first, each richer
jump model then starts from its predecessor's optimum with the new
components at small values; the pure GARCH model starts from the residual
sds. Fits maximize the mean per-day log-likelihood (same optimum as the sum,
better scaled for the gradient tolerance).
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NumericalError, ParameterError
from .optimizer import OptimizerReport, ParamTransform, bfgs_maximize
from .residual_models import (PARAM_NAMES, ResidualModelFit, loglik, loglik_ij, terminal_state)

logger = logging.getLogger(__name__)

RHO_BOUND = 0.999

# which fitted model each tag's start values are taken from
PREREQUISITE = {
    "GAUSS": None,
    "IJ": None,
    "BIJ": "IJ",
    "BIJ-MU": "BIJ",
    "GARCH": None,
    "BIJ-MU-GARCH": "BIJ-MU",
}

_JUMPS = (("pos", ("gamma1", "gamma2")), ("corr", ("varrho",)), ("simplex", ("p10", "p01", "p11")))

TRANSFORMS = {
    "GAUSS": ParamTransform((("pos", ("sigma1", "sigma2")), ("corr", ("rho",)))),
    "BIJ": ParamTransform((("pos", ("sigma1", "sigma2")), ("corr", ("rho",))) + _JUMPS
                          + (("free", ("mu1", "mu2")),)),
    "BIJ-MU": ParamTransform((("pos", ("sigma1", "sigma2")), ("corr", ("rho",))) + _JUMPS
                             + (("jumpmean", ("mu0_1", "mu0_2", "mu1_1", "mu1_2")),)),
    "GARCH": ParamTransform((("pos", ("a0_1",)), ("simplex", ("a1_1", "a2_1")),
                             ("pos", ("a0_2",)), ("simplex", ("a1_2", "a2_2")), ("corr", ("rho",))),
                            fixed=("s2init_1", "s2init_2")),
    "BIJ-MU-GARCH": ParamTransform((("pos", ("a0_1",)), ("simplex", ("a1_1", "a2_1")),
                                    ("pos", ("a0_2",)), ("simplex", ("a1_2", "a2_2")), ("corr", ("rho",)))
                                   + _JUMPS + (("jumpmean", ("mu0_1", "mu0_2", "mu1_1", "mu1_2")),),
                                   fixed=("s2init_1", "s2init_2")),
}

# one series of the independent-jump model
IJ_TRANSFORM = ParamTransform((("pos", ("sigma", "gamma")), ("free", ("mu",)), ("prob", ("lam",))))


def init_ladder(tag: str, eps: np.ndarray, prior: dict | None = None) -> dict:
    """Starting parameters for ``tag``; ``prior`` maps tags to fitted models."""
    eps = np.asarray(eps, dtype=float)
    prior = prior or {}
    need = PREREQUISITE.get(tag, "?")
    if need == "?":
        raise ParameterError(f"unknown residual model {tag!r}")
    if need is not None and need not in prior:
        raise ParameterError(f"{tag} starts from a fitted {need} model, which is missing")
    sd = eps.std(axis=0, ddof=1)
    var = eps.var(axis=0, ddof=1)
    if tag == "GAUSS":
        return {"sigma1": sd[0], "sigma2": sd[1], "rho": float(np.corrcoef(eps.T)[0, 1])}
    if tag == "IJ":
        return {"sigma1": sd[0], "sigma2": sd[1], "rho": 0.0,
                "gamma1": sd[0], "gamma2": sd[1], "mu1": 1.0, "mu2": 1.0, "lam1": 0.01, "lam2": 0.01}
    if tag == "BIJ":
        p = prior["IJ"].params
        out = {k: p[k] for k in ("sigma1", "sigma2", "gamma1", "gamma2", "mu1", "mu2")}
        out.update(p10=0.01, p01=0.01, p11=0.001, rho=0.01, varrho=0.01)
        return out
    if tag == "BIJ-MU":
        p = dict(prior["BIJ"].params)
        out = {k: p[k] for k in ("sigma1", "sigma2", "rho", "gamma1", "gamma2", "varrho", "p10", "p01", "p11")}
        out.update(mu0_1=p["mu1"], mu0_2=p["mu2"], mu1_1=0.01, mu1_2=0.01)
        return out
    if tag == "GARCH":
        return {"a0_1": sd[0], "a1_1": 0.01, "a2_1": 0.01, "a0_2": sd[1], "a1_2": 0.01, "a2_2": 0.01,
                "rho": 0.01, "s2init_1": var[0], "s2init_2": var[1]}
    # BIJ-MU-GARCH: a0 keeps the continuous variance of the predecessor at the start values
    p = prior["BIJ-MU"].params
    out = {k: p[k] for k in PARAM_NAMES["BIJ-MU-GARCH"] if k in p}
    for i in (1, 2):
        out[f"a1_{i}"] = 0.01
        out[f"a2_{i}"] = 0.01
        out[f"a0_{i}"] = p[f"sigma{i}"] ** 2 * (1 - 0.02)
        out[f"s2init_{i}"] = var[i - 1]
    return out


def _objective(tag, transform, fixed, eps, prev_y):
    n = eps.shape[0]

    def f(x):
        try:
            params = transform.to_params(x, fixed)
            return loglik(tag, params, eps, prev_y) / n
        except (ParameterError, FloatingPointError, ValueError):
            return -np.inf
    return f


def transform_for(tag: str, prev_y=None) -> ParamTransform:
    transform = TRANSFORMS[tag]
    if prev_y is not None and tag in ("BIJ-MU", "BIJ-MU-GARCH"):
        sd = prev_y.std(axis=0)
        transform = replace(transform, mu_center=tuple(prev_y.mean(axis=0)),
                            mu_scale=tuple(np.where(sd > 0, sd, 1.0)))
    return transform


def _optimize(tag, start, eps, prev_y, restarts: int = 0, restart_seed: int = 0, **opts):
    transform = transform_for(tag, prev_y)
    fixed = {k: start[k] for k in transform.fixed}
    f = _objective(tag, transform, fixed, eps, prev_y)
    x0 = transform.to_unconstrained(start)
    if not np.isfinite(f(x0)):
        raise NumericalError(f"{tag} log-likelihood is not finite at the start values")
    rep = bfgs_maximize(f, x0, **opts)
    # optional random restarts: jitter the ladder start in the unconstrained coordinates
    rng = np.random.default_rng(restart_seed)
    for _ in range(restarts):
        x = x0 + rng.normal(0.0, 0.5, x0.size)
        if not np.isfinite(f(x)):
            continue
        alt = bfgs_maximize(f, x, **opts)
        if alt.value > rep.value:
            rep = alt
    return transform.to_params(rep.x, fixed), rep


def _fit_ij_series(e: np.ndarray, start: dict, **opts) -> tuple[dict, OptimizerReport]:
    n = e.size

    def f(x):
        p = IJ_TRANSFORM.to_params(x)
        try:
            return loglik_ij(e, p["lam"], p["mu"], p["sigma"], p["gamma"]) / n
        except ParameterError:
            return -np.inf
    rep = bfgs_maximize(f, IJ_TRANSFORM.to_unconstrained(start), **opts)
    return IJ_TRANSFORM.to_params(rep.x), rep


def third_stage_rho(eps: np.ndarray, sigma1: float, sigma2: float, method: str = "likelihood",
                    marginals: dict | None = None) -> float:
    """Continuous-part correlation of the independent-jump model, set after the two series fits.

    ``"likelihood"`` maximizes the bivariate likelihood over rho with the
    fitted marginal parameters (``marginals``) held fixed. ``"correlation"``
    is the plain residual correlation. ``"covariance"`` divides the residual
    covariance by the fitted continuous sds.
    """
    if method == "likelihood":
        if marginals is None:
            raise ValueError("the likelihood method needs the fitted marginal parameters")

        def neg(r):
            return -loglik("IJ", dict(marginals, rho=r), eps)
        res = minimize_scalar(neg, bounds=(-RHO_BOUND, RHO_BOUND), method="bounded",
                              options={"xatol": 1e-10})
        return float(res.x)
    if method == "correlation":
        r = float(np.corrcoef(eps.T)[0, 1])
    elif method == "covariance":
        c = eps - eps.mean(axis=0)
        r = float(np.mean(c[:, 0] * c[:, 1]) / (sigma1 * sigma2))
    else:
        raise ValueError(f"unknown rho method {method!r}")
    return float(np.clip(r, -RHO_BOUND, RHO_BOUND))


def fit_residual_model(tag: str, eps, prev_y=None, prior: dict | None = None,
                       start: dict | None = None, rho_method: str = "likelihood",
                       restarts: int = 0, restart_seed: int = 0, **opts) -> ResidualModelFit:
    """Fit one residual model; ``prev_y`` (n, 2) holds Y_{d-1} aligned with ``eps``.

    ``start`` overrides the ladder (warm starts); otherwise the ladder is
    used and its prerequisites must be present in ``prior``. ``restarts``
    adds that many jittered starts to the likelihood-based fits.
    """
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if prev_y is not None:
        prev_y = np.asarray(prev_y, dtype=float)
        if prev_y.shape != eps.shape:
            raise ParameterError("lagged prices must align with the residuals")
    if tag in ("BIJ-MU", "BIJ-MU-GARCH") and prev_y is None:
        raise ParameterError(f"{tag} needs the lagged prices")
    start = dict(start) if start is not None else init_ladder(tag, eps, prior)

    if tag == "GAUSS":
        # closed-form MLE of a zero-mean bivariate normal
        S = eps.T @ eps / eps.shape[0]
        params = {"sigma1": float(np.sqrt(S[0, 0])), "sigma2": float(np.sqrt(S[1, 1])),
                  "rho": float(S[0, 1] / np.sqrt(S[0, 0] * S[1, 1]))}
        rep = OptimizerReport(None, 0.0, 0, 0.0, True, "closed form")
    elif tag == "IJ":
        params = {}
        reports = []
        for i in (1, 2):
            s = {"sigma": start[f"sigma{i}"], "gamma": start[f"gamma{i}"],
                 "mu": start[f"mu{i}"], "lam": start[f"lam{i}"]}
            p, rep = _fit_ij_series(eps[:, i - 1], s, **opts)
            reports.append(rep)
            params.update({f"sigma{i}": p["sigma"], f"gamma{i}": p["gamma"],
                           f"mu{i}": p["mu"], f"lam{i}": p["lam"]})
        params["rho"] = third_stage_rho(eps, params["sigma1"], params["sigma2"], rho_method, params)
        rep = OptimizerReport(None, 0.0, max(r.iterations for r in reports),
                              max(r.grad_norm for r in reports), all(r.converged for r in reports),
                              "; ".join(r.message for r in reports))
    else:
        params, rep = _optimize(tag, start, eps, prev_y, restarts, restart_seed, **opts)
        nested = (prior or {}).get(PREREQUISITE.get(tag))
        if nested is not None and tag in ("BIJ-MU", "BIJ-MU-GARCH"):
            ll = loglik(tag, params, eps, prev_y)
            if ll < nested.loglik - 1e-6:
                # ladder start landed below the nested optimum; retry from the embedded nested fit
                alt_start = embed_nested(tag, nested.params, start)
                alt, alt_rep = _optimize(tag, alt_start, eps, prev_y, **opts)
                if loglik(tag, alt, eps, prev_y) > ll:
                    logger.info("%s: nested-embedding restart improved the fit", tag)
                    params, rep = alt, alt_rep

    ll = loglik(tag, params, eps, prev_y)
    if not np.isfinite(ll):
        raise NumericalError(f"{tag} fit ended at a non-finite log-likelihood")
    last_y = prev_y[-1] if prev_y is not None else np.zeros(2)
    term = terminal_state(tag, params, eps, last_y)
    return ResidualModelFit(tag, params, ll, eps.shape[0], rep.converged, rep.iterations,
                            rep.grad_norm, term)


def embed_nested(tag: str, nested: dict, start: dict) -> dict:
    """Parameters of ``tag`` reproducing the nested model's density (up to GARCH start-up)."""
    out = dict(start)
    if tag == "BIJ-MU":
        out.update({k: nested[k] for k in nested if k in out})
        out.update(mu0_1=nested["mu1"], mu0_2=nested["mu2"], mu1_1=0.0, mu1_2=0.0)
    elif tag == "BIJ-MU-GARCH":
        out.update({k: nested[k] for k in nested if k in out})
        for i in (1, 2):
            out[f"a1_{i}"] = 1e-6
            out[f"a2_{i}"] = 1e-6
            out[f"a0_{i}"] = nested[f"sigma{i}"] ** 2 * (1 - 2e-6)
    return out


def fit_ladder(tags, eps, prev_y=None, fits: dict | None = None, **kwargs) -> dict:
    """Fit every requested model, fitting ladder prerequisites first."""
    fits = dict(fits or {})

    def ensure(tag):
        if tag in fits:
            return
        need = PREREQUISITE[tag]
        if need is not None:
            ensure(need)
        fits[tag] = fit_residual_model(tag, eps, prev_y, prior=fits, **kwargs)

    for tag in tags:
        ensure(tag)
    return fits
