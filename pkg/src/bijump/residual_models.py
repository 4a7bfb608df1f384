"""Residual processes for the second estimation step.

Each jump model writes the day-d residual as

    eps_d = eps_cont + B_d eps_jump,
    eps_cont ~ N2(-Lambda mu_d, Sigma_d),   eps_jump ~ N2(mu_d, Gamma),

with B_d = diag(b1, b2) drawn from a bivariate Bernoulli law over the four
states (0,0), (1,0), (0,1), (1,1). Given B_d the residual is Gaussian with
mean (B_d - Lambda) mu_d and covariance Sigma_d + B_d Gamma B_d, so the
per-day density is a four-component mixture tied to those states.

Sigma_d is constant, or follows a CCC-GARCH(1,1) recursion driven by the
previous day's total residual. mu_d is constant or mu0 + mu1 * Y_{d-1}
elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import kvtext
from .errors import ParameterError

LOG_2PI = np.log(2.0 * np.pi)
LOG_FLOOR = np.log(1e-300)

TAGS = ("GAUSS", "IJ", "BIJ", "BIJ-MU", "GARCH", "BIJ-MU-GARCH")

# jump states in the order used throughout: (b1, b2)
STATES = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)


@dataclass(frozen=True)
class ContCov:
    sigma1: float
    sigma2: float
    rho: float

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ParameterError("continuous sds must be positive")
        if not -1 < self.rho < 1:
            raise ParameterError("rho must lie in (-1, 1)")

    @property
    def matrix(self) -> np.ndarray:
        c = self.rho * self.sigma1 * self.sigma2
        return np.array([[self.sigma1 ** 2, c], [c, self.sigma2 ** 2]])


@dataclass(frozen=True)
class JumpCov:
    gamma1: float
    gamma2: float
    varrho: float = 0.0

    def __post_init__(self):
        if not (self.gamma1 >= 0 and self.gamma2 >= 0):
            raise ParameterError("jump sds must be non-negative")
        if not -1 < self.varrho < 1:
            raise ParameterError("varrho must lie in (-1, 1)")

    @property
    def matrix(self) -> np.ndarray:
        c = self.varrho * self.gamma1 * self.gamma2
        return np.array([[self.gamma1 ** 2, c], [c, self.gamma2 ** 2]])


@dataclass(frozen=True)
class JumpOccurrence:
    """Cell probabilities of the bivariate Bernoulli jump indicator."""

    p00: float
    p10: float
    p01: float
    p11: float

    def __post_init__(self):
        p = self.probs
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1) > 1e-9:
            raise ParameterError(f"jump probabilities {p} are not on the simplex")

    @classmethod
    def independent(cls, lam1: float, lam2: float) -> "JumpOccurrence":
        return cls((1 - lam1) * (1 - lam2), lam1 * (1 - lam2), (1 - lam1) * lam2, lam1 * lam2)

    @classmethod
    def from_jumps(cls, p10: float, p01: float, p11: float) -> "JumpOccurrence":
        return cls(1.0 - p10 - p01 - p11, p10, p01, p11)

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.p00, self.p10, self.p01, self.p11])

    @property
    def lam(self) -> np.ndarray:
        return np.array([self.p10 + self.p11, self.p01 + self.p11])


@dataclass(frozen=True)
class JumpMean:
    mu0: np.ndarray
    mu1: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "mu0", np.asarray(self.mu0, dtype=float).reshape(2))
        object.__setattr__(self, "mu1", np.asarray(self.mu1, dtype=float).reshape(2))
        if not (np.all(np.isfinite(self.mu0)) and np.all(np.isfinite(self.mu1))):
            raise ParameterError("jump means must be finite")

    @property
    def state_dependent(self) -> bool:
        return bool(np.any(self.mu1 != 0))

    def at(self, prev_y=None) -> np.ndarray:
        """Jump mean per day; ``prev_y`` is the (n, 2) array of Y_{d-1}."""
        if prev_y is None:
            if self.state_dependent:
                raise ParameterError("state-dependent jump mean needs lagged prices")
            return self.mu0[None, :]
        return self.mu0 + self.mu1 * np.asarray(prev_y, dtype=float)


@dataclass(frozen=True)
class GarchParams:
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    rho: float
    sigma2_0: np.ndarray

    def __post_init__(self):
        for name in ("a0", "a1", "a2", "sigma2_0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2))
        if np.any(self.a0 <= 0) or np.any(self.a1 < 0) or np.any(self.a2 < 0):
            raise ParameterError("GARCH coefficients must be positive")
        if np.any(self.a1 + self.a2 >= 1):
            raise ParameterError("GARCH requires a1 + a2 < 1")
        if not -1 < self.rho < 1:
            raise ParameterError("rho must lie in (-1, 1)")
        if np.any(self.sigma2_0 <= 0):
            raise ParameterError("initial variance must be positive")


# ---------------------------------------------------------------------------
# densities

def _logpdf2(e1, e2, v11, v22, c12):
    det = v11 * v22 - c12 * c12
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = (v22 * e1 * e1 - 2.0 * c12 * e1 * e2 + v11 * e2 * e2) / det
        return -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad


def _logpdf1(e, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (e - mean) ** 2 / var)


def garch_variances(eps: np.ndarray, garch: GarchParams) -> tuple[np.ndarray, np.ndarray]:
    """Conditional variances sigma^2_d for each day and the next-day value.

    The pre-sample squared residual is set to sigma2_0, so the first day's
    variance is a0 + (a1 + a2) sigma2_0 and collapses to a0 when a1 = a2 = 0.
    """
    eps = np.asarray(eps, dtype=float)
    n = eps.shape[0]
    out = np.empty((n + 1, 2))
    for i in range(2):
        shocks = np.empty(n + 1)
        shocks[0] = garch.sigma2_0[i]
        shocks[1:] = eps[:, i] ** 2
        drive = garch.a0[i] + garch.a1[i] * shocks
        out[:, i], _ = lfilter([1.0], [1.0, -garch.a2[i]], drive, zi=[garch.a2[i] * garch.sigma2_0[i]])
    return out[:n], out[n]


def _mixture_terms(eps, s1sq, s2sq, rho, jump_cov: JumpCov, occ: JumpOccurrence, mu_d):
    e1, e2 = eps[:, 0], eps[:, 1]
    lam = occ.lam
    cont_c = rho * np.sqrt(s1sq * s2sq)
    g1sq, g2sq = jump_cov.gamma1 ** 2, jump_cov.gamma2 ** 2
    gc = jump_cov.varrho * jump_cov.gamma1 * jump_cov.gamma2
    comps = []
    for (b1, b2), p in zip(STATES, occ.probs):
        if p <= 0:
            continue
        m1 = (b1 - lam[0]) * mu_d[:, 0]
        m2 = (b2 - lam[1]) * mu_d[:, 1]
        lp = _logpdf2(e1 - m1, e2 - m2, s1sq + b1 * g1sq, s2sq + b2 * g2sq, cont_c + b1 * b2 * gc)
        comps.append(np.log(p) + lp)
    stacked = np.vstack(comps)
    top = stacked.max(axis=0)
    with np.errstate(invalid="ignore"):
        terms = top + np.log(np.exp(stacked - top).sum(axis=0))
    return np.maximum(np.nan_to_num(terms, nan=LOG_FLOOR, neginf=LOG_FLOOR), LOG_FLOOR)


def loglik_gauss(eps, cont: ContCov) -> float:
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    return float(np.sum(_logpdf2(eps[:, 0], eps[:, 1], cont.sigma1 ** 2, cont.sigma2 ** 2,
                                 cont.rho * cont.sigma1 * cont.sigma2)))


def loglik_ij(eps, lam: float, mu: float, sigma: float, gamma: float) -> float:
    """Univariate two-component jump mixture for one residual series."""
    if not 0 <= lam < 1:
        raise ParameterError("jump probability must lie in [0, 1)")
    if not (sigma > 0 and gamma >= 0):
        raise ParameterError("sigma must be positive and gamma non-negative")
    eps = np.asarray(eps, dtype=float)
    no_jump = np.log1p(-lam) + _logpdf1(eps, -lam * mu, sigma ** 2)
    if lam == 0:
        terms = no_jump
    else:
        jump = np.log(lam) + _logpdf1(eps, (1 - lam) * mu, sigma ** 2 + gamma ** 2)
        terms = np.logaddexp(no_jump, jump)
    return float(np.sum(np.maximum(terms, LOG_FLOOR)))


def loglik_bij_terms(eps, cont: ContCov | None, jump_cov: JumpCov, occ: JumpOccurrence,
                     jump_mean: JumpMean, garch: GarchParams | None = None, prev_y=None) -> np.ndarray:
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    mu_d = np.broadcast_to(jump_mean.at(prev_y), eps.shape)
    if garch is None:
        if cont is None:
            raise ParameterError("need either a constant covariance or GARCH parameters")
        s1sq, s2sq, rho = cont.sigma1 ** 2, cont.sigma2 ** 2, cont.rho
    else:
        var, _ = garch_variances(eps, garch)
        s1sq, s2sq, rho = var[:, 0], var[:, 1], garch.rho
    return _mixture_terms(eps, s1sq, s2sq, rho, jump_cov, occ, mu_d)


def loglik_bij(eps, cont: ContCov | None, jump_cov: JumpCov, occ: JumpOccurrence,
               jump_mean: JumpMean, garch: GarchParams | None = None, prev_y=None) -> float:
    return float(np.sum(loglik_bij_terms(eps, cont, jump_cov, occ, jump_mean, garch, prev_y)))


def loglik_ccc_garch(eps, garch: GarchParams) -> float:
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    var, _ = garch_variances(eps, garch)
    c = garch.rho * np.sqrt(var[:, 0] * var[:, 1])
    return float(np.sum(_logpdf2(eps[:, 0], eps[:, 1], var[:, 0], var[:, 1], c)))


def unconditional_variance_ij(cont: ContCov, jump_cov: JumpCov, lam, mu) -> np.ndarray:
    """Sigma + Lambda((I - Lambda) Diag(mu)^2 + Diag(Gamma)) for independent jumps."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    jump_var = lam * ((1 - lam) * mu ** 2 + np.array([jump_cov.gamma1, jump_cov.gamma2]) ** 2)
    return cont.matrix + np.diag(jump_var)


# ---------------------------------------------------------------------------
# parameter sets keyed by model tag

PARAM_NAMES = {
    "GAUSS": ("sigma1", "sigma2", "rho"),
    "IJ": ("sigma1", "sigma2", "rho", "gamma1", "gamma2", "mu1", "mu2", "lam1", "lam2"),
    "BIJ": ("sigma1", "sigma2", "rho", "gamma1", "gamma2", "varrho", "p10", "p01", "p11", "mu1", "mu2"),
    "BIJ-MU": ("sigma1", "sigma2", "rho", "gamma1", "gamma2", "varrho", "p10", "p01", "p11",
               "mu0_1", "mu0_2", "mu1_1", "mu1_2"),
    "GARCH": ("a0_1", "a1_1", "a2_1", "a0_2", "a1_2", "a2_2", "rho", "s2init_1", "s2init_2"),
    "BIJ-MU-GARCH": ("a0_1", "a1_1", "a2_1", "a0_2", "a1_2", "a2_2", "rho", "s2init_1", "s2init_2",
                     "gamma1", "gamma2", "varrho", "p10", "p01", "p11",
                     "mu0_1", "mu0_2", "mu1_1", "mu1_2"),
}


def _check_tag(tag: str):
    if tag not in TAGS:
        raise ParameterError(f"unknown residual model {tag!r}")


@dataclass(frozen=True)
class Components:
    cont: ContCov | None = None
    jump_cov: JumpCov | None = None
    occ: JumpOccurrence | None = None
    jump_mean: JumpMean | None = None
    garch: GarchParams | None = None

    @property
    def has_jumps(self) -> bool:
        return self.occ is not None


def components(tag: str, params: dict) -> Components:
    """Typed parameter objects for a flat parameter mapping."""
    _check_tag(tag)
    missing = [k for k in PARAM_NAMES[tag] if k not in params]
    if missing:
        raise ParameterError(f"{tag} parameters missing {missing}")
    p = params
    out = {}
    if tag in ("GAUSS", "IJ", "BIJ", "BIJ-MU"):
        out["cont"] = ContCov(p["sigma1"], p["sigma2"], p["rho"])
    if tag in ("GARCH", "BIJ-MU-GARCH"):
        out["garch"] = GarchParams([p["a0_1"], p["a0_2"]], [p["a1_1"], p["a1_2"]], [p["a2_1"], p["a2_2"]],
                                   p["rho"], [p["s2init_1"], p["s2init_2"]])
    if tag == "IJ":
        out["jump_cov"] = JumpCov(p["gamma1"], p["gamma2"], 0.0)
        out["occ"] = JumpOccurrence.independent(p["lam1"], p["lam2"])
        out["jump_mean"] = JumpMean([p["mu1"], p["mu2"]])
    elif tag in ("BIJ", "BIJ-MU", "BIJ-MU-GARCH"):
        out["jump_cov"] = JumpCov(p["gamma1"], p["gamma2"], p["varrho"])
        out["occ"] = JumpOccurrence.from_jumps(p["p10"], p["p01"], p["p11"])
        if tag == "BIJ":
            out["jump_mean"] = JumpMean([p["mu1"], p["mu2"]])
        else:
            out["jump_mean"] = JumpMean([p["mu0_1"], p["mu0_2"]], [p["mu1_1"], p["mu1_2"]])
    return Components(**out)


def loglik_terms(tag: str, params: dict, eps, prev_y=None) -> np.ndarray:
    """Per-day log density of the residual pairs under a tagged model."""
    c = components(tag, params)
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if tag == "GAUSS":
        return _logpdf2(eps[:, 0], eps[:, 1], c.cont.sigma1 ** 2, c.cont.sigma2 ** 2,
                        c.cont.rho * c.cont.sigma1 * c.cont.sigma2)
    if tag == "GARCH":
        var, _ = garch_variances(eps, c.garch)
        return _logpdf2(eps[:, 0], eps[:, 1], var[:, 0], var[:, 1],
                        c.garch.rho * np.sqrt(var[:, 0] * var[:, 1]))
    return loglik_bij_terms(eps, c.cont, c.jump_cov, c.occ, c.jump_mean, c.garch, prev_y)


def loglik(tag: str, params: dict, eps, prev_y=None) -> float:
    return float(np.sum(loglik_terms(tag, params, eps, prev_y)))


# ---------------------------------------------------------------------------
# fitted models and sampling

@dataclass(frozen=True)
class ResidualState:
    """What the next day's draw conditions on: last residual, its variance, last price."""

    eps: np.ndarray
    sigma2: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("eps", "sigma2", "y"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class ResidualModelFit:
    tag: str
    params: dict
    loglik: float
    n_obs: int = 0
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    terminal: ResidualState | None = None

    def __post_init__(self):
        _check_tag(self.tag)
        components(self.tag, self.params)

    @property
    def components(self) -> Components:
        return components(self.tag, self.params)

    def to_dict(self) -> dict:
        out = {"tag": self.tag, "loglik": float(self.loglik), "n_obs": int(self.n_obs),
               "converged": bool(self.converged), "iterations": int(self.iterations),
               "grad_norm": float(self.grad_norm)}
        out.update({f"param.{k}": float(self.params[k]) for k in PARAM_NAMES[self.tag]})
        if self.terminal is not None:
            for name in ("eps", "sigma2", "y"):
                for i in (1, 2):
                    out[f"state.{name}_{i}"] = float(getattr(self.terminal, name)[i - 1])
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualModelFit":
        tag = d["tag"]
        params = {k: float(d[f"param.{k}"]) for k in PARAM_NAMES[tag]}
        terminal = None
        if "state.eps_1" in d:
            terminal = ResidualState(*[[d[f"state.{n}_{i}"] for i in (1, 2)] for n in ("eps", "sigma2", "y")])
        return cls(tag, params, float(d["loglik"]), int(d["n_obs"]), bool(d["converged"]),
                   int(d["iterations"]), float(d["grad_norm"]), terminal)

    def dumps(self) -> str:
        return kvtext.dumps(self.to_dict(), header=f"residual model {self.tag}")

    @classmethod
    def loads(cls, text: str) -> "ResidualModelFit":
        return cls.from_dict(kvtext.loads(text))


def terminal_state(tag: str, params: dict, eps, last_y) -> ResidualState:
    """State after the in-sample data: last residual, its conditional variance, last price."""
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    c = components(tag, params)
    if c.garch is not None:
        var, _ = garch_variances(eps, c.garch)
        sigma2 = var[-1]
    else:
        sigma2 = np.array([c.cont.sigma1 ** 2, c.cont.sigma2 ** 2])
    return ResidualState(eps[-1], sigma2, np.asarray(last_y, dtype=float))


def sample_bivariate_bernoulli(occ: JumpOccurrence, rng: np.random.Generator, size=None):
    """Draw (b1, b2) with probabilities p00, p10, p01, p11."""
    u = rng.random(size)
    states = _states_from_uniform(occ, np.atleast_1d(u))
    if size is None:
        return int(states[0, 0]), int(states[0, 1])
    return states.astype(np.int64)


def _states_from_uniform(occ: JumpOccurrence, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(occ.probs)[:3]
    idx = np.searchsorted(cum, u, side="right")
    return STATES[idx]


def draw_residuals(comp: Components, prev: ResidualState | dict, z_cont: np.ndarray,
                   z_jump: np.ndarray, u: np.ndarray):
    """Transform standard variates into one day's residuals for a batch of paths.

    ``prev`` holds arrays ``eps`` (m, 2), ``sigma2`` (m, 2) and ``y`` (m, 2)
    for the previous day. Returns ``(eps, sigma2)`` for the new day.
    """
    prev_eps = np.asarray(prev["eps"] if isinstance(prev, dict) else prev.eps, dtype=float)
    prev_s2 = np.asarray(prev["sigma2"] if isinstance(prev, dict) else prev.sigma2, dtype=float)
    prev_y = np.asarray(prev["y"] if isinstance(prev, dict) else prev.y, dtype=float)
    m = z_cont.shape[0]
    if comp.garch is not None:
        g = comp.garch
        s2 = g.a0 + g.a1 * prev_eps ** 2 + g.a2 * prev_s2
        s2 = np.broadcast_to(s2, (m, 2))
        rho = g.rho
    else:
        s2 = np.broadcast_to(np.array([comp.cont.sigma1 ** 2, comp.cont.sigma2 ** 2]), (m, 2))
        rho = comp.cont.rho
    sd = np.sqrt(s2)
    cont = np.empty((m, 2))
    cont[:, 0] = sd[:, 0] * z_cont[:, 0]
    cont[:, 1] = sd[:, 1] * (rho * z_cont[:, 0] + np.sqrt(1 - rho ** 2) * z_cont[:, 1])
    if comp.occ is None:
        return cont, np.array(s2)
    mu_d = np.broadcast_to(comp.jump_mean.at(np.broadcast_to(prev_y, (m, 2))), (m, 2))
    jc = comp.jump_cov
    jump = np.empty((m, 2))
    jump[:, 0] = mu_d[:, 0] + jc.gamma1 * z_jump[:, 0]
    jump[:, 1] = mu_d[:, 1] + jc.gamma2 * (jc.varrho * z_jump[:, 0] + np.sqrt(1 - jc.varrho ** 2) * z_jump[:, 1])
    b = _states_from_uniform(comp.occ, u)
    eps = cont - comp.occ.lam * mu_d + b * jump
    return eps, np.array(s2)


def sample_residual(fit: ResidualModelFit, state: ResidualState, rng: np.random.Generator):
    """One day's residual pair and the state it leaves behind.

    The new state's ``y`` is left at the previous price; callers that
    simulate prices replace it with the simulated value.
    """
    prev = {"eps": state.eps[None, :], "sigma2": state.sigma2[None, :], "y": state.y[None, :]}
    z = rng.standard_normal(4)
    u = rng.random(1)
    eps, s2 = draw_residuals(fit.components, prev, z[None, :2], z[None, 2:], u)
    return eps[0], ResidualState(eps[0], s2[0], state.y)
