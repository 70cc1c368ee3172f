"""Log-link Poisson regression fitted by iteratively reweighted least squares.

The model for the floor counts is

    log(mu) = b0 + b1 * d + b2 * c + b3 * d * c

with ``d`` the window duration and ``c`` the F-formation cardinality.
Inference is Wald-type (normal reference), and pairwise post-hoc fits are
corrected with Bonferroni.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .floors import Observation

COEF_NAMES = ("Intercept", "Turn-duration", "Cardinality", "Turn-duration:Cardinality")
PIVOT_TOL = 1e-12
HALVING_LIMIT = 30
# deviance rises smaller than this are rounding noise, not divergence
DEVIANCE_NOISE = 1e-10


class GlmError(ValueError):
    pass


class RankDeficientError(GlmError):
    def __init__(self, message: str = "rank-deficient design"):
        super().__init__(message)


class InsufficientDataError(GlmError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] = COEF_NAMES

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise GlmError("design rows and response length differ")
        if X.shape[1] != len(self.names):
            raise GlmError("one name per design column required")
        if X.shape[0] < X.shape[1]:
            raise InsufficientDataError(
                f"{X.shape[0]} observations for {X.shape[1]} coefficients")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise GlmError("design contains non-finite entries")
        if (y < 0).any():
            raise GlmError("response must be non-negative")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @classmethod
    def intercept_only(cls, y) -> "DesignMatrix":
        y = np.asarray(y, dtype=float)
        return cls(np.ones((y.size, 1)), y, ("Intercept",))


def build_design(obs: Sequence[Observation]) -> DesignMatrix:
    """Rows ``[1, d, c, d*c]`` with the floor count ``y`` as response."""
    if not obs:
        raise GlmError("no observations")
    d = np.array([o.d_s for o in obs], dtype=float)
    c = np.array([o.cardinality for o in obs], dtype=float)
    X = np.column_stack([np.ones_like(d), d, c, d * c])
    return DesignMatrix(X, np.array([o.y for o in obs], dtype=float))


@dataclass(frozen=True)
class GlmFit:
    names: tuple[str, ...]
    beta: np.ndarray
    covariance: np.ndarray
    deviance: float
    iterations: int
    converged: bool
    n_obs: int
    deviance_trace: tuple[float, ...] = ()
    std_err: np.ndarray = field(default=None)
    z: np.ndarray = field(default=None)
    p: np.ndarray = field(default=None)

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


def cholesky(A: np.ndarray, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    A pivot is rejected when it falls below ``pivot_tol`` relative to the
    corresponding diagonal entry of ``A``, which keeps the test independent
    of column units.
    """
    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    L = np.zeros_like(A)
    for j in range(k):
        piv = A[j, j] - L[j, :j] @ L[j, :j]
        if not (A[j, j] > 0 and piv > pivot_tol * A[j, j]):
            raise RankDeficientError()
        L[j, j] = math.sqrt(piv)
        for i in range(j + 1, k):
            L[i, j] = (A[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    k = L.shape[0]
    b = np.array(b, dtype=float)
    z = np.empty_like(b)
    for i in range(k):
        z[i] = (b[i] - L[i, :i] @ z[:i]) / L[i, i]
    x = np.empty_like(b)
    for i in reversed(range(k)):
        x[i] = (z[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def _cho_inverse(L: np.ndarray) -> np.ndarray:
    k = L.shape[0]
    inv = np.column_stack([_cho_solve(L, e) for e in np.eye(k)])
    return (inv + inv.T) / 2


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    term = np.zeros_like(y)
    pos = y > 0
    term[pos] = y[pos] * np.log(y[pos] / mu[pos])
    return float(2.0 * np.sum(term - (y - mu)))


def _deviance_at(X, y, beta):
    eta = X @ beta
    if not np.isfinite(eta).all() or eta.max() > 700:
        return math.inf, None
    mu = np.exp(eta)
    return poisson_deviance(y, mu), mu


def fit_poisson_irls(design: DesignMatrix, tol: float = 1e-8, max_iter: int = 50) -> GlmFit:
    """Maximum-likelihood Poisson fit by Fisher scoring.

    Starts from ``mu = y + 0.5`` and stops once successive deviances differ
    by less than ``tol * (|deviance| + 0.1)``, followed by one final
    scoring step.  A step that raises the
    deviance is halved until it does not.  Wald statistics are filled in on
    return.  Running out of iterations returns the last iterate with
    ``converged=False``.

    Raises
    ------
    RankDeficientError
        If the weighted normal equations are singular.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    X, y = design.X, design.y
    mu = y + 0.5
    eta = np.log(mu)
    dev = poisson_deviance(y, mu)
    beta = None
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mu
        zw = eta + (y - mu) / mu
        XtW = X.T * w
        L = cholesky(XtW @ X)
        proposal = _cho_solve(L, XtW @ zw)
        new_dev, new_mu = _deviance_at(X, y, proposal)
        if beta is not None:
            halvings = 0
            while not new_dev <= dev + DEVIANCE_NOISE and halvings < HALVING_LIMIT:
                proposal = beta + 0.5 * (proposal - beta)
                new_dev, new_mu = _deviance_at(X, y, proposal)
                halvings += 1
            if not new_dev <= dev + DEVIANCE_NOISE:
                # no descent left in this direction; the previous iterate stands
                converged = True
                break
        elif new_mu is None:
            raise GlmError("initial step overflowed the linear predictor")
        step_change = abs(new_dev - dev)
        beta, mu, dev = proposal, new_mu, new_dev
        eta = X @ beta
        trace.append(dev)
        if step_change < tol * (abs(dev) + 0.1):
            converged = True
            if it < max_iter:
                # deviance is flat near the optimum; one more step settles beta
                it += 1
                XtW = X.T * mu
                polished = _cho_solve(cholesky(XtW @ X), XtW @ (eta + (y - mu) / mu))
                pol_dev, pol_mu = _deviance_at(X, y, polished)
                if pol_dev <= dev + DEVIANCE_NOISE:
                    beta, mu, dev = polished, pol_mu, pol_dev
                trace.append(dev)
            break
    XtW = X.T * mu
    cov = _cho_inverse(cholesky(XtW @ X))
    fit = GlmFit(names=design.names, beta=beta, covariance=cov, deviance=dev,
                 iterations=it, converged=converged, n_obs=design.n,
                 deviance_trace=tuple(trace))
    return wald_inference(fit)


def norm_cdf(x: float) -> float:
    """Standard normal distribution function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def two_sided_p(z: float) -> float:
    # erfc form avoids the cancellation in 1 - cdf for large |z|
    return math.erfc(abs(z) / math.sqrt(2.0))


def wald_inference(fit: GlmFit) -> GlmFit:
    var = np.diag(fit.covariance).astype(float)
    if (var <= 0).any() or not np.isfinite(var).all():
        raise GlmError("zero or undefined standard error")
    se = np.sqrt(var)
    z = np.asarray(fit.beta, dtype=float) / se
    p = np.array([two_sided_p(v) for v in z])
    return replace(fit, std_err=se, z=z, p=p)


def bonferroni(p: Iterable[float] | float, m: int):
    """Bonferroni-adjusted p-values, capped at 1."""
    if m < 1:
        raise ValueError("number of tests must be at least 1")
    return np.minimum(1.0, np.asarray(p, dtype=float) * m)


@dataclass(frozen=True)
class PosthocRow:
    pair: tuple[int, int]
    n_obs: int
    fit: GlmFit | None
    nominal_p: np.ndarray | None
    corrected_p: np.ndarray | None
    significant: np.ndarray | None
    status: str = "ok"


@dataclass(frozen=True)
class PosthocTable:
    rows: tuple[PosthocRow, ...]
    alpha: float
    m: int
    names: tuple[str, ...] = COEF_NAMES

    def row(self, a: int, b: int) -> PosthocRow:
        key = tuple(sorted((a, b)))
        for r in self.rows:
            if r.pair == key:
                return r
        raise KeyError(key)

    @classmethod
    def from_nominal(cls, nominal: Mapping[tuple[int, int], Sequence[float]],
                     alpha: float = 0.001) -> "PosthocTable":
        """Apply the correction to already-computed nominal p-values."""
        m = len(nominal)
        rows = []
        for pair, p in nominal.items():
            p = np.asarray(p, dtype=float)
            corr = bonferroni(p, m)
            rows.append(PosthocRow(tuple(sorted(pair)), 0, None, p, corr, corr < alpha))
        return cls(tuple(rows), alpha, m)


def cardinality_pairs(obs: Iterable[Observation]) -> list[tuple[int, int]]:
    return list(combinations(sorted({o.cardinality for o in obs}), 2))


def posthoc_pairwise(obs: Sequence[Observation], pairs: Sequence[tuple[int, int]] | None = None,
                     alpha: float = 0.001, *, skip_insufficient: bool = False,
                     tol: float = 1e-8, max_iter: int = 50) -> PosthocTable:
    """Fit the interaction model on each pair of cardinalities separately.

    Corrected p-values are ``min(1, m * p)`` with ``m`` the number of pairs.
    A pair lacking data raises :class:`InsufficientDataError`, or is reported
    with status ``"insufficient data"`` when ``skip_insufficient`` is set.
    """
    if pairs is None:
        pairs = cardinality_pairs(obs)
    pairs = [tuple(sorted(p)) for p in pairs]
    if not pairs:
        raise InsufficientDataError("need at least two distinct cardinalities")
    m = len(pairs)
    rows = []
    for a, b in pairs:
        subset = [o for o in obs if o.cardinality in (a, b)]
        try:
            if not any(o.cardinality == a for o in subset) or \
                    not any(o.cardinality == b for o in subset):
                raise InsufficientDataError(f"pair {a}-{b}: a cardinality has no observations")
            try:
                fit = fit_poisson_irls(build_design(subset), tol=tol, max_iter=max_iter)
            except RankDeficientError:
                raise InsufficientDataError(f"pair {a}-{b}: design is rank-deficient") from None
        except InsufficientDataError:
            if not skip_insufficient:
                raise
            rows.append(PosthocRow((a, b), len(subset), None, None, None, None,
                                   "insufficient data"))
            continue
        corr = bonferroni(fit.p, m)
        status = "ok" if fit.converged else "not converged"
        rows.append(PosthocRow((a, b), len(subset), fit, fit.p, corr, corr < alpha, status))
    return PosthocTable(tuple(rows), alpha, m)


def _num(x: float) -> str:
    return repr(float(x))


def _config() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    return cp


def fit_report(fit: GlmFit, title: str = "Generalized Linear Model Regression Results") -> str:
    """Key/value (INI) report with one section per coefficient."""
    cp = _config()
    cp["model"] = {
        "title": title,
        "family": "Poisson",
        "link": "log",
        "n_obs": str(fit.n_obs),
        "deviance": _num(fit.deviance),
        "iterations": str(fit.iterations),
        "converged": "true" if fit.converged else "false",
        "coefficients": ", ".join(fit.names),
    }
    for k, name in enumerate(fit.names):
        cp[f"coef {name}"] = {
            "coef": _num(fit.beta[k]),
            "std_err": _num(fit.std_err[k]),
            "z": _num(fit.z[k]),
            "p": _num(fit.p[k]),
        }
    out = io.StringIO()
    cp.write(out)
    return out.getvalue()


def posthoc_report(table: PosthocTable) -> str:
    cp = _config()
    cp["posthoc"] = {
        "title": f"Nominal P-values for {table.m} Post-Hoc GLM Regression Comparisons",
        "correction": "bonferroni",
        "tests": str(table.m),
        "alpha": _num(table.alpha),
        "coefficients": ", ".join(table.names),
    }
    for r in table.rows:
        sec = {"status": r.status, "n_obs": str(r.n_obs)}
        if r.nominal_p is not None:
            for k, name in enumerate(table.names):
                star = "*" if r.significant[k] else ""
                sec[f"{name}.nominal_p"] = _num(r.nominal_p[k])
                sec[f"{name}.corrected_p"] = _num(r.corrected_p[k]) + star
            if r.fit is not None:
                sec["deviance"] = _num(r.fit.deviance)
                sec["iterations"] = str(r.fit.iterations)
                sec["converged"] = "true" if r.fit.converged else "false"
        cp[f"pair {r.pair[0]}-{r.pair[1]}"] = sec
    out = io.StringIO()
    cp.write(out)
    return out.getvalue()


def read_report(text: str) -> configparser.ConfigParser:
    cp = _config()
    cp.read_string(text)
    return cp
