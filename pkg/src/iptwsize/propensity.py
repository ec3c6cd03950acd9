"""Logistic propensity score model and IPTW weights."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from iptwsize.data import Dataset
from iptwsize.errors import ConvergenceError, DataError, PositivityError, SeparationError

SCORE_TOL = 1e-8
MAX_ITER = 50
MAX_ETA_NORM = 1e3
BOUNDARY = 1e-12
MAX_WEIGHT = 1e12


class Estimand(str, enum.Enum):
    ATE = "ATE"
    ATT = "ATT"


@dataclass(frozen=True)
class PSSpec:
    """Intercept plus the listed covariate columns; ``()`` means intercept-only."""

    covariate_columns: tuple[int, ...] = ()
    intercept: bool = True

    def __post_init__(self) -> None:
        if not self.intercept:
            raise ValueError("the propensity model always includes an intercept")
        object.__setattr__(self, "covariate_columns", tuple(int(c) for c in self.covariate_columns))

    @classmethod
    def all_covariates(cls, p: int) -> PSSpec:
        return cls(tuple(range(p)))

    @classmethod
    def intercept_only(cls) -> PSSpec:
        return cls(())

    @property
    def dim(self) -> int:
        return 1 + len(self.covariate_columns)

    def design(self, d: Dataset) -> np.ndarray:
        cols = self.covariate_columns
        if any(c < 0 or c >= d.p for c in cols):
            raise DataError(f"propensity covariate columns {cols} invalid for p={d.p}")
        return np.column_stack([np.ones(d.n), d.x[:, list(cols)]]) if cols else np.ones((d.n, 1))


@dataclass(frozen=True, eq=False)
class PSFit:
    eta_hat: np.ndarray
    fitted_e: np.ndarray
    converged: bool
    iterations: int
    design: np.ndarray
    t: np.ndarray

    @property
    def n(self) -> int:
        return self.t.shape[0]


def score_eta(eta: np.ndarray, design: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Per-subject logistic scores ``X_i (T_i - e_i)``, shape (n, p_eta)."""
    e = expit(design @ eta)
    return design * (t - e)[:, None]


def _loglik(lin: np.ndarray, t: np.ndarray) -> float:
    return float(np.sum(t * log_expit(lin) + (1.0 - t) * log_expit(-lin)))


def _polish(X, t, eta, e, grad):
    """One extra Newton step near the root; kept only if it shrinks the score."""
    info = (X * (e * (1.0 - e))[:, None]).T @ X
    try:
        cand = eta + np.linalg.solve(info, grad)
    except np.linalg.LinAlgError:
        return eta, e
    cand_e = expit(X @ cand)
    if np.max(np.abs(X.T @ (t - cand_e))) < np.max(np.abs(grad)):
        return cand, cand_e
    return eta, e


def fit_logistic(d: Dataset, spec: PSSpec, tol: float = SCORE_TOL, max_iter: int = MAX_ITER) -> PSFit:
    """Maximum likelihood logistic regression of ``t`` on the PS design.

    Newton-Raphson from ``eta = 0`` with step halving on the log-likelihood.
    Converged means ``max |sum_i U_i(eta)| <= tol``; one more Newton step
    then tightens the root to rounding level.

    Raises
    ------
    SeparationError
        The iterates diverge (``|eta| > 1e3``) or push fitted probabilities
        to the boundary before the score vanishes.
    PositivityError
        A converged fit has some fitted probability within 1e-12 of 0 or 1.
    ConvergenceError
        No convergence within ``max_iter`` iterations.
    """
    X = spec.design(d)
    t = d.t
    treated = t.sum()
    if spec.covariate_columns and (treated == 0 or treated == d.n):
        raise SeparationError("one treatment arm is empty")
    eta = np.zeros(X.shape[1])
    lin = X @ eta
    ll = _loglik(lin, t)
    for it in range(max_iter + 1):
        e = expit(lin)
        grad = X.T @ (t - e)
        if np.max(np.abs(grad)) <= tol:
            if np.any((e < BOUNDARY) | (e > 1.0 - BOUNDARY)):
                raise PositivityError("fitted propensity score within 1e-12 of 0 or 1")
            eta, e = _polish(X, t, eta, e, grad)
            return PSFit(eta, e, True, it, X, t)
        if it == max_iter:
            break
        if np.any((e < BOUNDARY) | (e > 1.0 - BOUNDARY)):
            raise SeparationError("propensity fit diverging toward 0/1 (separation)")
        info = (X * (e * (1.0 - e))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix in propensity fit") from None
        scale = 1.0
        for _ in range(40):
            cand = eta + scale * step
            cand_lin = X @ cand
            cand_ll = _loglik(cand_lin, t)
            if cand_ll >= ll - 1e-12 * abs(ll):
                break
            scale *= 0.5
        eta, lin, ll = cand, cand_lin, cand_ll
        if np.linalg.norm(eta) > MAX_ETA_NORM:
            raise SeparationError("propensity coefficients diverged (separation)")
    raise ConvergenceError(f"propensity fit did not converge in {max_iter} iterations")


def jacobian_eta(fit: PSFit) -> np.ndarray:
    """Mean derivative of the PS score, ``-(1/n) sum e_i (1-e_i) X_i X_i^T``."""
    e = fit.fitted_e
    X = fit.design
    return -((X * (e * (1.0 - e))[:, None]).T @ X) / fit.n


def _ipw(e: np.ndarray, t: np.ndarray, estimand: Estimand) -> np.ndarray:
    if Estimand(estimand) is Estimand.ATE:
        return t / e + (1.0 - t) / (1.0 - e)
    return t + (1.0 - t) * e / (1.0 - e)


def weights(fit: PSFit, estimand: Estimand | str = Estimand.ATE) -> np.ndarray:
    """IPTW weights. ATE: ``T/e + (1-T)/(1-e)``; ATT: ``T + (1-T) e/(1-e)``."""
    e = fit.fitted_e
    if np.any((e <= 0.0) | (e >= 1.0)):
        raise PositivityError("propensity scores must lie strictly inside (0, 1)")
    w = _ipw(e, fit.t, estimand)
    if np.max(w) > MAX_WEIGHT:
        raise PositivityError("IPTW weight exceeds 1e12")
    return w


def weight_gradient_factor(fit: PSFit, estimand: Estimand | str = Estimand.ATE) -> np.ndarray:
    """Per-subject ``c_i`` with ``d w_i / d eta = c_i X_i``."""
    e, t = fit.fitted_e, fit.t
    if Estimand(estimand) is Estimand.ATE:
        return -t * (1.0 - e) / e + (1.0 - t) * e / (1.0 - e)
    return (1.0 - t) * e / (1.0 - e)
