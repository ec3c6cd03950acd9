"""Stacked propensity + MSM M-estimator and its empirical sandwich variance.

Parameter order is ``theta = (eta, b0, b1)``. ``A`` and ``B`` are averages
over subjects, ``Sigma = A^{-1} B A^{-T}`` is the per-observation asymptotic
covariance and ``Var(theta_hat) = Sigma / n``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import expit

from iptwsize.data import Dataset
from iptwsize.errors import NonEstimableError, NumericError, SingularMatrixError
from iptwsize.msm import Link, MSMFit, fit_msm, mean_by_arm, score_beta
from iptwsize.propensity import (
    Estimand,
    PSFit,
    PSSpec,
    _ipw,
    fit_logistic,
    jacobian_eta,
    weight_gradient_factor,
    weights,
)

PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StackedFit:
    ps: PSFit
    msm: MSMFit
    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    var_beta1: float
    lsvf: float
    n: int

    @property
    def theta_hat(self) -> np.ndarray:
        return np.concatenate([self.ps.eta_hat, self.msm.beta_hat])

    @property
    def beta1(self) -> float:
        return float(self.msm.beta_hat[1])

    @property
    def se_beta1(self) -> float:
        return float(np.sqrt(self.var_beta1))

    def wald(self) -> float:
        return self.beta1 / self.se_beta1


def stacked_scores(
    theta: np.ndarray,
    d: Dataset,
    spec: PSSpec,
    link: Link,
    estimand: Estimand | str = Estimand.ATE,
) -> np.ndarray:
    """Per-subject stacked scores ``U_i(theta)``, shape (n, p_eta + 2).

    Evaluated from scratch at an arbitrary ``theta`` (weights are recomputed
    from ``eta``), so it can serve as the target of finite differences.
    """
    X = spec.design(d)
    k = X.shape[1]
    eta, beta = theta[:k], theta[k:]
    e = expit(X @ eta)
    u_eta = X * (d.t - e)[:, None]
    w = _ipw(e, d.t, estimand)
    return np.hstack([u_eta, score_beta(beta, d, w, link)])


def _msm_residuals(d: Dataset, msm: MSMFit, link: Link) -> tuple[np.ndarray, np.ndarray]:
    mu = mean_by_arm(msm.beta_hat, d.t, link)
    return mu, d.y - mu


def assemble_A(
    d: Dataset,
    ps: PSFit,
    msm: MSMFit,
    link: Link,
    estimand: Estimand | str = Estimand.ATE,
) -> np.ndarray:
    """Block lower-triangular mean Jacobian of the stacked scores.

    ``A_bb = -(1/n) sum w_i mu'_i D_i D_i^T`` and
    ``A_be = (1/n) sum D_i (y_i - mu_i) c_i X_i^T`` where
    ``dw_i/deta = c_i X_i``. The upper-right block is never written.
    """
    n = d.n
    k = ps.design.shape[1]
    w = weights(ps, estimand)
    mu, resid = _msm_residuals(d, msm, link)
    t = d.t
    A = np.zeros((k + 2, k + 2))
    A[:k, :k] = jacobian_eta(ps)

    wm = w * link.mu_eta(mu)
    s_all = wm.sum()
    s_trt = (wm * t).sum()
    A_bb = -np.array([[s_all, s_trt], [s_trt, s_trt]]) / n
    det = A_bb[0, 0] * A_bb[1, 1] - A_bb[0, 1] ** 2
    if not (np.isfinite(det) and det > 0.0):
        raise SingularMatrixError("MSM Jacobian block is singular")
    A[k:, k:] = A_bb

    rc = resid * weight_gradient_factor(ps, estimand)
    X = ps.design
    A[k, :k] = rc @ X / n
    A[k + 1, :k] = (rc * t) @ X / n
    return A


def assemble_B(
    d: Dataset,
    ps: PSFit,
    msm: MSMFit,
    link: Link,
    estimand: Estimand | str = Estimand.ATE,
) -> np.ndarray:
    """Mean outer product of the stacked scores at the fitted parameters."""
    u_eta = ps.design * (ps.t - ps.fitted_e)[:, None]
    u_beta = score_beta(msm.beta_hat, d, weights(ps, estimand), link)
    U = np.hstack([u_eta, u_beta])
    B = U.T @ U / d.n
    return 0.5 * (B + B.T)


def check_psd(B: np.ndarray, tol: float = PSD_TOL) -> None:
    scale = np.linalg.norm(B, 2)
    if scale == 0.0:
        return
    if np.linalg.eigvalsh(B)[0] < -tol * scale:
        raise NumericError("meat matrix B is not positive semidefinite")


def sandwich(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``A^{-1} B A^{-T}`` from an LU factorization of ``A``."""
    lu, piv = lu_factor(A, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * diag.max() * A.shape[0]:
        raise SingularMatrixError("stacked Jacobian A is singular")
    half = lu_solve((lu, piv), B)  # A^{-1} B
    Sigma = lu_solve((lu, piv), half.T).T  # (A^{-1} (A^{-1} B)^T)^T
    return 0.5 * (Sigma + Sigma.T)


def stacked_fit(
    d: Dataset,
    spec: PSSpec,
    link: Link,
    estimand: Estimand | str = Estimand.ATE,
) -> StackedFit:
    """Fit the propensity model and MSM, and form the sandwich covariance.

    Raises a :class:`~iptwsize.errors.NumericError` subclass when the data
    cannot support the fit (empty arm, separation, no events, singular A).
    """
    n1 = int(d.t.sum())
    if n1 == 0 or n1 == d.n:
        raise NonEstimableError("non-estimable replicate: empty arm")
    ps = fit_logistic(d, spec)
    msm = fit_msm(d, weights(ps, estimand), link)
    A = assemble_A(d, ps, msm, link, estimand)
    B = assemble_B(d, ps, msm, link, estimand)
    check_psd(B)
    Sigma = sandwich(A, B)
    var_beta1 = float(Sigma[-1, -1]) / d.n
    if not (np.isfinite(var_beta1) and var_beta1 >= 0.0):
        raise NumericError("invalid sandwich variance for beta1")
    return StackedFit(ps, msm, A, B, Sigma, var_beta1, d.n * var_beta1, d.n)


def dump_matrices(fit: StackedFit, directory: str | os.PathLike) -> None:
    """Write ``A.csv``, ``B.csv`` and ``Sigma.csv`` to ``directory``."""
    os.makedirs(directory, exist_ok=True)
    for name in ("A", "B", "Sigma"):
        np.savetxt(os.path.join(directory, f"{name}.csv"), getattr(fit, name), delimiter=",", fmt="%.17g")
