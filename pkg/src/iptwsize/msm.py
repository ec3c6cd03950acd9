r"""IPTW-weighted marginal structural model ``g(E[Y(t)]) = b0 + b1 t``.

With design rows ``D_i = (1, T_i)`` and working independence the estimating
equations are

    sum_i D_i w_i (y_i - mu(T_i; b)) = 0,   mu(t; b) = g^{-1}(b0 + b1 t).

The second coordinate only involves treated subjects, giving
``sum_{T=1} w_i (y_i - mu_1) = 0``, so ``mu_1`` is the weighted mean of ``y``
among the treated. Subtracting it from the first coordinate leaves
``sum_{T=0} w_i (y_i - mu_0) = 0``, so ``mu_0`` is the weighted control mean.
Both equations involve ``b`` only through ``mu_0 = g^{-1}(b0)`` and
``mu_1 = g^{-1}(b0 + b1)``; since ``g`` is a bijection on its domain the unique
root is ``b0 = g(mu_0)`` and ``b1 = g(mu_1) - g(mu_0)``. No iteration is needed
for any link.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from iptwsize.data import Dataset, OutcomeKind
from iptwsize.errors import NonEstimableError


@dataclass(frozen=True)
class Link:
    """A link ``g`` with inverse and ``d mu / d(linear predictor)`` as a function of mu."""

    name: str
    link: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    mu_eta: Callable[[np.ndarray], np.ndarray]
    lower: float = -np.inf
    upper: float = np.inf

    def in_domain(self, mu: float) -> bool:
        return self.lower < mu < self.upper

    def __repr__(self) -> str:
        return f"Link({self.name!r})"

    def __reduce__(self):
        # links are singletons; pickle by name so worker processes can receive them
        return (get_link, (self.name,))


def _identity(u):
    return u


def _logit_mu_eta(mu):
    return mu * (1.0 - mu)


LOGIT = Link("logit", logit, expit, _logit_mu_eta, 0.0, 1.0)
LOG = Link("log", np.log, np.exp, _identity, 0.0, np.inf)
IDENTITY = Link("identity", _identity, _identity, np.ones_like)

LINKS = {link.name: link for link in (LOGIT, LOG, IDENTITY)}
DEFAULT_LINK = {
    OutcomeKind.BINARY: LOGIT,
    OutcomeKind.COUNT: LOG,
    OutcomeKind.CONTINUOUS: IDENTITY,
}


def get_link(name: str | Link) -> Link:
    if isinstance(name, Link):
        return name
    try:
        return LINKS[name]
    except KeyError:
        raise ValueError(f"unknown link {name!r}; expected one of {sorted(LINKS)}") from None


def default_link(kind: OutcomeKind | str) -> Link:
    return DEFAULT_LINK[OutcomeKind(kind)]


@dataclass(frozen=True)
class MSMFit:
    beta_hat: np.ndarray
    mu0: float
    mu1: float
    sum_w0: float
    sum_w1: float


def fit_msm(d: Dataset, w: np.ndarray, link: Link) -> MSMFit:
    """Closed-form root of the weighted MSM estimating equations.

    Raises
    ------
    NonEstimableError
        An arm has zero total weight, or a weighted arm mean falls outside
        the link's domain (no events under logit/log, all events under logit).
    """
    treated = d.t == 1.0
    w0, w1 = w[~treated], w[treated]
    s0, s1 = float(w0.sum()), float(w1.sum())
    if not (s0 > 0.0 and s1 > 0.0):
        raise NonEstimableError("non-estimable replicate: empty arm")
    mu0 = float(w0 @ d.y[~treated]) / s0
    mu1 = float(w1 @ d.y[treated]) / s1
    if not (link.in_domain(mu0) and link.in_domain(mu1)):
        raise NonEstimableError(
            f"non-estimable replicate: arm mean outside {link.name} link domain"
        )
    g0 = float(link.link(mu0))
    g1 = float(link.link(mu1))
    return MSMFit(np.array([g0, g1 - g0]), mu0, mu1, s0, s1)


def mean_by_arm(beta: np.ndarray, t: np.ndarray, link: Link) -> np.ndarray:
    return link.inverse(beta[0] + beta[1] * t)


def score_beta(beta: np.ndarray, d: Dataset, w: np.ndarray, link: Link) -> np.ndarray:
    """Per-subject MSM scores ``D_i w_i (y_i - mu_i)``, shape (n, 2)."""
    beta = np.asarray(beta, dtype=float)
    r = w * (d.y - mean_by_arm(beta, d.t, link))
    return np.column_stack([r, r * d.t])
