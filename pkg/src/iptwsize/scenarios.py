"""Synthetic data-generating models for the binary, count and continuous case studies.

Each scenario draws covariates, assigns treatment from a logistic propensity
model whose intercept is calibrated per dataset to hit the target prevalence
``rho`` (or from a constant propensity ``rho``), and draws outcomes from the
scenario's conditional law.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import brentq
from scipy.special import expit, logit

from iptwsize.data import Dataset, OutcomeKind
from iptwsize.design import BinaryRCT, ContinuousRCT, CountRCT, RCTParams
from iptwsize.msm import IDENTITY, LOG, LOGIT, Link
from iptwsize.propensity import PSSpec

GH_NODES = 64
ROOT_XTOL = 1e-13

_gh_x, _gh_w = hermegauss(GH_NODES)
_gh_w = _gh_w / math.sqrt(2.0 * math.pi)


class PropensityMode(str, enum.Enum):
    CONFOUNDED = "confounded"
    CONSTANT = "constant"


def normal_expectation(func) -> float:
    """``E[func(X)]`` for ``X ~ N(0, 1)`` by 64-node Gauss-Hermite quadrature."""
    return float(_gh_w @ func(_gh_x))


def calibrate_eta0(x: np.ndarray, slope, rho: float) -> float:
    """Intercept with ``mean_i expit(eta0 + slope . x_i) = rho`` for these covariates.

    The mean is strictly increasing in ``eta0``, so the root is unique; it is
    bracketed by ``logit(rho) -/+ max|slope . x|``.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    lin = x.reshape(x.shape[0], -1) @ np.atleast_1d(np.asarray(slope, dtype=float))
    centre = float(logit(rho))
    spread = float(np.max(np.abs(lin))) + 1.0
    return brentq(lambda a: float(np.mean(expit(a + lin))) - rho, centre - spread, centre + spread, xtol=ROOT_XTOL)


def calibrate_outcome_binary(p0: float, beta_x: float, delta: float) -> tuple[float, float]:
    """Conditional intercept ``gamma0`` and treatment coefficient ``psi``.

    ``gamma0`` solves ``E[expit(gamma0 + beta_x X)] = p0`` and ``psi`` solves
    ``logit E[expit(gamma0 + beta_x X + psi)] - logit(p0) = delta`` with
    ``X ~ N(0, 1)``. Both maps are strictly increasing in the unknown.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    width = 10.0 * abs(beta_x) + 10.0

    def marginal(shift: float) -> float:
        return normal_expectation(lambda z: expit(shift + beta_x * z))

    lp0 = float(logit(p0))
    gamma0 = brentq(lambda g: marginal(g) - p0, lp0 - width, lp0 + width, xtol=ROOT_XTOL)
    psi = brentq(
        lambda s: float(logit(marginal(gamma0 + s))) - lp0 - delta,
        delta - width,
        delta + width,
        xtol=ROOT_XTOL,
    )
    return gamma0, psi


def standardized_t(nu: float, size, rng: np.random.Generator) -> np.ndarray:
    """Student-t draws ``Z / sqrt(chi2_nu / nu)`` rescaled to unit variance."""
    if nu <= 2:
        raise ValueError("standardized t needs nu > 2")
    z = rng.standard_normal(size)
    chi2 = rng.chisquare(nu, size)
    return z / np.sqrt(chi2 / nu) * math.sqrt((nu - 2.0) / nu)


@dataclass(frozen=True)
class Scenario:
    """Common interface; concrete scenarios below."""

    name: str = ""
    rho: float = 0.5
    delta: float = 0.0
    propensity: PropensityMode = PropensityMode.CONFOUNDED
    n_pilot: int = 600

    kind: ClassVar[OutcomeKind] = OutcomeKind.CONTINUOUS
    link: ClassVar[Link] = IDENTITY

    @property
    def p(self) -> int:
        raise NotImplementedError

    @property
    def ps_slope(self) -> np.ndarray:
        raise NotImplementedError

    def draw_covariates(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def draw_outcome(self, x: np.ndarray, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def potential_outcomes(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Covariates and independently drawn ``Y(0)``, ``Y(1)`` for ``n`` subjects."""
        x = self.draw_covariates(n, rng)
        y0 = self.draw_outcome(x, np.zeros(n), rng)
        y1 = self.draw_outcome(x, np.ones(n), rng)
        return x, y0, y1

    def ps_spec(self) -> PSSpec:
        """Analysis propensity model: all covariates, or intercept-only when constant."""
        if PropensityMode(self.propensity) is PropensityMode.CONSTANT:
            return PSSpec.intercept_only()
        return PSSpec.all_covariates(self.p)

    def rct_params(self, pilot: Dataset | None = None) -> RCTParams:
        raise NotImplementedError

    def constants(self) -> dict:
        return {}

    def null(self) -> Scenario:
        """The same scenario with no treatment effect."""
        return replace(self, name=f"{self.name}_null" if self.name else "", delta=0.0)

    def with_propensity(self, mode: PropensityMode | str) -> Scenario:
        return replace(self, propensity=PropensityMode(mode))


@dataclass(frozen=True)
class BinaryScenario(Scenario):
    rho: float = 0.25
    delta: float = math.log(2.0)
    eta1: float = 0.8
    beta_x: float = 0.5
    p0: float = 0.10
    gamma0: float = field(init=False)
    psi: float = field(init=False)

    kind: ClassVar[OutcomeKind] = OutcomeKind.BINARY
    link: ClassVar[Link] = LOGIT

    def __post_init__(self) -> None:
        gamma0, psi = calibrate_outcome_binary(self.p0, self.beta_x, self.delta)
        object.__setattr__(self, "gamma0", gamma0)
        object.__setattr__(self, "psi", psi)

    @property
    def p(self) -> int:
        return 1

    @property
    def ps_slope(self) -> np.ndarray:
        return np.array([self.eta1])

    def draw_covariates(self, n, rng):
        return rng.standard_normal((n, 1))

    def draw_outcome(self, x, t, rng):
        prob = expit(self.gamma0 + self.beta_x * x[:, 0] + self.psi * t)
        return (rng.random(t.shape[0]) < prob).astype(float)

    def marginal_means(self) -> tuple[float, float]:
        """Quadrature ``E[Y(0)]`` and ``E[Y(1)]``."""
        m0 = normal_expectation(lambda z: expit(self.gamma0 + self.beta_x * z))
        m1 = normal_expectation(lambda z: expit(self.gamma0 + self.beta_x * z + self.psi))
        return m0, m1

    def rct_params(self, pilot=None):
        return BinaryRCT(p0=self.p0, rho=self.rho, delta=self.delta)

    def constants(self):
        return {"gamma0": self.gamma0, "psi": self.psi}


@dataclass(frozen=True)
class CountScenario(Scenario):
    """Poisson outcome with ``log rate = log(lambda0) + beta_x x + delta t``."""

    rho: float = 0.67
    delta: float = math.log(0.5)
    eta1: float = 0.5
    beta_x: float = 0.3
    lambda0: float = 0.008
    n_pilot: int = 5000

    kind: ClassVar[OutcomeKind] = OutcomeKind.COUNT
    link: ClassVar[Link] = LOG

    @property
    def p(self) -> int:
        return 1

    @property
    def ps_slope(self) -> np.ndarray:
        return np.array([self.eta1])

    def draw_covariates(self, n, rng):
        return rng.standard_normal((n, 1))

    def rate(self, x, t):
        return self.lambda0 * np.exp(self.beta_x * x[:, 0] + self.delta * t)

    def draw_outcome(self, x, t, rng):
        return rng.poisson(self.rate(x, t)).astype(float)

    def rct_params(self, pilot=None):
        return CountRCT(lambda0=self.lambda0, rho=self.rho, delta=self.delta)


@dataclass(frozen=True)
class ContinuousScenario(Scenario):
    """Additive cost model with heteroskedastic standardized Student-t errors.

    Covariates are ``(X, B1, B2, B3)`` with ``X ~ N(0, 1)`` and independent
    Bernoulli indicators.
    """

    rho: float = 0.36
    delta: float = 1500.0
    bernoulli_probs: tuple[float, float, float] = (0.23, 0.11, 0.54)
    ps_coefs: tuple[float, float, float, float] = (0.7, 0.8, 1.0, 0.5)
    ps_multiplier: float = 0.6
    mean_coefs: tuple[float, float, float, float, float] = (18000.0, 1200.0, 3500.0, 4500.0, 2000.0)
    scale_base: float = 3000.0
    scale_coefs: tuple[float, float, float] = (0.15, 0.10, 0.15)  # on |X|, B1, B2
    nu: float = 4.0
    n_pilot: int = 350

    kind: ClassVar[OutcomeKind] = OutcomeKind.CONTINUOUS
    link: ClassVar[Link] = IDENTITY

    @property
    def p(self) -> int:
        return 4

    @property
    def ps_slope(self) -> np.ndarray:
        return self.ps_multiplier * np.array(self.ps_coefs)

    def draw_covariates(self, n, rng):
        x = np.empty((n, 4))
        x[:, 0] = rng.standard_normal(n)
        x[:, 1:] = rng.random((n, 3)) < np.array(self.bernoulli_probs)
        return x

    def mean(self, x, t):
        return self.mean_coefs[0] + x @ np.array(self.mean_coefs[1:]) + self.delta * t

    def scale(self, x):
        a, b1, b2 = self.scale_coefs
        return self.scale_base * np.exp(a * np.abs(x[:, 0]) + b1 * x[:, 1] + b2 * x[:, 2])

    def errors(self, n, rng):
        return standardized_t(self.nu, n, rng)

    def draw_outcome(self, x, t, rng):
        return self.mean(x, t) + self.scale(x) * self.errors(t.shape[0], rng)

    def rct_params(self, pilot=None):
        if pilot is None:
            raise ValueError("the continuous benchmark estimates sigma^2 from a pilot dataset")
        return ContinuousRCT(sigma2=pooled_variance(pilot), rho=self.rho, delta=self.delta)


def pooled_variance(d: Dataset) -> float:
    """Unweighted pooled variance of ``y`` after centering each arm at its own mean."""
    treated = d.t == 1.0
    ss = 0.0
    arms = 0
    for mask in (treated, ~treated):
        if mask.any():
            y = d.y[mask]
            ss += float(np.sum((y - y.mean()) ** 2))
            arms += 1
    return ss / (d.n - arms)


PRESETS = {
    "binary_mcm": lambda: BinaryScenario(name="binary_mcm", p0=0.03),
    "binary_sga": lambda: BinaryScenario(name="binary_sga", p0=0.10),
    "count_npe": lambda: CountScenario(name="count_npe"),
    "continuous_nsclc": lambda: ContinuousScenario(name="continuous_nsclc"),
}


def get_scenario(name: str, constant_propensity: bool = False, null: bool = False, **overrides) -> Scenario:
    """Preset scenario by name, optionally with constant propensity or no effect."""
    try:
        scenario = PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(PRESETS)}") from None
    if overrides:
        scenario = replace(scenario, **overrides)
    if constant_propensity:
        scenario = scenario.with_propensity(PropensityMode.CONSTANT)
    if null:
        scenario = scenario.null()
    return scenario


def generate_with_constants(
    scenario: Scenario,
    n: int,
    rng: np.random.Generator,
    mode: PropensityMode | str | None = None,
) -> tuple[Dataset, dict]:
    """Draw ``n`` i.i.d. subjects; also return the realized calibration constants."""
    mode = PropensityMode(mode or scenario.propensity)
    x = scenario.draw_covariates(n, rng)
    if mode is PropensityMode.CONSTANT:
        eta0 = float(logit(scenario.rho))
        e = np.full(n, scenario.rho)
    else:
        eta0 = calibrate_eta0(x, scenario.ps_slope, scenario.rho)
        e = expit(eta0 + x @ scenario.ps_slope)
    t = (rng.random(n) < e).astype(float)
    y = scenario.draw_outcome(x, t, rng)
    constants = {"eta0": eta0, **scenario.constants()}
    return Dataset(x, t, y, scenario.kind), constants


def generate(
    scenario: Scenario,
    n: int,
    rng: np.random.Generator,
    mode: PropensityMode | str | None = None,
) -> Dataset:
    return generate_with_constants(scenario, n, rng, mode)[0]
