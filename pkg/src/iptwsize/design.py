"""Sample size from a design variance, and RCT-style benchmark variances."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import expit, logit, ndtri

from iptwsize.errors import DataError

AGREEMENT_TOL = 1e-8
# ceil() guard against products like 1.0000000000000002 at exact boundaries
_CEIL_REL = 1e-12


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF (Cephes ``ndtri``)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal quantile requires 0 < p < 1, got {p}")
    return float(ndtri(p))


@dataclass(frozen=True)
class DesignInputs:
    """Effect size ``delta`` on the link scale, two-sided ``alpha``, target ``power``."""

    delta: float
    alpha: float = 0.05
    power: float = 0.8

    def __post_init__(self) -> None:
        if not math.isfinite(self.delta) or self.delta == 0.0:
            raise DataError("delta must be finite and nonzero")
        if not 0.0 < self.alpha < 1.0:
            raise DataError("alpha must lie in (0, 1)")
        if not 0.0 < self.power < 1.0:
            raise DataError("power must lie in (0, 1)")

    @property
    def z_alpha(self) -> float:
        return normal_quantile(1.0 - self.alpha / 2.0)

    @property
    def z_sum(self) -> float:
        return self.z_alpha + normal_quantile(self.power)


def se_target(inp: DesignInputs) -> float:
    """Standard error of beta1 that gives the target power: ``|delta| / (z_{1-a/2} + z_{power})``."""
    return abs(inp.delta) / inp.z_sum


def required_n(V: float, inp: DesignInputs) -> int:
    """``ceil((z_{1-a/2} + z_{power})^2 V / delta^2)``."""
    if not (math.isfinite(V) and V > 0.0):
        raise DataError(f"design variance must be positive and finite, got {V}")
    x = inp.z_sum**2 * V / inp.delta**2
    return max(1, math.ceil(x * (1.0 - _CEIL_REL)))


def _check_rho(rho: float) -> None:
    if not 0.0 < rho < 1.0:
        raise DataError("treatment proportion rho must lie in (0, 1)")


def _resolve(given, derived, what: str) -> float:
    if given is None and derived is None:
        raise DataError(f"{what}: supply either the treated-arm value or delta")
    if given is not None and derived is not None and abs(given - derived) > AGREEMENT_TOL:
        raise DataError(f"{what}: treated-arm value and delta disagree ({given} vs {derived})")
    return given if given is not None else derived


@dataclass(frozen=True)
class BinaryRCT:
    """Binary outcome, log-odds-ratio scale. Give ``p1`` or ``delta`` (or both, consistent)."""

    p0: float
    rho: float
    p1: float | None = None
    delta: float | None = None

    def __post_init__(self) -> None:
        _check_rho(self.rho)
        for p in (self.p0, self.p1):
            if p is not None and not 0.0 < p < 1.0:
                raise DataError("probabilities must lie in (0, 1)")
        derived = None if self.delta is None else float(expit(logit(self.p0) + self.delta))
        object.__setattr__(self, "p1", _resolve(self.p1, derived, "binary benchmark"))
        if self.delta is None:
            object.__setattr__(self, "delta", float(logit(self.p1) - logit(self.p0)))

    def variance(self) -> float:
        p0, p1, rho = self.p0, self.p1, self.rho
        return 1.0 / (rho * p1 * (1.0 - p1)) + 1.0 / ((1.0 - rho) * p0 * (1.0 - p0))


@dataclass(frozen=True)
class CountRCT:
    """Count outcome, log rate ratio scale. Give ``lambda1`` or ``delta``."""

    lambda0: float
    rho: float
    lambda1: float | None = None
    delta: float | None = None

    def __post_init__(self) -> None:
        _check_rho(self.rho)
        for lam in (self.lambda0, self.lambda1):
            if lam is not None and not lam > 0.0:
                raise DataError("rates must be positive")
        derived = None if self.delta is None else self.lambda0 * math.exp(self.delta)
        object.__setattr__(self, "lambda1", _resolve(self.lambda1, derived, "count benchmark"))
        if self.delta is None:
            object.__setattr__(self, "delta", math.log(self.lambda1 / self.lambda0))

    def variance(self) -> float:
        return 1.0 / (self.rho * self.lambda1) + 1.0 / ((1.0 - self.rho) * self.lambda0)


@dataclass(frozen=True)
class ContinuousRCT:
    """Continuous outcome, mean difference scale."""

    sigma2: float
    rho: float
    delta: float | None = None

    def __post_init__(self) -> None:
        _check_rho(self.rho)
        if not self.sigma2 > 0.0:
            raise DataError("sigma2 must be positive")

    def variance(self) -> float:
        return self.sigma2 / self.rho + self.sigma2 / (1.0 - self.rho)


RCTParams = BinaryRCT | CountRCT | ContinuousRCT


def rct_variance(params: RCTParams) -> float:
    """RCT-style variance factor treating the weights as fixed."""
    return params.variance()


def rct_sample_size(params: RCTParams, alpha: float = 0.05, power: float = 0.8) -> tuple[float, int]:
    """``(V_rct, n_rct)``; ``params.delta`` must be set."""
    if params.delta is None:
        raise DataError("benchmark sample size needs delta")
    V = rct_variance(params)
    return V, required_n(V, DesignInputs(params.delta, alpha, power))
