"""Bootstrap stabilization of the large-sample variance factor (LSVF).

First level: refit the full stacked estimator on ``B`` bootstrap resamples of
the pilot and record ``V*(b) = n_pilot * Var*(beta1_hat)``. A stability
functional (nearest-rank quantile or mean) turns the draws into a design
value. Second level (optional): resample the ``B`` scalars ``B_ucb`` times,
apply an inner functional to each resample and take the ``1 - gamma_ucb``
quantile as an upper confidence bound.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from functools import partial

import numpy as np

from iptwsize import rng as streams
from iptwsize._parallel import ordered_map
from iptwsize.data import Dataset, resample
from iptwsize.errors import BootstrapAbort, NumericError
from iptwsize.msm import Link
from iptwsize.propensity import Estimand, PSSpec
from iptwsize.sandwich import stacked_fit

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 10
MAX_FAILURE_RATE = 0.05


def nearest_rank_quantile(values, q: float) -> float:
    """Inverse empirical CDF: the ``ceil(q B)``-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty distribution")
    k = min(max(math.ceil(q * v.size), 1), v.size)
    return float(v[k - 1])


@dataclass(frozen=True)
class StabilityFunctional:
    kind: str
    q: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("quantile", "mean"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "quantile" and not (self.q is not None and 0.0 < self.q < 1.0):
            raise ValueError("quantile level must lie in (0, 1)")

    @classmethod
    def quantile(cls, q: float) -> StabilityFunctional:
        return cls("quantile", float(q))

    @classmethod
    def mean(cls) -> StabilityFunctional:
        return cls("mean")

    @classmethod
    def parse(cls, label: str) -> StabilityFunctional:
        """``"mean"``, ``"Q0.7"`` or ``"median"``."""
        text = label.strip()
        if text.lower() == "mean":
            return cls.mean()
        if text.lower() == "median":
            return cls.quantile(0.5)
        if text[:1] in "Qq":
            return cls.quantile(float(text[1:]))
        raise ValueError(f"cannot parse stability functional {label!r}")

    @property
    def label(self) -> str:
        return "mean" if self.kind == "mean" else f"Q{self.q:g}"

    def __call__(self, values) -> float:
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise ValueError("empty distribution")
        if self.kind == "mean":
            return float(v.mean())
        return nearest_rank_quantile(v, self.q)

    def batch(self, matrix: np.ndarray) -> np.ndarray:
        """Apply row-wise to a (k, B) matrix of resampled values."""
        if self.kind == "mean":
            return matrix.mean(axis=1)
        B = matrix.shape[1]
        k = min(max(math.ceil(self.q * B), 1), B)
        return np.partition(matrix, k - 1, axis=1)[:, k - 1]


PRESET_FUNCTIONALS = (
    StabilityFunctional.quantile(0.5),
    StabilityFunctional.quantile(0.7),
    StabilityFunctional.quantile(0.9),
    StabilityFunctional.mean(),
)


@dataclass(frozen=True)
class UCBSpec:
    phi: StabilityFunctional = StabilityFunctional.quantile(0.5)
    B_ucb: int = 1000
    gamma_ucb: float = 0.05

    def __post_init__(self) -> None:
        if self.B_ucb < 1:
            raise ValueError("B_ucb must be positive")
        if not 0.0 < self.gamma_ucb < 1.0:
            raise ValueError("gamma_ucb must lie in (0, 1)")

    @property
    def label(self) -> str:
        return f"UCB-{self.phi.label}"


PRESET_UCB = (UCBSpec(StabilityFunctional.quantile(0.5)), UCBSpec(StabilityFunctional.mean()))


@dataclass(frozen=True)
class BootstrapDistribution:
    values: tuple[float, ...]
    n_pilot: int
    B_requested: int
    failures: int = 0
    redraws: int = 0

    @property
    def unrecovered(self) -> int:
        return self.B_requested - len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("b,v_star\n")
            for b, v in enumerate(self.values, start=1):
                fh.write(f"{b},{v!r}\n")


def _bootstrap_slot(
    b: int,
    pilot: Dataset,
    spec: PSSpec,
    link: Link,
    estimand: Estimand,
    stream: streams.StreamKey,
) -> tuple[float | None, int]:
    """One bootstrap slot with redraws: (V* or None, failed attempts)."""
    gen = stream.child(b).generator()
    for attempt in range(MAX_ATTEMPTS):
        try:
            return stacked_fit(resample(pilot, gen), spec, link, estimand).lsvf, attempt
        except NumericError:
            continue
    return None, MAX_ATTEMPTS


def _bootstrap_chunk(indices, **kwargs) -> list[tuple[float | None, int]]:
    return [_bootstrap_slot(b, **kwargs) for b in indices]


def bootstrap_lsvf(
    pilot: Dataset,
    spec: PSSpec,
    link: Link,
    B: int,
    stream: streams.StreamKey,
    estimand: Estimand | str = Estimand.ATE,
    workers: int = 1,
) -> BootstrapDistribution:
    """First-level bootstrap of the LSVF.

    Slot ``b`` draws from the substream ``stream.child(b)``. A resample whose
    stacked fit fails (empty arm, no events, separation, singular Jacobian) is
    redrawn from the same substream, up to 10 attempts per slot.

    Raises
    ------
    BootstrapAbort
        More than 5% of the ``B`` slots failed all attempts.
    """
    if B < 1:
        raise ValueError("B must be positive")
    estimand = Estimand(estimand)
    kwargs = dict(pilot=pilot, spec=spec, link=link, estimand=estimand, stream=stream)
    if workers <= 1:
        results = _bootstrap_chunk(range(B), **kwargs)
    else:
        chunks = [range(lo, min(lo + 25, B)) for lo in range(0, B, 25)]
        results = [r for part in ordered_map(partial(_bootstrap_chunk, **kwargs), chunks, workers) for r in part]
    values = tuple(v for v, _ in results if v is not None)
    failures = sum(f for _, f in results)
    redraws = sum(min(f, MAX_ATTEMPTS - 1) for _, f in results)
    unrecovered = B - len(values)
    if failures:
        log.info("bootstrap: %d failed resamples, %d redraws, %d unrecovered", failures, redraws, unrecovered)
    if unrecovered > MAX_FAILURE_RATE * B:
        raise BootstrapAbort(
            f"{unrecovered} of {B} bootstrap resamples non-estimable after {MAX_ATTEMPTS} attempts each"
        )
    return BootstrapDistribution(values, pilot.n, B, failures, redraws)


def apply_functional(dist: BootstrapDistribution, F: StabilityFunctional) -> float:
    if not dist.values:
        raise ValueError("empty bootstrap distribution")
    return F(dist.values)


def ucb_draws(dist: BootstrapDistribution, spec: UCBSpec, rng: np.random.Generator) -> np.ndarray:
    """The ``B_ucb`` second-level values ``phi*(k)``."""
    values = dist.as_array()
    if values.size == 0:
        raise ValueError("empty bootstrap distribution")
    idx = rng.integers(0, values.size, size=(spec.B_ucb, values.size))
    return spec.phi.batch(values[idx])


def ucb(dist: BootstrapDistribution, spec: UCBSpec, rng: np.random.Generator) -> float:
    """Nearest-rank ``1 - gamma_ucb`` quantile of the resampled ``phi`` values."""
    return nearest_rank_quantile(ucb_draws(dist, spec, rng), 1.0 - spec.gamma_ucb)
