"""Design replication and Monte Carlo power validation.

The workflow: simulate ``R`` pilots, run the bootstrap stabilization on each
and convert every stability choice to a proposed ``n``; pool those ``n`` into
a sparse grid; estimate power at each grid point with the stacked-sandwich
Wald test; interpolate power at each proposed ``n`` and report mean power,
percentile intervals and the hit rate ``P(power >= target)``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy.optimize import isotonic_regression

from iptwsize import rng as streams
from iptwsize._parallel import ordered_map
from iptwsize.design import DesignInputs, normal_quantile, rct_sample_size, required_n
from iptwsize.errors import NumericError
from iptwsize.scenarios import Scenario, generate
from iptwsize.sandwich import stacked_fit
from iptwsize.stabilize import (
    PRESET_FUNCTIONALS,
    PRESET_UCB,
    apply_functional,
    bootstrap_lsvf,
    nearest_rank_quantile,
    ucb,
)

log = logging.getLogger(__name__)

RCT_LABEL = "rct"
GRID_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
MAX_EXCLUSION_RATE = 0.10
REPORT_COLUMNS = (
    "scenario",
    "stability_choice",
    "n_mean",
    "n_median",
    "power_mean",
    "power_lo95",
    "power_hi95",
    "hit_rate",
)
GRID_COLUMNS = ("n", "power", "reps", "exclusions")


def _fmt(v: float) -> str:
    return f"{v:.10g}"


@dataclass(frozen=True)
class DesignReplicate:
    replicate: int
    pilot_stream: tuple[int, ...]
    v_pilot: float
    v_stable: dict[str, float]
    n_prop: dict[str, int]
    n_rct: int
    v_rct: float
    failures: int = 0


def choice_labels(functionals, ucb_specs) -> list[str]:
    return [f.label for f in functionals] + [u.label for u in ucb_specs]


def run_design_replicate(
    r: int,
    scenario: Scenario,
    n_pilot: int,
    B: int,
    functionals,
    ucb_specs,
    inp: DesignInputs,
    stream: streams.StreamKey,
) -> DesignReplicate:
    """One pilot: generate, fit, bootstrap, stabilize, convert to ``n``."""
    pilot_key = stream.child(streams.PILOT, r)
    pilot = generate(scenario, n_pilot, pilot_key.generator())
    spec, link = scenario.ps_spec(), scenario.link
    v_pilot = stacked_fit(pilot, spec, link).lsvf
    dist = bootstrap_lsvf(pilot, spec, link, B, stream.child(streams.BOOTSTRAP, r))
    v_stable = {f.label: apply_functional(dist, f) for f in functionals}
    for j, u in enumerate(ucb_specs):
        v_stable[u.label] = ucb(dist, u, stream.child(streams.UCB, r, j).generator())
    n_prop = {label: required_n(v, inp) for label, v in v_stable.items()}
    v_rct, n_rct = rct_sample_size(scenario.rct_params(pilot), inp.alpha, inp.power)
    return DesignReplicate(r, pilot_key.path, v_pilot, v_stable, n_prop, n_rct, v_rct, dist.failures)


def run_design_replicates(
    scenario: Scenario,
    R: int,
    n_pilot: int,
    B: int,
    inp: DesignInputs,
    stream: streams.StreamKey,
    functionals=PRESET_FUNCTIONALS,
    ucb_specs=PRESET_UCB,
    workers: int = 1,
) -> list[DesignReplicate]:
    """``R`` independent pilots, each run through the full design procedure."""
    task = partial(
        run_design_replicate,
        scenario=scenario,
        n_pilot=n_pilot,
        B=B,
        functionals=tuple(functionals),
        ucb_specs=tuple(ucb_specs),
        inp=inp,
        stream=stream,
    )
    return ordered_map(task, range(R), workers)


def pooled_n(replicates, labels=None) -> list[int]:
    return [n for rep in replicates for label, n in rep.n_prop.items() if labels is None or label in labels]


def build_grid(pooled, n_rct: int | None = None) -> list[int]:
    """Deduplicated sorted ``{min, Q.1, Q.25, Q.5, mean, Q.75, Q.9, max, n_rct}``.

    Quantiles are nearest-rank, the mean is rounded up.
    """
    values = np.asarray(list(pooled), dtype=float)
    if values.size == 0:
        raise ValueError("cannot build a grid from no sample sizes")
    points = {int(values.min()), int(values.max()), math.ceil(values.mean())}
    points.update(int(nearest_rank_quantile(values, q)) for q in GRID_QUANTILES)
    if n_rct is not None:
        points.add(int(n_rct))
    return sorted(points)


@dataclass(frozen=True)
class PowerEstimate:
    n: int
    reps: int
    rejections: int
    exclusions: int

    @property
    def non_rejections(self) -> int:
        return self.reps - self.rejections - self.exclusions

    @property
    def power(self) -> float:
        used = self.reps - self.exclusions
        return self.rejections / used if used else float("nan")

    @property
    def exclusion_rate(self) -> float:
        return self.exclusions / self.reps

    @property
    def flagged(self) -> bool:
        return self.exclusion_rate > MAX_EXCLUSION_RATE


def _power_chunk(task, scenario: Scenario, z_crit: float, stream: streams.StreamKey) -> tuple[int, int]:
    n, reps = task
    rejections = exclusions = 0
    spec, link = scenario.ps_spec(), scenario.link
    for k in reps:
        d = generate(scenario, n, stream.child(streams.POWER, n, k).generator())
        try:
            fit = stacked_fit(d, spec, link)
        except NumericError:
            exclusions += 1
            continue
        if fit.var_beta1 <= 0.0:
            exclusions += 1
        elif abs(fit.beta1) / math.sqrt(fit.var_beta1) > z_crit:
            rejections += 1
    return rejections, exclusions


def _power_tasks(grid_n, reps: int, chunk: int = 50):
    return [(int(n), range(lo, min(lo + chunk, reps))) for n in grid_n for lo in range(0, reps, chunk)]


def _critical_value(inp: DesignInputs | float) -> float:
    if isinstance(inp, DesignInputs):
        return inp.z_alpha
    alpha = float(inp)
    return normal_quantile(1.0 - alpha / 2.0)


def estimate_power_many(
    scenario: Scenario,
    grid_n,
    reps: int,
    inp: DesignInputs | float,
    stream: streams.StreamKey,
    workers: int = 1,
) -> list[PowerEstimate]:
    """Monte Carlo power at several sizes; replicate ``k`` at size ``n`` uses substream ``(POWER, n, k)``."""
    grid_n = [int(n) for n in grid_n]
    if any(n < 4 for n in grid_n):
        raise ValueError("power simulation needs n >= 4")
    tasks = _power_tasks(grid_n, reps)
    results = ordered_map(partial(_power_chunk, scenario=scenario, z_crit=_critical_value(inp), stream=stream), tasks, workers)
    totals = {n: [0, 0] for n in grid_n}
    for (n, _), (rej, exc) in zip(tasks, results):
        totals[n][0] += rej
        totals[n][1] += exc
    estimates = [PowerEstimate(n, reps, *totals[n]) for n in grid_n]
    for est in estimates:
        if est.flagged:
            log.warning("n=%d: %.1f%% of Monte Carlo replicates excluded", est.n, 100 * est.exclusion_rate)
    return estimates


def estimate_power(
    scenario: Scenario,
    n: int,
    reps: int,
    inp: DesignInputs | float,
    stream: streams.StreamKey,
    workers: int = 1,
) -> PowerEstimate:
    """Rejection rate of ``|beta1_hat| / SE > z_{1-alpha/2}`` over ``reps`` simulated datasets.

    Replicates whose stacked fit fails are excluded from the denominator and
    counted in ``exclusions``. ``inp`` may be a bare significance level, which
    is how null (type-I) scenarios are checked.
    """
    return estimate_power_many(scenario, [n], reps, inp, stream, workers)[0]


@dataclass(frozen=True)
class PowerGrid:
    grid_n: tuple[int, ...]
    power_hat: tuple[float, ...]
    reps: tuple[int, ...]
    rejections: tuple[int, ...] = ()
    exclusions: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.grid_n, self.grid_n[1:])):
            raise ValueError("grid must be strictly increasing")
        if not self.exclusions:
            object.__setattr__(self, "exclusions", (0,) * len(self.grid_n))
        if not self.rejections:
            object.__setattr__(self, "rejections", (0,) * len(self.grid_n))

    @classmethod
    def from_estimates(cls, estimates) -> PowerGrid:
        est = sorted(estimates, key=lambda e: e.n)
        return cls(
            tuple(e.n for e in est),
            tuple(e.power for e in est),
            tuple(e.reps for e in est),
            tuple(e.rejections for e in est),
            tuple(e.exclusions for e in est),
        )

    def isotonic(self) -> PowerGrid:
        """Nondecreasing least-squares fit, weighted by the replicates used."""
        used = np.array(self.reps) - np.array(self.exclusions)
        fitted = isotonic_regression(np.array(self.power_hat), weights=np.maximum(used, 1)).x
        return replace(self, power_hat=tuple(float(v) for v in fitted))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.csv_text())

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(GRID_COLUMNS)
        for n, pw, reps, exc in zip(self.grid_n, self.power_hat, self.reps, self.exclusions):
            writer.writerow([n, _fmt(pw), reps, exc])
        return buf.getvalue()


def interpolate_power(grid: PowerGrid, n: float) -> float:
    """Piecewise-linear in ``n``, clamped to the end values outside the grid."""
    if not grid.grid_n:
        raise ValueError("empty power grid")
    return float(np.interp(float(n), np.array(grid.grid_n, dtype=float), np.array(grid.power_hat)))


def _label_n(rep: DesignReplicate, label: str) -> int:
    return rep.n_rct if label == RCT_LABEL else rep.n_prop[label]


def hit_rate(replicates, grid: PowerGrid, target: float = 0.8, labels=None) -> dict[str, float]:
    """Fraction of replicates whose interpolated power at their ``n`` reaches ``target``."""
    if labels is None:
        labels = [RCT_LABEL] + list(replicates[0].n_prop)
    return {
        label: float(np.mean([interpolate_power(grid, _label_n(rep, label)) >= target for rep in replicates]))
        for label in labels
    }


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    stability_choice: str
    n_mean: float
    n_median: float
    power_mean: float
    power_lo95: float
    power_hi95: float
    hit_rate: float

    def cells(self) -> list[str]:
        return [
            self.scenario,
            self.stability_choice,
            _fmt(self.n_mean),
            _fmt(self.n_median),
            _fmt(self.power_mean),
            _fmt(self.power_lo95),
            _fmt(self.power_hi95),
            _fmt(self.hit_rate),
        ]


@dataclass(frozen=True)
class ValidationReport:
    rows: tuple[ReportRow, ...]
    target: float = 0.8
    extras: dict = field(default_factory=dict)

    def row(self, choice: str) -> ReportRow:
        for r in self.rows:
            if r.stability_choice == choice:
                return r
        raise KeyError(choice)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.rows:
            writer.writerow(r.cells())
        return buf.getvalue()

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.csv_text())


def summarize(replicates, grid: PowerGrid, target: float = 0.8, scenario: str = "") -> ValidationReport:
    """One row for the RCT benchmark, then one per stability choice in configured order.

    Power intervals are the 2.5th and 97.5th percentiles (linear interpolation)
    of the per-replicate interpolated power.
    """
    if not replicates:
        raise ValueError("no design replicates to summarize")
    labels = [RCT_LABEL] + list(replicates[0].n_prop)
    rates = hit_rate(replicates, grid, target, labels)
    rows = []
    for label in labels:
        ns = np.array([_label_n(rep, label) for rep in replicates], dtype=float)
        power = np.array([interpolate_power(grid, n) for n in ns])
        lo, hi = np.percentile(power, [2.5, 97.5])
        rows.append(
            ReportRow(
                scenario,
                label,
                float(ns.mean()),
                float(np.median(ns)),
                float(power.mean()),
                float(lo),
                float(hi),
                rates[label],
            )
        )
    return ValidationReport(tuple(rows), target)


def replicates_csv_text(replicates) -> str:
    labels = list(replicates[0].n_prop) if replicates else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replicate", "v_pilot", "n_rct", "failures"] + [f"n_{x}" for x in labels] + [f"v_{x}" for x in labels])
    for rep in replicates:
        writer.writerow(
            [rep.replicate, repr(rep.v_pilot), rep.n_rct, rep.failures]
            + [rep.n_prop[x] for x in labels]
            + [repr(rep.v_stable[x]) for x in labels]
        )
    return buf.getvalue()


@dataclass(frozen=True)
class ValidationResult:
    report: ValidationReport
    grid: PowerGrid
    raw_grid: PowerGrid
    replicates: list


def run_validation(
    scenario: Scenario,
    R: int,
    n_pilot: int,
    B: int,
    reps: int,
    inp: DesignInputs,
    stream: streams.StreamKey,
    functionals=PRESET_FUNCTIONALS,
    ucb_specs=PRESET_UCB,
    target: float = 0.8,
    workers: int = 1,
    smooth: bool = False,
) -> ValidationResult:
    """Full validation: replicates, grid, power, hit rates and report."""
    log.info("design replicates: R=%d, n_pilot=%d, B=%d", R, n_pilot, B)
    replicates = run_design_replicates(scenario, R, n_pilot, B, inp, stream, functionals, ucb_specs, workers)
    n_rct = [rep.n_rct for rep in replicates]
    pooled = pooled_n(replicates)
    if len(set(n_rct)) > 1:
        # pilot-estimated benchmark: its spread must be covered too
        pooled = pooled + n_rct
    grid_n = build_grid(pooled, math.ceil(np.median(n_rct)))
    log.info("power grid (%d points, %d reps each): %s", len(grid_n), reps, grid_n)
    raw = PowerGrid.from_estimates(estimate_power_many(scenario, grid_n, reps, inp, stream, workers))
    grid = raw.isotonic() if smooth else raw
    report = summarize(replicates, grid, target, scenario.name)
    return ValidationResult(report, grid, raw, replicates)
