"""Acceptance criteria 1-10, each printing one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit

from iptwsize.cli import main
from iptwsize.design import BinaryRCT, CountRCT, DesignInputs, rct_sample_size, required_n
from iptwsize.errors import NonEstimableError, SeparationError
from iptwsize.msm import IDENTITY, LOG, LOGIT, fit_msm, score_beta
from iptwsize.powersim import estimate_power, run_validation
from iptwsize.propensity import PSSpec, fit_logistic, weights
from iptwsize.rng import StreamKey
from iptwsize.sandwich import stacked_fit, stacked_scores
from iptwsize.scenarios import generate, get_scenario, standardized_t
from iptwsize.stabilize import StabilityFunctional

from conftest import make_dataset
from oracles import central_jacobian, relative_error

LINK_FOR = {"binary": LOGIT, "count": LOG, "continuous": IDENTITY}
LOG2 = DesignInputs(math.log(2))


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


def _checked(verdict, criterion, body):
    """Run ``body``; any exception is reported as FAIL before propagating."""
    try:
        detail = body()
    except Exception as exc:
        verdict(criterion, False, f"{type(exc).__name__}: {exc}")
    else:
        verdict(criterion, True, detail)


def test_criterion_01_benchmarks(verdict):
    start = time.perf_counter()
    got = [
        rct_sample_size(BinaryRCT(p0=0.03, rho=0.25, delta=math.log(2)))[1],
        rct_sample_size(BinaryRCT(p0=0.10, rho=0.25, delta=math.log(2)))[1],
        rct_sample_size(CountRCT(lambda0=0.008, rho=0.67, delta=math.log(0.5)))[1],
    ]
    elapsed = time.perf_counter() - start
    verdict(1, got == [1940, 682, 12284] and elapsed < 1.0, f"n={got}, {elapsed * 1e3:.1f} ms")


def test_criterion_02_sandwich_vs_bootstrap(verdict):
    start = time.perf_counter()
    sc = get_scenario("binary_sga")
    d = generate(sc, 5000, StreamKey(2002).generator())
    spec = sc.ps_spec()
    se_sandwich = stacked_fit(d, spec, LOGIT).se_beta1
    gen = StreamKey(2002, (2,)).generator()
    betas = []
    while len(betas) < 500:
        boot = d.take(gen.integers(0, d.n, d.n))
        fit = fit_logistic(boot, spec)
        betas.append(fit_msm(boot, weights(fit), LOGIT).beta_hat[1])
    se_boot = float(np.std(betas, ddof=1))
    rel = abs(se_sandwich - se_boot) / se_boot
    elapsed = time.perf_counter() - start
    verdict(
        2,
        rel <= 0.10 and elapsed < 120,
        f"sandwich {se_sandwich:.4f}, bootstrap {se_boot:.4f}, rel {rel:.3f}, {elapsed:.1f} s",
    )


def _fuzz_fixtures(count, seed):
    gen = np.random.default_rng(seed)
    kinds = ["binary", "count", "continuous"]
    out = []
    while len(out) < count:
        kind = kinds[len(out) % 3]
        p = int(gen.integers(1, 4))
        d = make_dataset(gen, n=int(gen.integers(150, 600)), p=p, kind=kind, ps_slope=float(gen.uniform(-1, 1)))
        spec = PSSpec.all_covariates(p)
        try:
            fit = stacked_fit(d, spec, LINK_FOR[kind])
        except (NonEstimableError, SeparationError):
            continue
        out.append((d, spec, LINK_FOR[kind], fit))
    return out


def test_criterion_03_jacobian(verdict):
    def body():
        worst = 0.0
        for d, spec, link, fit in _fuzz_fixtures(20, 303):
            fd = central_jacobian(lambda th: stacked_scores(th, d, spec, link).mean(axis=0), fit.theta_hat)
            k = fit.ps.design.shape[1]
            for rows, cols in ((slice(0, k), slice(0, k)), (slice(k, None), slice(k, None)), (slice(k, None), slice(0, k))):
                worst = max(worst, relative_error(fit.A[rows, cols], fd[rows, cols]))
            assert np.all(fit.A[:k, k:] == 0.0), "upper-right block not zero"
            assert np.all(fd[:k, k:] == 0.0), "scores for eta depend on beta"
        assert worst <= 1e-5, f"relative error {worst:.2e}"
        return f"20 fixtures, worst block relative error {worst:.2e}"

    _checked(verdict, 3, body)


def test_criterion_04_score_residuals(verdict):
    def body():
        worst = 0.0
        fixtures = _fuzz_fixtures(60, 404)
        for d, spec, link, fit in fixtures:
            worst = max(worst, float(np.max(np.abs(stacked_scores(fit.theta_hat, d, spec, link).sum(axis=0)))))
        assert worst <= 1e-8, f"max residual {worst:.2e}"
        return f"{len(fixtures)} converged fits, max residual {worst:.2e}"

    _checked(verdict, 4, body)


def test_criterion_05_calibration(verdict):
    n = 1_000_000
    parts = []
    ok = True
    for name in ("binary_mcm", "binary_sga"):
        _, y0, y1 = get_scenario(name).potential_outcomes(n, StreamKey(505, (len(parts),)).generator())
        m0, m1 = y0.mean(), y1.mean()
        se = math.sqrt(1 / (n * m0 * (1 - m0)) + 1 / (n * m1 * (1 - m1)))
        z = (logit(m1) - logit(m0) - math.log(2)) / se
        ok &= abs(z) < 3
        parts.append(f"{name} z={z:+.2f}")
    _, y0, y1 = get_scenario("count_npe").potential_outcomes(n, StreamKey(505, (9,)).generator())
    m0, m1 = y0.mean(), y1.mean()
    se = math.sqrt(y1.var() / (n * m1**2) + y0.var() / (n * m0**2))
    z = (math.log(m1 / m0) - math.log(0.5)) / se
    ok &= abs(z) < 3
    parts.append(f"count IRR z={z:+.2f}")
    var = standardized_t(4.0, n, StreamKey(505, (10,)).generator()).var()
    ok &= abs(var - 1.0) < 0.02
    parts.append(f"t4 variance {var:.4f}")
    verdict(5, ok, ", ".join(parts))


def test_criterion_06_type_one(verdict):
    parts = []
    ok = True
    for name in ("binary_mcm", "binary_sga", "count_npe", "continuous_nsclc"):
        est = estimate_power(get_scenario(name, null=True), 2000, 2000, 0.05, StreamKey(6))
        ok &= abs(est.power - 0.05) <= 0.015
        parts.append(f"{name} {est.power:.4f} ({est.exclusions} excl)")
    verdict(6, ok, ", ".join(parts))


def test_criterion_07_scaled_replication(verdict):
    start = time.perf_counter()
    res = run_validation(get_scenario("binary_sga"), 50, 600, 200, 500, LOG2, StreamKey(20261019), workers=8)
    elapsed = time.perf_counter() - start
    grid = dict(zip(res.grid.grid_n, res.grid.power_hat))
    power_682 = grid[682]
    ordered = all(r.n_prop["Q0.5"] <= r.n_prop["Q0.7"] <= r.n_prop["Q0.9"] for r in res.replicates)
    hits = [res.report.row(c).hit_rate for c in ("Q0.5", "Q0.7", "Q0.9")]
    mean_q50 = res.report.row("Q0.5").n_mean
    checks = {
        "power": abs(power_682 - 0.754) <= 0.04,
        "ordering": ordered,
        "hit rates": hits[0] < hits[1] < hits[2],
        "mean n": abs(mean_q50 - 771) / 771 <= 0.15,
        "runtime": elapsed < 1800,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(
        7,
        not failed,
        f"power@682 {power_682:.3f}, ordering {ordered}, hit {hits}, mean n(Q0.5) {mean_q50:.1f}, "
        f"{elapsed:.0f} s" + (f", failed: {failed}" if failed else ""),
    )


def test_criterion_08_constant_propensity(verdict):
    median = [StabilityFunctional.quantile(0.5)]
    gaps = {}
    for constant in (False, True):
        sc = get_scenario("continuous_nsclc", constant_propensity=constant)
        from iptwsize.powersim import run_design_replicates

        reps = run_design_replicates(sc, 50, sc.n_pilot, 200, DesignInputs(sc.delta), StreamKey(8), median, [])
        gaps[constant] = abs(np.mean([r.n_prop["Q0.5"] for r in reps]) - np.mean([r.n_rct for r in reps]))
    shrink = 1.0 - gaps[True] / gaps[False]
    verdict(8, shrink >= 0.5, f"gap confounded {gaps[False]:.1f}, constant {gaps[True]:.1f}, shrink {shrink:.0%}")


def test_criterion_09_determinism(verdict, tmp_path, capsys):
    def run(workers):
        out = tmp_path / f"w{workers}"
        code = main(
            ["validate", "--scenario", "binary_sga", "--R", "5", "--B", "50", "--reps", "100",
             "--seed", "99", "--workers", str(workers), "--out", str(out)]
        )
        capsys.readouterr()
        assert code == 0
        return (out / "report.csv").read_bytes(), (out / "grid.csv").read_bytes()

    same = run(1) == run(8)
    verdict(9, same, "report.csv and grid.csv byte-identical at 1 and 8 workers" if same else "outputs differ")


PROPERTY_SETTINGS = settings(max_examples=200, deadline=None, derandomize=True)


@PROPERTY_SETTINGS
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(30, 300), p=st.integers(1, 3), slope=st.floats(-1.0, 1.0))
def _ate_weights(seed, n, p, slope):
    d = make_dataset(np.random.default_rng(seed), n=n, p=p, ps_slope=slope)
    if d.t.sum() in (0, d.n):
        return
    try:
        fit = fit_logistic(d, PSSpec.all_covariates(p))
    except SeparationError:
        return
    assert np.all(weights(fit) >= 1.0)


@PROPERTY_SETTINGS
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["binary", "count", "continuous"]), c=st.floats(1e-3, 1e3))
def _weight_scale(seed, kind, c):
    gen = np.random.default_rng(seed)
    d = make_dataset(gen, n=120, kind=kind)
    w = gen.uniform(1.0, 6.0, d.n)
    link = LINK_FOR[kind]
    try:
        a = fit_msm(d, w, link).beta_hat
    except NonEstimableError:
        return
    b = fit_msm(d, c * w, link).beta_hat
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(score_beta(b, d, c * w, link).sum(axis=0))) <= 1e-8 * max(1.0, c)


@PROPERTY_SETTINGS
@given(values=st.lists(st.floats(0.0, 1e6), min_size=1, max_size=80), q1=st.floats(0.01, 0.99), q2=st.floats(0.01, 0.99))
def _quantile_monotone(values, q1, q2):
    lo, hi = sorted((q1, q2))
    assert StabilityFunctional.quantile(lo)(values) <= StabilityFunctional.quantile(hi)(values)


@PROPERTY_SETTINGS
@given(V=st.floats(1e-3, 1e5), delta=st.floats(0.05, 3.0), power=st.floats(0.5, 0.99))
def _ceiling_bracketing(V, delta, power):
    inp = DesignInputs(delta, 0.05, power)
    n, n4 = required_n(V, inp), required_n(4 * V, inp)
    if n > 1:
        assert 4 * n - 3 <= n4 <= 4 * n


def test_criterion_10_properties(verdict):
    def body():
        for prop in (_ate_weights, _weight_scale, _quantile_monotone, _ceiling_bracketing):
            prop()
        return "4 properties x 200 configurations"

    _checked(verdict, 10, body)
