"""End-to-end acceptance checks, one test (or group) per numbered criterion.

Runtime limits are asserted alongside each result.  The two toy sweeps are
run once per module and shared by the criteria that read them.
"""

import itertools
import math
import time
import warnings

import numpy as np
import pytest

from rlab import bounds as B
from rlab.bounds import BoundInputs
from rlab.data import LabeledDataset, MeasureSpec
from rlab.harness import DatasetSpec, SweepConfig, run_sweep
from rlab.isoperimetry import clipped_linear, concentration_test, estimate_c
from rlab.lipschitz import soft_sign
from rlab.margin import (
    IntervalClassifier1D,
    LinearClassifier,
    attack_margin,
    class_stability,
    sdf_lipschitz_check,
    signed_distance_exact,
)

import oracle
from helpers import central_difference_errors


def crit(number, title):
    return pytest.mark.criterion(number, title)


@pytest.fixture
def detail(record_property):
    return lambda text: record_property("detail", text)


def timed(fn, *args, **kw):
    start = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - start


# -- sweeps shared by criteria 4, 10, 11, 12 ---------------------------------

CONCENTRATED = SweepConfig()
DIFFUSE = SweepConfig(dataset=DatasetSpec(sigma=1.0))


@pytest.fixture(scope="module")
def concentrated(tmp_path_factory):
    out = tmp_path_factory.mktemp("concentrated")
    records, elapsed = timed(run_sweep, CONCENTRATED, out)
    return records, out, elapsed


@pytest.fixture(scope="module")
def diffuse(tmp_path_factory):
    out = tmp_path_factory.mktemp("diffuse")
    records, elapsed = timed(run_sweep, DIFFUSE, out)
    return records, out, elapsed


def seed_means(records, name, widths):
    return [float(np.mean([getattr(r, name) for r in records if r.width == w])) for w in widths]


def steps_up(values):
    return sum(b >= a for a, b in zip(values, values[1:]))


# -- 1 -----------------------------------------------------------------------

@crit(1, "analytic gradients match central differences")
def test_gradient_correctness(detail):
    start = time.perf_counter()
    worst = 0.0
    for activation, loss in itertools.product(["tanh", "relu", "identity"],
                                              ["cross_entropy", "hinge"]):
        w, x = central_difference_errors(activation, loss, seeds=range(20))
        worst = max(worst, w, x)
    elapsed = time.perf_counter() - start
    detail(f"max relative error {worst:.3e}, {elapsed:.1f} s")
    assert worst <= 1e-5
    assert elapsed < 10


# -- 2 -----------------------------------------------------------------------

@crit(2, "attack margins match point-to-hyperplane distances")
def test_margin_oracle(detail):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for k in range(100):
        d = (2, 10, 784)[k % 3]
        w, b = rng.standard_normal(d), rng.normal()
        x = rng.standard_normal(d)
        est = attack_margin(LinearClassifier(w, b).to_network(), x)
        exact = abs(signed_distance_exact(w, b, x))
        worst = max(worst, abs(est.estimated_margin - exact) / exact)
    elapsed = time.perf_counter() - start
    detail(f"worst relative error {worst:.2e} over 100 classifiers, {elapsed:.1f} s")
    assert worst <= 0.05
    assert elapsed < 120


# -- 3 -----------------------------------------------------------------------

@crit(3, "class stability of x1 on N(0, I) is the folded-normal mean")
def test_class_stability_oracle(detail):
    X = np.random.default_rng(3).standard_normal((2000, 784))
    w = np.zeros(784)
    w[0] = 1.0
    ds = LabeledDataset(X, np.zeros(2000, dtype=int), 2, "csv")
    rep, elapsed = timed(class_stability, LinearClassifier(w).to_network(), ds)
    target = math.sqrt(2 / math.pi)
    detail(f"S_hat {rep.S_hat:.5f} vs {target:.5f}, {elapsed:.1f} s")
    assert abs(rep.S_hat - target) <= 0.05 * target
    assert elapsed < 300


# -- 4 -----------------------------------------------------------------------

@crit(4, "normalized co-stability lower-bounds class stability")
def test_chain_inequality(concentrated, detail):
    records = concentrated[0]
    measured = [r for r in records if r.chain_holds is not None]
    assert len(measured) == len(records)
    for r in records:
        assert r.S_hat >= r.S_star / r.L_hi
    assert all(r.chain_holds for r in records)
    violations = sum(r.chain_pointwise_violations for r in records)
    min_slack = min(r.S_hat - r.S_star / r.L_hi for r in records)
    detail(f"{len(records)} records, {violations} pointwise violations, min slack {min_slack:.4f}")
    assert violations == 0


# -- 5 -----------------------------------------------------------------------

WORKED = [
    (B.rademacher_bound_basic, BoundInputs(n=100, d=784, logF=1000.0, c=1.0, S=0.5), 0.714286),
    (B.rademacher_bound_refined, BoundInputs(n=100, d=784, logF=1000.0, c=1.0, S=0.5), 0.225877),
    (B.robustness_threshold_finite, BoundInputs(n=100, d=784, logF=1000.0, c=1.0), 3.38814),
]
WORKED_INF = BoundInputs(n=100, d=784, logF=1000.0, c=1.0, S_star=0.4, L=2.0, W=10.0, J=5.0,
                         eps_tilde=0.01, eps=0.1)


def _random_inputs(rng):
    n = int(rng.integers(10, 10**5))
    return BoundInputs(n=n, d=int(rng.integers(2, 5000)), logF=float(n * rng.uniform(1, 100)),
                       c=float(rng.uniform(0.05, 10)), S=float(rng.uniform(0.01, 3)),
                       S_star=float(rng.uniform(0.01, 3)), L=float(rng.uniform(0.1, 10)),
                       K=float(rng.uniform(0.1, 5)), K1=float(rng.uniform(0.1, 5)),
                       K2=float(rng.uniform(0.1, 5)), W=float(rng.uniform(0.1, 100)),
                       J=float(rng.uniform(0.1, 20)), eps_tilde=float(10 ** rng.uniform(-4, 1)),
                       eps=float(rng.uniform(0.01, 0.99)), delta=float(rng.uniform(0.001, 0.5)),
                       a=float(rng.uniform(0.1, 3)))


def _ours(i, R):
    return [
        B.rademacher_bound_basic(i).value,
        B.rademacher_bound_refined(i).value,
        B.robustness_threshold_finite(i).value,
        B.rademacher_bound_infinite(i).value,
        B.robustness_threshold_infinite(i).value,
        B.generalization_gap_bound(R, i.a, i.delta, i.n).value,
        B.compare_to_standard(i).standard,
    ]


def _reference(i, R):
    return [
        oracle.basic(i.n, i.d, i.logF, i.c, i.S, i.K1),
        oracle.refined(i.n, i.d, i.logF, i.c, i.S, i.K2),
        oracle.finite_threshold(i.n, i.d, i.logF, i.c, i.K, i.eps),
        oracle.infinite(i.n, i.d, i.logF, i.c, i.S_star, i.L, i.W, i.J, i.eps_tilde, i.K),
        oracle.infinite_threshold(i.n, i.d, i.logF, i.c, i.K, i.eps, i.W, i.J, i.eps_tilde),
        oracle.gap(R, i.a, i.delta, i.n),
        oracle.standard(i.n, i.logF),
    ]


@crit(5, "bound evaluators match a 50-digit oracle")
def test_bound_evaluators(detail):
    rng = np.random.default_rng(5)
    cases = [(_random_inputs(rng), float(rng.uniform(0, 2))) for _ in range(100)]
    worked = [(WORKED[0][1], 0.2)] + [(WORKED_INF, 0.2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        start = time.perf_counter()
        ours = [_ours(i, R) for i, R in cases + worked]
        elapsed = time.perf_counter() - start
    worst = 0.0
    for (i, R), vals in zip(cases + worked, ours):
        for v, ref in zip(vals, _reference(i, R)):
            worst = max(worst, abs(v - float(ref)) / abs(float(ref)))
    printed = [fn(inp).value for fn, inp, _ in WORKED] + [
        B.rademacher_bound_infinite(WORKED_INF).value,
        B.robustness_threshold_infinite(WORKED_INF).value,
        B.generalization_gap_bound(0.2, 1.0, 0.05, 100).value,
    ]
    expected = [v for _, _, v in WORKED] + [2.00535, 12.0321, 0.471599]
    printed_err = max(abs(a - b) / b for a, b in zip(printed, expected))
    detail(f"worst oracle error {worst:.2e}; worst gap to printed values {printed_err:.1e}; "
          f"{elapsed:.3f} s")
    assert worst <= 1e-12
    # printed values carry six significant figures and some last-digit slips
    assert printed_err <= 1e-4
    assert elapsed < 1


# -- 6 -----------------------------------------------------------------------

@crit(6, "refined bound never exceeds the basic bound")
def test_refined_dominance(detail):
    rng = np.random.default_rng(6)
    checked = violations = 0
    while checked < 1000:
        n = int(rng.integers(1, 10**4))
        K = float(rng.uniform(0.1, 5))
        i = BoundInputs(n=n, d=int(rng.integers(1, 10**4)), logF=n * float(10 ** rng.uniform(0, 3)),
                        c=float(rng.uniform(0.01, 10)), S=float(10 ** rng.uniform(-2, 1)),
                        K1=K, K2=K)
        ref = B.rademacher_bound_refined(i)
        if ref.terms["concentration"] >= max(ref.terms["sample"], ref.terms["stability"]):
            continue
        checked += 1
        violations += ref.value > B.rademacher_bound_basic(i).value
    detail(f"{violations} violations in {checked} inputs")
    assert violations == 0


# -- 7 -----------------------------------------------------------------------

@crit(7, "comparison winner flips at S = sqrt(c/d)")
def test_crossover(detail):
    rng = np.random.default_rng(7)
    for _ in range(100):
        c, d, n = float(10 ** rng.uniform(-2, 2)), int(rng.integers(1, 10**5)), int(rng.integers(1, 10**4))
        base = dict(n=n, d=d, logF=n * float(rng.uniform(1, 100)), c=c)
        s0 = math.sqrt(c / d)
        at = B.compare_to_standard(BoundInputs(S=s0, **base))
        assert at.crossover_S == pytest.approx(s0, rel=1e-15)
        assert abs(at.ours_term - at.standard_term) <= 1e-12 * at.standard_term
        assert B.compare_to_standard(BoundInputs(S=s0 * (1 + 1e-9), **base)).winner == "ours"
        assert B.compare_to_standard(BoundInputs(S=s0 * (1 - 1e-9), **base)).winner == "standard"
        assert B.compare_to_standard(BoundInputs(S=10 * s0, **base)).winner == "ours"
    detail("100 (c, d) pairs, terms equal to 1e-12 at the crossover")


# -- 8 -----------------------------------------------------------------------

@crit(8, "Gaussian isoperimetry at c = sigma^2 d")
def test_isoperimetry(detail):
    sigma = 1 / 28
    m = MeasureSpec("gaussian_isotropic", 784, sigma**2)
    c = m.nominal_c
    rng = np.random.default_rng(8)
    start = time.perf_counter()
    fs = []
    for _ in range(20):
        u = rng.standard_normal(784)
        fs.append(clipped_linear(u / np.linalg.norm(u), sigma=sigma))
    flagged = sum(len(concentration_test(m, f, c, 100_000, seed=k).violations)
                  for k, f in enumerate(fs))
    low = concentration_test(m, fs[0], c / 100, 100_000, seed=99)
    ratio = estimate_c(m, fs[0], 100_000, seed=100) / c
    elapsed = time.perf_counter() - start
    detail(f"{flagged} violations at c; {len(low.violations)} at c/100; c_hat/c {ratio:.3f}; "
          f"{elapsed:.1f} s")
    assert flagged == 0
    assert len(low.violations) >= 1
    assert 0.5 <= ratio <= 1.5
    assert elapsed < 120


# -- 9 -----------------------------------------------------------------------

@crit(9, "empirical Rademacher complexity of finite classes")
def test_empirical_rademacher(detail):
    exact = np.mean([abs(sum(s)) / 4 for s in itertools.product([-1, 1], repeat=4)])
    assert exact == 0.375
    mean, se = B.empirical_rademacher(np.ones((1, 4)), draws=10_000, seed=9)
    detail(f"singleton {mean:.4f} +- {se:.4f}")
    assert abs(mean - exact) <= 3 * se
    full = np.array(list(itertools.product([-1, 1], repeat=4)), dtype=float)
    assert B.empirical_rademacher(full, draws=1000, seed=9)[0] == 1.0


# -- 10 ----------------------------------------------------------------------

@crit(10, "toy sweep, concentrated regime")
def test_toy_sweep(concentrated, detail):
    records, _, elapsed = concentrated
    widths = CONCENTRATED.widths
    assert len(records) == len(widths) * len(CONCENTRATED.seeds)
    S = seed_means(records, "S_hat", widths)
    N = seed_means(records, "normalized", widths)
    detail("S_hat " + " ".join(f"{v:.4f}" for v in S))
    detail("S*/L_hi " + " ".join(f"{v:.4f}" for v in N))
    detail(f"{elapsed:.1f} s")
    assert S[-1] > S[0]
    assert steps_up(N) >= 3
    assert elapsed < 1800


# -- 11 ----------------------------------------------------------------------

@crit(11, "diffuse regime has no more monotone steps")
def test_diffuse_contrast(concentrated, diffuse, detail):
    widths = CONCENTRATED.widths
    conc = steps_up(seed_means(concentrated[0], "normalized", widths))
    diff = steps_up(seed_means(diffuse[0], "normalized", widths))
    report = (diffuse[1] / "sweep.json")
    assert report.exists()
    detail(f"monotone steps: concentrated {conc}/4, diffuse {diff}/4; "
          f"S_hat steps {steps_up(seed_means(diffuse[0], 'S_hat', widths))}/4 diffuse")
    assert conc >= diff


# -- 12 ----------------------------------------------------------------------

@crit(12, "identical sweep configs give byte-identical reports")
def test_determinism(concentrated, tmp_path, detail):
    _, first, _ = concentrated
    second = tmp_path / "again"
    run_sweep(CONCENTRATED, second)
    for name in ("sweep.csv", "sweep.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    detail("sweep.csv and sweep.json identical across two runs")


# -- 13 ----------------------------------------------------------------------

@crit(13, "signed distance functions are 1-Lipschitz and represent labels")
def test_sdf_properties(detail):
    rng = np.random.default_rng(13)
    for d in (1, 3, 50):
        clf = LinearClassifier(rng.standard_normal(d), rng.normal())
        X1, X2 = rng.standard_normal((1000, d)), rng.standard_normal((1000, d))
        assert sdf_lipschitz_check(clf, X1, X2) <= 1 + 1e-9
        assert np.array_equal(np.where(clf.signed_distance(X1) >= 0, 1, -1), clf.label(X1))
    for cuts in ([0.0], [-1.0, 0.5, 2.0], sorted(rng.uniform(-3, 3, 6))):
        clf = IntervalClassifier1D(cuts, first_label=-1)
        x1, x2 = rng.uniform(-4, 4, 1000), rng.uniform(-4, 4, 1000)
        assert sdf_lipschitz_check(clf, x1, x2) <= 1 + 1e-9
        assert np.array_equal(np.where(clf.signed_distance(x1) >= 0, 1, -1), clf.label(x1))


# -- 14 ----------------------------------------------------------------------

@crit(14, "soft sign surrogate is 1/gamma-Lipschitz")
def test_soft_sign(detail):
    rng = np.random.default_rng(14)
    for gamma in (0.1, 0.5, 1.0):
        assert soft_sign(0.5 * gamma, gamma) == 0.5
        assert soft_sign(gamma, gamma) == 1.0 and soft_sign(3 * gamma, gamma) == 1.0
        assert soft_sign(-gamma, gamma) == -1.0 and soft_sign(-3 * gamma, gamma) == -1.0
        a, b = rng.uniform(-3, 3, 10_000), rng.uniform(-3, 3, 10_000)
        keep = a != b
        ratio = np.abs(soft_sign(a, gamma) - soft_sign(b, gamma))[keep] / np.abs(a - b)[keep]
        assert ratio.max() <= (1 / gamma) * (1 + 1e-12)
