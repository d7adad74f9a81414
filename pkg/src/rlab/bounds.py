"""Closed-form Rademacher bounds, robustness thresholds and comparisons.

Every evaluator returns a :class:`BoundResult` with the named terms of its
maximum, so callers can see which regime dominates.  The absolute constants
K, K1, K2 are unknown in theory; they default to 1 and are always echoed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

FORMULAS = (
    "basic", "refined", "finite-threshold", "infinite",
    "infinite-threshold", "gap", "compare",
)


class BoundDomainError(ValueError):
    pass


@dataclass(frozen=True)
class BoundInputs:
    n: int = 1
    d: int = 1
    logF: float = 1.0
    c: float = 1.0
    S: float = 1.0
    S_star: float = 1.0
    L: float = 1.0
    K: float = 1.0
    K1: float = 1.0
    K2: float = 1.0
    W: float = 1.0
    J: float = 1.0
    eps_tilde: float = 1.0
    eps: float = 0.1
    delta: float = 0.05
    a: float = 1.0

    def require(self, *names: str) -> None:
        if self.n < 1 or self.d < 1:
            raise BoundDomainError("n and d must be >= 1")
        for name in names:
            value = getattr(self, name)
            if name in ("eps", "delta"):
                if not 0.0 < value < 1.0:
                    raise BoundDomainError(f"{name} must lie in (0, 1), got {value}")
            elif not value > 0:
                raise BoundDomainError(f"{name} must be > 0, got {value}")
            if not math.isfinite(value):
                raise BoundDomainError(f"{name} must be finite")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BoundResult:
    value: float
    terms: dict
    dominant_term: str
    formula_id: str
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "formula_id": self.formula_id,
            "value": self.value,
            "terms": dict(self.terms),
            "dominant_term": self.dominant_term,
            "inputs": dict(self.inputs),
        }


def _max_form(formula_id: str, scale: float, terms: dict, inp: BoundInputs) -> BoundResult:
    scaled = {k: scale * v for k, v in terms.items()}
    names = list(scaled)
    # max() keeps the first maximal entry, i.e. the lowest index on ties
    dominant = max(names, key=lambda k: scaled[k])
    return BoundResult(scaled[dominant], scaled, dominant, formula_id, inp.to_dict())


def _warn_logF(inp: BoundInputs) -> None:
    if inp.logF < inp.n:
        warnings.warn("logF < n: the bound assumes log|F| >= n", stacklevel=3)


def rademacher_bound_basic(inp: BoundInputs) -> BoundResult:
    """K1 * max{1/sqrt(n), sqrt(c)/S * logF/(n sqrt(d))}."""
    inp.require("logF", "c", "S", "K1")
    _warn_logF(inp)
    n, d = inp.n, inp.d
    terms = {
        "sample": 1.0 / math.sqrt(n),
        "stability": math.sqrt(inp.c) / inp.S * inp.logF / (n * math.sqrt(d)),
    }
    return _max_form("basic", inp.K1, terms, inp)


def _exp_term(d, S, c):
    return 2.0 * math.exp(-d * S * S / (8.0 * c))


def rademacher_bound_refined(inp: BoundInputs) -> BoundResult:
    """K2 * max{1/sqrt(n), sqrt(c)/S sqrt(logF/(nd)), 2 exp(-d S^2/(8c))}."""
    inp.require("logF", "c", "S", "K2")
    _warn_logF(inp)
    n, d = inp.n, inp.d
    terms = {
        "sample": 1.0 / math.sqrt(n),
        "stability": math.sqrt(inp.c) / inp.S * math.sqrt(inp.logF / (n * d)),
        "concentration": _exp_term(d, inp.S, inp.c),
    }
    return _max_form("refined", inp.K2, terms, inp)


def _log_term(inp: BoundInputs) -> float:
    return math.sqrt(8.0 * inp.c / inp.d * math.log(6.0 * inp.K / inp.eps))


def robustness_threshold_finite(inp: BoundInputs) -> BoundResult:
    """Stability ceiling for near-interpolating classifiers in a finite class.

    max{(3K/eps) sqrt(c logF/(nd)), sqrt((8c/d) log(6K/eps))}.  The log term is
    reported as 0 when 6K/eps < 1 makes the logarithm negative.
    """
    inp.require("logF", "c", "K", "eps")
    n, d = inp.n, inp.d
    log_arg = 6.0 * inp.K / inp.eps
    terms = {
        "capacity": 3.0 * inp.K / inp.eps * math.sqrt(inp.c * inp.logF / (n * d)),
        "concentration": _log_term(inp) if log_arg >= 1.0 else 0.0,
    }
    return _max_form("finite-threshold", 1.0, terms, inp)


def _covering(inp: BoundInputs) -> float:
    return math.log1p(60.0 * inp.W * inp.J / inp.eps_tilde)


def rademacher_bound_infinite(inp: BoundInputs) -> BoundResult:
    """K * max{sqrt(1/n), L/S* sqrt(p/(nd)) sqrt(c log(1+60WJ/eps~)),
    2 exp(-d S*^2/(8 c L^2)), J eps~/S*} with p = logF."""
    inp.require("logF", "c", "S_star", "L", "K", "W", "J", "eps_tilde")
    n, d = inp.n, inp.d
    terms = {
        "sample": math.sqrt(1.0 / n),
        "stability": inp.L / inp.S_star * math.sqrt(inp.logF / (n * d))
        * math.sqrt(inp.c * _covering(inp)),
        "concentration": 2.0 * math.exp(-d * inp.S_star**2 / (8.0 * inp.c * inp.L**2)),
        "discretization": inp.J * inp.eps_tilde / inp.S_star,
    }
    return _max_form("infinite", inp.K, terms, inp)


def minimize_eps_tilde(
    inp: BoundInputs, lo: float = 1e-12, hi: float = 1e12, tol: float = 1e-10
) -> tuple[float, BoundResult]:
    """Golden-section search over log(eps~) for the smallest infinite-class bound."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0

    def value(log_e):
        return rademacher_bound_infinite(_replace(inp, eps_tilde=math.exp(log_e))).value

    a, b = math.log(lo), math.log(hi)
    x1, x2 = b - phi * (b - a), a + phi * (b - a)
    f1, f2 = value(x1), value(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = value(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = value(x2)
    candidates = [(f1, x1), (f2, x2), (value(math.log(lo)), math.log(lo)), (value(math.log(hi)), math.log(hi))]
    best_f, best_x = min(candidates)
    best_e = math.exp(best_x)
    return best_e, rademacher_bound_infinite(_replace(inp, eps_tilde=best_e))


def _replace(inp: BoundInputs, **kw) -> BoundInputs:
    d = inp.to_dict()
    d.update(kw)
    return BoundInputs(**d)


def robustness_threshold_infinite(inp: BoundInputs) -> BoundResult:
    """Ceiling on S*(g)/L(g): max{(3K/eps) sqrt(p/(nd)) sqrt(c log(1+60WJ/eps~)),
    sqrt((8c/d) log(6K/eps))}."""
    inp.require("logF", "c", "K", "eps", "W", "J", "eps_tilde")
    n, d = inp.n, inp.d
    log_arg = 6.0 * inp.K / inp.eps
    terms = {
        "capacity": 3.0 * inp.K / inp.eps * math.sqrt(inp.logF / (n * d))
        * math.sqrt(inp.c * _covering(inp)),
        "concentration": _log_term(inp) if log_arg >= 1.0 else 0.0,
    }
    return _max_form("infinite-threshold", 1.0, terms, inp)


def sample_size_requirements(K: float, eps: float, delta: float) -> dict:
    """Smallest n with K/sqrt(n) < eps/3 and sqrt(2 log(2/delta)/n) < eps/2.

    Both are strict, so the returned values are the infima (exclusive).
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise BoundDomainError("eps and delta must lie in (0, 1)")
    return {
        "n_min_constant": (3.0 * K / eps) ** 2,
        "n_min_confidence": 8.0 * math.log(2.0 / delta) / eps**2,
    }


LOSS_CONTRACTION = {"zero_one": 0.5}


def generalization_gap_bound(
    rademacher_value: float,
    a: float,
    delta: float,
    n: int,
    loss_kind: str = "zero_one",
    loss_lipschitz: float = 1.0,
) -> BoundResult:
    """2 C R + a sqrt(2 log(2/delta)/n); C = 1/2 for 0-1 loss, C = L otherwise."""
    if not 0.0 < delta < 1.0:
        raise BoundDomainError(f"delta must lie in (0, 1), got {delta}")
    if n < 1 or not a > 0 or rademacher_value < 0:
        raise BoundDomainError("need n >= 1, a > 0 and a non-negative Rademacher value")
    if loss_kind == "zero_one":
        C = LOSS_CONTRACTION["zero_one"]
    elif loss_kind == "lipschitz":
        C = float(loss_lipschitz)
    else:
        raise BoundDomainError(f"unknown loss kind {loss_kind!r}")
    terms = {
        "complexity": 2.0 * C * rademacher_value,
        "confidence": a * math.sqrt(2.0 * math.log(2.0 / delta) / n),
    }
    value = terms["complexity"] + terms["confidence"]
    dominant = max(terms, key=lambda k: terms[k])
    inputs = {"rademacher": rademacher_value, "a": a, "delta": delta, "n": n,
              "loss_kind": loss_kind, "C": C}
    return BoundResult(value, terms, dominant, "gap", inputs)


@dataclass
class Comparison:
    ours: float
    standard: float
    ours_term: float
    standard_term: float
    winner: str
    crossover_S: float

    def to_dict(self) -> dict:
        return asdict(self)


def compare_to_standard(inp: BoundInputs, C4: float = 1.0, rtol: float = 1e-12) -> Comparison:
    """Stability-aware refined bound vs. the stability-free C4(sqrt(1/n) + sqrt(logF/n)).

    The competing terms are sqrt(c)/S sqrt(logF/(nd)) and sqrt(logF/n); they
    coincide at S = sqrt(c/d).  ``winner`` is "tie" within ``rtol``.
    """
    refined = rademacher_bound_refined(inp)
    n = inp.n
    ours_term = refined.terms["stability"] / inp.K2
    standard_term = math.sqrt(inp.logF / n)
    standard = C4 * (math.sqrt(1.0 / n) + standard_term)
    if abs(ours_term - standard_term) <= rtol * max(ours_term, standard_term):
        winner = "tie"
    else:
        winner = "ours" if ours_term < standard_term else "standard"
    return Comparison(refined.value, standard, ours_term, standard_term, winner,
                      math.sqrt(inp.c / inp.d))


def empirical_rademacher(outputs, draws: int = 1000, seed: int = 0, X=None) -> tuple[float, float]:
    """Monte Carlo estimate of (1/n) E sup_f |sum_i sigma_i f(x_i)|.

    ``outputs`` is an (m, n) array with each row one classifier's +-1 outputs
    on the sample, or a list of callables evaluated on ``X``.  Returns the
    mean and its standard error.
    """
    if X is not None or (len(outputs) and callable(outputs[0])):
        if X is None:
            raise ValueError("callables need the sample X")
        X = np.asarray(getattr(X, "inputs", X))
        outputs = [np.asarray(f(X), dtype=np.float64).reshape(-1) for f in outputs]
    F = np.asarray(outputs, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise ValueError("classifier set must be non-empty")
    if not np.isin(F, (-1.0, 1.0)).all():
        raise ValueError("classifier outputs must lie in {-1, 1}")
    if draws < 100:
        raise ValueError("need at least 100 draws")
    n = F.shape[1]
    rng = np.random.default_rng(seed)
    sigma = rng.choice(np.array([-1.0, 1.0]), size=(draws, n))
    vals = np.abs(sigma @ F.T).max(axis=1) / n
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws))


def evaluate(formula: str, inp: BoundInputs, **kw):
    """Dispatch by formula id (see FORMULAS)."""
    if formula == "basic":
        return rademacher_bound_basic(inp)
    if formula == "refined":
        return rademacher_bound_refined(inp)
    if formula == "finite-threshold":
        return robustness_threshold_finite(inp)
    if formula == "infinite":
        if kw.get("minimize_eps_tilde"):
            return minimize_eps_tilde(inp)[1]
        return rademacher_bound_infinite(inp)
    if formula == "infinite-threshold":
        return robustness_threshold_infinite(inp)
    if formula == "gap":
        return generalization_gap_bound(kw["rademacher"], inp.a, inp.delta, inp.n,
                                        kw.get("loss_kind", "zero_one"))
    if formula == "compare":
        return compare_to_standard(inp)
    raise BoundDomainError(f"unknown formula {formula!r}")
