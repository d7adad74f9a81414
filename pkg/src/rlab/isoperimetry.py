"""Monte Carlo checks of c-isoperimetric concentration.

A measure is c-isoperimetric when every bounded L-Lipschitz f obeys
P(|f - E f| >= t) <= 2 exp(-d t^2 / (2 c L^2)).  ``concentration_test``
compares empirical tails against that bound with a 3-sigma binomial slack;
``estimate_c`` returns the smallest c consistent with the empirical tails
on a t-grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import MeasureSpec

CONCENTRATED_MAX_C = 1.0


@dataclass
class TestFunction:
    """A bounded Lipschitz test function with a known Lipschitz bound.

    kinds: ``clipped_linear`` (u . x clipped to [-B, B], L = ||u||),
    ``distance_to_point`` (min(||x - x0||, B), L = 1) and ``network_score``
    (score coordinate of a network clipped to [-B, B], L = L_hi).
    """

    __test__ = False

    kind: str
    bound: float
    lipschitz: float
    u: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    net: object = None
    coordinate: int = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "clipped_linear":
            v = X @ self.u
        elif self.kind == "distance_to_point":
            v = np.linalg.norm(X - self.x0, axis=1)
        elif self.kind == "network_score":
            v = self.net.scores(X)[:, self.coordinate]
        elif self.kind == "constant":
            v = np.zeros(X.shape[0])
        else:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        return np.clip(v, -self.bound, self.bound)

    def describe(self) -> dict:
        return {"kind": self.kind, "bound": self.bound, "lipschitz": self.lipschitz}


def clipped_linear(u, bound: Optional[float] = None, sigma: float = 1.0) -> TestFunction:
    """u . x clipped at ``bound`` (default 10 sigma ||u||)."""
    u = np.asarray(u, dtype=np.float64)
    L = float(np.linalg.norm(u))
    B = 10.0 * sigma * L if bound is None else float(bound)
    return TestFunction("clipped_linear", B, L, u=u)


def distance_to_point(x0, bound: float) -> TestFunction:
    return TestFunction("distance_to_point", float(bound), 1.0, x0=np.asarray(x0, dtype=np.float64))


def network_score(net, coordinate: int = 0, bound: float = 1e6) -> TestFunction:
    from .lipschitz import lipschitz_upper

    L = lipschitz_upper(net)
    if L is None:
        raise ValueError("network score test functions need a Lipschitz activation")
    return TestFunction("network_score", float(bound), L, net=net, coordinate=coordinate)


def constant_function() -> TestFunction:
    return TestFunction("constant", 1.0, 0.0)


@dataclass
class ConcentrationReport:
    t_grid: np.ndarray
    empirical_tail: np.ndarray
    theoretical_tail: np.ndarray
    violations: list
    c: float
    c_hat: Optional[float]
    n_samples: int
    d: int
    function: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "t_grid": self.t_grid.tolist(),
            "empirical_tail": self.empirical_tail.tolist(),
            "theoretical_tail": self.theoretical_tail.tolist(),
            "violations": self.violations,
            "c": self.c,
            "c_hat": self.c_hat,
            "c_hat_method": "max over t of d t^2 / (2 L^2 log(2/p_hat(t)))",
            "n_samples": self.n_samples,
            "d": self.d,
            "function": self.function,
        }


def _tails(values: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
    dev = np.sort(np.abs(values - values.mean()))
    # fraction of deviations >= t
    return 1.0 - np.searchsorted(dev, t_grid, side="left") / dev.size


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=np.float64).reshape(-1)
    if t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be a non-empty, strictly increasing grid of t >= 0")
    return t


def _sample_values(measure: MeasureSpec, f: TestFunction, n_samples: int, seed: int) -> np.ndarray:
    return f(measure.sample(n_samples, np.random.default_rng(seed)))


def _c_hat(d, L, t, p) -> Optional[float]:
    informative = (p > 0) & (p < 1) & (t > 0)
    if L <= 0 or not informative.any():
        return None
    t, p = t[informative], p[informative]
    return float(np.max(d * t**2 / (2.0 * L**2 * np.log(2.0 / p))))


def concentration_test(
    measure: MeasureSpec,
    f: TestFunction,
    c: float,
    n_samples: int = 100_000,
    t_grid=None,
    seed: int = 0,
) -> ConcentrationReport:
    if not c > 0:
        raise ValueError("c must be > 0")
    if n_samples < 10_000:
        raise ValueError("need at least 10^4 samples")
    if t_grid is None:
        t_grid = np.linspace(0.0, 3.0 * measure.sigma, 31)
    t = _check_grid(t_grid)
    values = _sample_values(measure, f, n_samples, seed)
    p_hat = _tails(values, t)
    d = measure.d
    if f.lipschitz > 0:
        theo = 2.0 * np.exp(-d * t**2 / (2.0 * c * f.lipschitz**2))
    else:
        # a constant function has no fluctuation at any t > 0
        theo = np.where(t > 0, 0.0, 2.0)
    slack = 3.0 * np.sqrt(p_hat * (1.0 - p_hat) / n_samples)
    violations = [
        {"t": float(ti), "empirical": float(pi), "theoretical": float(qi)}
        for ti, pi, qi, si in zip(t, p_hat, theo, slack)
        if pi - qi > si
    ]
    return ConcentrationReport(
        t, p_hat, theo, violations, float(c), _c_hat(d, f.lipschitz, t, p_hat),
        n_samples, d, f.describe(),
    )


def estimate_c(
    measure: MeasureSpec, f: TestFunction, n_samples: int = 100_000, t_grid=None, seed: int = 0
) -> float:
    """Smallest c for which the isoperimetric tail bound holds on the grid."""
    if t_grid is None:
        t_grid = np.linspace(0.0, 5.0 * measure.sigma, 51)
    t = _check_grid(t_grid)
    p_hat = _tails(_sample_values(measure, f, n_samples, seed), t)
    c_hat = _c_hat(measure.d, f.lipschitz, t, p_hat)
    if c_hat is None:
        raise ValueError("no t in the grid with 0 < p_hat(t) < 1; cannot estimate c")
    return c_hat


def regime_classifier(measure: MeasureSpec) -> dict:
    """'concentrated' when the nominal c is O(1) (here: <= 1), else 'diffuse'."""
    c = measure.nominal_c
    # sigma = 1/28, d = 784 lands on 1 up to rounding
    regime = "concentrated" if c <= CONCENTRATED_MAX_C * (1.0 + 1e-9) else "diffuse"
    return {"c_nominal": c, "regime": regime}
