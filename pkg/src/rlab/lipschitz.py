"""Co-margins, co-stability, and Lipschitz intervals for score functions.

The co-margin of a binary network is |g(x)|; for a multi-class network it is
the gap between the top score and the runner-up (only the predicted class
contributes to the per-class sum).  The Lipschitz interval brackets L(g)
between the largest sampled input-gradient norm and the product of per-layer
spectral norms (every supported activation is 1-Lipschitz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .margin import MeasurementError, StabilityReport, inputs_digest
from .nn import Network, grad_input, labels_from_scores

LIPSCHITZ_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class LipschitzInterval:
    L_lo: Optional[float]
    L_hi: Optional[float]
    defined: bool
    lower_method: str = "max_sampled_gradient_norm"
    upper_method: str = "spectral_norm_product"

    def to_dict(self) -> dict:
        return {
            "L_lo": self.L_lo,
            "L_hi": self.L_hi,
            "defined": self.defined,
            "lower_method": self.lower_method,
            "upper_method": self.upper_method,
        }


@dataclass
class CoStabilityReport:
    S_star: float
    per_class: list
    n: int
    normalized: Optional[float] = None
    normalized_optimistic: Optional[float] = None
    lipschitz: Optional[LipschitzInterval] = None
    per_sample: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "S_star": self.S_star,
            "per_class": list(self.per_class),
            "n": self.n,
            "normalized": _finite_or_sentinel(self.normalized),
            "normalized_optimistic": _finite_or_sentinel(self.normalized_optimistic),
        }
        if self.lipschitz is not None:
            out["lipschitz"] = self.lipschitz.to_dict()
        return out


def _finite_or_sentinel(v):
    if v is None:
        return None
    return "inf" if math.isinf(v) else v


def _per_class_co_margins(S: np.ndarray) -> np.ndarray:
    """(n, C) matrix of max(0, g_j - max_{i != j} g_i); binary uses |g| by label."""
    n = S.shape[0]
    if S.shape[1] == 1:
        g = S[:, 0]
        out = np.zeros((n, 2))
        pos = g >= 0
        out[pos, 1] = g[pos]
        out[~pos, 0] = -g[~pos]
        return out
    C = S.shape[1]
    out = np.zeros_like(S)
    for j in range(C):
        others = np.delete(S, j, axis=1).max(axis=1)
        out[:, j] = np.maximum(0.0, S[:, j] - others)
    return out


def co_margin(net: Network, x: np.ndarray):
    """Co-margin of a single input, or of every row of a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    S = net.scores(x[None, :] if single else x)
    h = _per_class_co_margins(S).sum(axis=1)
    return float(h[0]) if single else h


def co_stability(net: Network, dataset) -> CoStabilityReport:
    X = np.asarray(getattr(dataset, "inputs", dataset), dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("co-stability needs a non-empty dataset")
    parts = _per_class_co_margins(net.scores(X))
    per_class = parts.mean(axis=0)
    per_sample = parts.sum(axis=1)
    return CoStabilityReport(
        S_star=float(per_sample.mean()),
        per_class=[float(v) for v in per_class],
        n=X.shape[0],
        per_sample=per_sample,
    )


def spectral_norm(W: np.ndarray, max_iter: int = 200, rtol: float = 1e-10, seed: int = 0) -> float:
    """Largest singular value of W by power iteration on W^T W."""
    W = np.asarray(W, dtype=np.float64)
    if not W.any():
        return 0.0
    v = np.random.default_rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        u = W @ v
        new = np.linalg.norm(u)
        if new == 0.0:
            return 0.0
        v = W.T @ (u / new)
        v /= np.linalg.norm(v)
        if abs(new - sigma) <= rtol * new:
            sigma = new
            break
        sigma = new
    return float(max(sigma, np.linalg.norm(W @ v)))


def lipschitz_upper(net: Network) -> Optional[float]:
    """Product of layer spectral norms; None for Heaviside networks."""
    if net.activation not in LIPSCHITZ_ACTIVATIONS:
        return None
    L = 1.0
    for W in net.weights:
        L *= spectral_norm(W)
    return L


def sampled_gradient_norms(net: Network, points: np.ndarray) -> np.ndarray:
    """(n, C) matrix of ||grad_x g_k(x)||_2 for every point and output k."""
    if net.activation not in LIPSCHITZ_ACTIVATIONS:
        raise ValueError(f"{net.activation} networks have no input gradient")
    points = np.asarray(points, dtype=np.float64)
    out = np.empty((points.shape[0], net.output_dim))
    for k in range(net.output_dim):
        cot = np.zeros((points.shape[0], net.output_dim))
        cot[:, k] = 1.0
        G = grad_input(net, points, cot)
        out[:, k] = np.linalg.norm(G, axis=1)
    return out


def lipschitz_probe_points(dataset, trials: int = 256, seed: int = 0) -> np.ndarray:
    """Data points plus ``trials`` Gaussian jitters of randomly chosen ones."""
    X = np.asarray(getattr(dataset, "inputs", dataset), dtype=np.float64)
    rng = np.random.default_rng(seed)
    if trials <= 0:
        return X
    scale = float(X.std()) if X.size > 1 and X.std() > 0 else 1.0
    base = X[rng.integers(0, X.shape[0], size=trials)]
    return np.vstack([X, base + scale * rng.standard_normal(base.shape)])


def lipschitz_lower(net: Network, dataset, trials: int = 256, seed: int = 0) -> float:
    """Best gradient-norm witness over data points and random probes."""
    return float(sampled_gradient_norms(net, lipschitz_probe_points(dataset, trials, seed)).max())


def lipschitz_interval(net: Network, dataset=None, trials: int = 256, seed: int = 0) -> LipschitzInterval:
    hi = lipschitz_upper(net)
    if hi is None:
        return LipschitzInterval(None, None, defined=False)
    if dataset is None:
        # no data: probe standard normal points
        rng = np.random.default_rng(seed)
        probes = rng.standard_normal((max(trials, 1), net.input_dim))
        lo = float(sampled_gradient_norms(net, probes).max())
    else:
        lo = lipschitz_lower(net, dataset, trials, seed)
    return LipschitzInterval(lo, hi, defined=True)


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return math.inf if num > 0 else 0.0


def normalized_costability(net: Network, dataset, trials: int = 256, seed: int = 0) -> CoStabilityReport:
    """Co-stability with S*/L_hi (headline) and S*/L_lo (optimistic)."""
    if net.activation not in LIPSCHITZ_ACTIVATIONS:
        raise MeasurementError("normalized co-stability undefined for heaviside networks")
    rep = co_stability(net, dataset)
    interval = lipschitz_interval(net, dataset, trials, seed)
    rep.lipschitz = interval
    rep.normalized = _ratio(rep.S_star, interval.L_hi)
    rep.normalized_optimistic = _ratio(rep.S_star, interval.L_lo)
    return rep


def soft_sign(t, gamma: float):
    """Piecewise-linear sign surrogate: -1 below -gamma, t/gamma inside, 1 above."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    out = np.clip(np.asarray(t, dtype=np.float64) / gamma, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class SurrogateClassifier:
    """x -> soft_sign(g(x), gamma) for a binary network g."""

    net: Network
    gamma: float

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return soft_sign(self.net.scores(X)[:, 0], self.gamma)

    @property
    def lipschitz_bound(self) -> Optional[float]:
        L = lipschitz_upper(self.net)
        return None if L is None else L / self.gamma


def surrogate_net(net: Network, gamma: Optional[float] = None, dataset=None) -> SurrogateClassifier:
    """Lipschitz surrogate of sgn(g); gamma defaults to S*(g)/2 on ``dataset``."""
    if not net.is_binary:
        raise ValueError("the sign surrogate applies to binary networks")
    if gamma is None:
        if dataset is None:
            raise ValueError("need gamma or a dataset to derive it from")
        gamma = co_stability(net, dataset).S_star / 2.0
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    return SurrogateClassifier(net, float(gamma))


def gap_lipschitz_factor(net: Network) -> float:
    """Multiplier turning the per-coordinate bound L_hi into a bound on the co-margin."""
    return 1.0 if net.is_binary else 2.0


@dataclass
class ChainCheck:
    lhs: float
    rhs: float
    holds: bool
    slack: float
    pointwise_checked: int
    pointwise_violations: list

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": _finite_or_sentinel(self.rhs),
            "holds": self.holds,
            "slack": _finite_or_sentinel(self.slack),
            "pointwise_checked": self.pointwise_checked,
            "pointwise_violations": self.pointwise_violations,
        }


def chain_inequality_check(
    net: Network, dataset, margin_report: StabilityReport, L_hi: Optional[float] = None
) -> ChainCheck:
    """Check S_hat >= S*/L on the margin report's samples, and pointwise.

    L is L_hi for binary networks and 2*L_hi for multi-class ones (the top-two
    gap of per-coordinate L_hi-Lipschitz scores is 2*L_hi-Lipschitz).
    """
    X = np.asarray(dataset.inputs, dtype=np.float64)[: margin_report.n]
    if X.shape[0] != margin_report.n or inputs_digest(X) != margin_report.inputs_digest:
        raise ValueError("margin report was computed on a different sample set")
    if L_hi is None:
        L_hi = lipschitz_upper(net)
    if L_hi is None:
        raise MeasurementError("Lipschitz constant undefined for heaviside networks")
    L = gap_lipschitz_factor(net) * L_hi
    h_star = co_margin(net, X)
    rhs = _ratio(float(h_star.mean()), L)
    lhs = margin_report.S_hat
    violations = []
    checked = 0
    for est in margin_report.per_sample:
        if est.status == "failed_capped":
            continue
        checked += 1
        bound = _ratio(h_star[est.sample_index], L)
        if est.estimated_margin < bound:
            violations.append(est.sample_index)
    return ChainCheck(lhs, rhs, bool(lhs >= rhs), lhs - rhs, checked, violations)
