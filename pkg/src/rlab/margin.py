"""Input-space margins and class stability via L2 boundary search.

Each sample gets two searches.  A DeepFool-style linearization walks toward
the runner-up class; when it flips the label, the segment from the clean
point to the adversarial point is scanned and bisected (status ``refined``).
L2 PGD then runs at every epsilon-grid radius below that estimate (every
radius if DeepFool failed).  The smallest adversarial norm found by either
search is the estimate, so each estimate is a verified upper bound on the
distance to the decision boundary.  A PGD win is reported as ``grid_hit``;
samples neither search can flip are capped at ``max(eps_grid)``
(``failed_capped``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .nn import Network, grad_input, labels_from_scores

DEFAULT_EPS_GRID = (0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0)

STATUSES = ("refined", "grid_hit", "failed_capped")


class MeasurementError(RuntimeError):
    """A measurement could not be carried out (e.g. non-finite scores)."""


@dataclass(frozen=True)
class AttackConfig:
    eps_grid: tuple = DEFAULT_EPS_GRID
    pgd_steps: int = 40
    deepfool_steps: int = 50
    overshoot: float = 1.02
    tol: float = 1e-3
    seed: int = 0
    box: Optional[tuple] = None
    surrogate: bool = True

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eps_grid)
        if not grid or any(e <= 0 for e in grid):
            raise ValueError("eps_grid must be a non-empty list of positive radii")
        object.__setattr__(self, "eps_grid", tuple(sorted(set(grid))))
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.box is not None:
            lo, hi = self.box
            if not lo < hi:
                raise ValueError("box must satisfy lo < hi")

    def to_dict(self) -> dict:
        return {
            "eps_grid": list(self.eps_grid),
            "pgd_steps": self.pgd_steps,
            "deepfool_steps": self.deepfool_steps,
            "overshoot": self.overshoot,
            "tol": self.tol,
            "seed": self.seed,
            "box": list(self.box) if self.box is not None else None,
            "heaviside_surrogate": self.surrogate,
        }


@dataclass
class MarginEstimate:
    sample_index: int
    predicted_label: int
    estimated_margin: float
    status: str
    attack_used: str
    witness: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "predicted_label": self.predicted_label,
            "estimated_margin": self.estimated_margin,
            "status": self.status,
            "attack_used": self.attack_used,
        }


@dataclass
class StabilityReport:
    per_sample: list
    S_hat: float
    attack_success_rate: float
    eps_grid: tuple
    tolerance: float
    n: int
    inputs_digest: str
    config: dict = field(default_factory=dict)

    @property
    def margins(self) -> np.ndarray:
        return np.array([e.estimated_margin for e in self.per_sample])

    def to_dict(self) -> dict:
        return {
            "S_hat": self.S_hat,
            "success_rate": self.attack_success_rate,
            "n": self.n,
            "inputs_digest": self.inputs_digest,
            "config": self.config,
            "per_sample": [e.to_dict() for e in self.per_sample],
        }


def inputs_digest(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes()).hexdigest()[:16]


def _checked_scores(net: Network, X: np.ndarray, indices: np.ndarray) -> np.ndarray:
    S = net.scores(X)
    bad = ~np.isfinite(S).all(axis=1)
    if bad.any():
        raise MeasurementError(f"non-finite scores at sample {int(indices[np.argmax(bad)])}")
    return S


def _margin_cotangent(S: np.ndarray, clean: np.ndarray):
    """Clean-vs-runner-up score margin and its score-space gradient."""
    n = S.shape[0]
    if S.shape[1] == 1:
        s = 2.0 * clean - 1.0
        return s * S[:, 0], s[:, None]
    rows = np.arange(n)
    others = S.copy()
    others[rows, clean] = -np.inf
    k = np.argmax(others, axis=1)
    cot = np.zeros_like(S)
    cot[rows, clean] = 1.0
    cot[rows, k] = -1.0
    return S[rows, clean] - S[rows, k], cot


def _clip(P: np.ndarray, box) -> np.ndarray:
    return P if box is None else np.clip(P, box[0], box[1])


def _flipped(net, X, clean, indices) -> np.ndarray:
    return labels_from_scores(_checked_scores(net, X, indices)) != clean


def _deepfool(net, X, clean, indices, cfg: AttackConfig):
    n = X.shape[0]
    cur = X.copy()
    found = np.zeros(n, dtype=bool)
    adv = np.zeros_like(X)
    alive = np.ones(n, dtype=bool)
    # on flat (zero-gradient) plateaus, keep walking along the last step
    last_dir = np.zeros_like(X)
    last_len = np.zeros(n)
    for step in range(cfg.deepfool_steps + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        S = _checked_scores(net, cur[idx], indices[idx])
        flip = labels_from_scores(S) != clean[idx]
        found[idx[flip]] = True
        adv[idx[flip]] = cur[idx[flip]]
        alive[idx[flip]] = False
        if step == cfg.deepfool_steps:
            break
        idx, S = idx[~flip], S[~flip]
        if idx.size == 0:
            break
        m, cot = _margin_cotangent(S, clean[idx])
        G = grad_input(net, cur[idx], cot, surrogate=cfg.surrogate)
        gnorm = np.sqrt(np.einsum("ij,ij->i", G, G))
        flat = ~(np.isfinite(gnorm) & (gnorm > 0))
        stuck = flat & (last_len[idx] == 0)
        alive[idx[stuck]] = False
        p = idx[flat & ~stuck]
        last_len[p] *= 2.0
        cur[p] = _clip(cur[p] + last_len[p, None] * last_dir[p], cfg.box)
        idx, m, G, gnorm = idx[~flat], m[~flat], G[~flat], gnorm[~flat]
        # linearized distance to the boundary plus a tiny push off ties
        dist = cfg.overshoot * (np.maximum(m, 0.0) / gnorm + 1e-9)
        last_dir[idx] = -G / gnorm[:, None]
        last_len[idx] = dist
        cur[idx] = _clip(cur[idx] + dist[:, None] * last_dir[idx], cfg.box)
    return found, adv


def _bisect(net, X, D, clean, indices, lo, hi, tol):
    """Shrink [lo, hi] (clean at lo, flipped at hi) to relative width tol."""
    lengths = np.linalg.norm(D, axis=1)
    for _ in range(100):
        active = ((hi - lo) > tol * hi) & (hi * lengths > 1e-14)
        if not active.any():
            break
        a = np.flatnonzero(active)
        mid = 0.5 * (lo[a] + hi[a])
        flip = _flipped(net, X[a] + mid[:, None] * D[a], clean[a], indices[a])
        hi[a[flip]] = mid[flip]
        lo[a[~flip]] = mid[~flip]
    return lo, hi


def _refine_ray(net, X, D, clean, indices, tol, scan=16, rounds=10):
    """Smallest flipping fraction t of each ray x + t*D, to relative tol.

    On return the label at t is adversarial, at t*(1 - tol) and t*0.99 it is
    clean (the latter enforced by restarting the search below 0.99*t).
    """
    n = X.shape[0]
    hi = np.ones(n)
    lo = np.zeros(n)
    todo = np.arange(n)
    for _ in range(rounds):
        if todo.size == 0:
            break
        Xs, Ds, cs, ii = X[todo], D[todo], clean[todo], indices[todo]
        h = hi[todo]
        first = np.full(todo.size, scan)
        for j in range(scan, 0, -1):
            flip = _flipped(net, Xs + (h * j / scan)[:, None] * Ds, cs, ii)
            first[flip] = j
        l_new = h * (first - 1) / scan
        h_new = h * first / scan
        l_new, h_new = _bisect(net, Xs, Ds, cs, ii, l_new, h_new, tol)
        lo[todo], hi[todo] = l_new, h_new
        back = _flipped(net, Xs + (0.99 * h_new)[:, None] * Ds, cs, ii)
        hi[todo[back]] = 0.99 * h_new[back]
        todo = todo[back]
    return hi


def _eps_key(eps: float) -> int:
    return int(round(eps * 1e12))


def _pgd(net, X, clean, indices, eps, cfg: AttackConfig):
    """L2 PGD at radius eps; smallest adversarial perturbation per sample."""
    n, d = X.shape
    delta = np.empty_like(X)
    for i, si in enumerate(indices):
        rng = np.random.default_rng([cfg.seed, int(si), _eps_key(eps)])
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        delta[i] = eps * rng.random() ** (1.0 / d) * v
    step = 2.5 * eps / cfg.pgd_steps
    best = np.full(n, np.inf)
    witness = np.zeros_like(X)
    for it in range(cfg.pgd_steps + 1):
        P = _clip(X + delta, cfg.box)
        delta = P - X
        S = _checked_scores(net, P, indices)
        norms = np.linalg.norm(delta, axis=1)
        better = (labels_from_scores(S) != clean) & (norms < best)
        best[better] = norms[better]
        witness[better] = P[better]
        if it == cfg.pgd_steps:
            break
        _, cot = _margin_cotangent(S, clean)
        G = grad_input(net, P, cot, surrogate=cfg.surrogate)
        gnorm = np.linalg.norm(G, axis=1)
        ok = np.isfinite(gnorm) & (gnorm > 0)
        delta[ok] -= step * G[ok] / gnorm[ok, None]
        dn = np.linalg.norm(delta, axis=1)
        over = dn > eps
        delta[over] *= (eps / dn[over])[:, None]
    return best, witness


def estimate_margins(
    net: Network,
    X: np.ndarray,
    config: AttackConfig = AttackConfig(),
    indices: Optional[Sequence[int]] = None,
) -> list:
    """Margin estimates for every row of X (see module docstring)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    indices = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64)
    clean = labels_from_scores(_checked_scores(net, X, indices))

    margins = np.full(n, max(config.eps_grid))
    status = np.array(["failed_capped"] * n, dtype=object)
    attack = np.array(["pgd_grid"] * n, dtype=object)
    witness = np.full_like(X, np.nan)

    found, adv = _deepfool(net, X, clean, indices, config)
    f = np.flatnonzero(found)
    if f.size:
        D = adv[f] - X[f]
        t = _refine_ray(net, X[f], D, clean[f], indices[f], config.tol)
        margins[f] = t * np.linalg.norm(D, axis=1)
        witness[f] = X[f] + t[:, None] * D
        status[f] = "refined"
        attack[f] = "deepfool_bisect"

    # PGD at every grid radius below the DeepFool estimate; the minimum over
    # both stages is kept, so adding grid radii can only lower an estimate
    df_margin = np.where(found, margins, np.inf)
    best = np.full(n, np.inf)
    wit = np.zeros_like(X)
    for eps in config.eps_grid:
        rest = np.flatnonzero(eps < df_margin)
        if rest.size == 0:
            continue
        b, w = _pgd(net, X[rest], clean[rest], indices[rest], eps, config)
        better = b < best[rest]
        best[rest[better]] = b[better]
        wit[rest[better]] = w[better]
    hit = np.flatnonzero(best < df_margin)
    margins[hit] = best[hit]
    witness[hit] = wit[hit]
    status[hit] = "grid_hit"
    attack[hit] = "pgd_grid"

    return [
        MarginEstimate(
            int(indices[i]), int(clean[i]), float(margins[i]), str(status[i]),
            str(attack[i]), None if status[i] == "failed_capped" else witness[i],
        )
        for i in range(n)
    ]


def attack_margin(
    net: Network, x: np.ndarray, config: AttackConfig = AttackConfig(), sample_index: int = 0
) -> MarginEstimate:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("attack_margin takes a single input vector")
    return estimate_margins(net, x[None, :], config, [sample_index])[0]


def class_stability(
    net: Network, dataset, config: AttackConfig = AttackConfig(), limit: Optional[int] = None
) -> StabilityReport:
    X = np.asarray(dataset.inputs, dtype=np.float64)
    if limit is not None:
        X = X[:limit]
    if X.shape[0] == 0:
        raise ValueError("class stability needs a non-empty dataset")
    est = estimate_margins(net, X, config)
    margins = np.array([e.estimated_margin for e in est])
    success = np.mean([e.status != "failed_capped" for e in est])
    return StabilityReport(
        per_sample=est,
        S_hat=float(margins.mean()),
        attack_success_rate=float(success),
        eps_grid=config.eps_grid,
        tolerance=config.tol,
        n=X.shape[0],
        inputs_digest=inputs_digest(X),
        config=config.to_dict(),
    )


def multiclass_margin(net: Network, x: np.ndarray, config: AttackConfig = AttackConfig()):
    """Per-class margins h^j(x) and their sum.

    h^j(x) = 0 for every j other than the predicted class (x itself is a
    witness), so the sum is the predicted-class margin.
    """
    est = attack_margin(net, x, config)
    comps = np.zeros(net.n_classes)
    comps[est.predicted_label] = est.estimated_margin
    return comps, float(comps.sum())


# Exact-margin classifier families used as oracles.

def signed_distance_exact(w, b: float, x) -> float:
    """Signed distance (w.x + b)/||w|| from x to the hyperplane w.x + b = 0."""
    w = np.asarray(w, dtype=np.float64)
    nw = np.linalg.norm(w)
    if nw == 0:
        raise ValueError("w must be non-zero")
    return float((np.dot(w, x) + b) / nw)


@dataclass
class LinearClassifier:
    """sgn(w.x + b) with sgn(0) = 1."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if np.linalg.norm(self.w) == 0:
            raise ValueError("w must be non-zero")

    def label(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.where(X @ self.w + self.b >= 0, 1, -1)

    def signed_distance(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (X @ self.w + self.b) / np.linalg.norm(self.w)

    def to_network(self) -> Network:
        d = self.w.shape[0]
        return Network([d, 1], [self.w.reshape(1, d).copy()], [np.array([float(self.b)])], "identity")


@dataclass
class IntervalClassifier1D:
    """Piecewise-constant labels on the line, alternating at each threshold.

    ``first_label`` (+1 or -1) applies left of the smallest threshold.  The
    +1 set is closed, so threshold points themselves are labelled +1.
    """

    thresholds: Sequence[float]
    first_label: int = 1

    def __post_init__(self):
        self.thresholds = np.sort(np.asarray(self.thresholds, dtype=np.float64))
        if self.first_label not in (1, -1):
            raise ValueError("first_label must be +1 or -1")

    def label(self, X) -> np.ndarray:
        x = np.asarray(X, dtype=np.float64).reshape(-1)
        region = np.searchsorted(self.thresholds, x, side="left")
        lab = np.where(region % 2 == 0, self.first_label, -self.first_label)
        on_edge = np.isin(x, self.thresholds)
        return np.where(on_edge, 1, lab)

    def signed_distance(self, X) -> np.ndarray:
        x = np.asarray(X, dtype=np.float64).reshape(-1)
        dist = np.min(np.abs(x[:, None] - self.thresholds[None, :]), axis=1)
        return self.label(x) * dist


def sdf_lipschitz_check(classifier, X1, X2) -> float:
    """Largest |d(x1) - d(x2)| / ||x1 - x2|| over the pairs; coincident pairs skipped."""
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    if X1.ndim == 1:
        X1, X2 = X1[:, None], X2[:, None]
    gap = np.linalg.norm(X1 - X2, axis=1)
    keep = gap > 0
    if not keep.any():
        return 0.0
    diff = np.abs(classifier.signed_distance(X1[keep]) - classifier.signed_distance(X2[keep]))
    return float(np.max(diff / gap[keep]))
