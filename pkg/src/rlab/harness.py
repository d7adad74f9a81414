"""Width sweeps: train, measure, aggregate over seeds, write reports.

A sweep trains one network per (width, seed) cell under one of three epoch
protocols, measures class stability, co-stability and the Lipschitz
interval on a capped evaluation set, evaluates the stability threshold of a
finite class with log|F| = p, and writes CSV/JSON/SVG reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import svg
from .bounds import BoundInputs, rademacher_bound_refined, robustness_threshold_finite
from .data import LabeledDataset, gen_gaussian_toy, load_csv, load_idx, split
from .lipschitz import chain_inequality_check, lipschitz_interval, co_stability
from .margin import AttackConfig, class_stability
from .nn import TrainConfig, TrainingDiverged, init_network, train

PROTOCOLS = ("until_threshold", "match_smallest_epochs", "fixed_epochs")
NOT_APPLICABLE = "not applicable"


@dataclass(frozen=True)
class DatasetSpec:
    """Where the sweep's train/test data comes from.

    ``gaussian_toy`` draws fresh train and test sets per seed; ``idx`` and
    ``csv`` load one file and split it per seed.
    """

    kind: str = "gaussian_toy"
    d: int = 784
    sigma: float = 1.0 / 28.0
    delta: float = 1.0
    n_train: int = 1000
    n_test: int = 500
    data_seed: int = 1000
    images: Optional[str] = None
    labels: Optional[str] = None
    path: Optional[str] = None
    limit: Optional[int] = None
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.kind not in ("gaussian_toy", "idx", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ValueError("idx datasets need images and labels paths")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv datasets need a path")

    def load(self, seed: int) -> tuple:
        if self.kind == "gaussian_toy":
            tr = gen_gaussian_toy(self.d, self.n_train, self.sigma, self.delta, self.data_seed + seed)
            te = gen_gaussian_toy(self.d, self.n_test, self.sigma, self.delta,
                                  self.data_seed + 1000 + seed)
            return tr, te
        if self.kind == "idx":
            full = load_idx(self.images, self.labels, self.limit)
        else:
            full = load_csv(self.path)
        return split(full, self.train_fraction, seed)

    @property
    def nominal_c(self) -> Optional[float]:
        return self.sigma**2 * self.d if self.kind == "gaussian_toy" else None


def parse_protocol(protocol: str, fixed_epochs: Optional[int] = None) -> tuple:
    """'fixed_epochs(7)' -> ('fixed_epochs', 7); other names pass through."""
    m = re.fullmatch(r"fixed_epochs\((\d+)\)", protocol.strip())
    if m:
        return "fixed_epochs", int(m.group(1))
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if protocol == "fixed_epochs":
        if not fixed_epochs or fixed_epochs < 1:
            raise ValueError("fixed_epochs needs a positive epoch count")
        return protocol, int(fixed_epochs)
    return protocol, None


@dataclass(frozen=True)
class SweepConfig:
    widths: tuple = (8, 16, 32, 64, 128)
    depth: int = 4
    dataset: DatasetSpec = DatasetSpec()
    protocol: str = "match_smallest_epochs"
    fixed_epochs: Optional[int] = None
    seeds: tuple = (0, 1, 2, 3, 4)
    stability: bool = True
    costability: bool = True
    lipschitz: bool = True
    bounds: bool = True
    activation: str = "tanh"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    target_train_accuracy: float = 0.99
    loss: str = "cross_entropy"
    eval_split: str = "test"
    sample_cap: int = 500
    eps_grid: tuple = AttackConfig().eps_grid
    lipschitz_trials: int = 256
    K: float = 1.0
    eps: float = 0.1
    c: Optional[float] = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if not widths or any(b <= a for a, b in zip(widths, widths[1:])) or widths[0] < 1:
            raise ValueError("widths must be a non-empty, strictly increasing list of positive ints")
        object.__setattr__(self, "widths", widths)
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("need at least one seed")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        if self.depth not in (4, 8):
            raise ValueError("depth must be 4 or 8 hidden layers")
        name, k = parse_protocol(self.protocol, self.fixed_epochs)
        object.__setattr__(self, "protocol", name)
        object.__setattr__(self, "fixed_epochs", k)
        if self.eval_split not in ("test", "train"):
            raise ValueError("eval_split must be 'test' or 'train'")
        if self.sample_cap < 1:
            raise ValueError("sample_cap must be >= 1")
        if self.c is None and self.bounds and self.dataset.nominal_c is None:
            raise ValueError("bounds on file datasets need an explicit c")
        # fail early on a bad training setup
        self.train_config(0)

    @property
    def c_value(self) -> Optional[float]:
        return self.c if self.c is not None else self.dataset.nominal_c

    def train_config(self, seed: int, epochs: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=epochs or self.max_epochs,
            target_train_accuracy=self.target_train_accuracy,
            loss=self.loss,
            seed=seed,
            stop_on_target=epochs is None,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["widths"] = list(self.widths)
        out["seeds"] = list(self.seeds)
        out["eps_grid"] = list(self.eps_grid)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepConfig":
        obj = dict(obj)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        if isinstance(obj.get("dataset"), dict):
            obj["dataset"] = DatasetSpec(**obj["dataset"])
        for key in ("widths", "seeds", "eps_grid"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


@dataclass
class SweepRecord:
    """One trained network: a single (width, seed) cell of a sweep."""

    width: int
    seed: int
    param_count: int
    epochs: int
    train_acc: float = math.nan
    test_acc: float = math.nan
    excluded: bool = False
    diverged: bool = False
    n_train: int = 0
    d: int = 0
    eval_n: int = 0
    S_hat: float = math.nan
    attack_success_rate: float = math.nan
    S_star: float = math.nan
    L_lo: float = math.nan
    L_hi: float = math.nan
    normalized: float = math.nan
    chain_holds: Optional[bool] = None
    chain_pointwise_violations: Optional[int] = None
    threshold: float = math.nan
    rademacher_refined: float = math.nan
    train_risk: float = math.nan
    test_risk: float = math.nan
    K: float = 1.0
    eps: float = 0.1
    c: float = math.nan
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


CSV_FIELDS = [f.name for f in fields(SweepRecord)]


def empirical_risk_01(net, dataset) -> float:
    """Fraction of misclassified samples."""
    X = np.asarray(dataset.inputs, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empirical risk needs a non-empty dataset")
    return float(np.mean(net.predict(X) != np.asarray(dataset.labels)))


def _output_dim(ds: LabeledDataset) -> int:
    return 1 if ds.n_classes == 2 else ds.n_classes


def _threshold(p: int, n: int, d: int, c: float, K: float, eps: float) -> float:
    inp = BoundInputs(n=n, d=d, logF=float(p), c=c, K=K, eps=eps)
    return robustness_threshold_finite(inp).value


def _measure(cfg: SweepConfig, rec: SweepRecord, net, tr, te, seed: int) -> None:
    rec.train_risk = empirical_risk_01(net, tr)
    rec.test_risk = empirical_risk_01(net, te)
    ev = (te if cfg.eval_split == "test" else tr).head(cfg.sample_cap)
    rec.eval_n = ev.n
    report = None
    if cfg.stability:
        report = class_stability(net, ev, AttackConfig(eps_grid=cfg.eps_grid, seed=seed))
        rec.S_hat = report.S_hat
        rec.attack_success_rate = report.attack_success_rate
    if cfg.costability:
        rec.S_star = co_stability(net, ev).S_star
    if cfg.lipschitz and net.activation != "heaviside":
        iv = lipschitz_interval(net, ev, cfg.lipschitz_trials, seed)
        rec.L_lo, rec.L_hi = iv.L_lo, iv.L_hi
        if cfg.costability:
            rec.normalized = rec.S_star / rec.L_hi if rec.L_hi > 0 else math.inf
        if report is not None:
            chain = chain_inequality_check(net, ev, report, iv.L_hi)
            rec.chain_holds = chain.holds
            rec.chain_pointwise_violations = len(chain.pointwise_violations)
    if cfg.bounds:
        c = cfg.c_value
        rec.threshold = _threshold(rec.param_count, tr.n, tr.d, c, cfg.K, cfg.eps)
        if rec.S_hat > 0:
            inp = BoundInputs(n=tr.n, d=tr.d, logF=float(rec.param_count), c=c,
                              S=rec.S_hat, K2=cfg.K)
            rec.rademacher_refined = rademacher_bound_refined(inp).value


def _run_cell(cfg: SweepConfig, width: int, seed: int, tr, te, epochs: Optional[int]) -> SweepRecord:
    dims = [tr.d] + [width] * cfg.depth + [_output_dim(tr)]
    net0 = init_network(dims, cfg.activation, seed)
    rec = SweepRecord(width=width, seed=seed, param_count=net0.param_count, epochs=0,
                      n_train=tr.n, d=tr.d, K=cfg.K, eps=cfg.eps,
                      c=cfg.c_value if cfg.c_value is not None else math.nan)
    try:
        tm = train(net0, tr, cfg.train_config(seed, epochs), te)
    except TrainingDiverged as exc:
        rec.diverged = True
        rec.excluded = True
        rec.note = str(exc)
        return rec
    rec.epochs = tm.epochs
    rec.train_acc = tm.train_accuracy
    rec.test_acc = tm.test_accuracy
    rec.excluded = tm.train_accuracy < cfg.target_train_accuracy
    _measure(cfg, rec, tm.network, tr, te, seed)
    return rec


def _run_seed(cfg: SweepConfig, seed: int) -> list:
    tr, te = cfg.dataset.load(seed)
    out = []
    if cfg.protocol == "until_threshold":
        for w in cfg.widths:
            out.append(_run_cell(cfg, w, seed, tr, te, None))
    elif cfg.protocol == "fixed_epochs":
        for w in cfg.widths:
            out.append(_run_cell(cfg, w, seed, tr, te, cfg.fixed_epochs))
    else:
        first = _run_cell(cfg, cfg.widths[0], seed, tr, te, None)
        out.append(first)
        epochs = first.epochs if not first.diverged else cfg.max_epochs
        for w in cfg.widths[1:]:
            out.append(_run_cell(cfg, w, seed, tr, te, epochs))
    return out


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("RLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(config: SweepConfig, out_dir=None) -> list:
    """Run every (width, seed) cell; write reports when ``out_dir`` is given.

    Seeds are independent jobs (RLAB_THREADS caps the worker count); records
    come back ordered by width, then seed, whatever the scheduling.
    """
    workers = min(_workers(), len(config.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed, [config] * len(config.seeds), config.seeds))
    else:
        per_seed = [_run_seed(config, s) for s in config.seeds]
    records = sorted((r for rs in per_seed for r in rs), key=lambda r: (r.width, r.seed))
    if out_dir is not None:
        emit_reports(records, out_dir, config)
    return records


def _get(rec, name):
    if isinstance(rec, dict):
        if name not in rec:
            raise ValueError(f"record is missing field {name!r}")
        v = rec[name]
    else:
        v = getattr(rec, name)
    return float(v) if v not in (None, "") else math.nan


def law_check(records, eps: float = 0.1, K: float = 1.0) -> list:
    """Diagnostic verdicts of the interpolation-implies-low-stability implication.

    R* is proxied by the best test risk in the sweep.  Records with train risk
    above R* - eps get "not applicable"; others report whether S_hat lies below
    the threshold, with the ratio S_hat / threshold.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    records = list(records)
    risks = [_get(r, "test_risk") for r in records]
    finite = [r for r in risks if math.isfinite(r)]
    if not finite:
        raise ValueError("no record carries a test risk")
    r_star = min(finite)
    out = []
    for rec in records:
        S = _get(rec, "S_hat")
        p, n, d, c = (_get(rec, k) for k in ("param_count", "n_train", "d", "c"))
        risk = _get(rec, "train_risk")
        thr = _threshold(int(p), int(n), int(d), c, K, eps) if math.isfinite(c) else math.nan
        row = {"width": int(_get(rec, "width")), "seed": int(_get(rec, "seed")),
               "train_risk": risk, "S_hat": S, "threshold": thr, "R_star_proxy": r_star,
               "R_star_method": "best test-set 0-1 risk in the sweep", "eps": eps, "K": K}
        if not (math.isfinite(risk) and math.isfinite(S) and math.isfinite(thr)) \
                or risk > r_star - eps:
            row.update(verdict=NOT_APPLICABLE, ratio=None)
        else:
            row.update(verdict="below threshold" if S < thr else "at or above threshold",
                       ratio=S / thr)
        out.append(row)
    return out


def monotone_steps(values) -> int:
    """Number of consecutive steps with values[i+1] >= values[i]."""
    v = np.asarray(values, dtype=np.float64)
    return int(np.sum(np.diff(v) >= 0))


AGG_FIELDS = ("S_hat", "S_star", "L_lo", "L_hi", "normalized", "train_acc", "test_acc",
              "threshold", "train_risk", "test_risk", "epochs")


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def aggregate(records) -> list:
    """Per-width mean and population std over all seeds in the records."""
    widths = sorted({r.width for r in records})
    out = []
    for w in widths:
        rs = [r for r in records if r.width == w]
        row = {"width": w, "param_count": rs[0].param_count, "n_seeds": len(rs),
               "n_excluded": sum(r.excluded for r in rs), "n_diverged": sum(r.diverged for r in rs),
               "chain_holds_all": all(r.chain_holds is not False for r in rs)}
        for name in AGG_FIELDS:
            vals = np.array([getattr(r, name) for r in rs], dtype=np.float64)
            row[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
        out.append(row)
    return out


def summarize(records) -> dict:
    agg = aggregate(records)
    S = [a["S_hat"]["mean"] for a in agg]
    N = [a["normalized"]["mean"] for a in agg]
    return {
        "aggregates": agg,
        "monotone_steps_S_hat": monotone_steps(S),
        "monotone_steps_normalized": monotone_steps(N),
        "n_steps": max(len(agg) - 1, 0),
        "S_hat_largest_exceeds_smallest": bool(len(S) > 1 and S[-1] > S[0]),
        "chain_holds_all": all(r.chain_holds is not False for r in records),
        "chain_pointwise_violations": sum(r.chain_pointwise_violations or 0 for r in records),
    }


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        d = r.to_dict()
        w.writerow([_csv_value(d[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return _clean(obj)


def emit_reports(records, out_dir, config: Optional[SweepConfig] = None) -> dict:
    """Write sweep.csv, sweep.json and three SVG plots; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".rlab-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc}") from exc

    records = list(records)
    paths = {"csv": out / "sweep.csv", "json": out / "sweep.json"}
    paths["csv"].write_text(records_csv(records))
    doc = {"config": config.to_dict() if config is not None else None,
           "attack_sample_cap": config.sample_cap if config is not None else None}
    doc.update(summarize(records))
    if config is not None and config.bounds:
        doc["law_check"] = law_check(records, config.eps, config.K)
    paths["json"].write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")

    agg = aggregate(records)
    widths = [a["width"] for a in agg]
    plots = {
        "stability_svg": ("stability_vs_width.svg", "S_hat", "Class stability", "S_hat"),
        "normalized_svg": ("normalized_costability_vs_width.svg", "normalized",
                           "Normalized co-stability", "S*/L_hi"),
        "accuracy_svg": ("test_accuracy_vs_width.svg", "test_acc", "Test accuracy", "test_acc"),
    }
    for key, (name, field_name, title, ylabel) in plots.items():
        series = [{"x": widths, "y": [a[field_name]["mean"] for a in agg],
                   "std": [a[field_name]["std"] for a in agg], "label": "mean +- 1 std"}]
        paths[key] = out / name
        paths[key].write_text(svg.line_chart(series, f"{title} vs width", "width", ylabel))
    return paths


def read_records_csv(path) -> list:
    """Rows of a sweep.csv as dicts (strings), for law_check on saved runs."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
