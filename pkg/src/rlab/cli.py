"""Command line entry point: ``rlab <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 measurement failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds as B
from .data import MeasureSpec, gen_gaussian_toy, load_csv, load_idx
from .harness import DatasetSpec, SweepConfig, law_check, read_records_csv, run_sweep, summarize
from .isoperimetry import (
    clipped_linear, concentration_test, distance_to_point, estimate_c, regime_classifier,
)
from .lipschitz import lipschitz_interval, normalized_costability
from .margin import AttackConfig, MeasurementError, class_stability
from .nn import TrainConfig, TrainingDiverged, init_network, load_checkpoint, save_checkpoint, train

log = logging.getLogger("rlab")

EXIT_OK, EXIT_INVALID, EXIT_MEASUREMENT = 0, 2, 3


class UsageError(ValueError):
    pass


def _kv(spec: str) -> tuple:
    """'kind:a=1,b=2' -> ('kind', {'a': '1', 'b': '2'})."""
    kind, _, rest = spec.partition(":")
    opts = {}
    for part in filter(None, rest.split(",")):
        key, eq, value = part.partition("=")
        if not eq:
            raise UsageError(f"bad option {part!r} in {spec!r} (expected key=value)")
        opts[key.strip()] = value.strip()
    return kind.strip(), opts


def _num(opts, key, cast, default=None):
    if key not in opts:
        if default is None:
            raise UsageError(f"missing {key}=")
        return default
    try:
        return cast(opts.pop(key))
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {exc}") from exc


def parse_data_spec(spec: str):
    """gaussian:d=,n=,sigma=[,delta=,seed=] | idx:images=,labels=[,limit=] | csv:path="""
    kind, opts = _kv(spec)
    if kind == "gaussian":
        ds = gen_gaussian_toy(
            _num(opts, "d", int), _num(opts, "n", int), _num(opts, "sigma", float),
            _num(opts, "delta", float, 1.0), _num(opts, "seed", int, 0),
        )
    elif kind == "idx":
        limit = _num(opts, "limit", int, -1)
        ds = load_idx(opts.pop("images"), opts.pop("labels"), None if limit < 0 else limit)
    elif kind == "csv":
        ds = load_csv(opts.pop("path"))
    else:
        raise UsageError(f"unknown data kind {kind!r}")
    if opts:
        raise UsageError(f"unknown data options {sorted(opts)}")
    return ds


def parse_measure_spec(spec: str) -> MeasureSpec:
    """gaussian:d=,sigma= (or sigma2=) | sphere:d= | mixture:d=,sigma=,separation="""
    kind, opts = _kv(spec)
    d = _num(opts, "d", int)
    if kind == "sphere":
        m = MeasureSpec("sphere_uniform", d)
    elif kind in ("gaussian", "mixture"):
        if "sigma2" in opts:
            s2 = _num(opts, "sigma2", float)
        else:
            s2 = _num(opts, "sigma", float) ** 2
        if kind == "gaussian":
            m = MeasureSpec("gaussian_isotropic", d, s2)
        else:
            m = MeasureSpec("gaussian_mixture", d, s2, _num(opts, "separation", float, 1.0))
    else:
        raise UsageError(f"unknown measure kind {kind!r}")
    if opts:
        raise UsageError(f"unknown measure options {sorted(opts)}")
    return m


def load_config(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _emit(obj, out=None) -> None:
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def cmd_train(a) -> int:
    ds = parse_data_spec(a.data)
    out_dim = 1 if ds.n_classes == 2 else ds.n_classes
    dims = [ds.d] + _ints(a.hidden) + [out_dim]
    net = init_network(dims, a.activation, a.seed)
    cfg = TrainConfig(a.optimizer, a.lr, a.batch_size, a.epochs, a.target, a.loss, a.seed,
                      stop_on_target=not a.no_stop)
    tm = train(net, ds, cfg)
    meta = {"epochs": tm.epochs, "final_train_acc": tm.train_accuracy,
            "final_test_acc": tm.test_accuracy, "target_met": tm.target_met, "config": vars(cfg)}
    save_checkpoint(a.checkpoint, tm.network, meta)
    _emit({"checkpoint": a.checkpoint, "param_count": net.param_count, **meta})
    return EXIT_OK


def _attack_config(a) -> AttackConfig:
    grid = _floats(a.eps_grid) if a.eps_grid else AttackConfig().eps_grid
    return AttackConfig(eps_grid=tuple(grid), pgd_steps=a.pgd_steps, tol=a.tol, seed=a.seed)


def cmd_stability(a) -> int:
    net, _ = load_checkpoint(a.checkpoint)
    rep = class_stability(net, parse_data_spec(a.data), _attack_config(a), a.limit)
    out = rep.to_dict()
    if a.summary_only:
        out.pop("per_sample")
    _emit(out, a.out)
    return EXIT_OK


def cmd_costability(a) -> int:
    net, _ = load_checkpoint(a.checkpoint)
    ds = parse_data_spec(a.data).head(a.limit)
    _emit(normalized_costability(net, ds, a.trials, a.seed).to_dict(), a.out)
    return EXIT_OK


def cmd_lipschitz(a) -> int:
    net, _ = load_checkpoint(a.checkpoint)
    ds = parse_data_spec(a.data).head(a.limit) if a.data else None
    iv = lipschitz_interval(net, ds, a.trials, a.seed)
    if not iv.defined:
        raise MeasurementError("Lipschitz constant undefined for heaviside networks")
    _emit(iv.to_dict(), a.out)
    return EXIT_OK


BOUND_FIELDS = ("n", "d", "logF", "c", "S", "S_star", "L", "K", "K1", "K2", "W", "J",
                "eps_tilde", "eps", "delta", "a")


def cmd_bounds(a) -> int:
    kw = {f: getattr(a, f) for f in BOUND_FIELDS if getattr(a, f) is not None}
    inp = B.BoundInputs(**kw)
    if a.formula == "gap":
        if a.rademacher is None:
            raise UsageError("--rademacher is required for the gap formula")
        res = B.evaluate("gap", inp, rademacher=a.rademacher)
    else:
        res = B.evaluate(a.formula, inp, minimize_eps_tilde=a.minimize_eps_tilde)
    _emit(res.to_dict(), a.out)
    return EXIT_OK


def parse_t_grid(text: str) -> np.ndarray:
    """'start:stop:step' (inclusive stop) or a comma list."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if not step > 0:
            raise UsageError("t-grid step must be > 0")
        k = int(math.floor((stop - start) / step + 1e-9))
        return start + step * np.arange(k + 1)
    return np.array(_floats(text))


def _test_function(kind: str, m: MeasureSpec, rng):
    if kind == "clipped-linear":
        u = rng.standard_normal(m.d)
        return clipped_linear(u / np.linalg.norm(u), sigma=m.sigma)
    if kind == "distance-to-point":
        x0 = m.sample(1, rng)[0]
        return distance_to_point(x0, bound=1e6)
    raise UsageError(f"unknown test function {kind!r}")


def cmd_isoperimetry(a) -> int:
    m = parse_measure_spec(a.measure)
    rng = np.random.default_rng(a.seed)
    c = a.c if a.c is not None else m.nominal_c
    t_grid = parse_t_grid(a.t_grid) if a.t_grid else None
    reports = []
    for k in range(a.functions):
        f = _test_function(a.fn, m, rng)
        reports.append(concentration_test(m, f, c, a.samples, t_grid, seed=a.seed + 1 + k))
    out = {
        "measure": {"kind": m.kind, "d": m.d, "sigma2": m.sigma2},
        "c": c,
        **regime_classifier(m),
        "n_functions": a.functions,
        "n_violations": sum(len(r.violations) for r in reports),
        "c_hat_max": max((r.c_hat for r in reports if r.c_hat is not None), default=None),
        "reports": [r.to_dict() for r in reports] if a.full else [],
    }
    if a.estimate:
        u = np.eye(1, m.d).ravel()
        out["c_hat_e1"] = estimate_c(m, clipped_linear(u, sigma=m.sigma), a.samples, seed=a.seed)
    _emit(out, a.out)
    return EXIT_OK


SWEEP_FLAGS = ("widths", "depth", "protocol", "fixed_epochs", "seeds", "activation", "optimizer",
               "learning_rate", "batch_size", "max_epochs", "sample_cap", "eval_split", "K", "eps", "c")


def cmd_sweep(a, config: dict) -> int:
    obj = {}
    for name in SWEEP_FLAGS:
        v = getattr(a, name)
        if v is not None:
            obj[name] = v
    if a.widths:
        obj["widths"] = _ints(a.widths)
    if a.seeds:
        obj["seeds"] = _ints(a.seeds)
    data = {k: getattr(a, k) for k in ("d", "sigma", "n_train", "n_test") if getattr(a, k) is not None}
    for toggle in ("stability", "costability", "lipschitz", "bounds"):
        if toggle in a.skip:
            obj[toggle] = False
    # config file values win over flags
    data.update(config.pop("dataset", {}))
    obj.update(config)
    obj["dataset"] = DatasetSpec(**data)
    cfg = SweepConfig.from_dict(obj)
    records = run_sweep(cfg, a.out)
    summary = summarize(records)
    summary.pop("aggregates")
    _emit({"out_dir": a.out, "n_records": len(records), **summary})
    return EXIT_OK


def cmd_law_check(a) -> int:
    rows = law_check(read_records_csv(a.records), a.eps, a.K)
    _emit(rows, a.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlab", description="Robustness and stability measurements.")
    p.add_argument("--config", help="TOML or JSON file; its values override flags")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_required=True):
        sp.add_argument("--config", default=argparse.SUPPRESS,
                        help="TOML or JSON file; its values override flags")
        sp.add_argument("--out", help="also write the JSON result here")
        sp.add_argument("--seed", type=int, default=0)
        if data_required is not None:
            sp.add_argument("--data", required=data_required,
                            help="gaussian:d=,n=,sigma= | idx:images=,labels= | csv:path=")

    t = sub.add_parser("train", help="train an MLP and save a checkpoint")
    common(t)
    t.add_argument("--hidden", default="64,64", help="comma-separated hidden widths")
    t.add_argument("--activation", default="relu", choices=["relu", "tanh", "heaviside", "identity"])
    t.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--target", type=float, default=0.99)
    t.add_argument("--loss", default="cross_entropy", choices=["cross_entropy", "hinge"])
    t.add_argument("--no-stop", action="store_true", help="train for all epochs")
    t.add_argument("--checkpoint", required=True)

    for name, helptext in (("stability", "class stability by attack"),
                           ("costability", "co-stability and S*/L"),
                           ("lipschitz", "Lipschitz interval")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, data_required=name != "lipschitz")
        sp.add_argument("--model", "--checkpoint", dest="checkpoint", required=True,
                        help="checkpoint written by 'rlab train'")
        sp.add_argument("--limit", type=int)
        if name == "stability":
            sp.add_argument("--eps-grid", help="comma-separated radii")
            sp.add_argument("--pgd-steps", type=int, default=40)
            sp.add_argument("--tol", type=float, default=1e-3)
            sp.add_argument("--summary-only", action="store_true", help="omit per-sample rows")
        else:
            sp.add_argument("--lower-trials", "--trials", dest="trials", type=int, default=256)

    b = sub.add_parser("bounds", help="evaluate a bound or threshold")
    common(b, data_required=None)
    b.add_argument("--formula", required=True, choices=list(B.FORMULAS))
    for f in BOUND_FIELDS:
        b.add_argument(f"--{f}", type=int if f in ("n", "d") else float)
    b.add_argument("--rademacher", type=float)
    b.add_argument("--minimize-eps-tilde", action="store_true")

    i = sub.add_parser("isoperimetry", help="Monte Carlo concentration test")
    common(i, data_required=None)
    i.add_argument("--measure", required=True, help="gaussian:d=,sigma= | sphere:d= | mixture:...")
    i.add_argument("--c", type=float, help="constant to test (default: nominal)")
    i.add_argument("--fn", default="clipped-linear", choices=["clipped-linear", "distance-to-point"])
    i.add_argument("--samples", "--n-samples", dest="samples", type=int, default=100_000)
    i.add_argument("--t-grid", help="start:stop:step or comma list (default 0..3 sigma)")
    i.add_argument("--functions", type=int, default=20)
    i.add_argument("--estimate", action="store_true")
    i.add_argument("--full", action="store_true", help="include per-function tails")

    s = sub.add_parser("sweep", help="width sweep with reports")
    s.add_argument("--config", default=argparse.SUPPRESS)
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--widths")
    s.add_argument("--seeds")
    s.add_argument("--depth", type=int)
    s.add_argument("--protocol", help="until_threshold | match_smallest_epochs | fixed_epochs(k)")
    s.add_argument("--fixed-epochs", type=int)
    s.add_argument("--activation")
    s.add_argument("--optimizer")
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--sample-cap", type=int)
    s.add_argument("--eval-split", choices=["test", "train"])
    s.add_argument("--K", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--c", type=float)
    s.add_argument("--d", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--skip", nargs="*", default=[],
                   choices=["stability", "costability", "lipschitz", "bounds"])

    lc = sub.add_parser("law-check", help="threshold verdicts for a saved sweep.csv")
    lc.add_argument("--config", default=argparse.SUPPRESS)
    lc.add_argument("--records", required=True)
    lc.add_argument("--eps", type=float, default=0.1)
    lc.add_argument("--K", type=float, default=1.0)
    lc.add_argument("--out")
    return p


COMMANDS = {
    "train": cmd_train, "stability": cmd_stability, "costability": cmd_costability,
    "lipschitz": cmd_lipschitz, "bounds": cmd_bounds, "isoperimetry": cmd_isoperimetry,
    "law-check": cmd_law_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(a.config) if getattr(a, "config", None) else {}
        if a.command == "sweep":
            return cmd_sweep(a, config)
        for key, value in config.items():
            dest = key.replace("-", "_")
            if not hasattr(a, dest):
                raise UsageError(f"unknown config key {key!r} for {a.command}")
            setattr(a, dest, value)
        return COMMANDS[a.command](a)
    except (MeasurementError, TrainingDiverged) as exc:
        log.error("measurement failed: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MEASUREMENT
    except (ValueError, KeyError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
