"""Experiment orchestration: shared test sets, per-method evaluation with
timing, rate/time ratios and plot-ready CSV/JSON reports."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import irsnet
from .baselines import GAParams, ga_throughput, grid_oracle, random_baseline
from .channel import Dataset, SystemParams, generate_dataset, read_dataset, watt_to_dbm
from .evaluator import PhaseConfig, throughput
from .rng import Stream

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "IRS_WPCN_OUTPUT_DIR"
THREADS_ENV = "IRS_WPCN_THREADS"


class DegenerateReportError(ValueError):
    """A ratio with a zero (or negative) denominator."""


def rate_ratio(method_throughput: float, ga_throughput: float) -> float:
    if not ga_throughput > 0:
        raise DegenerateReportError(f"GA throughput must be positive, got {ga_throughput}")
    return method_throughput / ga_throughput


def time_ratio(ga_time: float, nn_time: float) -> float:
    if not nn_time > 0:
        raise DegenerateReportError(f"network time must be positive, got {nn_time}")
    return ga_time / nn_time


# ---- solver handles ----------------------------------------------------------

@dataclass
class Solver:
    """A named method.  Batched solvers map a whole test set at once;
    per-sample solvers are called with ``(features[i], i)``."""

    name: str
    solve: Callable
    batched: bool = False
    stochastic: bool = True


def ga_solver(p: SystemParams, ga: GAParams, name: str | None = None) -> Solver:
    base = Stream(ga.seed)
    return Solver(name or f"ga{ga.generations}",
                  lambda f, i: ga_throughput(f, p, ga, base.spawn(i)))


def random_solver(p: SystemParams, ga: GAParams, name: str = "random") -> Solver:
    base = Stream(ga.seed + 1)
    return Solver(name, lambda f, i: random_baseline(f, p, ga, base.spawn(i)).config)


def irsnet_solver(params: irsnet.NetworkParams, name: str = "irsnet") -> Solver:
    return Solver(name, lambda X: irsnet.infer(params, X), batched=True, stochastic=False)


def oracle_solver(p: SystemParams, resolution: int, name: str = "oracle") -> Solver:
    return Solver(name, lambda f, i: grid_oracle(f, p, resolution)[0], stochastic=False)


def constant_solver(cfg: PhaseConfig, name: str = "constant") -> Solver:
    return Solver(name, lambda f, i: cfg, stochastic=False)


@dataclass
class MethodResult:
    method: str
    mean_throughput: float
    stderr: float
    per_sample_ms: float
    n_samples: int
    mean_tau: float
    throughputs: np.ndarray = field(repr=False, default=None)
    configs: PhaseConfig | None = field(repr=False, default=None)


def _time_call(fn, repeats: int):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def evaluate_method(method: Solver, test_set: Dataset, p: SystemParams, repeats: int = 3,
                    threads: int | None = 1) -> MethodResult:
    """Run ``method`` on every test feature and score it with the evaluator.

    Wall time uses a monotonic clock, excludes dataset I/O and one warm-up
    call, and is the median of ``repeats`` runs (per sample for per-sample
    solvers, per batch then divided by the batch size for batched ones).
    BLAS/OpenMP pools are limited to ``threads`` while timing (None: no limit).
    """
    with threadpool_limits(threads):
        return _evaluate_method(method, test_set, p, repeats)


def _evaluate_method(method: Solver, test_set: Dataset, p: SystemParams, repeats: int) -> MethodResult:
    if test_set.count < 1:
        raise ValueError("test set is empty")
    if test_set.M != p.M or test_set.N != p.N or test_set.interference != p.interference:
        raise ValueError(f"method {method.name!r}: test set (M={test_set.M}, N={test_set.N}, "
                         f"interference={test_set.interference}) does not match system "
                         f"(M={p.M}, N={p.N}, interference={p.interference})")
    F = test_set.structured()
    n = test_set.count
    if method.batched:
        X = test_set.features
        method.solve(X[:min(n, 2)])
        cfgs, elapsed = _time_call(lambda: method.solve(X), repeats)
        per_sample = elapsed / n
    else:
        method.solve(F[0], 0)
        results, times = [], []
        for i in range(n):
            cfg, t = _time_call(lambda: method.solve(F[i], i), repeats)
            results.append(cfg)
            times.append(t)
        cfgs = PhaseConfig(np.stack([c.theta_ET for c in results]),
                           np.stack([c.theta_IT for c in results]),
                           np.array([float(c.tau) for c in results]))
        per_sample = float(np.mean(times))
    C = throughput(F, cfgs, p)
    return MethodResult(
        method=method.name, mean_throughput=float(np.mean(C)),
        stderr=float(np.std(C, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        per_sample_ms=per_sample * 1e3, n_samples=n, mean_tau=float(np.mean(cfgs.tau)),
        throughputs=C, configs=cfgs)


# ---- reports -----------------------------------------------------------------

NUMERIC_FIELDS = ("mean_throughput", "stderr", "per_sample_ms", "mean_tau", "rate_ratio", "time_ratio")
CSV_FIELDS = ("M", "N", "P_I_dbm", "method", "n_samples") + NUMERIC_FIELDS + ("dataset_sha256",)


@dataclass
class BenchReport:
    M: int
    N: int
    P_I: float
    reference: str
    methods: list[MethodResult]
    dataset_sha256: str
    config: dict = field(default_factory=dict)
    environment: str = ""
    partial: str | None = None  # name of the failed stage, if any
    nondeterministic_fields: tuple = ("per_sample_ms", "time_ratio")

    def result(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)

    @property
    def P_I_dbm(self) -> str:
        return "off" if self.P_I <= 0 else f"{watt_to_dbm(self.P_I):.6g}"

    def ratios(self) -> tuple[dict, dict]:
        ref = self.result(self.reference)
        rates = {m.method: rate_ratio(m.mean_throughput, ref.mean_throughput) for m in self.methods}
        times = {m.method: time_ratio(ref.per_sample_ms, m.per_sample_ms) for m in self.methods}
        return rates, times

    def rows(self) -> list[dict]:
        rates, times = self.ratios()
        out = []
        for m in self.methods:
            out.append({
                "M": self.M, "N": self.N, "P_I_dbm": self.P_I_dbm, "method": m.method,
                "n_samples": m.n_samples, "mean_throughput": m.mean_throughput,
                "stderr": m.stderr, "per_sample_ms": m.per_sample_ms, "mean_tau": m.mean_tau,
                "rate_ratio": rates[m.method], "time_ratio": times[m.method],
                "dataset_sha256": self.dataset_sha256,
            })
        return out

    def to_dict(self) -> dict:
        rates, times = self.ratios() if not self.partial else ({}, {})
        return {
            "M": self.M, "N": self.N, "P_I": self.P_I, "P_I_dbm": self.P_I_dbm,
            "reference": self.reference, "dataset_sha256": self.dataset_sha256,
            "methods": [{k: v for k, v in asdict(m).items() if k not in ("throughputs", "configs")}
                        for m in self.methods],
            "rate_ratios": rates, "time_ratios": times,
            "config": self.config, "environment": self.environment, "partial": self.partial,
            "nondeterministic_fields": list(self.nondeterministic_fields),
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_report_csv(reports: list[BenchReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in reports:
            for row in r.rows():
                w.writerow({k: _fmt(v) for k, v in row.items()})


def read_report_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["M"], row["N"], row["n_samples"] = int(row["M"]), int(row["N"]), int(row["n_samples"])
        for k in NUMERIC_FIELDS:
            row[k] = float(row[k])
    return rows


def write_summary_csv(reports: list[BenchReport], path: str | os.PathLike) -> None:
    """Wide table: one row per sweep point, one ratio column per method."""
    names = [m.method for m in reports[0].methods] if reports else []
    fields_ = ["M", "N", "P_I_dbm"] + [f"throughput_{n}" for n in names] + \
              [f"rate_ratio_{n}" for n in names] + [f"time_ratio_{n}" for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields_)
        w.writeheader()
        for r in reports:
            if r.partial:
                continue
            rates, times = r.ratios()
            row = {"M": r.M, "N": r.N, "P_I_dbm": r.P_I_dbm}
            for m in r.methods:
                row[f"throughput_{m.method}"] = _fmt(m.mean_throughput)
                row[f"rate_ratio_{m.method}"] = _fmt(rates[m.method])
                row[f"time_ratio_{m.method}"] = _fmt(times[m.method])
            w.writerow(row)


def write_history_csv(history: list[dict], path: str | os.PathLike) -> None:
    """Long format (x, y, series) for loss curves."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "value", "series"])
        for h in history:
            w.writerow([h["epoch"], _fmt(h["train_loss"]), "train_loss"])
            w.writerow([h["epoch"], _fmt(h["val_loss"]), "val_loss"])
            w.writerow([h["epoch"], _fmt(h["lr"]), "lr"])


# ---- experiment config -------------------------------------------------------

@dataclass
class ExperimentConfig:
    system: SystemParams = field(default_factory=SystemParams)
    train: irsnet.TrainConfig = field(default_factory=irsnet.desk_config)
    ga: GAParams = field(default_factory=GAParams)
    sizes: dict = field(default_factory=lambda: dict(zip(("train", "validation", "test"), irsnet.DESK_SIZES)))
    seed: int = 0
    methods: list = field(default_factory=lambda: ["ga5", "irsnet", "random"])
    reference: str | None = None
    sweep: dict = field(default_factory=dict)  # e.g. {"N": [8, 16, 32]}
    output_dir: str = "results"
    checkpoint: str | None = None
    oracle_resolution: int = 64
    timing_repeats: int = 3
    timing_threads: int | None = 1
    environment: str = ""

    def __post_init__(self):
        unknown = [m for m in self.methods if not _known_method(m)]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}")
        for k in self.sweep:
            if k not in ("M", "N", "P_I"):
                raise ValueError(f"cannot sweep over {k!r}; use M, N or P_I")

    @property
    def reference_method(self) -> str:
        if self.reference:
            return self.reference
        for m in self.methods:
            if m.startswith("ga"):
                return m
        return self.methods[0]

    def seeds(self) -> dict:
        s = self.seed
        return {"train": s + 1, "validation": s + 2, "test": s + 3, "net": s + 4,
                "fit": s + 5, "ga": s + 6}

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(), "train": self.train.to_dict(),
            "ga": self.ga.to_dict(), "sizes": dict(self.sizes), "seed": self.seed,
            "methods": list(self.methods), "reference": self.reference,
            "sweep": dict(self.sweep), "output_dir": self.output_dir,
            "checkpoint": self.checkpoint, "oracle_resolution": self.oracle_resolution,
            "timing_repeats": self.timing_repeats, "timing_threads": self.timing_threads,
            "environment": self.environment,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed - {"P_I_dbm"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        system = dict(d.pop("system", {}))
        if "P_I_dbm" in system:
            v = system.pop("P_I_dbm")
            system["P_I"] = 0.0 if v in (None, "off") else 10.0 ** ((float(v) - 30.0) / 10.0)
        kw = {
            "system": SystemParams.from_dict(system),
            "train": irsnet.desk_config(**d.pop("train", {})),
            "ga": GAParams(**d.pop("ga", {})),
        }
        sizes = dict(zip(("train", "validation", "test"), irsnet.DESK_SIZES))
        sizes.update(d.pop("sizes", {}))
        kw["sizes"] = sizes
        sweep = d.pop("sweep", {})
        if "P_I_dbm" in sweep:
            sweep["P_I"] = [0.0 if v in (None, "off") else 10.0 ** ((float(v) - 30.0) / 10.0)
                            for v in sweep.pop("P_I_dbm")]
        kw["sweep"] = sweep
        kw.update(d)
        return cls(**kw)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _known_method(name: str) -> bool:
    if name in ("irsnet", "random", "oracle"):
        return True
    return name.startswith("ga") and name[2:].isdigit()


def environment_note() -> str:
    return f"{platform.machine()} {platform.processor() or ''} {platform.system()} " \
           f"python {platform.python_version()} numpy {np.__version__}".strip()


def _sweep_points(cfg: ExperimentConfig) -> list[SystemParams]:
    points = [cfg.system]
    for key, values in cfg.sweep.items():
        points = [pt.with_(**{key: v}) for pt in points for v in values]
    return points


@dataclass
class ExperimentOutput:
    reports: list[BenchReport]
    histories: dict
    paths: dict


def run_experiment(cfg: ExperimentConfig, progress: Callable[[str], None] | None = None) -> ExperimentOutput:
    """Generate data, train (or load) IRS-Net and benchmark every method per sweep point."""
    say = progress or (lambda msg: log.info(msg))
    out_dir = os.environ.get(OUTPUT_DIR_ENV, cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    seeds = cfg.seeds()
    reports, histories, paths = [], {}, {}
    for p in _sweep_points(cfg):
        tag = f"M{p.M}_N{p.N}_PI{'off' if p.P_I <= 0 else format(watt_to_dbm(p.P_I), 'g')}"
        stage = "data"
        methods: list[MethodResult] = []
        digest = ""
        try:
            say(f"[{tag}] generating test set ({cfg.sizes['test']})")
            test = generate_dataset(p, cfg.sizes["test"], seeds["test"])
            digest = test.digest()
            for name in cfg.methods:
                stage = name
                solver = _make_solver(name, p, cfg, seeds, tag, out_dir, histories, paths, say)
                say(f"[{tag}] evaluating {name}")
                methods.append(evaluate_method(solver, test, p, cfg.timing_repeats, _threads(cfg)))
            report = BenchReport(M=p.M, N=p.N, P_I=p.P_I, reference=cfg.reference_method,
                                 methods=methods, dataset_sha256=digest, config=cfg.to_dict(),
                                 environment=cfg.environment or environment_note())
            report.ratios()
        except Exception as exc:  # noqa: BLE001 - recorded in the partial report
            log.exception("stage %s failed", stage)
            report = BenchReport(M=p.M, N=p.N, P_I=p.P_I, reference=cfg.reference_method,
                                 methods=methods, dataset_sha256=digest, config=cfg.to_dict(),
                                 environment=cfg.environment or environment_note(),
                                 partial=f"{stage}: {exc}")
        reports.append(report)

    complete = [r for r in reports if not r.partial]
    paths["report_csv"] = os.path.join(out_dir, "report.csv")
    paths["summary_csv"] = os.path.join(out_dir, "summary.csv")
    paths["report_json"] = os.path.join(out_dir, "report.json")
    write_report_csv(complete, paths["report_csv"])
    write_summary_csv(complete, paths["summary_csv"])
    with open(paths["report_json"], "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=1)
    return ExperimentOutput(reports=reports, histories=histories, paths=paths)


def _threads(cfg: ExperimentConfig) -> int | None:
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else cfg.timing_threads


def _make_solver(name, p, cfg, seeds, tag, out_dir, histories, paths, say) -> Solver:
    if name.startswith("ga"):
        ga = GAParams(**{**cfg.ga.to_dict(), "generations": int(name[2:]), "seed": seeds["ga"]})
        return ga_solver(p, ga, name)
    if name == "random":
        return random_solver(p, GAParams(**{**cfg.ga.to_dict(), "seed": seeds["ga"]}))
    if name == "oracle":
        return oracle_solver(p, cfg.oracle_resolution)
    if cfg.checkpoint:
        net = irsnet.load_checkpoint(cfg.checkpoint)
    else:
        say(f"[{tag}] generating training data ({cfg.sizes['train']}) and training IRS-Net")
        tr = generate_dataset(p, cfg.sizes["train"], seeds["train"])
        va = generate_dataset(p, cfg.sizes["validation"], seeds["validation"])
        net = irsnet.network_for(p, seeds["net"])
        tcfg = irsnet.TrainConfig(**{**cfg.train.to_dict(), "seed": seeds["fit"]})
        res = irsnet.train(tr, va, net, tcfg, p)
        net = res.params
        histories[tag] = res.history
        hp = os.path.join(out_dir, f"history_{tag}.csv")
        write_history_csv(res.history, hp)
        cp = os.path.join(out_dir, f"irsnet_{tag}.json")
        irsnet.save_checkpoint(net, cp)
        paths[f"history_{tag}"], paths[f"checkpoint_{tag}"] = hp, cp
    return irsnet_solver(net)


def load_test_set(path: str | os.PathLike, p: SystemParams) -> Dataset:
    ds = read_dataset(path)
    if (ds.M, ds.N, ds.interference) != (p.M, p.N, p.interference):
        raise ValueError(f"{path}: dataset (M={ds.M}, N={ds.N}, interference={ds.interference}) "
                         f"does not match the system parameters")
    return ds
