"""Command-line entry point: ``irs-wpcn <command> ...``.

Failures print a single ``error: <kind>: <message>`` line on stderr and exit
with a nonzero status (2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import bench, irsnet
from .baselines import GAParams, ga_throughput, grid_oracle, random_baseline
from .channel import SystemParams, dbm_to_watt, generate_dataset, read_dataset
from .evaluator import PhaseConfig, throughput
from .rng import Stream


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_power_dbm(text: str) -> float:
    """Interferer power in dBm, or ``off``; returned in watts."""
    if text.lower() in ("off", "none"):
        return 0.0
    try:
        return dbm_to_watt(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected dBm value or 'off', got {text!r}") from None


def _system(args, M=None, N=None) -> SystemParams:
    base = {}
    if getattr(args, "system", None):
        with open(args.system) as fh:
            base = json.load(fh)
    if M is not None:
        base["M"], base["N"] = M, N
    else:
        base["M"], base["N"] = args.m, args.n
    if args.pi_dbm is not None:
        base["P_I"] = args.pi_dbm
    return SystemParams.from_dict(base)


def _system_for(args, path: str):
    ds = read_dataset(path)
    p = _system(args, ds.M, ds.N)
    if p.interference != ds.interference:
        raise UsageError(f"--pi-dbm implies interference={p.interference} but {path} was "
                         f"generated with interference={ds.interference}")
    return ds, p


def _write_configs(path, cfgs: PhaseConfig, C: np.ndarray) -> None:
    N = cfgs.theta_ET.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "throughput", "tau"] + [f"theta_ET_{n}" for n in range(N)]
                   + [f"theta_IT_{n}" for n in range(N)])
        for i in range(len(C)):
            w.writerow([i, format(C[i], ".17g"), format(float(cfgs.tau[i]), ".17g")]
                       + [format(x, ".17g") for x in cfgs.theta_ET[i]]
                       + [format(x, ".17g") for x in cfgs.theta_IT[i]])


def _stack(cfgs: list[PhaseConfig]) -> PhaseConfig:
    return PhaseConfig(np.stack([c.theta_ET for c in cfgs]), np.stack([c.theta_IT for c in cfgs]),
                       np.array([float(c.tau) for c in cfgs]))


def _limit(ds, k):
    return ds.count if k is None else min(k, ds.count)


def cmd_gen_data(args):
    p = _system(args)
    ds = generate_dataset(p, args.samples, args.seed, args.out)
    print(f"wrote {ds.count} feature vectors (F_s={ds.feature_size}) to {args.out}")


def cmd_train(args):
    tr, p = _system_for(args, args.train)
    va, _ = _system_for(args, args.val)
    net = irsnet.network_for(p, args.seed)
    cfg = irsnet.desk_config(
        batch_size=args.batch_size, max_epochs=args.epochs, learning_rate=args.lr,
        patience=args.patience, seed=args.seed, normalize_inputs=not args.raw_inputs,
        train_path=args.train, val_path=args.val)
    res = irsnet.train(tr, va, net, cfg, p, progress=lambda h: print(
        f"epoch {h['epoch']:4d}  train {h['train_loss']:.6f}  val {h['val_loss']:.6f}  lr {h['lr']:.3g}",
        flush=True))
    irsnet.save_checkpoint(res.params, args.out)
    if args.history:
        bench.write_history_csv(res.history, args.history)
    print(f"best epoch {res.best_epoch} ({res.stop_reason}); checkpoint {args.out}")


def cmd_infer(args):
    ds, p = _system_for(args, args.data)
    net = irsnet.load_checkpoint(args.checkpoint)
    cfgs = irsnet.infer(net, ds.features)
    C = throughput(ds.structured(), cfgs, p)
    if args.out:
        _write_configs(args.out, cfgs, C)
    print(f"mean throughput {np.mean(C):.6f} bits/s/Hz over {ds.count} samples")


def cmd_ga(args):
    ds, p = _system_for(args, args.data)
    ga = GAParams(population=args.population, generations=args.generations, seed=args.seed)
    F = ds.structured()
    base = Stream(args.seed)
    cfgs = _stack([ga_throughput(F[i], p, ga, base.spawn(i)) for i in range(_limit(ds, args.limit))])
    C = throughput(F[:len(cfgs.tau)], cfgs, p)
    if args.out:
        _write_configs(args.out, cfgs, C)
    print(f"mean throughput {np.mean(C):.6f} bits/s/Hz over {len(C)} samples")


def cmd_random(args):
    ds, p = _system_for(args, args.data)
    ga = GAParams(population=args.population, generations=args.generations, seed=args.seed)
    F = ds.structured()
    base = Stream(args.seed)
    cfgs = _stack([random_baseline(F[i], p, ga, base.spawn(i)).config
                   for i in range(_limit(ds, args.limit))])
    C = throughput(F[:len(cfgs.tau)], cfgs, p)
    if args.out:
        _write_configs(args.out, cfgs, C)
    print(f"mean throughput {np.mean(C):.6f} bits/s/Hz over {len(C)} samples")


def cmd_oracle(args):
    ds, p = _system_for(args, args.data)
    F = ds.structured()
    cfgs = _stack([grid_oracle(F[i], p, args.resolution)[0] for i in range(_limit(ds, args.limit))])
    C = throughput(F[:len(cfgs.tau)], cfgs, p)
    if args.out:
        _write_configs(args.out, cfgs, C)
    print(f"mean throughput {np.mean(C):.6f} bits/s/Hz over {len(C)} samples")


def cmd_bench(args):
    cfg = bench.ExperimentConfig.load(args.config)
    cfg.seed = args.seed
    if args.out_dir:
        cfg.output_dir = args.out_dir
    out = bench.run_experiment(cfg, progress=lambda m: print(m, flush=True))
    _print_reports([r.to_dict() for r in out.reports])
    for k, v in out.paths.items():
        print(f"{k}: {v}")
    if any(r.partial for r in out.reports):
        raise RuntimeError("benchmark incomplete: " + "; ".join(r.partial for r in out.reports if r.partial))


def _print_reports(docs: list[dict]) -> None:
    for d in docs:
        print(f"M={d['M']} N={d['N']} P_I={d['P_I_dbm']}  reference={d['reference']}"
              + (f"  PARTIAL ({d['partial']})" if d.get("partial") else ""))
        for m in d["methods"]:
            rr = d["rate_ratios"].get(m["method"], float("nan"))
            tr = d["time_ratios"].get(m["method"], float("nan"))
            print(f"  {m['method']:>8}  C={m['mean_throughput']:.4f}±{m['stderr']:.4f}  "
                  f"{m['per_sample_ms']:.4g} ms/sample  rate ratio {rr:.3f}  time ratio {tr:.4g}")


def cmd_report(args):
    with open(args.input) as fh:
        docs = json.load(fh)
    _print_reports(docs if isinstance(docs, list) else [docs])


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="irs-wpcn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def system_flags(sp, dims=True):
        if dims:
            sp.add_argument("--m", type=int, required=True, help="PB antennas")
            sp.add_argument("--n", type=int, required=True, help="IRS elements")
        sp.add_argument("--pi-dbm", type=parse_power_dbm, default=None,
                        help="interferer power in dBm or 'off' (default off)")
        sp.add_argument("--system", help="JSON file with SystemParams overrides")

    sp = sub.add_parser("gen-data", help="generate a feature dataset")
    system_flags(sp)
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train IRS-Net")
    system_flags(sp, dims=False)
    sp.add_argument("--train", required=True)
    sp.add_argument("--val", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=3000)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--patience", type=int, default=20)
    sp.add_argument("--raw-inputs", action="store_true", help="disable input standardisation")
    sp.add_argument("--out", required=True, help="checkpoint path (JSON)")
    sp.add_argument("--history", help="training-history CSV")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="run a trained IRS-Net on a dataset")
    system_flags(sp, dims=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_infer)

    for name, func in (("ga-opt", cmd_ga), ("random-baseline", cmd_random)):
        sp = sub.add_parser(name)
        system_flags(sp, dims=False)
        sp.add_argument("--data", required=True)
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--generations", type=int, default=5)
        sp.add_argument("--population", type=int, default=50)
        sp.add_argument("--limit", type=int)
        sp.add_argument("--out")
        sp.set_defaults(func=func)

    sp = sub.add_parser("oracle", help="exhaustive grid search (small N only)")
    system_flags(sp, dims=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--resolution", type=int, default=64)
    sp.add_argument("--limit", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("bench", help="run an experiment config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="print a saved report.json")
    sp.add_argument("--input", required=True)
    sp.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    threads = os.environ.get(bench.THREADS_ENV)
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(int(threads)):
                args.func(args)
        else:
            args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
