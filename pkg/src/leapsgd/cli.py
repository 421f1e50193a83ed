"""Command line: ``leapsgd {leap,train,sweep,oracle-check}``.

Exit codes: 0 success, 1 failed check or training error, 2 usage error.
"""
import argparse
import json
import os
import sys

from .harness import DEFAULTS, SweepSpec, emit_trace, run_config, run_sweep
from .leap import leap
from .oracle import run_oracle_corpus
from .polynomial import TargetParseError, parse_target
from .trainer import TrainingError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class UsageError(Exception):
    pass


def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="master seed (default 0)")
    parser.add_argument("--out", default=d, help="output file or directory")
    parser.add_argument("--threads", type=int, default=d, help="worker processes for sweeps")
    parser.add_argument("--config", default=d, help="TOML config file; flags override it")


def _train_flags(parser):
    for key in DEFAULTS:
        if key == "schedule":
            continue
        flag = "--" + key.replace("_", "-")
        if key == "checkpoint_steps":
            parser.add_argument(flag, dest=key, default=None,
                                help="comma-separated steps to snapshot the network at")
        else:
            parser.add_argument(flag, dest=key, default=None,
                                help=f"(default {DEFAULTS[key]!r}; numbers may use d, M, log, sqrt)")


def build_parser():
    p = argparse.ArgumentParser(prog="leapsgd", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("leap", help="leap complexity of a target")
    q.add_argument("target", help='e.g. "bool: z1 + z1*z2*z3"')
    _global_flags(q, suppress=True)

    q = sub.add_parser("train", help="one training run")
    _train_flags(q)
    q.add_argument("--format", choices=["json", "csv", "both"], default="both")
    _global_flags(q, suppress=True)

    q = sub.add_parser("sweep", help="escape-time scaling sweep over d")
    _train_flags(q)
    q.add_argument("--dims", default=None, help="comma-separated ambient dimensions")
    q.add_argument("--seeds", type=int, default=None, help="seeds per dimension")
    q.add_argument("--thresholds", default=None, help="comma-separated risk thresholds")
    q.add_argument("--dwell-fraction", type=float, default=None)
    q.add_argument("--fit-level", type=int, default=None)
    _global_flags(q, suppress=True)

    q = sub.add_parser("oracle-check", help="closed-form vs Monte-Carlo cross-checks")
    q.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sizes")
    _global_flags(q, suppress=True)
    return p


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"{path}: {e}") from None


def _train_config(args, file_cfg):
    cfg = dict(file_cfg.get("train", {}))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if isinstance(cfg.get("checkpoint_steps"), str):
        cfg["checkpoint_steps"] = [s for s in cfg["checkpoint_steps"].split(",") if s.strip()]
    return cfg


def _setting(args, file_cfg, key, default):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return file_cfg.get(key, default)


def _write_json(doc, path):
    text = json.dumps(doc, indent=1) + "\n"
    if path:
        folder = os.path.dirname(path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_leap(args, file_cfg):
    res = leap(parse_target(args.target))
    _write_json(res.to_dict(), _setting(args, file_cfg, "out", None))
    return 0


def cmd_train(args, file_cfg):
    seed = _setting(args, file_cfg, "seed", 0)
    out = _setting(args, file_cfg, "out", "trace.json")
    trace = run_config(_train_config(args, file_cfg), seed)
    stem, ext = os.path.splitext(out)
    folder = os.path.dirname(out)
    if folder:
        os.makedirs(folder, exist_ok=True)
    written = []
    if args.format in ("json", "both"):
        written += emit_trace(trace, "json", stem + (ext if ext == ".json" else ".json"))
    if args.format in ("csv", "both"):
        written += emit_trace(trace, "csv", stem + ".csv")
    step, risk, se = trace.risk_series[-1]
    print(json.dumps({"final_step": step, "risk": risk, "se": se, "files": written}))
    return 0


def cmd_sweep(args, file_cfg):
    sw = dict(file_cfg.get("sweep", {}))
    if args.dims:
        sw["dims"] = [int(x) for x in args.dims.split(",")]
    if args.seeds is not None:
        sw["seeds"] = args.seeds
    if args.thresholds:
        sw["thresholds"] = [float(x) for x in args.thresholds.split(",")]
    if args.dwell_fraction is not None:
        sw["dwell_fraction"] = args.dwell_fraction
    if args.fit_level is not None:
        sw["fit_level"] = args.fit_level
    if "dims" not in sw:
        raise UsageError("sweep needs --dims (or [sweep] dims in the config)")
    out = _setting(args, file_cfg, "out", "sweep_out")
    spec = SweepSpec(config=_train_config(args, file_cfg), dims=sw["dims"],
                     seeds=int(sw.get("seeds", 5)), seed=_setting(args, file_cfg, "seed", 0),
                     thresholds=sw.get("thresholds"),
                     dwell_fraction=float(sw.get("dwell_fraction", 0.5)),
                     fit_level=int(sw.get("fit_level", -1)), out_dir=out)
    summary, _ = run_sweep(spec, threads=int(_setting(args, file_cfg, "threads", 1)))
    print(json.dumps({k: summary[k] for k in ("dims", "median_escape", "slope", "slope_ci",
                                              "fit_error")}))
    return 0 if summary["fit_error"] is None else 1


def cmd_oracle(args, file_cfg):
    report = run_oracle_corpus(_setting(args, file_cfg, "seed", 0), quick=args.quick)
    _write_json(report, _setting(args, file_cfg, "out", None))
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}", file=sys.stderr)
    return 0 if report["passed"] else 1


COMMANDS = {"leap": cmd_leap, "train": cmd_train, "sweep": cmd_sweep, "oracle-check": cmd_oracle}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_config(args.config)
        return COMMANDS[args.command](args, file_cfg)
    except (UsageError, TargetParseError, ValueError) as e:
        print(f"leapsgd {args.command}: error: {e}", file=sys.stderr)
        return 2
    except TrainingError as e:
        print(f"leapsgd {args.command}: training failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
