"""Experiment plumbing: run configs, parameter sweeps over d, escape
detection, scaling fits and trace files."""
import ast
import csv
import io
import json
import math
import operator
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .activations import make_activation
from .leap import leap
from .network import init_net
from .polynomial import EmbeddedTarget, parse_target
from .rng import EVAL, INIT, TRAIN_NOISE, TRAIN_X, stream
from .trainer import (Phase1Config, Phase2Config, TrainingTrace, adaptive_schedule,
                      log_schedule, run_algorithm1, run_vanilla_sgd, theory_hyperparams)


class TraceParseError(ValueError):
    pass


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# d-dependent expressions

_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.FloorDiv: operator.floordiv}
_UN = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"log": math.log, "sqrt": math.sqrt, "exp": math.exp, "ceil": math.ceil,
          "floor": math.floor, "round": round, "min": min, "max": max, "int": int}


def eval_expr(expr, **names):
    """Evaluate an arithmetic expression such as ``"0.4/d"`` or
    ``"4*d*log(d)**4"``. Numbers pass through unchanged."""
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        return expr
    if not isinstance(expr, str):
        raise ValueError(f"not an expression: {expr!r}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ValueError(f"unknown name {node.id!r} in {expr!r}")
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            return _BIN[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UN:
            return _UN[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ValueError(f"unsupported syntax in {expr!r}")

    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as e:
        raise ValueError(f"cannot parse {expr!r}: {e.msg}") from None
    return ev(tree)


# ---------------------------------------------------------------------------
# one training run from a flat config

DEFAULTS = {
    "mode": "algorithm1",  # algorithm1 | adaptive | vanilla
    "target": "gauss: He2(z1)",
    "d": 32,
    "M": 32,
    "activation": "shifted_sigmoid",
    "shift": 1.0,
    "kappa": None,  # algorithm1: 1/(M d); vanilla: 1/M
    "rho": 0.0,
    "noise_std": 0.0,
    "c0": 1.0,
    "c1": 1.0,
    "eta1": None,
    "T1": None,
    "r": 0.2,
    "Delta": 0.4,
    "eta2": None,  # 0.5/M
    "T2": 20000,
    "lambda_a": 1e-5,
    "eta": None,  # vanilla: 0.4/d
    "eta_a": None,  # vanilla second layer; defaults to eta
    "T": 100000,
    "batch": 1,
    "eval_size": 50000,
    "per_decade": 50,
    "checkpoint_steps": [],
    "schedule": None,  # filled in for the adaptive mode
}


def resolve_config(cfg, **override):
    """Fill defaults and evaluate d-dependent expressions; returns a plain
    dict of numbers and strings (the config echo stored in traces)."""
    out = dict(DEFAULTS)
    out.update({k: v for k, v in cfg.items() if v is not None})
    out.update({k: v for k, v in override.items() if v is not None})
    unknown = set(out) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if out["mode"] not in ("algorithm1", "adaptive", "vanilla"):
        raise ValueError(f"unknown mode {out['mode']!r}")
    d = int(eval_expr(out["d"]))
    M = int(eval_expr(out["M"], d=d))
    names = {"d": d, "M": M}
    for k in ("shift", "kappa", "rho", "noise_std", "c0", "c1", "eta1", "T1", "r", "Delta",
              "eta2", "T2", "lambda_a", "eta", "eta_a", "T", "batch", "eval_size", "per_decade"):
        if out[k] is not None:
            out[k] = eval_expr(out[k], **names)
    out["d"], out["M"] = d, M
    poly = parse_target(out["target"])
    if poly.latent_dim > d:
        raise ValueError(f"target uses {poly.latent_dim} coordinates but d = {d}")
    vanilla = out["mode"] == "vanilla"
    if out["kappa"] is None:
        out["kappa"] = 1.0 / M if vanilla else 1.0 / (M * d)
    if vanilla:
        if out["eta"] is None:
            out["eta"] = 0.4 / d
        if out["eta_a"] is None:
            out["eta_a"] = out["eta"]
        out["T"] = int(out["T"])
        out["batch"] = int(out["batch"])
    else:
        lp = leap(poly)
        if out["mode"] == "adaptive":
            sched = adaptive_schedule(d, [m for m in lp.per_step_new_mass if m > 0],
                                      out["kappa"], out["c0"], out["c1"])
            out["schedule"] = [list(s) for s in sched]
            out["T1"] = sum(n for n, _ in sched)
            out["eta1"] = sched[0][1]
        else:
            T1, eta1 = theory_hyperparams(d, lp.leap, out["kappa"], out["c0"], out["c1"])
            out["T1"] = T1 if out["T1"] is None else int(out["T1"])
            out["eta1"] = eta1 if out["eta1"] is None else out["eta1"]
        if out["eta2"] is None:
            out["eta2"] = 0.5 / M
        out["T2"] = int(out["T2"])
    out["eval_size"] = int(out["eval_size"])
    out["checkpoint_steps"] = [int(eval_expr(s, **names)) for s in out["checkpoint_steps"]]
    return out


def run_config(cfg, seed, cell=()):
    """Run one training job. Random streams are keyed by (seed, *cell,
    purpose) so a cell's result does not depend on what else runs."""
    cfg = resolve_config(cfg)
    target = EmbeddedTarget(parse_target(cfg["target"]), cfg["d"])
    act = make_activation(cfg["activation"], cfg["shift"])
    net = init_net(cfg["M"], cfg["d"], cfg["kappa"], cfg["rho"], stream(seed, *cell, INIT))
    X = target.sample_x(stream(seed, *cell, EVAL), cfg["eval_size"])
    common = dict(act=act, eval_set=(X, target.f_star(X)), noise_std=cfg["noise_std"],
                  noise_rng=stream(seed, *cell, TRAIN_NOISE),
                  checkpoint_steps=cfg["checkpoint_steps"], seed=seed, config=cfg)
    rng = stream(seed, *cell, TRAIN_X)
    pd = int(cfg["per_decade"])
    if cfg["mode"] == "vanilla":
        return run_vanilla_sgd(target, net, cfg["eta"], cfg["T"], cfg["batch"],
                               log_schedule(cfg["T"], pd), rng, eta_a=cfg["eta_a"], **common)
    sched = cfg.get("schedule")
    cfg1 = Phase1Config(cfg["eta1"], cfg["T1"], cfg["r"], cfg["Delta"],
                        None if sched is None else [tuple(s) for s in sched])
    cfg2 = Phase2Config(cfg["eta2"], cfg["T2"], cfg["lambda_a"])
    evals = sorted(set(log_schedule(cfg["T1"], pd)) | set(log_schedule(cfg["T2"], pd, start=cfg["T1"])))
    return run_algorithm1(target, net, cfg1, cfg2, evals, rng, **common)


# ---------------------------------------------------------------------------
# escapes

@dataclass
class EscapeReport:
    thresholds: list
    escape_steps: list  # None where never reached
    plateau_spans: list  # (start, end) per level

    def to_dict(self):
        return asdict(self)


def predicted_plateaus(poly):
    """Risk plateaus 0.5 * sum_{m > l} c_m^2 ||chi_m||^2 after the first l
    monomials (in leap order) are fitted, l = 0..L."""
    order = leap(poly).ordering
    mass = [poly.terms[i][1] ** 2 * poly.basis_norm_sq(poly.terms[i][0]) for i in order]
    return [0.5 * sum(mass[l:]) for l in range(len(mass) + 1)]


def default_thresholds(poly):
    """Midpoints between consecutive predicted plateaus."""
    p = predicted_plateaus(poly)
    return [0.5 * (p[l] + p[l + 1]) for l in range(len(p) - 1)]


def detect_escapes(trace, levels, dwell_fraction=0.0):
    """First logged step at which the risk is <= threshold and stays there
    for the dwell window, per level.

    ``levels`` holds ``(threshold, dwell)`` pairs (a bare threshold means
    dwell 0). The window after a candidate step s is ``dwell +
    dwell_fraction * s`` steps; logged points beyond the end of the trace
    are not required.
    """
    steps = trace.steps() if hasattr(trace, "steps") else np.asarray([s for s, _ in trace])
    risks = trace.risks() if hasattr(trace, "risks") else np.asarray([r for _, r in trace])
    if steps.size == 0:
        raise ValueError("empty trace")
    thresholds, out = [], []
    for lv in levels:
        thr, dwell = (lv, 0) if np.ndim(lv) == 0 else lv
        thresholds.append(float(thr))
        below = risks <= thr
        # suffix "all below" lookups via the next index that is above
        nxt_above = np.full(steps.size + 1, steps.size)
        for n in range(steps.size - 1, -1, -1):
            nxt_above[n] = n if not below[n] else nxt_above[n + 1]
        hit = None
        for n in np.flatnonzero(below):
            end = steps[n] + dwell + dwell_fraction * steps[n]
            m = nxt_above[n]
            if m == steps.size or steps[m] > end:
                hit = int(steps[n])
                break
        out.append(hit)
    spans = []
    prev = int(steps[0])
    for e in out:
        spans.append((prev, e))
        if e is not None:
            prev = e
    return EscapeReport(thresholds, out, spans)


# ---------------------------------------------------------------------------
# scaling fit

@dataclass
class ScalingFit:
    dims: list
    median_escape: list
    slope: float
    intercept: float
    slope_ci: tuple
    n_bootstrap: int

    def to_dict(self):
        return asdict(self)


def _slope(logd, logt):
    A = np.vstack([logd, np.ones_like(logd)]).T
    coef, *_ = np.linalg.lstsq(A, logt, rcond=None)
    return float(coef[0]), float(coef[1])


def fit_scaling(escapes_by_d, n_bootstrap=2000, seed=0, ci=0.95):
    """Least-squares slope of log(median escape) against log(d).

    ``escapes_by_d`` maps d to the per-seed escape steps (None = not
    escaped). A dimension enters the fit when at least half its seeds
    escaped; the median then counts missing escapes as +inf. The CI comes
    from resampling seeds within each d.
    """
    dims, meds, samples = [], [], []
    for d in sorted(escapes_by_d):
        vals = [math.inf if v is None else float(v) for v in escapes_by_d[d]]
        if not vals or sum(math.isfinite(v) for v in vals) * 2 < len(vals):
            continue
        med = float(np.median(vals))
        if not math.isfinite(med) or med <= 0:
            continue
        dims.append(int(d))
        meds.append(med)
        samples.append(np.array(vals))
    if len(dims) < 3:
        raise FitError(f"need escapes at >= 3 dimensions, got {len(dims)}")
    logd = np.log(np.array(dims, dtype=float))
    slope, icpt = _slope(logd, np.log(meds))
    rng = stream(seed, 0xB007)
    boots = []
    for _ in range(n_bootstrap):
        m = [np.median(s[rng.integers(0, s.size, s.size)]) for s in samples]
        if all(math.isfinite(v) and v > 0 for v in m):
            boots.append(_slope(logd, np.log(m))[0])
    if boots:
        lo, hi = np.quantile(boots, [(1 - ci) / 2, (1 + ci) / 2])
        slope_ci = (float(lo), float(hi))
    else:
        slope_ci = (math.nan, math.nan)
    return ScalingFit(dims, meds, slope, icpt, slope_ci, n_bootstrap)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepSpec:
    config: dict  # run_config template; values may be expressions in d and M
    dims: list
    seeds: int = 5
    seed: int = 0
    thresholds: list = None  # default: midpoints between predicted plateaus
    dwell_fraction: float = 0.5
    fit_level: int = -1
    out_dir: str = None

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        if any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError("dims must be strictly increasing")
        if self.seeds < 1:
            raise ValueError("need at least one seed")


def _cell_name(d, i):
    return f"cell_d{d}_s{i}"


def _run_cell(args):
    config, seed, d, i, thresholds, dwell_fraction, out_dir = args
    try:
        trace = run_config(dict(config, d=d), seed, cell=(d, i))
        rep = detect_escapes(trace, thresholds, dwell_fraction)
        path = None
        if out_dir:
            path = os.path.join(out_dir, _cell_name(d, i) + ".json")
            emit_trace(trace, "json", path)
        return {"d": d, "seed_index": i, "escape_steps": rep.escape_steps,
                "trace": None if path is None else os.path.basename(path), "error": None}
    except Exception as e:  # recorded, the sweep goes on
        return {"d": d, "seed_index": i, "escape_steps": [None] * len(thresholds),
                "trace": None, "error": f"{type(e).__name__}: {e}"}


def run_sweep(spec, threads=1):
    """Run every (d, seed) cell, detect escapes and fit the scaling of the
    ``fit_level`` escape step. Returns ``(summary, cells)``."""
    poly = parse_target(resolve_config(spec.config, d=spec.dims[0])["target"])
    thresholds = spec.thresholds or default_thresholds(poly)
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
    jobs = [(spec.config, spec.seed, d, i, thresholds, spec.dwell_fraction, spec.out_dir)
            for d in spec.dims for i in range(spec.seeds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            cells = list(ex.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    cells.sort(key=lambda c: (c["d"], c["seed_index"]))
    by_d = {d: [c["escape_steps"][spec.fit_level] for c in cells if c["d"] == d]
            for d in spec.dims}
    try:
        fit = fit_scaling(by_d, seed=spec.seed)
        slope, ci, med = fit.slope, list(fit.slope_ci), fit.median_escape
        fit_dims = fit.dims
        fit_error = None
    except FitError as e:
        slope, ci, med, fit_dims, fit_error = None, None, [], [], str(e)
    summary = {
        "target": poly.__str__(),
        "leap": leap(poly).leap,
        "dims": fit_dims,
        "median_escape": med,
        "slope": slope,
        "slope_ci": ci,
        "thresholds": thresholds,
        "fit_error": fit_error,
        "cells": cells,
    }
    if spec.out_dir:
        with open(os.path.join(spec.out_dir, "summary.json"), "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=1)
        with open(os.path.join(spec.out_dir, "summary.csv"), "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["d", "seed_index", "level", "escape_step", "error"])
            for c in cells:
                for lvl, e in enumerate(c["escape_steps"], 1):
                    w.writerow([c["d"], c["seed_index"], lvl, "" if e is None else e,
                                c["error"] or ""])
    return summary, cells


# ---------------------------------------------------------------------------
# trace files

STATS_HEADER = ["step", "min_abs_w", "max_abs_w", "mean_abs_w"]


def _stats_path(path, group):
    stem, ext = os.path.splitext(path)
    return f"{stem}.{group}{ext}"


def emit_trace(trace, fmt, path):
    """Write a trace as JSON (complete) or CSV (risk file ``step,risk,se``
    plus one ``<stem>.<group>.csv`` per coordinate group)."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(trace.to_dict(), f, indent=1)
            f.write("\n")
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown trace format {fmt!r}")
    written = [path]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "risk", "se"])
        for s, r, e in trace.risk_series:
            w.writerow([s, repr(r), repr(e)])
    for group, rows in trace.support_stats.items():
        p = _stats_path(path, group)
        with open(p, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(STATS_HEADER)
            for row in rows:
                w.writerow([row[0]] + [repr(v) for v in row[1:]])
        written.append(p)
    return written


def _byte_offset(text, char_pos):
    return len(text[:char_pos].encode("utf-8"))


def _read_csv(path, header, convert):
    with open(path, "rb") as f:
        raw = f.read()
    text = raw.decode("utf-8")
    lines = text.splitlines(keepends=True)
    offsets = np.cumsum([0] + [len(l.encode("utf-8")) for l in lines])
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != header:
        raise TraceParseError(f"{path}: line 1 (byte offset 0): expected header {','.join(header)}")
    out = []
    for n, row in enumerate(rows[1:], 2):
        try:
            if len(row) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(row)}")
            out.append(tuple(c(v) for c, v in zip(convert, row)))
        except ValueError as e:
            off = int(offsets[min(n - 1, len(offsets) - 1)])
            raise TraceParseError(f"{path}: line {n} (byte offset {off}): {e}") from None
    if text and not text.endswith("\n"):
        raise TraceParseError(f"{path}: truncated at byte offset {len(raw)}")
    return out


def load_trace(path):
    if path.endswith(".csv"):
        risk = _read_csv(path, ["step", "risk", "se"], (int, float, float))
        trace = TrainingTrace(risk_series=risk)
        stem, _ = os.path.splitext(path)
        folder = os.path.dirname(path) or "."
        prefix = os.path.basename(stem) + "."
        for name in sorted(os.listdir(folder)):
            if name.startswith(prefix) and name.endswith(".csv") and len(name) > len(prefix) + 4:
                group = name[len(prefix):-4]
                trace.support_stats[group] = _read_csv(
                    os.path.join(folder, name), STATS_HEADER, (int, float, float, float))
        return trace
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TraceParseError(f"{path}: invalid UTF-8 at byte offset {e.start}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TraceParseError(
            f"{path}: line {e.lineno}, byte offset {_byte_offset(text, e.pos)}: {e.msg}") from None
    try:
        return TrainingTrace.from_dict(doc)
    except (KeyError, TypeError, ValueError) as e:
        raise TraceParseError(f"{path}: malformed trace document: {e}") from None
