import json
import math
import os

import numpy as np
import pytest

from leapsgd import (ScalingFit, SweepSpec, detect_escapes, emit_trace, fit_scaling, load_trace,
                     parse_target, run_config, run_sweep)
from leapsgd.harness import (FitError, TraceParseError, default_thresholds, eval_expr,
                             predicted_plateaus, resolve_config)
from leapsgd.trainer import TrainingTrace


def fixture_trace(pairs):
    return TrainingTrace(risk_series=[(s, r, 0.0) for s, r in pairs])


def step_trace():
    steps = sorted({0, 10, 50, 99, 100, 200, 1000, 5000, 9999, 10**4, 20000, 50000})
    return fixture_trace([(s, 1.0 if s < 100 else 0.5 if s < 10**4 else 0.1) for s in steps])


def test_constant_trace_no_escapes():
    rep = detect_escapes(fixture_trace([(s, 1.0) for s in range(0, 1000, 10)]), [0.75, 0.25])
    assert rep.escape_steps == [None, None]


def test_step_fixture():
    assert detect_escapes(step_trace(), [0.75, 0.25]).escape_steps == [100, 10**4]


def test_monotone_trace_ordered():
    steps = np.unique(np.logspace(0, 5, 60).astype(int))
    tr = fixture_trace([(int(s), 2.0 / (1 + math.log(s))) for s in steps])
    esc = detect_escapes(tr, [1.5, 1.0, 0.5, 0.2]).escape_steps
    assert all(b >= a for a, b in zip(esc, esc[1:]))


def test_dwell_rejects_blips():
    tr = fixture_trace([(0, 1.0), (10, 0.2), (20, 1.0), (30, 0.2), (40, 0.2), (80, 0.2)])
    assert detect_escapes(tr, [0.5]).escape_steps == [10]
    assert detect_escapes(tr, [(0.5, 15)]).escape_steps == [30]
    tr = fixture_trace([(0, 1.0), (10, 0.2), (15, 1.0), (30, 0.2), (80, 0.2)])
    assert detect_escapes(tr, [(0.5, 8)]).escape_steps == [30]
    # window 0.1 * 10 = 1 step misses the spike at 15, 0.6 * 10 reaches it
    assert detect_escapes(tr, [0.5], dwell_fraction=0.1).escape_steps == [10]
    assert detect_escapes(tr, [0.5], dwell_fraction=0.6).escape_steps == [30]


def test_threshold_monotonicity():
    rng = np.random.default_rng(0)
    steps = np.arange(0, 2000, 10)
    risks = np.maximum(0.0, np.linspace(1, 0, steps.size) + 0.05 * rng.standard_normal(steps.size))
    tr = fixture_trace(zip(steps.tolist(), risks.tolist()))
    prev = None
    for thr in np.linspace(0.1, 0.9, 17):
        e = detect_escapes(tr, [(thr, 50)]).escape_steps[0]
        if prev is not None and e is not None:
            assert e <= prev
        prev = e if e is not None else prev


def test_empty_trace():
    with pytest.raises(ValueError):
        detect_escapes(fixture_trace([]), [0.5])


def test_predicted_plateaus():
    h = parse_target("bool: z1 + z1*z2*z3 + z1*z2*z3*z4*z5*z6")
    assert predicted_plateaus(h) == [1.5, 1.0, 0.5, 0.0]
    assert default_thresholds(h) == [1.25, 0.75, 0.25]


def test_fit_exact_square():
    fit = fit_scaling({d: [d * d] * 5 for d in (8, 16, 32, 64)})
    assert isinstance(fit, ScalingFit)
    assert abs(fit.slope - 2.0) <= 1e-6
    assert abs(fit.slope_ci[0] - 2) <= 1e-6 and abs(fit.slope_ci[1] - 2) <= 1e-6


def test_fit_needs_three_dims():
    with pytest.raises(FitError):
        fit_scaling({8: [1, 2], 16: [3, 4]})
    with pytest.raises(FitError):
        fit_scaling({8: [10], 16: [20], 32: [None]})


def test_fit_ignores_mostly_missing_dim():
    fit = fit_scaling({8: [64], 16: [256], 32: [1024], 64: [None, None, 5]})
    assert fit.dims == [8, 16, 32]


def test_eval_expr():
    assert eval_expr("0.4/d", d=50) == 0.008
    assert eval_expr("ceil(2*d*log(d))", d=10) == math.ceil(20 * math.log(10))
    assert eval_expr(3) == 3
    for bad in ("__import__('os')", "d.real", "open('x')", "[1]"):
        with pytest.raises(ValueError):
            eval_expr(bad, d=2)


def test_resolve_defaults():
    cfg = resolve_config({"target": "gauss: He2(z1)", "d": 32, "M": 8})
    assert cfg["kappa"] == 1 / (8 * 32)
    assert cfg["T1"] == math.ceil(32 * math.log(32))
    cfg = resolve_config({"mode": "vanilla", "target": "bool: z1", "d": "2*8", "M": "d",
                          "eta": "0.4*M/d"})
    assert cfg["d"] == 16 and cfg["M"] == 16 and cfg["eta"] == 0.4
    with pytest.raises(ValueError):
        resolve_config({"target": "bool: z1", "bogus": 1})
    with pytest.raises(ValueError):
        resolve_config({"target": "bool: z1*z2*z3", "d": 2})


def test_adaptive_mode_schedule():
    cfg = resolve_config({"mode": "adaptive", "target": "gauss: He1(z1) + He1(z1)*He2(z2)",
                          "d": 16, "M": 4})
    assert len(cfg["schedule"]) == 2
    assert cfg["T1"] == sum(n for n, _ in cfg["schedule"])


SMALL = {"target": "gauss: He2(z1)", "d": 16, "M": 4, "T2": 50, "eval_size": 500}


def test_json_round_trip(tmp_path):
    trace = run_config(dict(SMALL, checkpoint_steps=["10"]), seed=3)
    p = str(tmp_path / "t.json")
    emit_trace(trace, "json", p)
    back = load_trace(p)
    assert json.dumps(back.to_dict()) == json.dumps(trace.to_dict())


def test_csv_files(tmp_path):
    trace = run_config(SMALL, seed=1)
    p = str(tmp_path / "t.csv")
    written = emit_trace(trace, "csv", p)
    with open(p, encoding="utf-8") as f:
        assert f.readline() == "step,risk,se\n"
    assert len(written) == 1 + len(trace.support_stats)
    back = load_trace(p)
    assert back.risk_series == [tuple(r) for r in trace.risk_series]
    assert set(back.support_stats) == set(trace.support_stats)


def test_truncated_json(tmp_path):
    trace = run_config(SMALL, seed=1)
    p = tmp_path / "t.json"
    emit_trace(trace, "json", str(p))
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TraceParseError, match="byte offset"):
        load_trace(str(p))


def test_truncated_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("step,risk,se\n0,0.5,0.01\n1,0.4", encoding="utf-8")
    with pytest.raises(TraceParseError, match="byte offset"):
        load_trace(str(p))
    p.write_text("step,risk,se\n0,0.5,0.01\n1,oops,0.1\n", encoding="utf-8")
    with pytest.raises(TraceParseError, match="line 3"):
        load_trace(str(p))


FAST = {"mode": "vanilla", "target": "gauss: He2(z1)", "M": 20, "eta": "0.4*M/d",
        "eta_a": "2/M", "batch": 16, "T": "60*d*log(d)", "rho": 1.0, "eval_size": 2000,
        "per_decade": 20}


def test_sweep_outputs(tmp_path):
    spec = SweepSpec(config=FAST, dims=[8, 12, 16], seeds=2, seed=5, out_dir=str(tmp_path))
    summary, cells = run_sweep(spec)
    assert len(cells) == 6
    assert summary["dims"] == [8, 12, 16] and summary["fit_error"] is None
    assert set(summary) >= {"target", "leap", "dims", "median_escape", "slope", "slope_ci", "cells"}
    names = sorted(os.listdir(tmp_path))
    assert "summary.json" in names and "summary.csv" in names
    assert "cell_d8_s0.json" in names
    # medians can be rebuilt from the cell files alone
    for d, med in zip(summary["dims"], summary["median_escape"]):
        esc = []
        for i in range(2):
            tr = load_trace(str(tmp_path / f"cell_d{d}_s{i}.json"))
            e = detect_escapes(tr, summary["thresholds"], spec.dwell_fraction).escape_steps[-1]
            esc.append(math.inf if e is None else e)
        assert float(np.median(esc)) == med


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(config=SMALL, dims=[16, 8])
    with pytest.raises(ValueError):
        SweepSpec(config=SMALL, dims=[8, 16], seeds=0)


def test_sweep_records_cell_failures():
    spec = SweepSpec(config=dict(SMALL, T1=5, eta1="1e308*d"), dims=[8, 12, 16], seeds=1)
    summary, cells = run_sweep(spec)
    assert all(c["error"] for c in cells)
    assert summary["fit_error"]
