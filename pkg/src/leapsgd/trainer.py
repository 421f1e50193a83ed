"""Layerwise projected online SGD (first layer on a shrinking sphere, then a
ridge-regularized second layer) and plain joint SGD."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .activations import make_shifted_sigmoid
from .network import TwoLayerNet, risk_on

MAX_BLOCK_ROWS = 1 << 20  # floats per sampled block (8 MB)
BLAS_BATCH = 8


class TrainingError(RuntimeError):
    """Degenerate projection or non-finite parameters."""


@dataclass(frozen=True)
class Phase1Config:
    eta1: float
    T1: int
    r: float = 0.2
    Delta: float = 0.4
    schedule: tuple = None  # ((steps, eta), ...) for the adaptive mode

    def __post_init__(self):
        if self.T1 < 0:
            raise ValueError("T1 must be non-negative")
        if not 0 < self.r < self.Delta:
            raise ValueError("need 0 < r < Delta")
        if self.schedule is not None:
            sched = tuple((int(n), float(e)) for n, e in self.schedule)
            if any(n < 0 or not 0 < e < math.inf for n, e in sched):
                raise ValueError("schedule entries need steps >= 0 and finite eta > 0")
            if sum(n for n, _ in sched) != self.T1:
                raise ValueError("schedule steps must sum to T1")
            object.__setattr__(self, "schedule", sched)
        elif not 0 <= self.eta1 < math.inf:
            raise ValueError("eta1 must be finite and non-negative")

    def segments(self):
        if self.schedule is not None:
            return list(self.schedule)
        return [(self.T1, self.eta1)]

    def to_dict(self):
        return {"eta1": self.eta1, "T1": self.T1, "r": self.r, "Delta": self.Delta,
                "schedule": None if self.schedule is None else [list(s) for s in self.schedule]}


@dataclass(frozen=True)
class Phase2Config:
    eta2: float
    T2: int
    lambda_a: float = 0.0

    def __post_init__(self):
        if self.T2 < 0 or self.lambda_a < 0:
            raise ValueError("T2 and lambda_a must be non-negative")
        if not 0 <= self.eta2 < math.inf:
            raise ValueError("eta2 must be finite and non-negative")

    def to_dict(self):
        return {"eta2": self.eta2, "T2": self.T2, "lambda_a": self.lambda_a}


@dataclass
class ProjectionState:
    """Per-neuron small-coordinate sets S_j as a boolean mask, with the step
    at which each coordinate left (-1 while still inside) and the first step
    at which it was clamped to +-Delta."""

    in_s: np.ndarray
    leave_step: np.ndarray
    clamp_step: np.ndarray

    @classmethod
    def initial(cls, M, d):
        return cls(np.ones((M, d), dtype=np.bool_),
                   np.full((M, d), -1, dtype=np.int64),
                   np.full((M, d), -1, dtype=np.int64))

    def copy(self):
        return ProjectionState(self.in_s.copy(), self.leave_step.copy(), self.clamp_step.copy())

    def small_set(self, j):
        return tuple(int(i) for i in np.flatnonzero(self.in_s[j]))


@dataclass
class TrainingTrace:
    risk_series: list = field(default_factory=list)  # (step, risk, se)
    support_stats: dict = field(default_factory=dict)  # group -> [(step, min, max, mean)]
    groups: dict = field(default_factory=dict)  # group -> coordinate indices
    projection_events: list = field(default_factory=list)  # (step, neuron, coordinate)
    clamp_events: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # name -> {"step", "net"}
    phase_boundaries: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = None
    final_state: ProjectionState = field(default=None, repr=False, compare=False)

    def steps(self):
        return np.array([s for s, _, _ in self.risk_series], dtype=np.int64)

    def risks(self):
        return np.array([r for _, r, _ in self.risk_series])

    def to_dict(self):
        return {
            "seed": self.seed,
            "config": self.config,
            "phase_boundaries": self.phase_boundaries,
            "risk_series": [{"step": s, "risk": r, "se": e, "mse": 2.0 * r}
                            for s, r, e in self.risk_series],
            "groups": {k: list(v) for k, v in self.groups.items()},
            "support_stats": {k: [list(row) for row in v] for k, v in self.support_stats.items()},
            "projection_events": [list(e) for e in self.projection_events],
            "clamp_events": [list(e) for e in self.clamp_events],
            "checkpoints": self.checkpoints,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            risk_series=[(int(r["step"]), float(r["risk"]), float(r["se"])) for r in doc["risk_series"]],
            support_stats={k: [(int(s), float(a), float(b), float(c)) for s, a, b, c in v]
                           for k, v in doc.get("support_stats", {}).items()},
            groups={k: tuple(v) for k, v in doc.get("groups", {}).items()},
            projection_events=[tuple(e) for e in doc.get("projection_events", [])],
            clamp_events=[tuple(e) for e in doc.get("clamp_events", [])],
            checkpoints=doc.get("checkpoints", {}),
            phase_boundaries=doc.get("phase_boundaries", {}),
            config=doc.get("config", {}),
            seed=doc.get("seed"),
        )

    def net_at(self, name):
        return TwoLayerNet.from_dict(self.checkpoints[name]["net"])


# ---------------------------------------------------------------------------
# single-step building blocks

def _mask(S, d):
    m = np.zeros(d, dtype=bool)
    if isinstance(S, np.ndarray) and S.dtype == bool:
        return S.copy()
    m[list(S)] = True
    return m


def spherical_grad(w, S, g_full, tol=1e-9):
    """g - S(w) <S(w), g>, where S(w) zeroes coordinates outside ``S``."""
    w = np.asarray(w, dtype=float)
    g = np.asarray(g_full, dtype=float)
    sw = np.where(_mask(S, w.size), w, 0.0)
    if abs(np.linalg.norm(sw) - 1.0) > tol:
        raise ValueError(f"w restricted to S must have unit norm, got {np.linalg.norm(sw):.12g}")
    return g - sw * np.dot(sw, g)


def project_step(w_tilde, in_s, r, Delta):
    """Shrink the small set, clamp the large coordinates, renormalize the
    small ones. Returns ``(w_next, in_s_next)``."""
    wt = np.array(w_tilde, dtype=float)
    s = _mask(in_s, wt.size) & (np.abs(wt) < r)
    out = ~s
    wt[out] = np.clip(wt[out], -Delta, Delta)
    if s.any():
        norm = np.linalg.norm(wt[s])
        if norm == 0.0:
            raise TrainingError("small coordinates collapsed to zero norm")
        wt[s] /= norm
    return wt, s


def phase1_step(net, sample, cfg, state, act=None, eta=None, step=0):
    """One projected SGD step on every first-layer row; returns
    ``(net', state', events)`` with events as (step, neuron, coordinate)."""
    act = act or make_shifted_sigmoid()
    x, y = sample
    W = np.array(net.W)
    st = state.copy()
    before = st.in_s.copy()
    status, _, j = kernels.phase1_block(
        W, net.a, net.b, st.in_s, st.leave_step, st.clamp_step,
        np.asarray(x, dtype=float)[None, :], np.array([float(y)]),
        cfg.eta1 if eta is None else eta, cfg.r, cfg.Delta,
        act.kind, act.param, step, kernels.NO_RECORD)
    if status != kernels.OK:
        raise TrainingError(f"degenerate projection for neuron {j} at step {step + 1}")
    events = [(step + 1, int(jj), int(ii)) for jj, ii in zip(*np.nonzero(before & ~st.in_s))]
    return net.replace(W=W), st, events


def phase2_step(net, sample, cfg, act=None):
    act = act or make_shifted_sigmoid()
    x, y = sample
    a = np.array(net.a)
    kernels.phase2_block(net.W, a, net.b, np.asarray(x, dtype=float)[None, :],
                         np.array([float(y)]), cfg.eta2, cfg.lambda_a, act.kind, act.param)
    return net.replace(a=a)


# ---------------------------------------------------------------------------
# hyperparameter helpers

def theory_hyperparams(d, D, kappa, c0=1.0, c1=1.0):
    """(T1, eta1) = (c0 d^(D-1) log(d)^c0, 1 / (c1 kappa d^(D/2) log(d)^c1))."""
    L = math.log(d)
    T1 = int(math.ceil(c0 * d ** (D - 1) * L ** c0))
    eta1 = 1.0 / (c1 * kappa * d ** (D / 2.0) * L ** c1)
    return T1, eta1


def adaptive_schedule(d, leaps, kappa, c0=1.0, c1=1.0):
    """Per-level (steps, eta) from the cumulative boundaries
    T_l = c0 d^(D_l-1) log(d)^c0 and eta_l = 1/(c1 kappa d^(D_l/2) log(d)^c1).
    A boundary that does not grow past the previous one (non-increasing
    leaps) gets a fresh window of length T_l instead."""
    out = []
    prev = 0
    for D in leaps:
        T, eta = theory_hyperparams(d, D, kappa, c0, c1)
        n = T - prev if T > prev else T
        out.append((n, eta))
        prev = max(prev, T)
    return tuple(out)


def log_schedule(T, per_decade=50, cap=200, start=0):
    """Step indices 0..T, log-spaced (at most ``cap`` per decade), always
    including 0 and T. ``start`` offsets every index."""
    per_decade = min(per_decade, cap)
    pts = {0, T}
    if T >= 1:
        n = int(math.ceil(math.log10(T) * per_decade)) + 1
        pts.update(int(round(v)) for v in np.logspace(0, math.log10(T), max(n, 2)))
    return sorted(start + p for p in pts if 0 <= p <= T)


def default_groups(target, d):
    """Coordinate groups for support statistics: one per leap step (the
    coordinates first introduced at that step) plus everything else."""
    from .leap import leap
    res = leap(target.poly)
    groups = {}
    covered = set()
    for n, ti in enumerate(res.ordering, 1):
        mono = target.poly.terms[ti][0]
        new = [target.support[i] for i in mono.support if target.support[i] not in covered]
        covered.update(new)
        if new:
            groups[f"level{n}"] = tuple(sorted(new))
    groups["off_support"] = tuple(i for i in range(d) if i not in covered)
    return groups


# ---------------------------------------------------------------------------
# drivers

class _Recorder:
    def __init__(self, target, act, eval_set, groups, trace):
        self.act = act
        self.X, self.fX = eval_set
        self.groups = {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}
        self.trace = trace
        trace.groups = {k: tuple(int(i) for i in v) for k, v in groups.items()}
        trace.support_stats = {k: [] for k in groups}

    def log(self, step, net):
        risk, se = risk_on(net, self.X, self.fX, self.act)
        self.trace.risk_series.append((int(step), risk, se))
        A = np.abs(net.W)
        for k, idx in self.groups.items():
            if idx.size:
                sub = A[:, idx]
                row = (int(step), float(sub.min()), float(sub.max()), float(sub.mean()))
            else:
                row = (int(step), 0.0, 0.0, 0.0)
            self.trace.support_stats[k].append(row)


def _eval_set(target, eval_set, eval_size, rng):
    if eval_set is not None:
        X = np.asarray(eval_set[0], dtype=float)
        return X, target.f_star(X) if len(eval_set) < 2 else np.asarray(eval_set[1], dtype=float)
    X = target.sample_x(rng, eval_size)
    return X, target.f_star(X)


def _draw(target, rng, noise_rng, noise_std, n):
    X = target.sample_x(rng, n)
    y = target.f_star(X)
    if noise_std > 0:
        y = y + noise_std * noise_rng.standard_normal(n)
    return X, y


def _check_finite(W, a, step):
    if not (np.isfinite(W).all() and np.isfinite(a).all()):
        raise TrainingError(f"non-finite parameters after step {step}")


def _stops(start, end, marks, max_block):
    """Block boundaries in (start, end]: every mark plus chunks of max_block."""
    cuts = {end} if end > start else set()
    cuts.update(m for m in marks if start < m < end)
    out = []
    cur = start
    for c in sorted(cuts):
        while c - cur > max_block:
            cur += max_block
            out.append(cur)
        out.append(c)
        cur = c
    return out


def run_algorithm1(target, net0, cfg1, cfg2, eval_schedule=None, rng=None, *, act=None,
                   eval_set=None, eval_size=50_000, noise_std=0.0, noise_rng=None,
                   groups=None, checkpoint_steps=(), callback=None, seed=None, config=None):
    """Phase 1 (T1 projected spherical SGD steps on W) then phase 2 (T2 ridge
    SGD steps on a), one fresh sample per step.

    The held-out evaluation set is drawn from ``rng`` before training unless
    ``eval_set`` is given. ``callback(step, W_before, in_s_before, update,
    W, in_s)`` is invoked after every phase-1 step when given; ``update`` is
    eta * (spherical gradient) before projection and ``W``, ``in_s`` are the
    live post-step arrays (do not modify).
    """
    act = act or make_shifted_sigmoid()
    if rng is None:
        raise ValueError("an rng is required")
    noise_rng = noise_rng if noise_rng is not None else rng
    T1, T2 = cfg1.T1, cfg2.T2
    T = T1 + T2
    if eval_schedule is None:
        eval_schedule = sorted(set(log_schedule(T1)) | set(log_schedule(T2, start=T1)))
    evals = sorted({int(s) for s in eval_schedule if 0 <= s <= T} | {0, T1, T})
    ck_names = {}
    for s_ in sorted({int(s_) for s_ in checkpoint_steps if 0 <= s_ <= T}):
        ck_names.setdefault(s_, []).append(f"step{s_}")
    for s_, name in ((0, "init"), (T1, "phase1_end"), (T, "final")):
        ck_names.setdefault(s_, []).append(name)

    trace = TrainingTrace(seed=seed, config=config or {
        "mode": "algorithm1", "phase1": cfg1.to_dict(), "phase2": cfg2.to_dict(),
        "activation": act.to_dict(), "M": net0.M, "d": net0.d})
    trace.phase_boundaries = {"phase1_start": 0, "phase1_end": T1, "phase2_end": T}
    groups = groups if groups is not None else default_groups(target, net0.d)
    rec = _Recorder(target, act, _eval_set(target, eval_set, eval_size, rng), groups, trace)

    W = np.array(net0.W)
    a = np.array(net0.a)
    b = np.array(net0.b)
    state = ProjectionState.initial(net0.M, net0.d)
    eval_set_ = set(evals)

    def snapshot(step):
        net = TwoLayerNet(a, b, W)
        if step in eval_set_:
            rec.log(step, net)
        for name in ck_names.get(step, []):
            trace.checkpoints[name] = {"step": step, "net": net.to_dict()}

    snapshot(0)
    max_block = 1 if callback else max(1, MAX_BLOCK_ROWS // net0.d)
    marks = set(evals) | set(ck_names)
    step = 0
    for seg_steps, eta in cfg1.segments():
        seg_end = step + seg_steps
        for stop in _stops(step, seg_end, marks, max_block):
            X, y = _draw(target, rng, noise_rng, noise_std, stop - step)
            before = state.in_s.copy()
            if callback:
                upd = np.empty_like(W)
                W_before = W.copy()
            else:
                upd = kernels.NO_RECORD
            status, bad_step, j = kernels.phase1_block(
                W, a, b, state.in_s, state.leave_step, state.clamp_step, X, y,
                eta, cfg1.r, cfg1.Delta, act.kind, act.param, step, upd)
            if status != kernels.OK:
                raise TrainingError(f"degenerate projection for neuron {j} at step {bad_step}")
            _check_finite(W, a, stop)
            if callback:
                callback(stop, W_before, before, upd, W, state.in_s)
            step = stop
            snapshot(step)

    left = np.argwhere(state.leave_step >= 0)
    trace.projection_events = sorted(
        (int(state.leave_step[j, i]), int(j), int(i)) for j, i in left)
    clamped = np.argwhere(state.clamp_step >= 0)
    trace.clamp_events = sorted(
        (int(state.clamp_step[j, i]), int(j), int(i)) for j, i in clamped)

    for stop in _stops(T1, T, marks, max(1, MAX_BLOCK_ROWS // net0.d)):
        X, y = _draw(target, rng, noise_rng, noise_std, stop - step)
        kernels.phase2_block(W, a, b, X, y, cfg2.eta2, cfg2.lambda_a, act.kind, act.param)
        _check_finite(W, a, stop)
        step = stop
        snapshot(step)
    trace.final_state = state
    return trace


def run_vanilla_sgd(target, net0, eta, T, batch=1, eval_schedule=None, rng=None, *, act=None,
                    eval_set=None, eval_size=50_000, noise_std=0.0, noise_rng=None,
                    groups=None, checkpoint_steps=(), seed=None, config=None, eta_a=None):
    """Joint constant-step SGD on (a, W) with mini-batch averaging; biases
    stay fixed and nothing is projected.

    ``eta_a`` (default ``eta``) is the second-layer step. ``eta_a = eta / M**2``
    with a ~ 1/M reproduces mean-field training of (1/M) sum_j a_j sigma.
    """
    eta_a = eta if eta_a is None else eta_a
    act = act or make_shifted_sigmoid()
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if not (math.isfinite(eta) and math.isfinite(eta_a)):
        raise ValueError("step sizes must be finite")
    if rng is None:
        raise ValueError("an rng is required")
    noise_rng = noise_rng if noise_rng is not None else rng
    evals = sorted({int(s) for s in (eval_schedule if eval_schedule is not None else log_schedule(T))
                    if 0 <= s <= T} | {0, T})
    trace = TrainingTrace(seed=seed, config=config or {
        "mode": "vanilla", "eta": eta, "eta_a": eta_a, "T": T, "batch": batch,
        "activation": act.to_dict(), "M": net0.M, "d": net0.d})
    trace.phase_boundaries = {"start": 0, "end": T}
    groups = groups if groups is not None else default_groups(target, net0.d)
    rec = _Recorder(target, act, _eval_set(target, eval_set, eval_size, rng), groups, trace)
    ck = {int(s) for s in checkpoint_steps if 0 <= s <= T}

    W = np.array(net0.W)
    a = np.array(net0.a)
    b = np.array(net0.b)

    def snapshot(step):
        net = TwoLayerNet(a, b, W)
        if step in evals:
            rec.log(step, net)
        if step in ck:
            trace.checkpoints[f"step{step}"] = {"step": step, "net": net.to_dict()}
        if step == 0:
            trace.checkpoints["init"] = {"step": 0, "net": net.to_dict()}
        if step == T:
            trace.checkpoints["final"] = {"step": T, "net": net.to_dict()}

    snapshot(0)
    step = 0
    max_block = max(1, MAX_BLOCK_ROWS // (net0.d * batch))
    # mini-batches are matrix products; BLAS beats the scalar loops there
    block = kernels.vanilla_block if batch < BLAS_BATCH else kernels.vanilla_block_blas
    for stop in _stops(0, T, set(evals) | ck, max_block):
        X, y = _draw(target, rng, noise_rng, noise_std, (stop - step) * batch)
        block(W, a, b, X, y, float(eta), float(eta_a), int(batch), act.kind, act.param)
        _check_finite(W, a, stop)
        step = stop
        snapshot(step)
    return trace
