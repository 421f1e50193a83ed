"""Closed-form population gradients of the correlation flow, their
Monte-Carlo counterparts and a few numerical property checks.

Notation: for a Gaussian monomial prod_i He_{k_i}(x_i) with total degree D,
chi(w) = prod_i w_i^{k_i} and E_n = E_G[sigma^(n)(||w|| G + b)]. The drift of
coordinate i under the update a0 * y * sigma'(<w, x> + b) * x, followed by
the spherical projection on the small set S, is

    i in supp, i in S :  a0 chi/w_i (k_i - w_i^2 K_S) E_D
    i in supp, i not S:  a0 chi/w_i (k_i E_D + w_i^2 E_{D+2})
    i off supp, i in S:  -a0 w_i chi K_S E_D
    i off supp, not S :  a0 w_i chi E_{D+2}

with K_S the exponent mass on S. The first and third lines assume
||w restricted to S|| = 1.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .activations import DEFAULT_NODES, expected_derivative
from .polynomial import BasisKind, EmbeddedTarget, SparsePolynomial
from .trainer import _mask

NORM_TOL = 1e-9


class OracleDomainError(ValueError):
    pass


@dataclass
class PopGradResult:
    drift: np.ndarray
    decomposition: dict = field(default_factory=dict)  # label -> (d,) contribution
    kappa_tilde: float = 0.0  # interaction band half-width, |a0| * kappa_tilde

    @property
    def band(self):
        return self.kappa_tilde


def _chi_over(w, k, i):
    # prod_{j != i} w_j^{k_j} * w_i^{k_i - 1}, no division
    out = 1.0
    for j, kj in enumerate(k):
        if kj:
            out *= w[j] ** (kj - 1 if j == i else kj)
    return out


def _level_drift(w, in_s, k, act, b, nodes):
    """Per-coordinate drift of one monomial (exponents ``k`` on the first
    len(k) coordinates), without the a0 factor."""
    d = w.size
    D = int(sum(k))
    scale = float(np.linalg.norm(w))
    e_d = expected_derivative(act, D, scale, b, nodes)
    e_d2 = expected_derivative(act, D + 2, scale, b, nodes)
    chi = 1.0
    for j, kj in enumerate(k):
        if kj:
            chi *= w[j] ** kj
    k_s = sum(kj for j, kj in enumerate(k) if in_s[j])
    out = np.empty(d)
    for i in range(d):
        ki = k[i] if i < len(k) else 0
        if ki:
            co = _chi_over(w, k, i)
            if in_s[i]:
                out[i] = co * (ki - w[i] * w[i] * k_s) * e_d
            else:
                out[i] = co * (ki * e_d + w[i] * w[i] * e_d2)
        elif in_s[i]:
            out[i] = -w[i] * chi * k_s * e_d
        else:
            out[i] = w[i] * chi * e_d2
    return out


def _check_w(w, in_s):
    nrm = float(np.linalg.norm(np.where(in_s, w, 0.0)))
    if in_s.any() and abs(nrm - 1.0) > NORM_TOL:
        raise OracleDomainError(f"w restricted to S must have unit norm, got {nrm:.12g}")


def _interaction_band(kappa, d, K, M, C0):
    return 2.0 * kappa * d * K * K * M * C0


def check_nested(levels):
    """Validate nested exponent vectors: each level's support strictly
    contains the previous one and agrees with it there."""
    prev = None
    for k in levels:
        if not any(k):
            raise OracleDomainError("empty monomial")
        if prev is not None:
            sp = {i for i, e in enumerate(prev) if e}
            sk = {i for i, e in enumerate(k) if e}
            if not sp < sk or any(k[i] != prev[i] for i in sp):
                raise OracleDomainError("levels are not nested monomials")
        prev = k


def pop_grad_nested(w, S, levels, act, a0, b=0.0, coeffs=None, nodes=DEFAULT_NODES,
                    kappa=0.0, M=1, C0=1.0):
    """Drift for h = sum_l c_l prod_i He_{k_{l,i}}(x_i) with nested levels.

    ``levels`` lists full exponent vectors (one per level, indexed from the
    first coordinate). Each level's contribution is reported under
    ``"level<l>"``.
    """
    w = np.asarray(w, dtype=float)
    in_s = _mask(S, w.size)
    levels = [tuple(int(e) for e in k) for k in levels]
    if not levels:
        raise OracleDomainError("need at least one level")
    check_nested(levels)
    if max(len(k) for k in levels) > w.size:
        raise OracleDomainError("monomial longer than w")
    coeffs = [1.0] * len(levels) if coeffs is None else [float(c) for c in coeffs]
    _check_w(w, in_s)
    need = max(sum(k) for k in levels) + 2
    K = act.bound_K(need)
    acc = np.zeros(w.size)
    parts = {}
    for n, (k, c) in enumerate(zip(levels, coeffs), 1):
        part = a0 * (c * _level_drift(w, in_s, k, act, b, nodes))
        parts[f"level{n}"] = part
        acc = acc + part
    return PopGradResult(acc, parts, _interaction_band(kappa, w.size, K, M, C0))


def pop_grad_single(w, S, exponents, act, a0, b=0.0, coeff=1.0, nodes=DEFAULT_NODES,
                    kappa=0.0, M=1, C0=1.0):
    """Drift for a single monomial coeff * prod_i He_{k_i}(x_i), D >= 2.

    ``decomposition`` holds the on-support and off-support pieces."""
    k = tuple(int(e) for e in exponents)
    if sum(k) < 2:
        raise OracleDomainError("closed form needs total degree >= 2")
    res = pop_grad_nested(w, S, [k], act, a0, b, [coeff], nodes, kappa, M, C0)
    on = np.zeros(res.drift.size, dtype=bool)
    on[[i for i, e in enumerate(k) if e]] = True
    res.decomposition = {
        "on_support": np.where(on, res.drift, 0.0),
        "off_support": np.where(on, 0.0, res.drift),
    }
    return res


def as_nested(h):
    """Exponent levels and coefficients of a nested Gaussian polynomial,
    ordered by degree."""
    if h.basis is not BasisKind.GAUSSIAN:
        raise OracleDomainError("closed forms are for the Gaussian basis")
    terms = sorted(h.nonzero_terms(), key=lambda t: t[0].degree)
    levels = [m.exponents for m, _ in terms]
    check_nested(levels)
    return levels, [c for _, c in terms]


def mc_pop_grad(w, S, target, act, a0, b=0.0, N=1_000_000, rng=None, chunk=1 << 16):
    """Monte-Carlo mean and standard error of
    a0 * y * sigma'(<w, x> + b) * x, projected off S(w)."""
    if N < 100:
        raise ValueError("N must be at least 100")
    w = np.asarray(w, dtype=float)
    d = w.size
    sw = np.where(_mask(S, d), w, 0.0)
    dsig = act.derivative(1)
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    done = 0
    while done < N:
        n = min(chunk, N - done)
        X = target.sample_x(rng, n)
        y = target.f_star(X)
        g = (a0 * y * dsig(X @ w + b))[:, None] * X
        g -= (g @ sw)[:, None] * sw[None, :]
        s1 += g.sum(axis=0)
        s2 += (g * g).sum(axis=0)
        done += n
    mean = s1 / N
    var = np.maximum(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return mean, np.sqrt(var / N)


# ---------------------------------------------------------------------------
# drift / martingale split

@dataclass
class DriftMartingaleSplit:
    drift_part: np.ndarray  # (T, d)
    martingale_increment: np.ndarray  # (T, d)
    cum_drift: np.ndarray
    cum_martingale: np.ndarray
    running_max: np.ndarray  # (T, d): max_{s <= t} |cum_martingale_s|


def _exact_split(u, dr):
    """(drift, residual) with drift + residual == u bitwise where float64
    allows it.

    The residual is corrected first. If its grid is too coarse to land on
    u, the drift is replaced by u - residual, an absolute change of about
    one ulp of u. Heavy cancellation (|drift| and |residual| both far above
    |u|) can leave no representable pair; those entries stay within an ulp.
    """
    m = u - dr
    for _ in range(4):
        s = dr + m
        bad = s != u
        if not bad.any():
            return dr, m
        # u - s is exact here (Sterbenz); fall back to one ulp when it is lost
        m2 = m + np.where(bad, u - s, 0.0)
        m = np.where(bad & (m2 == m), np.nextafter(m, np.where(s < u, np.inf, -np.inf)), m2)
    bad = dr + m != u
    dr2 = u - m
    return np.where(bad & (dr2 + m == u), dr2, dr), m


def drift_martingale_split(updates, states, pop_grad_fn):
    """Split each realized update into ``pop_grad_fn(state)`` plus a residual.

    ``updates`` is (T, d); ``states`` has T entries, each passed to
    ``pop_grad_fn`` unchanged.
    """
    U = np.asarray(updates, dtype=float)
    if U.ndim != 2 or len(states) != U.shape[0]:
        raise ValueError(f"{len(states)} states for {U.shape[0] if U.ndim else 0} updates")
    D = np.array([np.asarray(pop_grad_fn(s), dtype=float) for s in states]).reshape(U.shape)
    D, Mart = _exact_split(U, D)
    cum_m = np.cumsum(Mart, axis=0)
    return DriftMartingaleSplit(D, Mart, np.cumsum(D, axis=0), cum_m,
                                np.maximum.accumulate(np.abs(cum_m), axis=0))


def phase1_martingale_run(d=64, M=8, seed=0, exponents=(2,), act=None, c0=1.0, c1=1.0,
                          kappa=None, T=None):
    """Run phase 1 with per-step update recording and split every neuron's
    updates against the closed-form drift. Returns the max over neurons and
    steps of the cumulative martingale on off-support coordinates, together
    with the per-neuron splits."""
    from .activations import make_shifted_sigmoid
    from .network import init_net
    from .polynomial import Monomial
    from .rng import INIT, TRAIN_X, stream
    from .trainer import Phase1Config, Phase2Config, run_algorithm1, theory_hyperparams

    act = act or make_shifted_sigmoid()
    k = tuple(exponents)
    D = sum(k)
    kappa = 1.0 / (M * d) if kappa is None else kappa
    T1, eta = theory_hyperparams(d, D, kappa, c0, c1)
    T1 = T1 if T is None else T
    poly = SparsePolynomial(BasisKind.GAUSSIAN, len(k), ((Monomial(k), 1.0),))
    target = EmbeddedTarget(poly, d)
    net = init_net(M, d, kappa, 0.0, stream(seed, INIT))
    rec = []

    def cb(step, W_before, in_s, upd, *_):
        rec.append((W_before, in_s, upd.copy()))

    run_algorithm1(target, net, Phase1Config(eta, T1), Phase2Config(1.0, 0),
                   rng=stream(seed, TRAIN_X), act=act, eval_size=16, callback=cb)
    splits = []
    worst = 0.0
    off = np.ones(d, dtype=bool)
    off[:len(k)] = False
    for j in range(M):
        states = [(Wb[j], s[j]) for Wb, s, _ in rec]
        U = np.array([u[j] for _, _, u in rec])
        fn = lambda st, j=j: eta * pop_grad_single(st[0], st[1], k, act, net.a[j]).drift
        sp = drift_martingale_split(U, states, fn)
        splits.append(sp)
        if len(rec):
            worst = max(worst, float(sp.running_max[-1][off].max()))
    return worst, splits


# ---------------------------------------------------------------------------
# property checks

@dataclass
class SequenceReport:
    k: int
    steps_checked: int
    violations: list
    horizon_reached: bool

    @property
    def ok(self):
        return not self.violations


def sequence_bounds_check(a0, a1, b0, b1, k, T, Delta, rng=None, n_random=3, rtol=1e-12,
                          overflow=1e150):
    """Simulate the extremal recursions v (b0, b1), w (a0, a1) and, when an
    rng is given, ``n_random`` sequences drawn uniformly between the two
    sides of the recursive inequality; check them against the closed-form
    bounds at every step."""
    if not (0 < a0 <= b0 and 0 < a1 <= b1) or k < 2 or int(k) != k:
        raise ValueError("need 0 < a0 <= b0, 0 < a1 <= b1 and integer k >= 2")
    k = int(k)
    seqs = [("upper", None), ("lower", None)]
    seqs += [(f"random{n}", n) for n in range(n_random if rng is not None else 0)]
    sums = {name: 0.0 for name, _ in seqs}
    alive = {name: True for name, _ in seqs}
    violations = []
    horizon = False
    t_done = 0
    for t in range(T + 1):
        if k == 2:
            lo = a0 * (1.0 + a1) ** t
            hi = b0 * (1.0 + b1) ** t
        else:
            den_hi = b0 ** -(k - 2) - (k - 2) * b1 * t
            hi = den_hi ** (-1.0 / (k - 2)) if den_hi > 0 else math.inf
            den_lo = a0 ** -(k - 2) - (k - 2) / (1.0 + a1 * Delta ** (k - 2)) ** (k - 1) * a1 * t
            lo = min(Delta, den_lo ** (-1.0 / (k - 2))) if den_lo > 0 else Delta
        for name, n in seqs:
            if not alive[name]:
                continue
            s = sums[name]
            lo_rec = a0 + a1 * s
            hi_rec = b0 + b1 * s
            if name == "upper":
                u = hi_rec
            elif name == "lower":
                u = lo_rec
            else:
                u = lo_rec + (hi_rec - lo_rec) * rng.random()
            if not math.isfinite(u) or u > overflow:
                alive[name] = False
                horizon = True
                continue
            # the running sum picks up one rounding per step
            tol = max(rtol, 8 * np.finfo(float).eps * (t + 1))
            if u < lo * (1 - tol) or u > hi * (1 + tol):
                violations.append({"t": t, "sequence": name, "u": u, "lower": lo, "upper": hi})
            try:
                sums[name] = s + u ** (k - 1)
            except OverflowError:
                alive[name] = False
                horizon = True
        if not any(alive.values()):
            break
        t_done = t
    return SequenceReport(k, t_done, violations, horizon)


def correlation_bound_check(w, P, act, N=1_000_000, rng=None, K=None, nodes=DEFAULT_NODES,
                            chunk=1 << 16):
    """Check |E[sigma(<w, x>) x_1 ... x_P]| <= K prod_{i<=P} |w_i| for Gaussian
    x, by Monte Carlo and by the exact value prod w_i E[sigma^(P)(||w|| G)]."""
    w = np.asarray(w, dtype=float)
    d = w.size
    K = act.bound_K(P) if K is None else K
    prod = float(np.prod(w[:P]))
    exact = prod * expected_derivative(act, P, float(np.linalg.norm(w)), 0.0, nodes)
    s1 = s2 = 0.0
    done = 0
    while done < N:
        n = min(chunk, N - done)
        X = rng.standard_normal((n, d))
        v = act(X @ w) * np.prod(X[:, :P], axis=1)
        s1 += float(v.sum())
        s2 += float((v * v).sum())
        done += n
    mean = s1 / N
    se = math.sqrt(max(s2 / N - mean * mean, 0.0) / (N - 1))
    bound = K * abs(prod)
    return {
        "mc": mean, "se": se, "exact": exact, "bound": bound, "K": K,
        "bound_holds": abs(mean) <= bound + 4 * se and abs(exact) <= bound,
        "identity_holds": abs(mean - exact) <= 4 * se,
    }


# ---------------------------------------------------------------------------
# corpus

def random_single_config(rng, d=30, max_P=4, max_degree=4, Delta=0.4, r=0.2):
    """A random single-monomial drift configuration: exponents, small set
    S (a few coordinates removed), and w unit on S with large entries off S."""
    while True:
        P = int(rng.integers(1, max_P + 1))
        k = rng.integers(0, max_degree + 1, size=P)
        if k[-1] == 0:
            k[-1] = 1
        if 2 <= k.sum() <= max_degree:
            break
    in_s = np.ones(d, dtype=bool)
    n_out = int(rng.integers(0, 4))
    in_s[rng.choice(d, size=n_out, replace=False)] = False
    w = rng.standard_normal(d)
    # push the support up so the drift is not lost in the noise
    w[:P] += np.sign(w[:P]) * 2.0
    w[in_s] /= np.linalg.norm(w[in_s])
    out = ~in_s
    w[out] = np.sign(w[out]) * rng.uniform(r, Delta, size=out.sum())
    a0 = float(rng.choice([-1.0, 1.0]))
    return tuple(int(e) for e in k), in_s, w, a0


def _gauss_target(k, d):
    from .polynomial import Monomial
    poly = SparsePolynomial(BasisKind.GAUSSIAN, len(k), ((Monomial(k), 1.0),))
    return EmbeddedTarget(poly, d)


def check_single_vs_mc(seed=0, n_configs=20, N=2_000_000, d=30, act=None, z=4.0):
    from .activations import make_shifted_sigmoid
    from .rng import MC, stream
    act = act or make_shifted_sigmoid()
    rng = stream(seed, MC, 0)
    rows = []
    for c in range(n_configs):
        k, in_s, w, a0 = random_single_config(rng, d)
        exact = pop_grad_single(w, in_s, k, act, a0).drift
        mc, se = mc_pop_grad(w, in_s, _gauss_target(k, d), act, a0, 0.0, N, stream(seed, MC, 1, c))
        zs = np.abs(mc - exact) / np.maximum(se, 1e-300)
        rows.append({"exponents": list(k), "max_z": float(zs.max()),
                     "n_coords_over": int((zs > z).sum())})
    return {"name": "closed_form_vs_mc", "passed": all(r["n_coords_over"] == 0 for r in rows),
            "configs": rows}


def check_nested_reduces(seed=0, n_configs=20, d=30, act=None):
    from .activations import make_shifted_sigmoid
    from .rng import MC, stream
    act = act or make_shifted_sigmoid()
    rng = stream(seed, MC, 2)
    ok = True
    for _ in range(n_configs):
        k, in_s, w, a0 = random_single_config(rng, d)
        single = pop_grad_single(w, in_s, k, act, a0).drift
        nested = pop_grad_nested(w, in_s, [k], act, a0).drift
        ok &= bool(np.array_equal(single, nested))
    return {"name": "nested_single_level_bitwise", "passed": ok, "configs": n_configs}


def check_sign_law(seed=0, n_draws=200, d=30, act=None):
    from .activations import hermite_coeffs, make_shifted_sigmoid
    from .rng import MC, stream
    act = act or make_shifted_sigmoid()
    rng = stream(seed, MC, 3)
    mu = hermite_coeffs(act, 8).mu
    checked = bad = 0
    for _ in range(n_draws):
        P = int(rng.integers(1, 4))
        k = rng.integers(1, 3, size=P)
        D = int(k.sum())
        if D < 2:
            continue
        w = rng.standard_normal(d)
        w[:P] = np.sign(w[:P]) * rng.uniform(0.05, math.sqrt(1.0 / (2 * D)), size=P)
        rest = np.sqrt(1.0 - np.sum(w[:P] ** 2))
        w[P:] *= rest / np.linalg.norm(w[P:])
        a0 = float(rng.choice([-1.0, 1.0]))
        if a0 * mu[D] * np.prod(np.sign(w[:P]) ** k) <= 0:
            continue
        drift = pop_grad_single(w, np.ones(d, dtype=bool), tuple(k), act, a0).drift
        for i in range(P):
            if k[i] - w[i] ** 2 * D > 0:
                checked += 1
                bad += int(np.sign(drift[i]) != np.sign(w[i]))
    # the drift carries E[sigma^(D)(||w|| G)] rather than mu_D; both agree
    # at ||w|| = 1
    return {"name": "sign_law", "passed": bad == 0, "checked": checked, "violations": bad}


def check_sequences(seed=0, n_draws=100, T=10_000):
    from .rng import MC, stream
    rng = stream(seed, MC, 4)
    viol = 0
    horizon = 0
    for _ in range(n_draws):
        k = int(rng.integers(2, 6))
        a0 = float(rng.uniform(0.01, 0.2))
        b0 = a0 * float(rng.uniform(1.0, 2.0))
        a1 = float(rng.uniform(1e-4, 0.05))
        b1 = a1 * float(rng.uniform(1.0, 2.0))
        Delta = float(rng.uniform(0.1, 2.0))
        rep = sequence_bounds_check(a0, a1, b0, b1, k, T, Delta, rng=rng)
        viol += len(rep.violations)
        horizon += int(rep.horizon_reached)
    return {"name": "sequence_bounds", "passed": viol == 0, "draws": n_draws,
            "violations": viol, "horizon_reached": horizon}


def check_correlation(seed=0, n_draws=20, N=1_000_000, d=10, act=None):
    from .activations import make_shifted_sigmoid
    from .rng import MC, stream
    act = act or make_shifted_sigmoid()
    rng = stream(seed, MC, 5)
    rows = []
    for n in range(n_draws):
        P = int(rng.integers(1, 4))
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        rows.append(correlation_bound_check(w, P, act, N, stream(seed, MC, 6, n)))
    return {"name": "correlation_bound",
            "passed": all(r["bound_holds"] and r["identity_holds"] for r in rows),
            "draws": [{k: v for k, v in r.items()} for r in rows]}


def run_oracle_corpus(seed=0, quick=False):
    """Every cross-check; ``quick`` shrinks Monte-Carlo sizes."""
    N = 200_000 if quick else 2_000_000
    checks = [
        check_single_vs_mc(seed, n_configs=5 if quick else 20, N=N),
        check_nested_reduces(seed),
        check_sign_law(seed),
        check_sequences(seed, n_draws=20 if quick else 100, T=2000 if quick else 10_000),
        check_correlation(seed, n_draws=5 if quick else 20, N=N // 2),
    ]
    return {"seed": seed, "passed": all(c["passed"] for c in checks), "checks": checks}
