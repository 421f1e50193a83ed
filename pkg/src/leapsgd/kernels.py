"""Inner SGD loops.

Every kernel exists twice: a scalar-loop version compiled with numba and a
vectorized numpy twin. ``LEAPSGD_DISABLE_NUMBA=1`` selects the numpy twins
(see ``_accel``). Both mutate their array arguments in place and process a
block of consecutive online steps, one sample (or mini-batch) per step.

Activation kinds: 0 shifted sigmoid (param = shift), 1 identity,
2 square (param = scale), 3 Hermite He_k (param = k).
"""
import math

import numpy as np

from ._accel import NUMBA_ENABLED, njit

OK = 0
DEGENERATE = 1


@njit
def act(z, kind, p):
    if kind == 0:
        u = z - p
        if u >= 0.0:
            return 1.0 / (1.0 + math.exp(-u))
        e = math.exp(u)
        return e / (1.0 + e)
    if kind == 1:
        return z
    if kind == 2:
        return p * z * z
    k = int(p)
    if k == 0:
        return 1.0
    prev = 1.0
    cur = z
    for n in range(1, k):
        nxt = z * cur - n * prev
        prev = cur
        cur = nxt
    return cur


@njit
def dact(z, kind, p):
    if kind == 0:
        s = act(z, 0, p)
        return s * (1.0 - s)
    if kind == 1:
        return 1.0
    if kind == 2:
        return 2.0 * p * z
    k = int(p)
    if k == 0:
        return 0.0
    # He_k' = k He_{k-1}
    return k * act(z, 3, k - 1.0)


def act_np(z, kind, p):
    z = np.asarray(z, dtype=float)
    if kind == 0:
        u = z - p
        e = np.exp(-np.abs(u))
        return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if kind == 1:
        return z.copy()
    if kind == 2:
        return p * z * z
    k = int(p)
    prev = np.ones_like(z)
    if k == 0:
        return prev
    cur = z.copy()
    for n in range(1, k):
        prev, cur = cur, z * cur - n * prev
    return cur


def dact_np(z, kind, p):
    z = np.asarray(z, dtype=float)
    if kind == 0:
        s = act_np(z, 0, p)
        return s * (1.0 - s)
    if kind == 1:
        return np.ones_like(z)
    if kind == 2:
        return 2.0 * p * z
    k = int(p)
    if k == 0:
        return np.zeros_like(z)
    return k * act_np(z, 3, k - 1)


# ---------------------------------------------------------------------------
# first layer, projected spherical SGD

@njit
def _phase1_block_nb(W, a, b, in_s, leave_step, clamp_step, X, Y, eta, r, delta,
                     kind, p, step0, upd):
    M, d = W.shape
    pre = np.empty(M)
    record = upd.shape[0] == M
    for t in range(X.shape[0]):
        x = X[t]
        yhat = 0.0
        for j in range(M):
            s = b[j]
            for i in range(d):
                s += W[j, i] * x[i]
            pre[j] = s
            yhat += a[j] * act(s, kind, p)
        res = Y[t] - yhat
        step = step0 + t + 1
        for j in range(M):
            coef = res * a[j] * dact(pre[j], kind, p)
            sx = 0.0
            for i in range(d):
                if in_s[j, i]:
                    sx += W[j, i] * x[i]
            inner = coef * sx
            norm2 = 0.0
            n_in = 0
            for i in range(d):
                w = W[j, i]
                if in_s[j, i]:
                    wt = w + eta * (coef * x[i] - w * inner)
                else:
                    wt = w + eta * coef * x[i]
                if record:
                    upd[j, i] = wt - w
                if in_s[j, i] and abs(wt) >= r:
                    in_s[j, i] = False
                    leave_step[j, i] = step
                if in_s[j, i]:
                    norm2 += wt * wt
                    n_in += 1
                else:
                    if wt > delta:
                        wt = delta
                        if clamp_step[j, i] < 0:
                            clamp_step[j, i] = step
                    elif wt < -delta:
                        wt = -delta
                        if clamp_step[j, i] < 0:
                            clamp_step[j, i] = step
                W[j, i] = wt
            if n_in > 0:
                if norm2 == 0.0:
                    return DEGENERATE, step, j
                scale = 1.0 / math.sqrt(norm2)
                for i in range(d):
                    if in_s[j, i]:
                        W[j, i] *= scale
    return OK, -1, -1


def _phase1_block_np(W, a, b, in_s, leave_step, clamp_step, X, Y, eta, r, delta,
                     kind, p, step0, upd):
    M, d = W.shape
    record = upd.shape[0] == M
    for t in range(X.shape[0]):
        x = X[t]
        step = step0 + t + 1
        pre = W @ x + b
        res = Y[t] - a @ act_np(pre, kind, p)
        coef = res * a * dact_np(pre, kind, p)
        sw = np.where(in_s, W, 0.0)
        inner = coef * (sw @ x)
        wt = W + eta * (coef[:, None] * x[None, :] - sw * inner[:, None])
        if record:
            upd[:] = wt - W
        leaving = in_s & (np.abs(wt) >= r)
        in_s &= ~leaving
        leave_step[leaving] = step
        out = ~in_s
        over = out & (np.abs(wt) > delta)
        clamp_step[over & (clamp_step < 0)] = step
        wt = np.where(out, np.clip(wt, -delta, delta), wt)
        norm2 = np.sum(np.where(in_s, wt * wt, 0.0), axis=1)
        has = in_s.any(axis=1)
        bad = np.flatnonzero(has & (norm2 == 0.0))
        if bad.size:
            W[:] = wt
            return DEGENERATE, step, int(bad[0])
        scale = np.where(has, 1.0 / np.sqrt(np.where(has, norm2, 1.0)), 1.0)
        W[:] = np.where(in_s, wt * scale[:, None], wt)
    return OK, -1, -1


# ---------------------------------------------------------------------------
# second layer, ridge SGD with frozen features

@njit
def _phase2_block_nb(W, a, b, X, Y, eta, lam, kind, p):
    M, d = W.shape
    phi = np.empty(M)
    for t in range(X.shape[0]):
        x = X[t]
        yhat = 0.0
        for j in range(M):
            s = b[j]
            for i in range(d):
                s += W[j, i] * x[i]
            phi[j] = act(s, kind, p)
            yhat += a[j] * phi[j]
        res = Y[t] - yhat
        for j in range(M):
            a[j] = (1.0 - lam) * a[j] + eta * res * phi[j]


def _phase2_block_np(W, a, b, X, Y, eta, lam, kind, p):
    phi = act_np(X @ W.T + b, kind, p)
    for t in range(X.shape[0]):
        res = Y[t] - phi[t] @ a
        a *= (1.0 - lam)
        a += eta * res * phi[t]


# ---------------------------------------------------------------------------
# joint SGD on (a, W), biases frozen; eta_a is the second-layer step

@njit
def _vanilla_block_nb(W, a, b, X, Y, eta, eta_a, batch, kind, p):
    M, d = W.shape
    steps = X.shape[0] // batch
    pre = np.empty(M)
    ga = np.empty(M)
    coef = np.empty((batch, M))
    for t in range(steps):
        for j in range(M):
            ga[j] = 0.0
        for s_ in range(batch):
            x = X[t * batch + s_]
            yhat = 0.0
            for j in range(M):
                s = b[j]
                for i in range(d):
                    s += W[j, i] * x[i]
                pre[j] = s
                yhat += a[j] * act(s, kind, p)
            res = Y[t * batch + s_] - yhat
            for j in range(M):
                ga[j] += res * act(pre[j], kind, p)
                coef[s_, j] = res * a[j] * dact(pre[j], kind, p)
        scale = eta / batch
        for j in range(M):
            for s_ in range(batch):
                c = scale * coef[s_, j]
                x = X[t * batch + s_]
                for i in range(d):
                    W[j, i] += c * x[i]
            a[j] += (eta_a / batch) * ga[j]


def _vanilla_block_np(W, a, b, X, Y, eta, eta_a, batch, kind, p):
    steps = X.shape[0] // batch
    for t in range(steps):
        Xb = X[t * batch:(t + 1) * batch]
        pre = Xb @ W.T + b
        phi = act_np(pre, kind, p)
        res = Y[t * batch:(t + 1) * batch] - phi @ a
        coef = res[:, None] * a[None, :] * dact_np(pre, kind, p)
        ga = res @ phi
        W += (eta / batch) * (coef.T @ Xb)
        a += (eta_a / batch) * ga


if NUMBA_ENABLED:
    phase1_block = _phase1_block_nb
    phase2_block = _phase2_block_nb
    vanilla_block = _vanilla_block_nb
else:
    phase1_block = _phase1_block_np
    phase2_block = _phase2_block_np
    vanilla_block = _vanilla_block_np

vanilla_block_blas = _vanilla_block_np
NO_RECORD = np.zeros((0, 0))
