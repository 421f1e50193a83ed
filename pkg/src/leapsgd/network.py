"""Two-layer network f(x) = sum_j a_j sigma(<w_j, x> + b_j)."""
import math
from dataclasses import dataclass

import numpy as np

from .activations import make_shifted_sigmoid


@dataclass(frozen=True)
class TwoLayerNet:
    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        W = np.array(self.W, dtype=float)
        if a.ndim != 1 or b.shape != a.shape or W.ndim != 2 or W.shape[0] != a.size:
            raise ValueError(f"inconsistent shapes a{a.shape} b{b.shape} W{W.shape}")
        if not (np.isfinite(a).all() and np.isfinite(b).all() and np.isfinite(W).all()):
            raise ValueError("network parameters must be finite")
        for arr in (a, b, W):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "W", W)

    @property
    def M(self):
        return self.a.size

    @property
    def d(self):
        return self.W.shape[1]

    def replace(self, a=None, b=None, W=None):
        return TwoLayerNet(self.a if a is None else a,
                           self.b if b is None else b,
                           self.W if W is None else W)

    def to_dict(self):
        return {"M": self.M, "d": self.d, "a": self.a.tolist(),
                "b": self.b.tolist(), "W": self.W.tolist()}

    @classmethod
    def from_dict(cls, doc):
        net = cls(doc["a"], doc["b"], np.asarray(doc["W"], dtype=float).reshape(doc["M"], doc["d"]))
        return net

    def __eq__(self, other):
        if not isinstance(other, TwoLayerNet):
            return NotImplemented
        return (np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b)
                and np.array_equal(self.W, other.W))

    __hash__ = None


def init_net(M, d, kappa, rho, rng):
    """a_j ~ Unif{+-kappa}, b_j ~ Unif[-rho, rho], w_ji ~ Unif{+-1/sqrt(d)}."""
    if M < 1 or d < 1:
        raise ValueError("M and d must be positive")
    if kappa < 0 or rho < 0:
        raise ValueError("kappa and rho must be non-negative")
    a = kappa * (2.0 * rng.integers(0, 2, size=M) - 1.0)
    b = rng.uniform(-rho, rho, size=M) if rho > 0 else np.zeros(M)
    W = (2.0 * rng.integers(0, 2, size=(M, d)) - 1.0) / math.sqrt(d)
    return TwoLayerNet(a, b, W)


def _check_x(net, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.d:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {net.d}")
    return x


def preactivations(net, x):
    return _check_x(net, x) @ net.W.T + net.b


def forward(net, x, act=None):
    """Network output for one input (d,) or a batch (N, d)."""
    act = act or make_shifted_sigmoid()
    out = act(preactivations(net, x)) @ net.a
    return float(out) if np.ndim(out) == 0 else out


def loss_grads(net, x, y, wrt, act=None):
    """Gradient of 0.5 (y - f(x))^2 for a single sample.

    ``wrt`` is ``"second_layer"`` (gradient in a, shape (M,)) or
    ``("first_layer", j)`` (gradient in w_j, shape (d,)).
    """
    act = act or make_shifted_sigmoid()
    x = _check_x(net, x)
    if x.ndim != 1:
        raise ValueError("loss_grads takes a single sample")
    pre = net.W @ x + net.b
    res = float(y) - float(act(pre) @ net.a)
    if wrt == "second_layer":
        return -res * act(pre)
    if isinstance(wrt, tuple) and len(wrt) == 2 and wrt[0] == "first_layer":
        j = int(wrt[1])
        if not 0 <= j < net.M:
            raise ValueError(f"neuron index {j} out of range")
        return -res * net.a[j] * float(act.derivative(1)(pre[j])) * x
    raise ValueError(f"unknown gradient target {wrt!r}")


def risk_on(net, X, fX, act=None):
    """(0.5 * mean squared residual, its standard error) on a fixed sample."""
    r = 0.5 * (fX - forward(net, X, act)) ** 2
    n = r.size
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def population_risk_mc(net, target, N, rng, act=None, chunk=65536):
    """Monte-Carlo estimate of E[0.5 (f_*(x) - f(x))^2] with its standard
    error. Noise-free; samples are drawn and reduced in fixed chunks."""
    if N < 2:
        raise ValueError("need at least two samples")
    s1 = s2 = 0.0
    done = 0
    while done < N:
        n = min(chunk, N - done)
        X = target.sample_x(rng, n)
        r = 0.5 * (target.f_star(X) - forward(net, X, act)) ** 2
        s1 += float(r.sum())
        s2 += float((r * r).sum())
        done += n
    mean = s1 / N
    var = max(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return mean, math.sqrt(var / N)
