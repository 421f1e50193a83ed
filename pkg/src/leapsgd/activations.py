"""Activation functions with closed-form derivatives, and their Hermite
coefficients by Gauss-Hermite quadrature."""
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import roots_hermitenorm

from .polynomial import hermite_eval

# kernel codes; see kernels.act / kernels.dact
SIGMOID = 0
IDENTITY = 1
SQUARE = 2
HERMITE = 3

DEFAULT_NODES = 200


class QuadratureError(RuntimeError):
    pass


def stable_sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@functools.lru_cache(maxsize=None)
def _sigmoid_derivative_poly(n):
    # sigma^(n) = p_n(s) with s = sigma(z);  d/dz p(s) = p'(s) s (1 - s)
    p = Polynomial([0.0, 1.0])
    logistic = Polynomial([0.0, 1.0, -1.0])
    for _ in range(n):
        p = p.deriv() * logistic
    return p


@dataclass(frozen=True)
class Activation:
    """A scalar activation. ``kind``/``param`` select the compiled kernel
    implementation; ``test_only`` marks activations with unbounded
    derivatives, which the convergence guarantees do not cover."""

    name: str
    kind: int
    param: float = 0.0
    test_only: bool = False
    _sup_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __call__(self, x):
        return self.derivative(0)(x)

    def eval(self, x):
        return self.derivative(0)(x)

    def derivative(self, n):
        """Callable for the n-th derivative."""
        if n < 0:
            raise ValueError("derivative order must be non-negative")
        kind, p = self.kind, self.param
        if kind == SIGMOID:
            poly = _sigmoid_derivative_poly(n)
            return lambda x: poly(stable_sigmoid(np.asarray(x, dtype=float) - p))
        if kind == IDENTITY:
            if n == 0:
                return lambda x: np.asarray(x, dtype=float) * 1.0
            const = 1.0 if n == 1 else 0.0
            return lambda x: np.full(np.shape(x), const) if np.ndim(x) else const
        if kind == SQUARE:
            if n == 0:
                return lambda x: p * np.asarray(x, dtype=float) ** 2
            if n == 1:
                return lambda x: 2.0 * p * np.asarray(x, dtype=float)
            const = 2.0 * p if n == 2 else 0.0
            return lambda x: np.full(np.shape(x), const) if np.ndim(x) else const
        if kind == HERMITE:
            k = int(p)
            if n > k:
                return lambda x: np.zeros(np.shape(x)) if np.ndim(x) else 0.0
            scale = math.factorial(k) / math.factorial(k - n)
            return lambda x: scale * hermite_eval(k - n, x)
        raise ValueError(f"unknown activation kind {kind}")

    def sup_norm(self, n):
        """sup_x |sigma^(n)(x)|; ``inf`` for unbounded test activations."""
        if n in self._sup_cache:
            return self._sup_cache[n]
        if self.kind == SIGMOID:
            poly = _sigmoid_derivative_poly(n)
            cands = [0.0, 1.0] + [r.real for r in poly.deriv().roots()
                                  if abs(r.imag) < 1e-12 and 0.0 <= r.real <= 1.0]
            val = float(max(abs(poly(s)) for s in cands))
        elif self.kind == IDENTITY:
            val = math.inf if n == 0 else (1.0 if n == 1 else 0.0)
        elif self.kind == SQUARE:
            val = math.inf if n < 2 else (2.0 * abs(self.param) if n == 2 else 0.0)
        else:
            val = math.inf if n <= int(self.param) else 0.0
        self._sup_cache[n] = val
        return val

    def bound_K(self, max_order):
        """max_{n <= max_order} ||sigma^(n)||_inf."""
        return max(self.sup_norm(n) for n in range(max_order + 1))

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "param": self.param}

    @classmethod
    def from_dict(cls, d):
        return make_activation(d["name"], d.get("param"))


def make_shifted_sigmoid(c=1.0):
    """sigma(z) = 1 / (1 + exp(-z + c))."""
    return Activation("shifted_sigmoid", SIGMOID, float(c))


def identity_activation():
    return Activation("identity", IDENTITY, 0.0, test_only=True)


def square_activation(scale=1.0):
    """sigma(z) = scale * z**2."""
    return Activation("square", SQUARE, float(scale), test_only=True)


def hermite_activation(k):
    return Activation("hermite", HERMITE, float(k), test_only=True)


def make_activation(name, param=None):
    if name in ("shifted_sigmoid", "sigmoid"):
        return make_shifted_sigmoid(1.0 if param is None else param)
    if name == "identity":
        return identity_activation()
    if name == "square":
        return square_activation(1.0 if param is None else param)
    if name == "hermite":
        return hermite_activation(int(param))
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# Gaussian expectations

@functools.lru_cache(maxsize=8)
def gauss_nodes(n=DEFAULT_NODES):
    """Nodes/weights with sum(w * f(x)) ~= E[f(G)], G ~ N(0, 1)."""
    # numpy's hermegauss overflows past ~150 nodes; scipy switches to an
    # asymptotic scheme there
    x, w = roots_hermitenorm(n)
    w = w / math.sqrt(2.0 * math.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gaussian_expectation(f, scale=1.0, shift=0.0, nodes=DEFAULT_NODES):
    """E[f(scale * G + shift)] by Gauss-Hermite quadrature."""
    x, w = gauss_nodes(nodes)
    return float(np.dot(w, f(scale * x + shift)))


def expected_derivative(act, n, scale=1.0, shift=0.0, nodes=DEFAULT_NODES):
    """E_G[sigma^(n)(scale * G + shift)]."""
    return gaussian_expectation(act.derivative(n), scale, shift, nodes)


@dataclass(frozen=True)
class HermiteCoeffs:
    mu: np.ndarray
    max_order: int
    quadrature_nodes: int
    activation: str
    admissible_K: float
    violations: tuple

    def __getitem__(self, k):
        return float(self.mu[k])


def hermite_coeffs(act, max_order, nodes=DEFAULT_NODES, tol=1e-8, bias=0.0):
    """mu_k(sigma) = E[He_k(G) sigma(G + bias)] for k <= max_order.

    Computed with ``nodes`` and ``2 * nodes`` quadrature points; raises
    :class:`QuadratureError` if the two disagree by more than ``tol``.

    ``admissible_K`` is the smallest K for which ||sigma^(k)||_inf <= K
    (k <= max_order + 3) and |mu_k| > 1/K (k <= max_order) can hold;
    ``violations`` lists the orders whose coefficient vanishes (no K works),
    or every order for an unbounded test activation.
    """
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    f = act.derivative(0)

    def coeffs(n):
        x, w = gauss_nodes(n)
        vals = f(x + bias)
        return np.array([np.dot(w, hermite_eval(k, x) * vals) for k in range(max_order + 1)])

    mu = coeffs(nodes)
    mu2 = coeffs(2 * nodes)
    diff = np.max(np.abs(mu - mu2))
    if not diff <= tol:
        raise QuadratureError(
            f"Hermite coefficients of {act.name} not converged: "
            f"{nodes} vs {2 * nodes} nodes differ by {diff:.3g}")

    sup = act.bound_K(max_order + 3)
    zero = tuple(k for k in range(max_order + 1) if abs(mu[k]) <= 1e-10)
    if act.test_only or math.isinf(sup):
        violations = tuple(range(max_order + 1))
        K = math.inf
    else:
        violations = zero
        K = math.inf if zero else max(sup, 1.0 / float(np.min(np.abs(mu))) * (1 + 1e-12))
    mu.setflags(write=False)
    return HermiteCoeffs(mu, max_order, nodes, act.name, K, violations)
