"""Sparse polynomial targets over the Boolean (Fourier-Walsh) or Gaussian
(Hermite) basis, their evaluation, sampling and a small text format."""
import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np


class BasisKind(str, enum.Enum):
    BOOLEAN = "bool"
    GAUSSIAN = "gauss"


class TargetParseError(ValueError):
    def __init__(self, message, pos):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


def hermite_eval(k, x):
    """Probabilists' Hermite polynomial He_k at ``x`` (scalar or array)."""
    if k < 0:
        raise ValueError("Hermite order must be non-negative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev if prev.ndim else float(prev)
    cur = x.copy()
    for n in range(1, k):
        prev, cur = cur, x * cur - n * prev
    return cur if cur.ndim else float(cur)


def hermite_norm_sq(k):
    """E[He_k(G)^2] = k!."""
    return float(math.factorial(k))


@dataclass(frozen=True)
class Monomial:
    exponents: tuple

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError("exponents must be non-negative")
        if not any(exps):
            raise ValueError("a monomial needs at least one nonzero exponent")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self):
        return sum(self.exponents)

    @property
    def support(self):
        return tuple(i for i, e in enumerate(self.exponents) if e)

    def padded(self, P):
        if P < len(self.exponents):
            if any(self.exponents[P:]):
                raise ValueError("cannot shrink a monomial below its support")
            return Monomial(self.exponents[:P])
        return Monomial(self.exponents + (0,) * (P - len(self.exponents)))


@dataclass(frozen=True)
class SparsePolynomial:
    basis: BasisKind
    latent_dim: int
    terms: tuple
    constant: float = 0.0

    def __post_init__(self):
        basis = BasisKind(self.basis)
        object.__setattr__(self, "basis", basis)
        terms = tuple((m if isinstance(m, Monomial) else Monomial(m), float(c))
                      for m, c in self.terms)
        seen = set()
        for mono, _ in terms:
            if len(mono.exponents) != self.latent_dim:
                raise ValueError(
                    f"monomial {mono.exponents} does not have length P={self.latent_dim}")
            if basis is BasisKind.BOOLEAN and max(mono.exponents) > 1:
                raise ValueError("Boolean basis only allows exponents in {0, 1}")
            if mono.exponents in seen:
                raise ValueError(f"duplicate monomial {mono.exponents}")
            seen.add(mono.exponents)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "constant", float(self.constant))

    @classmethod
    def from_terms(cls, basis, terms, constant=0.0, latent_dim=None):
        """Build from ``(exponents, coeff)`` pairs, padding exponent vectors
        to a common length."""
        terms = list(terms)
        P = max((len(e) for e, _ in terms), default=0) if latent_dim is None else latent_dim
        padded = [(Monomial(tuple(e)).padded(P), c) for e, c in terms]
        return cls(BasisKind(basis), P, tuple(padded), constant)

    @property
    def degree(self):
        return max((m.degree for m, _ in self.terms), default=0)

    def nonzero_terms(self):
        return [(m, c) for m, c in self.terms if c != 0.0]

    def basis_norm_sq(self, mono):
        if self.basis is BasisKind.BOOLEAN:
            return 1.0
        return float(np.prod([hermite_norm_sq(e) for e in mono.exponents]))

    def variance(self):
        """E[(h - E h)^2] under the basis measure (basis is orthogonal)."""
        return sum(c * c * self.basis_norm_sq(m) for m, c in self.terms)

    def __call__(self, z):
        return eval_poly(self, z)

    def __str__(self):
        return format_target(self)


def _chi(basis, k, z):
    if basis is BasisKind.BOOLEAN:
        return z if k == 1 else np.ones_like(z)
    return hermite_eval(k, z)


def eval_poly(h, z):
    """Evaluate ``h`` on latent inputs ``z`` of shape (P,) or (N, P)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != h.latent_dim:
        raise ValueError(f"expected last dimension {h.latent_dim}, got {z.shape[-1]}")
    out = np.full(z.shape[:-1], h.constant, dtype=float)
    cache = {}
    for mono, coeff in h.terms:
        val = np.ones(z.shape[:-1])
        for i, e in enumerate(mono.exponents):
            if e:
                key = (i, e)
                if key not in cache:
                    cache[key] = _chi(h.basis, e, z[..., i])
                val = val * cache[key]
        out = out + coeff * val
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class EmbeddedTarget:
    poly: SparsePolynomial
    ambient_dim: int
    support: tuple = field(default=None)

    def __post_init__(self):
        support = self.support
        if support is None:
            support = tuple(range(self.poly.latent_dim))
        support = tuple(int(s) for s in support)
        if len(support) != self.poly.latent_dim:
            raise ValueError("support must list exactly P coordinates")
        if len(set(support)) != len(support):
            raise ValueError("support indices must be distinct")
        if any(s < 0 or s >= self.ambient_dim for s in support):
            raise ValueError("support index out of range")
        object.__setattr__(self, "support", support)

    @property
    def basis(self):
        return self.poly.basis

    def f_star(self, X):
        X = np.asarray(X, dtype=float)
        return eval_poly(self.poly, X[..., list(self.support)])

    def sample_x(self, rng, n):
        if self.basis is BasisKind.GAUSSIAN:
            return rng.standard_normal((n, self.ambient_dim))
        return 2.0 * rng.integers(0, 2, size=(n, self.ambient_dim)).astype(float) - 1.0

    def sample(self, n, rng, noise_std=0.0, noise_rng=None):
        """Draw ``n`` labeled pairs. Noise comes from ``noise_rng`` when
        given so the input stream is unaffected by the noise level."""
        X = self.sample_x(rng, n)
        y = self.f_star(X)
        if noise_std > 0:
            src = rng if noise_rng is None else noise_rng
            y = y + noise_std * src.standard_normal(n)
        return X, y


def sample_pair(target, noise_std, rng):
    X, y = target.sample(1, rng, noise_std)
    return X[0], float(y[0])


# ---------------------------------------------------------------------------
# text format:  "bool: z1 + 2*z1*z2"   "gauss: He2(z1)*He8(z3) + He2(z2)"

_TOKEN = re.compile(r"""
    (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<he>He(?P<order>\d+)\(z(?P<hvar>\d+)\))
  | (?P<var>z(?P<zvar>\d+))
  | (?P<op>[*+-])
""", re.VERBOSE)


def _tokenize(text, start):
    pos = start
    tokens = []
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise TargetParseError(f"unexpected character {text[pos]!r}", pos)
        tokens.append((m, pos))
        pos = m.end()
    return tokens


def parse_target(spec):
    """Parse the target text format into a :class:`SparsePolynomial`.

    Coefficients may carry a sign (``z1 + -0.5*z2``; ``z1 - 0.5*z2`` is
    accepted too). A term without variables is read as the constant offset.
    """
    head, sep, _ = spec.partition(":")
    if not sep:
        raise TargetParseError("missing 'basis:' prefix", 0)
    name = head.strip()
    try:
        basis = BasisKind(name)
    except ValueError:
        raise TargetParseError(f"unknown basis {name!r}", spec.index(name) if name else 0) from None
    tokens = _tokenize(spec, len(head) + 1)
    if not tokens:
        raise TargetParseError("empty target", len(spec))

    terms = []
    constant = 0.0
    idx = 0
    sign = 1.0
    while True:
        coeff = sign
        factors = {}
        while idx < len(tokens) and tokens[idx][0].group("op") in ("+", "-"):
            if tokens[idx][0].group("op") == "-":
                coeff = -coeff
            idx += 1
        if idx >= len(tokens):
            raise TargetParseError("expected a term", len(spec))
        term_pos = tokens[idx][1]
        has_factors = True
        if tokens[idx][0].group("num") is not None:
            coeff *= float(tokens[idx][0].group("num"))
            idx += 1
            has_factors = idx < len(tokens) and tokens[idx][0].group("op") == "*"
            if has_factors:
                idx += 1
                if idx >= len(tokens) or tokens[idx][0].group("op") is not None:
                    raise TargetParseError("expected a variable after '*'",
                                           tokens[idx][1] if idx < len(tokens) else len(spec))
        while has_factors and idx < len(tokens):
            m, pos = tokens[idx]
            if m.group("var") is not None:
                if basis is not BasisKind.BOOLEAN:
                    raise TargetParseError("Gaussian terms use He<k>(z<i>) factors", pos)
                var, order = int(m.group("zvar")), 1
            elif m.group("he") is not None:
                if basis is not BasisKind.GAUSSIAN:
                    raise TargetParseError("Hermite factors need the 'gauss' basis", pos)
                var, order = int(m.group("hvar")), int(m.group("order"))
            else:
                raise TargetParseError("expected a variable", pos)
            if var < 1:
                raise TargetParseError("variables are 1-indexed", pos)
            if var in factors:
                if basis is BasisKind.BOOLEAN:
                    raise TargetParseError(f"Boolean exponent > 1 on z{var}", pos)
                raise TargetParseError(f"variable z{var} repeated in one term", pos)
            factors[var] = order
            idx += 1
            if idx < len(tokens) and tokens[idx][0].group("op") == "*":
                idx += 1
                if idx >= len(tokens):
                    raise TargetParseError("dangling '*'", len(spec))
                continue
            break
        factors = {v: o for v, o in factors.items() if o > 0}
        if factors:
            terms.append((factors, coeff, term_pos))
        else:
            constant += coeff
        if idx >= len(tokens):
            break
        m, pos = tokens[idx]
        if m.group("op") not in ("+", "-"):
            raise TargetParseError("expected '+' between terms", pos)
        sign = -1.0 if m.group("op") == "-" else 1.0
        idx += 1
        if idx >= len(tokens):
            raise TargetParseError("dangling '+'", len(spec))

    P = max((max(f) for f, _, _ in terms), default=0)
    seen = {}
    out = []
    for factors, coeff, pos in terms:
        exps = tuple(factors.get(i + 1, 0) for i in range(P))
        if exps in seen:
            raise TargetParseError("duplicate monomial", pos)
        seen[exps] = True
        out.append((Monomial(exps), coeff))
    return SparsePolynomial(basis, P, tuple(out), constant)


def _fmt_coeff(c):
    return repr(float(c))


def format_target(h):
    """Canonical text form; ``parse_target(format_target(h)) == h``."""
    parts = []
    for mono, coeff in h.terms:
        if h.basis is BasisKind.BOOLEAN:
            factors = [f"z{i + 1}" for i in mono.support]
        else:
            factors = [f"He{e}(z{i + 1})" for i, e in enumerate(mono.exponents) if e]
        body = "*".join(factors)
        parts.append(body if coeff == 1.0 else f"{_fmt_coeff(coeff)}*{body}")
    if h.constant != 0.0 or not parts:
        parts.append(_fmt_coeff(h.constant))
    return f"{h.basis.value}: " + " + ".join(parts)
