"""Leap complexity of a sparse polynomial, with a witness ordering."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LeapResult:
    leap: int
    ordering: tuple
    per_step_new_mass: tuple

    def to_dict(self):
        return {
            "leap": self.leap,
            "ordering": list(self.ordering),
            "per_step_new_mass": list(self.per_step_new_mass),
        }


def _exponent_matrix(h):
    """(indices into h.terms, exponent rows) for the nonzero-coefficient terms."""
    idx = [i for i, (_, c) in enumerate(h.terms) if c != 0.0]
    if not idx:
        return idx, np.zeros((0, h.latent_dim), dtype=np.int64)
    return idx, np.array([h.terms[i][0].exponents for i in idx], dtype=np.int64)


def new_mass(exponents, covered):
    """Exponent mass of ``exponents`` on coordinates not yet ``covered``."""
    return int(np.sum(np.where(covered, 0, exponents)))


def _greedy(S, k):
    m, P = S.shape
    covered = np.zeros(P, dtype=bool)
    placed = np.zeros(m, dtype=bool)
    order, masses = [], []
    for _ in range(m):
        fresh = np.where(covered[None, :], 0, S).sum(axis=1)
        ok = np.flatnonzero(~placed & (fresh <= k))
        if ok.size == 0:
            return None
        i = int(ok[0])
        placed[i] = True
        covered |= S[i] > 0
        order.append(i)
        masses.append(int(fresh[i]))
    return order, masses


def leap_feasible(h, k):
    """An ordering of ``h``'s monomials adding at most ``k`` new mass per
    step, or None.

    Greedy placement is exact: covering more coordinates can only lower the
    new mass of the monomials still waiting.
    """
    idx, S = _exponent_matrix(h)
    found = _greedy(S, k)
    if found is None:
        return None
    return tuple(idx[i] for i in found[0])


def leap(h):
    idx, S = _exponent_matrix(h)
    if not idx:
        return LeapResult(0, (), ())
    degrees = S.sum(axis=1)
    for k in range(int(degrees.min()), int(degrees.max()) + 1):
        found = _greedy(S, k)
        if found is not None:
            order, masses = found
            return LeapResult(k, tuple(idx[i] for i in order), tuple(masses))
    raise AssertionError("unreachable: k = max degree is always feasible")


def step_masses(h, ordering):
    """New mass introduced at each step of ``ordering`` (term indices)."""
    covered = np.zeros(h.latent_dim, dtype=bool)
    out = []
    for i in ordering:
        e = np.array(h.terms[i][0].exponents)
        out.append(new_mass(e, covered))
        covered |= e > 0
    return out
