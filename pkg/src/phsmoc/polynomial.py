"""Sparse multivariate polynomials and polynomial-coefficient PHS definitions.

Terms are written ``[coef, [e1, ..., en]]``; a matrix entry may also be a bare
number, meaning a constant.
"""

from __future__ import annotations

import numpy as np

from .system import PhsSystem


class Polynomial:
    """``p(x) = sum_k coef_k * prod_j x_j ** exps[k, j]``."""

    def __init__(self, coefs, exps, dim: int):
        self.dim = dim
        self.coefs = np.asarray(coefs, dtype=float).reshape(-1)
        self.exps = np.asarray(exps, dtype=int).reshape(-1, dim)
        if self.coefs.shape[0] != self.exps.shape[0]:
            raise ValueError("coefficient / exponent count mismatch")
        if (self.exps < 0).any():
            raise ValueError("exponents must be nonnegative")

    @classmethod
    def parse(cls, spec, dim: int) -> "Polynomial":
        if isinstance(spec, (int, float)):
            return cls([float(spec)], [[0] * dim], dim)
        coefs, exps = [], []
        for term in spec:
            if len(term) != 2 or len(term[1]) != dim:
                raise ValueError(f"bad term {term!r}: expected [coef, [{dim} exponents]]")
            coef = float(term[0])
            if not np.isfinite(coef):
                raise ValueError(f"non-finite coefficient in {term!r}")
            coefs.append(coef)
            exps.append([int(e) for e in term[1]])
        if not coefs:
            return cls(np.zeros(0), np.zeros((0, dim)), dim)
        return cls(coefs, exps, dim)

    def to_spec(self) -> list:
        return [[float(c), [int(e) for e in row]] for c, row in zip(self.coefs, self.exps)]

    def __call__(self, x) -> float:
        if self.coefs.size == 0:
            return 0.0
        return float(self.coefs @ np.prod(np.power(x, self.exps), axis=1))

    def grad(self, x) -> np.ndarray:
        out = np.zeros(self.dim)
        if self.coefs.size == 0:
            return out
        for j in range(self.dim):
            lowered = self.exps.copy()
            lowered[:, j] = np.maximum(lowered[:, j] - 1, 0)
            out[j] = (self.coefs * self.exps[:, j]) @ np.prod(np.power(x, lowered), axis=1)
        return out


class PolyMatrix:
    """Matrix whose entries are polynomials in the state."""

    def __init__(self, entries: list[list[Polynomial]]):
        self.entries = entries
        self.shape = (len(entries), len(entries[0]) if entries else 0)

    @classmethod
    def parse(cls, spec, dim: int) -> "PolyMatrix":
        rows = [[Polynomial.parse(e, dim) for e in row] for row in spec]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("matrix rows must be nonempty and of equal length")
        return cls(rows)

    def to_spec(self) -> list:
        return [[p.to_spec() for p in row] for row in self.entries]

    def __call__(self, x) -> np.ndarray:
        return np.array([[p(x) for p in row] for row in self.entries])


SYSTEM_KEYS = {"name", "dim_x", "dim_u", "J", "R", "G", "H", "r", "S"}


def system_from_tables(spec: dict) -> PhsSystem:
    """Build a :class:`PhsSystem` from polynomial coefficient tables.

    ``gradH`` is obtained by differentiating the polynomial ``H`` exactly.
    """
    unknown = set(spec) - SYSTEM_KEYS
    if unknown:
        raise ValueError(f"unknown system keys: {sorted(unknown)}")
    missing = SYSTEM_KEYS - {"name"} - set(spec)
    if missing:
        raise ValueError(f"missing system keys: {sorted(missing)}")
    n, m = int(spec["dim_x"]), int(spec["dim_u"])
    J = PolyMatrix.parse(spec["J"], n)
    R = PolyMatrix.parse(spec["R"], n)
    G = PolyMatrix.parse(spec["G"], n)
    for label, mat, shape in (("J", J, (n, n)), ("R", R, (n, n)), ("G", G, (n, m))):
        if mat.shape != shape:
            raise ValueError(f"{label} must be {shape}, got {mat.shape}")
    H = Polynomial.parse(spec["H"], n)
    r = Polynomial.parse(spec["r"], n)
    S = np.array(spec["S"], dtype=float).reshape(m, m)
    if not np.isfinite(S).all():
        raise ValueError("S must be finite")
    return PhsSystem(dim_x=n, dim_u=m, J=J, R=R, G=G, H=H, gradH=H.grad,
                     cost_r=r, cost_S=S, name=str(spec.get("name", "polynomial")))
