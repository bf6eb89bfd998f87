"""Sparse polynomials over z = [x_2..x_n, y_1..y_m] and the monomial bases u_1, u_2.

Indices are 0-based throughout: basis position 0 is the constant monomial,
positions 1..s are z_0..z_{s-1}, then z_i z_j (i <= j) in lexicographic order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]

CANON_RTOL = 1e-14
# exponents never exceed 8, so base-9 digit packing is carry free
_CODE_BASE = 9
_MAX_CODE_VARS = 19


class Polynomial:
    """Immutable sparse polynomial, exponent tuple -> coefficient."""

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars: int, terms: Mapping[Exponent, float] | None = None,
                 canonical: bool = True):
        self.nvars = nvars
        items = {} if terms is None else dict(terms)
        for e in items:
            if len(e) != nvars:
                raise ValueError(f"exponent {e} has length {len(e)}, expected {nvars}")
        self._terms = _canonicalize(items) if canonical else items

    # -- construction -------------------------------------------------------
    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: float(c)})

    @classmethod
    def variable(cls, nvars: int, i: int, c: float = 1.0) -> "Polynomial":
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): float(c)})

    @classmethod
    def monomial(cls, exponent: Sequence[int], c: float = 1.0) -> "Polynomial":
        return cls(len(exponent), {tuple(int(a) for a in exponent): float(c)})

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars, {})

    # -- inspection ---------------------------------------------------------
    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def coeff(self, exponent: Sequence[int]) -> float:
        return self._terms.get(tuple(exponent), 0.0)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def truncate(self, max_degree: int) -> "Polynomial":
        return Polynomial(self.nvars, {e: c for e, c in self._terms.items()
                                       if sum(e) <= max_degree}, canonical=False)

    def part(self, min_degree: int, max_degree: int) -> "Polynomial":
        return Polynomial(self.nvars, {e: c for e, c in self._terms.items()
                                       if min_degree <= sum(e) <= max_degree},
                          canonical=False)

    def __call__(self, z: Sequence[float]) -> float:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.nvars,):
            raise ValueError(f"point has shape {z.shape}, expected ({self.nvars},)")
        if not self._terms:
            return 0.0
        exps = np.array(list(self._terms.keys()), dtype=int)
        coefs = np.array(list(self._terms.values()))
        return float(coefs @ np.prod(z[None, :] ** exps, axis=1))

    # -- arithmetic ---------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if other.nvars != self.nvars:
            raise ValueError("polynomials live in different variable spaces")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        self._check(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()}, canonical=False)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return Polynomial(self.nvars, {e: c * float(other) for e, c in self._terms.items()})
        self._check(other)
        out: dict[Exponent, float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.constant(self.nvars, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def max_diff(self, other: "Polynomial") -> float:
        """Largest absolute coefficient difference."""
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return max((abs(self._terms.get(e, 0.0) - other._terms.get(e, 0.0)) for e in keys),
                   default=0.0)

    def __repr__(self) -> str:
        if not self._terms:
            return "Polynomial(0)"
        parts = []
        for e, c in sorted(self._terms.items(), key=lambda t: (sum(t[0]), t[0])):
            mono = "*".join(f"z{i}^{a}" if a > 1 else f"z{i}" for i, a in enumerate(e) if a)
            parts.append(f"{c:+.6g}{'*' + mono if mono else ''}")
        return "Polynomial(" + " ".join(parts) + ")"


def _canonicalize(terms: dict[Exponent, float]) -> dict[Exponent, float]:
    if not terms:
        return {}
    scale = max(abs(c) for c in terms.values())
    cut = CANON_RTOL * scale
    return {e: c for e, c in terms.items() if abs(c) > cut and c != 0.0}


# -- integer monomial codes ----------------------------------------------------

class MonomialCodec:
    """Packs exponent vectors into int64 so that monomial products become sums."""

    def __init__(self, nvars: int):
        if nvars > _MAX_CODE_VARS:
            raise ValueError(f"code packing supports at most {_MAX_CODE_VARS} variables")
        self.nvars = nvars
        self.powers = _CODE_BASE ** np.arange(nvars, dtype=np.int64)

    def encode(self, exps) -> np.ndarray:
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, self.nvars)
        return exps @ self.powers

    def decode(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        return (codes[:, None] // self.powers[None, :]) % _CODE_BASE

    def degree(self, codes) -> np.ndarray:
        return self.decode(codes).sum(axis=1)

    def to_poly(self, codes, values) -> Polynomial:
        codes = np.asarray(codes, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        uniq, inv = np.unique(codes, return_inverse=True)
        summed = np.zeros(len(uniq))
        np.add.at(summed, inv, values)
        exps = self.decode(uniq)
        return Polynomial(self.nvars, {tuple(int(a) for a in e): float(c)
                                       for e, c in zip(exps, summed)})

    def from_poly(self, p: Polynomial) -> tuple[np.ndarray, np.ndarray]:
        if not len(p):
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        exps, coefs = zip(*p)
        return self.encode(list(exps)), np.array(coefs, dtype=float)


def poly_to_arrays(polys: Sequence[Polynomial], codec: MonomialCodec):
    """Stack polynomials into padded (count, T) code / coefficient arrays."""
    width = max((len(p) for p in polys), default=1) or 1
    codes = np.zeros((len(polys), width), dtype=np.int64)
    coefs = np.zeros((len(polys), width))
    for row, p in enumerate(polys):
        c, v = codec.from_poly(p)
        codes[row, :len(c)] = c
        coefs[row, :len(v)] = v
    return codes, coefs


def quadform_codes(codes: np.ndarray, coefs: np.ndarray, M) -> tuple[np.ndarray, np.ndarray]:
    """Expand e^T M e where entry e_p has terms (codes[p], coefs[p]).

    Returns unsorted (code, value) pairs; duplicates are to be summed.
    """
    M = np.asarray(M, dtype=float)
    P, R = np.nonzero(np.triu(M))
    w = M[P, R] * np.where(P == R, 1.0, 2.0)
    cc = codes[P][:, :, None] + codes[R][:, None, :]
    vv = (coefs[P][:, :, None] * coefs[R][:, None, :]) * w[:, None, None]
    keep = vv != 0.0
    return cc[keep], vv[keep]


# -- bases ---------------------------------------------------------------------

@dataclass(frozen=True)
class MonomialBasis:
    """Ordered monomial vector u_d (d in {1, 2}) in s variables."""

    s: int
    degree: int
    ordering: tuple[Exponent, ...]
    index_of: Mapping[Exponent, int] = field(repr=False)
    # factors[r] = (i, j): u_r = z_i * z_j with -1 standing for the constant 1
    factors: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.ordering)

    def __len__(self) -> int:
        return len(self.ordering)

    def linear_index(self, i: int) -> int:
        """Position of z_i (i = -1 gives the constant)."""
        return 0 if i < 0 else 1 + i

    def product_index(self, i: int, j: int) -> int:
        """Position of z_i * z_j, where -1 stands for the constant 1."""
        if i < 0 and j < 0:
            return 0
        if i < 0 or j < 0:
            return 1 + max(i, j)
        if self.degree < 2:
            raise IndexError("degree-2 monomial requested from a degree-1 basis")
        a, b = (i, j) if i <= j else (j, i)
        e = [0] * self.s
        e[a] += 1
        e[b] += 1
        return self.index_of[tuple(e)]

    def polynomial(self, r: int) -> Polynomial:
        return Polynomial.monomial(self.ordering[r])

    def exps(self) -> np.ndarray:
        return np.array(self.ordering, dtype=int).reshape(len(self.ordering), self.s)


def build_basis(n: int, m: int, d: int = 2) -> MonomialBasis:
    """Monomial basis u_d for an n x m rank-1 completion (s = n + m - 1 variables)."""
    if int(n) != n or int(m) != m or n < 1 or m < 1:
        raise ValueError(f"matrix sizes must be positive integers, got n={n}, m={m}")
    if d not in (1, 2):
        raise ValueError(f"basis degree must be 1 or 2, got {d}")
    return basis_for_vars(int(n) + int(m) - 1, d)


def basis_for_vars(s: int, d: int = 2) -> MonomialBasis:
    if s < 1:
        raise ValueError("need at least one variable")
    zero = (0,) * s
    ordering: list[Exponent] = [zero]
    factors: list[tuple[int, int]] = [(-1, -1)]
    for i in range(s):
        e = [0] * s
        e[i] = 1
        ordering.append(tuple(e))
        factors.append((-1, i))
    if d == 2:
        for i, j in combinations_with_replacement(range(s), 2):
            e = [0] * s
            e[i] += 1
            e[j] += 1
            ordering.append(tuple(e))
            factors.append((i, j))
    return MonomialBasis(s=s, degree=d, ordering=tuple(ordering),
                         index_of={e: r for r, e in enumerate(ordering)},
                         factors=tuple(factors))


def eval_basis(basis: MonomialBasis, z: Sequence[float]) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.s,):
        raise ValueError(f"point has shape {z.shape}, expected ({basis.s},)")
    zz = np.concatenate([[1.0], z])
    f = np.array(basis.factors) + 1
    return zz[f[:, 0]] * zz[f[:, 1]]


def quadform_to_poly(basis: MonomialBasis, M) -> Polynomial:
    """Expand u_d^T M u_d."""
    M = np.asarray(M, dtype=float)
    if M.shape != (basis.N, basis.N):
        raise ValueError(f"matrix has shape {M.shape}, expected ({basis.N}, {basis.N})")
    M = 0.5 * (M + M.T)
    codec = MonomialCodec(basis.s)
    codes = codec.encode(basis.exps())[:, None]
    cc, vv = quadform_codes(codes, np.ones_like(codes, dtype=float), M)
    return codec.to_poly(cc, vv)


@dataclass(frozen=True)
class KronIndex:
    """Position (k, r) of h_k * (u_2)_r inside h (x) u_2; flat = k * N + r."""

    k: int
    r: int
    N: int

    @property
    def flat(self) -> int:
        return self.k * self.N + self.r

    @classmethod
    def from_flat(cls, flat: int, N: int) -> "KronIndex":
        return cls(flat // N, flat % N, N)


def kron_entry_poly(h: Sequence[Polynomial], basis: MonomialBasis, t: KronIndex | int) -> Polynomial:
    KN = len(h) * basis.N
    flat = t.flat if isinstance(t, KronIndex) else int(t)
    if not 0 <= flat < KN:
        raise IndexError(f"Kronecker index {flat} outside 0..{KN - 1}")
    k, r = divmod(flat, basis.N)
    return h[k] * basis.polynomial(r)


def kron_entries(h: Sequence[Polynomial], basis: MonomialBasis, codec: MonomialCodec | None = None):
    """Padded (KN, T) code / coefficient arrays for every entry of h (x) u_2."""
    codec = codec or MonomialCodec(basis.s)
    hc, hv = poly_to_arrays(list(h), codec)
    ucodes = codec.encode(basis.exps())
    codes = (hc[:, None, :] + ucodes[None, :, None]).reshape(len(h) * basis.N, -1)
    coefs = np.repeat(hv, basis.N, axis=0)
    return codes, coefs


def kron_quadform_to_poly(h: Sequence[Polynomial], basis: MonomialBasis, U) -> Polynomial:
    """Expand (h (x) u_2)^T U (h (x) u_2)."""
    KN = len(h) * basis.N
    U = np.asarray(U, dtype=float)
    if U.shape != (KN, KN):
        raise ValueError(f"matrix has shape {U.shape}, expected ({KN}, {KN})")
    codec = MonomialCodec(basis.s)
    if KN == 0:
        return Polynomial.zero(basis.s)
    codes, coefs = kron_entries(h, basis, codec)
    cc, vv = quadform_codes(codes, coefs, 0.5 * (U + U.T))
    return codec.to_poly(cc, vv)


def monomials_up_to(s: int, degree: int) -> Iterable[Exponent]:
    """All exponent vectors in s variables with total degree <= degree (graded lex)."""
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(s), d):
            e = [0] * s
            for i in combo:
                e[i] += 1
            yield tuple(e)
