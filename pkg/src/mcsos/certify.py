"""Closed-form witnesses for the arrowhead SOS identity.

Given the true point z0, Q is the arrowhead matrix whose quadratic form is
sum_r (u_r - u_r(z0))^2 and U is a PSD matrix over h (x) u_2 reproducing the
same polynomial, built from chain relations along a BFS tree.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .model import ChainTree, DegenerateDataError, Instance, MixingError, spanning_chains
from .polybasis import (MonomialBasis, Polynomial, build_basis, eval_basis,
                        kron_quadform_to_poly, quadform_to_poly)

ZERO_TOL = 1e-12


class AssumptionError(ValueError):
    """True point has a zero entry."""


@dataclass(frozen=True)
class ArrowheadQ:
    diag1: float
    arm: np.ndarray

    @property
    def N(self) -> int:
        return len(self.arm) + 1

    def dense(self) -> np.ndarray:
        Q = np.eye(self.N)
        Q[0, 0] = self.diag1
        Q[0, 1:] = self.arm
        Q[1:, 0] = self.arm
        return Q

    @classmethod
    def from_dense(cls, Q) -> "ArrowheadQ":
        Q = np.asarray(Q, dtype=float)
        arm = 0.5 * (Q[0, 1:] + Q[1:, 0])
        return cls(float(Q[0, 0]), arm)


def arrowhead_Q(z0, basis: MonomialBasis) -> ArrowheadQ:
    """Sum of the rank-1 blocks [m_r^2, -m_r; -m_r, 1] placed at rows/cols {0, r}."""
    z0 = np.asarray(z0, dtype=float)
    if np.any(np.abs(z0) < ZERO_TOL):
        raise AssumptionError("true point has a zero entry")
    m = eval_basis(basis, z0)[1:]
    return ArrowheadQ(float(m @ m), -m)


def shifted_square_poly(z0, basis: MonomialBasis) -> Polynomial:
    """sum_{r >= 1} (u_r(z) - u_r(z0))^2, built term by term."""
    m = eval_basis(basis, z0)
    out = Polynomial.zero(basis.s)
    for r in range(1, basis.N):
        d = basis.polynomial(r) - float(m[r])
        out = out + d * d
    return out


def shifted_identity_check(Q: ArrowheadQ, z0, basis: MonomialBasis) -> float:
    u0 = eval_basis(basis, z0)
    Qd = Q.dense()
    lhs = quadform_to_poly(basis, Qd) - float(u0 @ Qd @ u0)
    return lhs.max_diff(shifted_square_poly(z0, basis))


# -- a-vectors over h (x) u_1, flat index k * (s + 1) + l ------------------------

def _lead(inst: Instance, k: int) -> float:
    con = inst.constraints[k]
    if not con.elementary:
        raise ValueError(f"constraint {k} is not elementary")
    return con.terms[0].c


def chain_avec(tree: ChainTree, inst: Instance, z0, var: int,
               memo: dict[int, dict[int, float]] | None = None) -> dict[int, float]:
    """Weights a with z_var - z0_var = a^T (h (x) u_1) as a polynomial identity."""
    memo = {} if memo is None else memo
    if var in memo:
        return memo[var]
    z0 = np.asarray(z0, dtype=float)
    s1 = inst.s + 1
    path = tree.path(var)
    ks = [tree.via[v] for v in path]
    L = len(path)

    def e(k, zi):  # position of h_k * z_zi (zi = None for the constant)
        return k * s1 + (0 if zi is None else 1 + zi)

    def nz(v):
        if abs(z0[v]) < ZERO_TOL:
            raise DegenerateDataError(f"z0[{v}] is zero on a chain")
        return z0[v]

    a: dict[int, float] = {}
    if L == 1:
        a[e(ks[0], None)] = 1.0 / _lead(inst, ks[0])
    elif L == 2:
        v1, v2 = path
        w = 1.0 / nz(v1)
        a[e(ks[0], v2)] = -w / _lead(inst, ks[0])
        a[e(ks[1], None)] = w / _lead(inst, ks[1])
    else:
        vm2, vm1, vl = path[-3:]
        km1, kl = ks[-2], ks[-1]
        d = nz(vm2) * nz(vm1)
        a[e(kl, vm2)] = 1.0 / (d * _lead(inst, kl))
        key = e(km1, vl)
        a[key] = a.get(key, 0.0) - 1.0 / (d * _lead(inst, km1))
        prev = chain_avec(tree, inst, z0, vm2, memo)
        # kept unreduced as written: (z0_l z0_{l-1}) / (z0_{l-2} z0_{l-1})
        w = (z0[vl] * z0[vm1]) / d
        for t, c in prev.items():
            a[t] = a.get(t, 0.0) + w * c
    memo[var] = a
    return a


def all_avecs(tree: ChainTree, inst: Instance, z0) -> dict[int, dict[int, float]]:
    memo: dict[int, dict[int, float]] = {}
    for v in range(inst.s):
        chain_avec(tree, inst, z0, v, memo)
    return memo


def lift_u1_to_u2(a: dict[int, float], s: int, N: int) -> dict[int, float]:
    """First s + 1 entries of u_2 coincide with u_1, so only the block stride changes."""
    out = {}
    for t, c in a.items():
        k, l = divmod(t, s + 1)
        out[k * N + l] = c
    return out


def pair_bvec(i: int, j: int, avecs: dict[int, dict[int, float]], z0,
              basis: MonomialBasis) -> dict[int, float]:
    """Weights b with z_i z_j - z0_i z0_j = b^T (h (x) u_2), using
    (z_i - z0_i) z_j + z0_i (z_j - z0_j)."""
    s, N = basis.s, basis.N
    b: dict[int, float] = {}
    for t, c in avecs[i].items():
        k, l = divmod(t, s + 1)
        r = basis.product_index(l - 1, j)
        key = k * N + r
        b[key] = b.get(key, 0.0) + c
    zi = float(np.asarray(z0)[i])
    for key, c in lift_u1_to_u2(avecs[j], s, N).items():
        b[key] = b.get(key, 0.0) + zi * c
    return b


@dataclass(frozen=True)
class Certificate:
    Q: ArrowheadQ
    rho: float
    U: np.ndarray
    z0: np.ndarray
    instance: Instance
    basis: MonomialBasis

    def to_dict(self, residual: float | None = None) -> dict:
        iu, ju = np.nonzero(np.triu(self.U))
        return {
            "Q": {"diag1": self.Q.diag1, "arm": [float(v) for v in self.Q.arm]},
            "rho": self.rho,
            "U": {"size": int(self.U.shape[0]),
                  "triplets": [[int(a), int(b), float(self.U[a, b])] for a, b in zip(iu, ju)]},
            "residual": residual,
        }

    def to_json(self, residual: float | None = None) -> str:
        return json.dumps(self.to_dict(residual))


def certificate_from_dict(doc: dict, instance: Instance) -> Certificate:
    basis = build_basis(instance.n, instance.m, 2)
    size = doc["U"]["size"]
    U = np.zeros((size, size))
    for a, b, v in doc["U"]["triplets"]:
        U[a, b] = v
        U[b, a] = v
    Q = ArrowheadQ(float(doc["Q"]["diag1"]), np.array(doc["Q"]["arm"], dtype=float))
    z0 = -Q.arm[: instance.s]
    return Certificate(Q, float(doc["rho"]), U, z0, instance, basis)


def assemble_U(inst: Instance, tree: ChainTree | None, z0, basis: MonomialBasis | None = None) -> Certificate:
    """U = sum_i a_i a_i^T + sum_{i<=j} b_ij b_ij^T with Q the closed-form arrowhead."""
    basis = basis or build_basis(inst.n, inst.m, 2)
    tree = tree or spanning_chains(inst)
    z0 = np.asarray(z0, dtype=float)
    s, N, K = inst.s, basis.N, inst.K
    avecs = all_avecs(tree, inst, z0)
    cols = [lift_u1_to_u2(avecs[i], s, N) for i in range(s)]
    cols += [pair_bvec(i, j, avecs, z0, basis) for i in range(s) for j in range(i, s)]
    V = np.zeros((K * N, len(cols)))
    for c, vec in enumerate(cols):
        for t, w in vec.items():
            V[t, c] = w
    U = V @ V.T
    return Certificate(arrowhead_Q(z0, basis), 0.0, U, z0, inst, basis)


def identity_sides(cert: Certificate, inst: Instance | None = None,
                   basis: MonomialBasis | None = None) -> tuple[Polynomial, Polynomial]:
    inst = inst or cert.instance
    basis = basis or cert.basis
    lhs = quadform_to_poly(basis, cert.Q.dense()) - cert.rho
    rhs = kron_quadform_to_poly(inst.polynomials(), basis, cert.U)
    return lhs, rhs


def verify_identity(cert: Certificate, inst: Instance | None = None,
                    basis: MonomialBasis | None = None, relative: bool = False) -> float:
    """Max coefficient gap between u2^T Q u2 - rho and (h (x) u2)^T U (h (x) u2)."""
    lhs, rhs = identity_sides(cert, inst, basis)
    res = lhs.max_diff(rhs)
    if relative:
        return res / max(lhs.max_abs_coeff(), 1e-300)
    return res


def lift_mixing(cert: Certificate, C, mixed: Instance | None = None) -> Certificate:
    """Ubar = (C^+ (x) I)^T U (C^+ (x) I); exact whenever hbar = C h."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    sv = np.linalg.svd(C, compute_uv=False)
    if C.shape[0] < C.shape[1] or sv.min() <= 1e-9 * sv.max():
        raise MixingError("C^T C is singular")
    Cp = np.linalg.solve(C.T @ C, C.T)
    P = np.kron(Cp, np.eye(cert.basis.N))
    Ubar = P.T @ cert.U @ P
    Ubar = 0.5 * (Ubar + Ubar.T)
    return replace(cert, U=Ubar, instance=mixed if mixed is not None else cert.instance)
