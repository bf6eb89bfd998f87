"""Random SDPs with a known strictly complementary optimal solution.

X*, S* and y* are drawn first (X* S* = 0, rank X* + rank S* = n per PSD block,
x*_i s*_i = 0 with x*_i + s*_i > 0 per LP entry), then b = A(X*) and C = A^T y* + S*.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .problem import Block, SdpProblem


@dataclass
class Planted:
    problem: SdpProblem
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]

    @property
    def objective(self) -> float:
        return self.problem.objective(self.X)


def _complementary_pair(n: int, rng: np.random.Generator):
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    r = int(rng.integers(1, n)) if n > 1 else 1
    if n == 1 and rng.random() < 0.5:
        r = 0
    dx = rng.uniform(0.5, 2.0, r)
    ds = rng.uniform(0.5, 2.0, n - r)
    X = (Qm[:, :r] * dx) @ Qm[:, :r].T
    S = (Qm[:, r:] * ds) @ Qm[:, r:].T
    return (X + X.T) / 2, (S + S.T) / 2


def planted_problem(rng: np.random.Generator, psd_dims=(8,), nonneg_dim: int = 0,
                    free_dim: int = 0, m: int = 20, density: float = 1.0) -> Planted:
    blocks = [Block("psd", d) for d in psd_dims]
    if nonneg_dim:
        blocks.append(Block("nonneg", nonneg_dim))
    if free_dim:
        blocks.append(Block("free", free_dim))
    X, S, A = [], [], []
    for blk in blocks:
        if blk.kind == "psd":
            x, s = _complementary_pair(blk.dim, rng)
            G = rng.standard_normal((m, blk.dim, blk.dim))
            if density < 1.0:
                G *= rng.random((m, blk.dim, blk.dim)) < density
            G = (G + G.transpose(0, 2, 1)) / 2
            A.append(sp.csr_matrix(G.reshape(m, -1)))
        else:
            x = np.zeros(blk.dim)
            s = np.zeros(blk.dim)
            if blk.kind == "nonneg":
                on = rng.random(blk.dim) < 0.5
                x[on] = rng.uniform(0.5, 2.0, on.sum())
                s[~on] = rng.uniform(0.5, 2.0, (~on).sum())
            else:
                x = rng.standard_normal(blk.dim)
            A.append(sp.csr_matrix(rng.standard_normal((m, blk.dim))))
        X.append(x)
        S.append(s)
    y = rng.standard_normal(m)
    b = sum(a @ x.ravel() for a, x in zip(A, X))
    C = []
    for blk, a, s in zip(blocks, A, S):
        c = a.T @ y
        C.append(c.reshape(blk.dim, blk.dim) + s if blk.kind == "psd" else c + s)
    C = [(c + c.T) / 2 if c.ndim == 2 else c for c in C]
    return Planted(SdpProblem(tuple(blocks), tuple(C), tuple(A), b), X, y, S)


def planted_suite(seed: int = 0, count: int = 50, max_dim: int = 60, max_m: int = 200):
    """Deterministic batch of planted problems with varied block structure."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        nb = int(rng.integers(1, 4))
        dims = tuple(int(d) for d in rng.integers(2, max_dim + 1, nb))
        if k % 10 == 0:
            dims = (max_dim,)
        nonneg = int(rng.integers(0, 8))
        free = int(rng.integers(0, 4))
        dof = sum(d * (d + 1) // 2 for d in dims) + nonneg
        m = int(min(max_m, rng.integers(free + 1, max(free + 2, dof // 2))))
        m = max(m, free + 1)
        out.append(planted_problem(rng, dims, nonneg, free, m))
    return out
