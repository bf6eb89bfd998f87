"""Block SDP in standard primal form.

    min (or max)  sum_b <C_b, X_b>
    s.t.          sum_b <A_ib, X_b> = b_i,   X_b in K_b

K_b is the PSD cone ("psd"), the nonnegative orthant ("nonneg") or all of R^d
("free").  PSD data are stored as full row-major vectorizations, so an
off-diagonal coefficient appears at both (p, q) and (q, p).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

KINDS = ("psd", "nonneg", "free")


@dataclass(frozen=True)
class Block:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("block dimension must be positive")

    @property
    def size(self) -> int:
        return self.dim * self.dim if self.kind == "psd" else self.dim


@dataclass
class SdpProblem:
    blocks: tuple[Block, ...]
    c: tuple[np.ndarray, ...]
    a: tuple[sp.csr_matrix, ...]
    b: np.ndarray
    sense: str = "min"

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = tuple(np.asarray(c, dtype=float) for c in self.c)
        self.a = tuple(sp.csr_matrix(a) for a in self.a)
        self.validate()

    @property
    def m(self) -> int:
        return len(self.b)

    def validate(self):
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if not (len(self.blocks) == len(self.c) == len(self.a)):
            raise ValueError("blocks, costs and constraint data disagree in length")
        if not self.blocks:
            raise ValueError("problem has no blocks")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("non-finite right-hand side")
        for k, (blk, c, a) in enumerate(zip(self.blocks, self.c, self.a)):
            want = (blk.dim, blk.dim) if blk.kind == "psd" else (blk.dim,)
            if c.shape != want:
                raise ValueError(f"block {k}: cost shape {c.shape}, expected {want}")
            if a.shape != (self.m, blk.size):
                raise ValueError(f"block {k}: data shape {a.shape}, expected {(self.m, blk.size)}")
            if not np.all(np.isfinite(c)) or not np.all(np.isfinite(a.data)):
                raise ValueError(f"block {k}: non-finite data")
            if blk.kind == "psd":
                if not np.allclose(c, c.T, rtol=0, atol=1e-12 * (1 + np.abs(c).max())):
                    raise ValueError(f"block {k}: cost matrix is not symmetric")
                at = _transpose_vec(a, blk.dim)
                if (a - at).count_nonzero() and abs(a - at).max() > 1e-12 * (1 + abs(a).max()):
                    raise ValueError(f"block {k}: constraint matrices are not symmetric")

    def A(self, X) -> np.ndarray:
        out = np.zeros(self.m)
        for a, x in zip(self.a, X):
            out += a @ np.asarray(x, dtype=float).ravel()
        return out

    def At(self, y) -> list[np.ndarray]:
        out = []
        for blk, a in zip(self.blocks, self.a):
            v = a.T @ y
            out.append(v.reshape(blk.dim, blk.dim) if blk.kind == "psd" else v)
        return out

    def objective(self, X) -> float:
        return float(sum(np.sum(c * np.asarray(x)) for c, x in zip(self.c, X)))

    def constraint_matrix(self, i: int, block: int) -> np.ndarray:
        blk = self.blocks[block]
        row = self.a[block].getrow(i).toarray().ravel()
        return row.reshape(blk.dim, blk.dim) if blk.kind == "psd" else row


def _transpose_vec(a: sp.csr_matrix, n: int) -> sp.csr_matrix:
    coo = a.tocoo()
    p, q = np.divmod(coo.col, n)
    return sp.csr_matrix((coo.data, (coo.row, q * n + p)), shape=a.shape)


class SdpBuilder:
    """Accumulates blocks and sparse constraint entries, then freezes an SdpProblem."""

    def __init__(self):
        self.blocks: list[Block] = []
        self._cost: list[np.ndarray] = []
        self._rows: list[list[np.ndarray]] = []
        self._cols: list[list[np.ndarray]] = []
        self._vals: list[list[np.ndarray]] = []
        self.b: list[float] = []

    @property
    def m(self) -> int:
        return len(self.b)

    def add_block(self, kind: str, dim: int) -> int:
        blk = Block(kind, dim)
        self.blocks.append(blk)
        self._cost.append(np.zeros((dim, dim)) if kind == "psd" else np.zeros(dim))
        self._rows.append([])
        self._cols.append([])
        self._vals.append([])
        return len(self.blocks) - 1

    def add_constraints(self, rhs) -> np.ndarray:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        start = len(self.b)
        self.b.extend(rhs.tolist())
        return np.arange(start, start + len(rhs))

    def add_constraint(self, rhs: float) -> int:
        return int(self.add_constraints([rhs])[0])

    def add_entries(self, block: int, rows, i, j=None, vals=1.0):
        """A_row[i, j] += v (and A_row[j, i] += v when i != j) for PSD blocks."""
        blk = self.blocks[block]
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape).copy()
        if blk.kind == "psd":
            # stored on the upper triangle; build() mirrors after summing duplicates
            j = np.atleast_1d(np.asarray(j, dtype=np.int64))
            r, c, v = rows, np.minimum(i, j) * blk.dim + np.maximum(i, j), vals
        else:
            r, c, v = rows, i, vals
        self._rows[block].append(r)
        self._cols[block].append(c)
        self._vals[block].append(v)

    def set_cost(self, block: int, i: int, j: int | None = None, value: float = 1.0):
        c = self._cost[block]
        if self.blocks[block].kind == "psd":
            c[i, j] = value
            c[j, i] = value
        else:
            c[i] = value

    def cost(self, block: int) -> np.ndarray:
        return self._cost[block]

    def build(self, sense: str = "min") -> SdpProblem:
        a = []
        for k, blk in enumerate(self.blocks):
            if self._rows[k]:
                r = np.concatenate(self._rows[k])
                c = np.concatenate(self._cols[k])
                v = np.concatenate(self._vals[k])
            else:
                r = c = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            mat = sp.csr_matrix((v, (r, c)), shape=(self.m, blk.size))
            mat.sum_duplicates()
            if blk.kind == "psd":
                # mirror summed values so both triangles hold bit-identical entries
                coo = mat.tocoo()
                p, q = np.divmod(coo.col, blk.dim)
                off = p != q
                mat = sp.csr_matrix((np.concatenate([coo.data, coo.data[off]]),
                                     (np.concatenate([coo.row, coo.row[off]]),
                                      np.concatenate([coo.col, q[off] * blk.dim + p[off]]))),
                                    shape=(self.m, blk.size))
            mat.eliminate_zeros()
            a.append(mat)
        return SdpProblem(tuple(self.blocks), tuple(self._cost), tuple(a),
                          np.array(self.b), sense)


@dataclass
class SdpSolution:
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_inf: float
    dual_inf: float
    gap: float
    status: str
    iterations: int
    rel_primal_inf: float = 0.0
    rel_dual_inf: float = 0.0
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class Residuals:
    primal_inf: float
    dual_inf: float
    gap: float
    rel_primal_inf: float
    rel_dual_inf: float


def residuals(p: SdpProblem, sol_or_X, y=None, S=None) -> Residuals:
    """Recompute infeasibilities (max norms) and relative duality gap from raw data.

    The dual is taken in minimization form, A^T y + S = C (C negated for max problems).
    """
    if isinstance(sol_or_X, SdpSolution):
        X, y, S = sol_or_X.X, sol_or_X.y, sol_or_X.S
    else:
        X = sol_or_X
    if len(X) != len(p.blocks) or len(S) != len(p.blocks):
        raise ValueError("solution has the wrong number of blocks")
    y = np.asarray(y, dtype=float)
    if y.shape != (p.m,):
        raise ValueError(f"dual vector has shape {y.shape}, expected ({p.m},)")
    for blk, x, s in zip(p.blocks, X, S):
        want = (blk.dim, blk.dim) if blk.kind == "psd" else (blk.dim,)
        if np.shape(x) != want or np.shape(s) != want:
            raise ValueError("block shape mismatch")
    sign = 1.0 if p.sense == "min" else -1.0
    rp = p.b - p.A(X)
    aty = p.At(y)
    rd = [sign * c - a - s for c, a, s in zip(p.c, aty, S)]
    pobj = p.objective(X)
    dobj = sign * float(p.b @ y)
    pinf = float(np.abs(rp).max(initial=0.0))
    dinf = float(max(np.abs(r).max(initial=0.0) for r in rd))
    cmax = max(float(np.abs(c).max(initial=0.0)) for c in p.c)
    bmax = float(np.abs(p.b).max(initial=0.0))
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return Residuals(pinf, dinf, gap, pinf / (1.0 + bmax), dinf / (1.0 + cmax))
