"""SDPA sparse (.dat-s) reader and writer.

SDPA states  max <F0, Y>  s.t.  <F_i, Y> = c_i,  Y PSD  (the primal of the solver's
dual pair), so F_i = A_i, c = b and F0 = -C for a minimization.  We add two comment
lines so that sense and free blocks survive a round trip:

    * mcsos sense=min
    * mcsos free k d       (block k is a free block of dimension d, stored split)
"""
from __future__ import annotations

import re

import numpy as np
import scipy.sparse as sp

from .problem import Block, SdpProblem

_SPLIT = re.compile(r"[\s,{}()]+")


class SdpaParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_sdpa(p: SdpProblem) -> bytes:
    p.validate()
    sign = -1.0 if p.sense == "min" else 1.0
    out = [f"* mcsos sense={p.sense}"]
    struct = []
    for k, blk in enumerate(p.blocks):
        if blk.kind == "psd":
            struct.append(str(blk.dim))
        elif blk.kind == "nonneg":
            struct.append(str(-blk.dim))
        else:
            out.append(f"* mcsos free {k + 1} {blk.dim}")
            struct.append(str(-2 * blk.dim))
    out.append(str(p.m))
    out.append(str(len(p.blocks)))
    out.append(" ".join(struct))
    out.append(" ".join(_fmt(v) for v in p.b) if p.m else "")

    def entries(mat_no, k, blk, vec):
        lines = []
        if blk.kind == "psd":
            n = blk.dim
            M = vec.reshape(n, n)
            iu, ju = np.nonzero(np.triu(M))
            for i, j in zip(iu, ju):
                lines.append(f"{mat_no} {k + 1} {i + 1} {j + 1} {_fmt(M[i, j])}")
        else:
            vals = vec if blk.kind == "nonneg" else np.concatenate([vec, -vec])
            for i in np.flatnonzero(vals):
                lines.append(f"{mat_no} {k + 1} {i + 1} {i + 1} {_fmt(vals[i])}")
        return lines

    for k, (blk, c) in enumerate(zip(p.blocks, p.c)):
        out.extend(entries(0, k, blk, sign * np.asarray(c).ravel()))
    for k, (blk, a) in enumerate(zip(p.blocks, p.a)):
        coo = a.tocoo()
        r, col, v = coo.row, coo.col, coo.data
        if blk.kind == "psd":
            i, j = np.divmod(col, blk.dim)
            keep = (i <= j) & (v != 0)
        else:
            i = j = col
            keep = v != 0
            if blk.kind == "free":
                r = np.concatenate([r, r])
                i = j = np.concatenate([col, col + blk.dim])
                v = np.concatenate([v, -v])
                keep = np.concatenate([keep, keep])
        r, i, j, v = r[keep], i[keep], j[keep], v[keep]
        order = np.lexsort((j, i, r))
        out.extend(f"{ri + 1} {k + 1} {ii + 1} {jj + 1} {_fmt(vv)}"
                   for ri, ii, jj, vv in zip(r[order].tolist(), i[order].tolist(),
                                             j[order].tolist(), v[order].tolist()))
    return ("\n".join(out) + "\n").encode()


def import_sdpa(data: bytes | str) -> SdpProblem:
    text = data.decode() if isinstance(data, bytes) else data
    sense = "min"
    free: dict[int, int] = {}
    body: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line[:1] in ("*", '"'):
            m = re.match(r"[*\"]\s*mcsos\s+(.*)", line)
            if m:
                words = m.group(1).split()
                if words and words[0].startswith("sense="):
                    sense = words[0].split("=", 1)[1]
                    if sense not in ("min", "max"):
                        raise SdpaParseError(lineno, f"unknown sense {sense!r}")
                elif words and words[0] == "free" and len(words) == 3:
                    free[int(words[1]) - 1] = int(words[2])
            continue
        body.append((lineno, line))

    pos = 0

    def tokens(line):
        return [t for t in _SPLIT.split(line) if t]

    def take_line(what):
        nonlocal pos
        while pos < len(body) and not tokens(body[pos][1]):
            pos += 1
        if pos >= len(body):
            last = body[-1][0] if body else 1
            raise SdpaParseError(last, f"unexpected end of input, expected {what}")
        ln, line = body[pos]
        pos += 1
        return ln, tokens(line)

    def to_int(lineno, tok, what):
        try:
            return int(tok)
        except ValueError:
            try:
                f = float(tok)
            except ValueError:
                raise SdpaParseError(lineno, f"{what}: {tok!r} is not a number") from None
            if f != int(f):
                raise SdpaParseError(lineno, f"{what}: {tok!r} is not an integer") from None
            return int(f)

    def to_float(lineno, tok, what):
        try:
            v = float(tok)
        except ValueError:
            raise SdpaParseError(lineno, f"{what}: {tok!r} is not a number") from None
        if not np.isfinite(v):
            raise SdpaParseError(lineno, f"{what}: non-finite value {tok!r}")
        return v

    if not any(tokens(line) for _, line in body):
        raise SdpaParseError(1, "empty problem")
    ln, toks = take_line("constraint count")
    m = to_int(ln, toks[0], "constraint count")
    ln, toks = take_line("block count")
    nb = to_int(ln, toks[0], "block count")
    if nb < 1:
        raise SdpaParseError(ln, "at least one block is required")
    if m < 0:
        raise SdpaParseError(ln, "negative constraint count")
    ln, toks = take_line("block structure")
    if len(toks) < nb:
        raise SdpaParseError(ln, f"block structure lists {len(toks)} sizes, expected {nb}")
    struct = [to_int(ln, t, "block size") for t in toks[:nb]]
    if any(d == 0 for d in struct):
        raise SdpaParseError(ln, "zero block size")
    # the rhs may span several lines (or be empty when m = 0)
    rhs: list[float] = []
    while len(rhs) < m:
        ln, toks = take_line("right-hand side")
        rhs.extend(to_float(ln, t, "rhs") for t in toks)
    if len(rhs) > m:
        raise SdpaParseError(ln, f"right-hand side has {len(rhs)} entries, expected {m}")

    blocks = []
    for k, d in enumerate(struct):
        if k in free:
            if d != -2 * free[k]:
                raise SdpaParseError(ln, f"free block {k + 1} annotated with dimension {free[k]}")
            blocks.append(Block("free", free[k]))
        elif d > 0:
            blocks.append(Block("psd", d))
        else:
            blocks.append(Block("nonneg", -d))
    cost = []
    for blk in blocks:
        cost.append(np.zeros((blk.dim, blk.dim)) if blk.kind == "psd" else np.zeros(abs(struct[len(cost)])))
    trip = _entries_fast([line for _, line in body[pos:] if line], m, struct, cost)
    if trip is None:
        trip = _entries_slow(body[pos:], m, struct, cost, tokens, to_int, to_float)
    sign = -1.0 if sense == "min" else 1.0
    cs, As = [], []
    for k, blk in enumerate(blocks):
        dim = abs(struct[k])
        size = dim * dim if struct[k] > 0 else dim
        A = sp.csr_matrix((trip[k][2], (trip[k][0], trip[k][1])), shape=(m, size))
        A.sum_duplicates()
        c = sign * cost[k]
        if blk.kind == "free":
            d = blk.dim
            if not (np.array_equal(A[:, :d].toarray(), -A[:, d:].toarray())
                    and np.array_equal(c[:d], -c[d:])):
                raise SdpaParseError(1, f"free block {k + 1} is not stored as a split pair")
            A = A[:, :d].tocsr()
            c = c[:d]
        cs.append(c + 0.0)
        As.append(A)
    try:
        return SdpProblem(tuple(blocks), tuple(cs), tuple(As), np.array(rhs, dtype=float), sense)
    except ValueError as e:
        raise SdpaParseError(1, str(e)) from None


def _entries_fast(lines, m, struct, cost):
    """Vectorized parse of well-formed entry lines; None defers to the line-by-line path."""
    if not lines:
        return [[[], [], []] for _ in struct]
    try:
        arr = np.loadtxt(lines, dtype=float, ndmin=2)
    except ValueError:
        return None
    if arr.shape[1] != 5 or not np.all(np.isfinite(arr)):
        return None
    idx = arr[:, :4]
    if np.any(idx != np.round(idx)):
        return None
    mat, k, i, j = (idx[:, c].astype(np.int64) for c in range(4))
    k -= 1
    i -= 1
    j -= 1
    v = arr[:, 4]
    st = np.asarray(struct)
    if np.any((mat < 0) | (mat > m) | (k < 0) | (k >= len(struct))):
        return None
    dim = np.abs(st[k])
    if np.any((i < 0) | (j < 0) | (i >= dim) | (j >= dim)) or np.any((st[k] < 0) & (i != j)):
        return None
    i, j = np.minimum(i, j), np.maximum(i, j)
    trip = []
    for b, d in enumerate(struct):
        sel = k == b
        c0 = sel & (mat == 0)
        # later cost entries overwrite earlier ones, as in the line-by-line path
        if d > 0:
            cost[b][i[c0], j[c0]] = v[c0]
            cost[b][j[c0], i[c0]] = v[c0]
        else:
            cost[b][i[c0]] = v[c0]
        a = sel & (mat > 0)
        r, ii, jj, vv = mat[a] - 1, i[a], j[a], v[a]
        if d > 0:
            off = ii != jj
            trip.append([np.concatenate([r, r[off]]),
                         np.concatenate([ii * d + jj, jj[off] * d + ii[off]]),
                         np.concatenate([vv, vv[off]])])
        else:
            trip.append([r, ii, vv])
    return trip


def _entries_slow(body, m, struct, cost, tokens, to_int, to_float):
    nb = len(struct)
    trip = [[[], [], []] for _ in struct]
    for lineno, line in body:
        toks = tokens(line)
        if not toks:
            continue
        if len(toks) != 5:
            raise SdpaParseError(lineno, f"expected 5 fields, found {len(toks)}")
        mat = to_int(lineno, toks[0], "matrix number")
        k = to_int(lineno, toks[1], "block number") - 1
        i = to_int(lineno, toks[2], "row") - 1
        j = to_int(lineno, toks[3], "column") - 1
        v = to_float(lineno, toks[4], "value")
        if not 0 <= mat <= m:
            raise SdpaParseError(lineno, f"matrix number {mat} outside 0..{m}")
        if not 0 <= k < nb:
            raise SdpaParseError(lineno, f"block number {k + 1} outside 1..{nb}")
        dim = abs(struct[k])
        if not (0 <= i < dim and 0 <= j < dim):
            raise SdpaParseError(lineno, f"index ({i + 1}, {j + 1}) outside block {k + 1}")
        if struct[k] < 0 and i != j:
            raise SdpaParseError(lineno, "off-diagonal entry in a diagonal block")
        if i > j:
            i, j = j, i
        if mat == 0:
            if struct[k] > 0:
                cost[k][i, j] = v
                cost[k][j, i] = v
            else:
                cost[k][i] = v
        else:
            t = trip[k]
            t[0].append(mat - 1)
            t[1].append(i * dim + j if struct[k] > 0 else i)
            t[2].append(v)
            if struct[k] > 0 and i != j:
                t[0].append(mat - 1)
                t[1].append(j * dim + i)
                t[2].append(v)
    return trip


def problems_equal(p: SdpProblem, q: SdpProblem, tol: float = 1e-15) -> bool:
    """Structural equality within tol (relative) on every coefficient."""
    if p.sense != q.sense or p.blocks != q.blocks or p.m != q.m:
        return False

    def close(a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(a))))

    if not close(p.b, q.b):
        return False
    for c1, c2, a1, a2 in zip(p.c, q.c, p.a, q.a):
        if not close(c1, c2):
            return False
        d = (a1 - a2).tocoo()
        if d.nnz and np.any(np.abs(d.data) > tol * np.maximum(1.0, np.abs(a1.tocsr()[d.row, d.col].A1))):
            return False
    return True
