"""Partial bilinear data: constraints sum_t c_t x_i y_j = b with x_1 = 1.

Row and column indices of terms are 1-based as in the instance JSON format;
z indices are 0-based, z = [x_2..x_n, y_1..y_m].
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .polybasis import Polynomial

TRUTH_ZERO = 1e-12
TRUTH_RTOL = 1e-9


class InstanceError(ValueError):
    """Malformed instance document; `path` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class StructureError(ValueError):
    """Data does not have the shape an operation requires."""


class ConnectivityError(StructureError):
    pass


class RootError(StructureError):
    pass


class DegenerateDataError(ValueError):
    pass


class InconsistentDataError(ValueError):
    pass


class MixingError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    i: int
    j: int
    c: float


@dataclass(frozen=True)
class Constraint:
    terms: tuple[Term, ...]
    rhs: float

    @property
    def degree(self) -> int:
        return 2 if any(t.i >= 2 for t in self.terms) else 1

    @property
    def elementary(self) -> bool:
        return len(self.terms) == 1


@dataclass(frozen=True)
class Instance:
    n: int
    m: int
    constraints: tuple[Constraint, ...]
    truth: np.ndarray | None = None
    label: str = ""

    @property
    def s(self) -> int:
        return self.n + self.m - 1

    @property
    def K(self) -> int:
        return len(self.constraints)

    @property
    def degrees(self) -> list[int]:
        return [c.degree for c in self.constraints]

    def xz(self, i: int) -> int | None:
        """z position of x_i, None for the anchor x_1."""
        return None if i == 1 else i - 2

    def yz(self, j: int) -> int:
        return self.n - 1 + j - 1

    def polynomials(self) -> list[Polynomial]:
        return [constraint_poly(self, c) for c in self.constraints]

    def residuals(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        zz = np.concatenate([[1.0], z[: self.n - 1]])
        yy = z[self.n - 1:]
        return np.array([sum(t.c * zz[t.i - 1] * yy[t.j - 1] for t in c.terms) - c.rhs
                         for c in self.constraints])

    def with_truth(self, truth) -> "Instance":
        return Instance(self.n, self.m, self.constraints,
                        None if truth is None else np.asarray(truth, dtype=float), self.label)


def constraint_poly(inst: Instance, con: Constraint) -> Polynomial:
    s = inst.s
    terms: dict[tuple[int, ...], float] = {}
    for t in con.terms:
        e = [0] * s
        if t.i >= 2:
            e[inst.xz(t.i)] += 1
        e[inst.yz(t.j)] += 1
        key = tuple(e)
        terms[key] = terms.get(key, 0.0) + t.c
    const = (0,) * s
    terms[const] = terms.get(const, 0.0) - con.rhs
    return Polynomial(s, terms)


def make_instance(n: int, m: int, constraints, truth=None, label: str = "") -> Instance:
    """Validated instance from (terms, rhs) pairs or Constraint objects."""
    cons = []
    for k, con in enumerate(constraints):
        if isinstance(con, Constraint):
            terms, rhs = con.terms, con.rhs
        else:
            terms, rhs = con
        cons.append(_merge_terms(n, m, terms, rhs, f"constraints[{k}]"))
    inst = Instance(int(n), int(m), tuple(cons),
                    None if truth is None else np.asarray(truth, dtype=float), label)
    _validate_truth(inst)
    return inst


def _merge_terms(n, m, terms, rhs, path) -> Constraint:
    merged: dict[tuple[int, int], float] = {}
    for t_idx, t in enumerate(terms):
        if isinstance(t, Term):
            i, j, c = t.i, t.j, t.c
        elif isinstance(t, dict):
            try:
                i, j, c = t["i"], t["j"], t["c"]
            except KeyError as exc:
                raise InstanceError(f"{path}.terms[{t_idx}]", f"missing key {exc}") from None
        else:
            i, j, c = t
        tp = f"{path}.terms[{t_idx}]"
        if not _is_int(i) or not 1 <= i <= n:
            raise InstanceError(f"{tp}.i", f"row index {i!r} outside 1..{n}")
        if not _is_int(j) or not 1 <= j <= m:
            raise InstanceError(f"{tp}.j", f"column index {j!r} outside 1..{m}")
        if not _is_num(c) or not np.isfinite(c):
            raise InstanceError(f"{tp}.c", f"coefficient {c!r} is not a finite number")
        merged[(int(i), int(j))] = merged.get((int(i), int(j)), 0.0) + float(c)
    out = tuple(Term(i, j, c) for (i, j), c in merged.items() if c != 0.0)
    if not out:
        raise InstanceError(f"{path}.terms", "constraint has no nonzero terms")
    if not _is_num(rhs) or not np.isfinite(rhs):
        raise InstanceError(f"{path}.rhs", f"rhs {rhs!r} is not a finite number")
    return Constraint(out, float(rhs))


def _validate_truth(inst: Instance):
    if inst.truth is None:
        return
    z = inst.truth
    if z.shape != (inst.s,):
        raise InstanceError("truth", f"length {z.size}, expected {inst.s}")
    if not np.all(np.isfinite(z)):
        raise InstanceError("truth", "non-finite entries")
    bad = np.flatnonzero(np.abs(z) < TRUTH_ZERO)
    if bad.size:
        raise InstanceError(f"truth[{bad[0]}]", "zero entry violates the no-zeros assumption")
    res = inst.residuals(z)
    for k, con in enumerate(inst.constraints):
        if abs(res[k]) > TRUTH_RTOL * residual_scale(inst, con, z):
            raise InstanceError(f"constraints[{k}]", f"truth violates constraint by {res[k]:.3e}")


def residual_scale(inst: Instance, con: Constraint, z) -> float:
    """1 + |rhs|, widened to the largest term value so mixed rows are not over-tight."""
    zz = np.concatenate([[1.0], z[: inst.n - 1]])
    yy = z[inst.n - 1:]
    terms = max(abs(t.c * zz[t.i - 1] * yy[t.j - 1]) for t in con.terms)
    return max(1.0 + abs(con.rhs), terms)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


# -- JSON ----------------------------------------------------------------------

def parse_instance(doc: bytes | str | dict) -> Instance:
    if isinstance(doc, (bytes, bytearray)):
        doc = doc.decode("utf-8")
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise InstanceError("$", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InstanceError("$", "document must be an object")
    for key in ("n", "m", "constraints"):
        if key not in doc:
            raise InstanceError(key, "missing required field")
    n, m = doc["n"], doc["m"]
    if not _is_int(n) or n < 1:
        raise InstanceError("n", f"expected positive integer, got {n!r}")
    if not _is_int(m) or m < 1:
        raise InstanceError("m", f"expected positive integer, got {m!r}")
    if not isinstance(doc["constraints"], list):
        raise InstanceError("constraints", "expected a list")
    cons = []
    for k, c in enumerate(doc["constraints"]):
        if not isinstance(c, dict) or "terms" not in c or "rhs" not in c:
            raise InstanceError(f"constraints[{k}]", "expected object with 'terms' and 'rhs'")
        if not isinstance(c["terms"], list):
            raise InstanceError(f"constraints[{k}].terms", "expected a list")
        cons.append((c["terms"], c["rhs"]))
    truth = doc.get("truth")
    if truth is not None:
        if not isinstance(truth, list) or not all(_is_num(v) for v in truth):
            raise InstanceError("truth", "expected a list of numbers")
    label = doc.get("label", "")
    if not isinstance(label, str):
        raise InstanceError("label", "expected a string")
    return make_instance(n, m, cons, truth, label)


def instance_to_dict(inst: Instance) -> dict:
    out = {
        "n": inst.n,
        "m": inst.m,
        "constraints": [{"terms": [{"i": t.i, "j": t.j, "c": t.c} for t in c.terms],
                         "rhs": c.rhs} for c in inst.constraints],
    }
    if inst.truth is not None:
        out["truth"] = [float(v) for v in inst.truth]
    if inst.label:
        out["label"] = inst.label
    return out


def serialize_instance(inst: Instance) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(instance_to_dict(inst), indent=1)


# -- graph ---------------------------------------------------------------------

@dataclass(frozen=True)
class BipartiteGraph:
    n: int
    m: int
    edges: frozenset[tuple[int, int]]

    def degrees(self) -> tuple[np.ndarray, np.ndarray]:
        left = np.zeros(self.n, dtype=int)
        right = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            left[i - 1] += 1
            right[j - 1] += 1
        return left, right

    @property
    def max_degree(self) -> int:
        left, right = self.degrees()
        return int(max(left.max(initial=0), right.max(initial=0)))


def bipartite_graph(inst: Instance) -> BipartiteGraph:
    edges = {(t.i, t.j) for c in inst.constraints for t in c.terms}
    return BipartiteGraph(inst.n, inst.m, frozenset(edges))


@dataclass(frozen=True)
class Connectivity:
    components: list[list[tuple[str, int]]]
    connected: bool


def connectivity(graph: BipartiteGraph) -> Connectivity:
    """BFS components over vertices ('x', 1..n) and ('y', 1..m); x_1 is the anchor."""
    adj: dict[tuple[str, int], list[tuple[str, int]]] = {}
    for i in range(1, graph.n + 1):
        adj[("x", i)] = []
    for j in range(1, graph.m + 1):
        adj[("y", j)] = []
    for i, j in sorted(graph.edges):
        adj[("x", i)].append(("y", j))
        adj[("y", j)].append(("x", i))
    seen: set = set()
    comps = []
    for start in adj:
        if start in seen:
            continue
        comp = []
        queue = deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        comps.append(comp)
    return Connectivity(comps, len(comps) == 1)


# -- chains --------------------------------------------------------------------

@dataclass(frozen=True)
class ChainTree:
    """BFS tree rooted at x_1 with one elementary constraint per tree edge.

    parent[v] is the z index of the parent (None for children of x_1) and
    via[v] the constraint joining v to its parent.
    """

    s: int
    parent: tuple[int | None, ...]
    via: tuple[int, ...]
    order: tuple[int, ...] = field(default=())

    def path(self, v: int) -> list[int]:
        """Variables on the root path ending at v, root side first."""
        out = [v]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out[::-1]

    def path_constraints(self, v: int) -> list[int]:
        return [self.via[u] for u in self.path(v)]


def _term_vertices(inst: Instance, t: Term):
    return ("x", t.i), ("y", t.j)


def _zof(inst: Instance, vert) -> int | None:
    side, idx = vert
    return inst.xz(idx) if side == "x" else inst.yz(idx)


def spanning_chains(inst: Instance) -> ChainTree:
    if not all(c.elementary for c in inst.constraints):
        raise StructureError("spanning chains need elementary (single-term) constraints")
    if not any(c.terms[0].i == 1 for c in inst.constraints):
        raise RootError("no constraint involves x_1")
    if not connectivity(bipartite_graph(inst)).connected:
        raise ConnectivityError("data graph is not connected to x_1")
    s = inst.s
    parent: list[int | None] = [None] * s
    via = [-1] * s
    visited = {("x", 1)}
    order = []
    queue = deque([("x", 1)])
    while queue:
        u = queue.popleft()
        fresh = []
        for k, c in enumerate(inst.constraints):
            a, b = _term_vertices(inst, c.terms[0])
            if u == a:
                w = b
            elif u == b:
                w = a
            else:
                continue
            if w in visited:
                continue
            visited.add(w)
            zw = _zof(inst, w)
            parent[zw] = _zof(inst, u)
            via[zw] = k
            fresh.append(w)
        fresh.sort(key=lambda vert: _zof(inst, vert))
        for w in fresh:
            order.append(_zof(inst, w))
            queue.append(w)
    return ChainTree(s, tuple(parent), tuple(via), tuple(order))


def propagate_truth(inst: Instance, tree: ChainTree | None = None) -> np.ndarray:
    """Solve each tree constraint for its child variable, root first."""
    tree = tree or spanning_chains(inst)
    z = np.full(inst.s, np.nan)
    for v in tree.order:
        con = inst.constraints[tree.via[v]]
        t = con.terms[0]
        p = tree.parent[v]
        pval = 1.0 if p is None else z[p]
        denom = t.c * pval
        if abs(denom) < TRUTH_ZERO:
            raise DegenerateDataError(f"propagating z[{v}] divides by {denom:.3e}")
        z[v] = con.rhs / denom
        if abs(z[v]) < TRUTH_ZERO:
            raise DegenerateDataError(f"z[{v}] propagates to zero")
    res = inst.residuals(z)
    for k, con in enumerate(inst.constraints):
        if abs(res[k]) > TRUTH_RTOL * residual_scale(inst, con, z):
            raise InconsistentDataError(
                f"constraint {k} violated by {res[k]:.3e} after propagation")
    return z


# -- mixing --------------------------------------------------------------------

def apply_mixing(inst: Instance, C, require_full_rank: bool = True, label: str | None = None) -> Instance:
    """Instance with constraints C @ h; C is Kbar x K."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != inst.K:
        raise MixingError(f"mixing matrix has {C.shape[1]} columns, instance has K={inst.K}")
    if require_full_rank:
        sv = np.linalg.svd(C, compute_uv=False)
        if C.shape[0] < C.shape[1] or sv.min() <= 1e-9 * sv.max():
            raise MixingError("C^T C is singular")
    cons = []
    for row in C:
        merged: dict[tuple[int, int], float] = {}
        rhs = 0.0
        for w, con in zip(row, inst.constraints):
            if w == 0.0:
                continue
            rhs += w * con.rhs
            for t in con.terms:
                merged[(t.i, t.j)] = merged.get((t.i, t.j), 0.0) + w * t.c
        scale = max((abs(c) for c in merged.values()), default=0.0)
        terms = tuple(Term(i, j, c) for (i, j), c in sorted(merged.items())
                      if abs(c) > 1e-14 * scale)
        if not terms:
            raise MixingError("mixed constraint cancels to a constant")
        cons.append(Constraint(terms, rhs))
    return Instance(inst.n, inst.m, tuple(cons), inst.truth,
                    inst.label if label is None else label)
