"""Two-stage recovery: find (Q, U), build f_sum, solve the SOS relaxation, read z* off
the Gram null space.  Also the identity-objective baseline."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from .certify import ArrowheadQ, assemble_U
from .model import Instance, propagate_truth, spanning_chains
from .polybasis import (MonomialBasis, MonomialCodec, Polynomial, build_basis, kron_entries,
                        kron_quadform_to_poly, monomials_up_to,
                        quadform_to_poly)
from .sdpcore import SdpBuilder, SdpProblem, SdpSolution, SolverOptions, solve

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Failure inside one pipeline stage; `stage` names it."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


class Stage1InconsistencyError(PipelineError):
    def __init__(self, msg: str):
        super().__init__("fsum", msg)


@dataclass(frozen=True)
class PipelineConfig:
    stage1: str = "sdp"             # "sdp" or "direct"
    mu: float = 1e6
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    null_tol: float = 1e-6
    rank_tol: float = 1e-6
    consistency_tol: float = 1e-5
    tol_fsum: float = 1e-6
    sdp_identity_tol: float = 1e-6
    polish: bool = False
    reduce: bool = True
    tiebreak: float = 1e-6
    # Stage 2 feeds an eigenvector whose error scales like tol / (lambda_2 / lambda_N),
    # so it is solved tighter than Stage 1
    stage2_tol: float = 1e-10

    def solver_options(self, stage: int = 1) -> SolverOptions:
        if stage == 2:
            return SolverOptions(gap_tol=min(self.gap_tol, self.stage2_tol),
                                 feas_tol=min(self.feas_tol, self.stage2_tol),
                                 max_iter=self.max_iter)
        return SolverOptions(gap_tol=self.gap_tol, feas_tol=self.feas_tol, max_iter=self.max_iter)


@dataclass
class Stage1Result:
    Q: ArrowheadQ
    U: np.ndarray
    fsum: Polynomial
    source: str
    identity_residual: float
    scale: float = 1.0
    solution: SdpSolution | None = field(default=None, repr=False)


@dataclass
class Recovery:
    z_star: np.ndarray
    gram_spectrum: np.ndarray
    rank_estimate: int
    rho_star: float
    objective_stage2: float
    status: str
    error: float | None = None
    label: str = ""
    z_polished: np.ndarray | None = None
    error_polished: float | None = None
    timings: dict = field(default_factory=dict)
    message: str = ""

    def report(self) -> dict:
        head = [float(v) for v in self.gram_spectrum[:3]]
        out = {
            "label": self.label,
            "status": self.status,
            "z_star": [float(v) for v in self.z_star],
            "rho_star": float(self.rho_star),
            "objective_stage2": float(self.objective_stage2),
            "gram_spectrum_head": head,
            "rank_estimate": int(self.rank_estimate),
            "error": None if self.error is None else float(self.error),
            "timings": {"stage1_s": float(self.timings.get("stage1_s", 0.0)),
                        "stage2_s": float(self.timings.get("stage2_s", 0.0))},
        }
        if self.z_polished is not None:
            out["z_polished"] = [float(v) for v in self.z_polished]
            out["error_polished"] = self.error_polished
        if self.message:
            out["message"] = self.message
        return out

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2)


def error_of(z_star, z0) -> float:
    z_star = np.asarray(z_star, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if z_star.shape != z0.shape:
        raise ValueError(f"length mismatch: {z_star.shape} vs {z0.shape}")
    nz = np.linalg.norm(z0)
    if nz == 0:
        raise ValueError("reference point is zero")
    return float(np.linalg.norm(z_star - z0) / nz)


# -- coefficient matching helpers ---------------------------------------------

class _RowMap:
    """Sorted monomial codes -> constraint rows."""

    def __init__(self, codes, first_row: int):
        self.codes = np.unique(np.asarray(codes, dtype=np.int64))
        self.first = first_row

    def __len__(self):
        return len(self.codes)

    def rows(self, codes) -> np.ndarray:
        pos = np.searchsorted(self.codes, codes)
        if np.any(pos >= len(self.codes)) or np.any(self.codes[np.minimum(pos, len(self.codes) - 1)] != codes):
            raise KeyError("monomial outside the matching set")
        return self.first + pos


def _pair_terms(codes, coefs, P, R):
    """Code/value triples of e_P * e_R, pairwise, skipping zero padding."""
    cc = codes[P][:, :, None] + codes[R][:, None, :]
    vv = coefs[P][:, :, None] * coefs[R][:, None, :]
    idx = np.broadcast_to(np.arange(len(P))[:, None, None], cc.shape)
    keep = vv != 0.0
    return cc[keep], vv[keep], idx[keep]


# -- stage 1 -------------------------------------------------------------------

@dataclass
class Stage1Problem:
    sdp: SdpProblem
    basis: MonomialBasis
    lift: np.ndarray            # KN x r; U = lift @ X_U @ lift.T
    KN: int
    n_match: int
    mode: str                   # "face" or "full"


def _kron_coefficients(inst: Instance, basis: MonomialBasis, codec: MonomialCodec):
    """Dense coefficient matrix E (KN x monomials) of the entries of h (x) u2."""
    codes, coefs = kron_entries(inst.polynomials(), basis, codec)
    mono = np.unique(codes[coefs != 0])
    E = np.zeros((codes.shape[0], len(mono)))
    rows = np.broadcast_to(np.arange(codes.shape[0])[:, None], codes.shape)
    keep = coefs != 0
    np.add.at(E, (rows[keep], np.searchsorted(mono, codes[keep])), coefs[keep])
    return E, mono


def degree_face(inst: Instance, basis: MonomialBasis | None = None, rtol: float = 1e-10):
    """Orthonormal P such that every PSD U with deg (h (x) u2)^T U (h (x) u2) <= 4 and no
    component along identically vanishing combinations satisfies U = P P^T U P P^T.

    A sum of squares of degree 4 only contains squares of degree <= 2, so the range of
    such a U consists of combinations v with deg(v^T (h (x) u2)) <= 2.  Returns P and the
    coefficients of the polynomials P^T (h (x) u2) over the returned monomials.
    """
    basis = basis or build_basis(inst.n, inst.m, 2)
    codec = MonomialCodec(basis.s)
    E, mono = _kron_coefficients(inst, basis, codec)
    deg = codec.degree(mono)
    high = deg > 2
    V = scipy.linalg.null_space(E[:, high].T, rcond=rtol) if np.any(high) else np.eye(E.shape[0])
    R = V.T @ E[:, ~high]
    if R.size == 0:
        return np.zeros((E.shape[0], 0)), mono[~high], np.zeros((0, int(np.sum(~high))))
    W, sv, Vt = np.linalg.svd(R, full_matrices=False)
    r = int(np.sum(sv > rtol * sv[0])) if len(sv) and sv[0] > 0 else 0
    P = V @ W[:, :r]
    coefs = sv[:r, None] * Vt[:r]
    coefs[np.abs(coefs) <= 1e-14 * max(np.abs(coefs).max(initial=0.0), 1e-300)] = 0.0
    return P, mono[~high], coefs


def _arrowhead_block(b: SdpBuilder, rm: _RowMap, ucodes) -> int:
    N = len(ucodes)
    qb = b.add_block("psd", N)
    qi, qj = np.triu_indices(N)
    b.add_entries(qb, rm.rows(ucodes[qi] + ucodes[qj]), qi, qj, 1.0)
    # arrowhead pattern: unit diagonal and zero coupling below the first row/column
    r = np.arange(1, N)
    b.add_entries(qb, b.add_constraints(np.ones(N - 1)), r, r, 1.0)
    fi, fj = np.triu_indices(N - 1, k=1)
    if len(fi):
        b.add_entries(qb, b.add_constraints(np.zeros(len(fi))), fi + 1, fj + 1, 1.0)
    return qb


def stage1_assemble(inst: Instance, basis: MonomialBasis | None = None,
                    opts: PipelineConfig | None = None) -> Stage1Problem:
    """Q (arrowhead pattern) and U PSD with u2^T Q u2 = (h (x) u2)^T U (h (x) u2), min trace U.

    With opts.reduce the U block is written on the degree face (see degree_face), which
    keeps every feasible certificate but removes directions the identity forces to zero.
    """
    opts = opts or PipelineConfig()
    basis = basis or build_basis(inst.n, inst.m, 2)
    N, K = basis.N, inst.K
    KN = K * N
    codec = MonomialCodec(basis.s)
    ucodes = codec.encode(basis.exps())
    qi, qj = np.triu_indices(N)
    if opts.reduce:
        lift, pmono, pcoef = degree_face(inst, basis)
        r = lift.shape[1]
        codes = np.broadcast_to(pmono[None, :], pcoef.shape)
    else:
        lift = np.eye(KN)
        r = KN
        codes, pcoef = kron_entries(inst.polynomials(), basis, codec)
    ui, uj = np.triu_indices(r)
    u_codes, u_vals, u_pair = _pair_terms(np.asarray(codes), pcoef, ui, uj)

    b = SdpBuilder()
    rm = _RowMap(np.concatenate([ucodes[qi] + ucodes[qj], u_codes]), 0)
    b.add_constraints(np.zeros(len(rm)))
    _arrowhead_block(b, rm, ucodes)
    ub = b.add_block("psd", max(r, 1))
    if r:
        b.add_entries(ub, rm.rows(u_codes), ui[u_pair], uj[u_pair], -u_vals)
    for t in range(r):
        b.set_cost(ub, t, t, 1.0)
    return Stage1Problem(b.build("min"), basis, lift, KN, len(rm), "face" if opts.reduce else "full")


def fsum_from(U, inst: Instance, basis: MonomialBasis | None = None,
              tol_fsum: float = 1e-6) -> Polynomial:
    """Expand (h (x) u2)^T U (h (x) u2), check the degree 5..8 part is negligible, truncate."""
    basis = basis or build_basis(inst.n, inst.m, 2)
    full = kron_quadform_to_poly(inst.polynomials(), basis, U)
    low = full.truncate(4)
    high = full.part(5, 8)
    ref = low.max_abs_coeff()
    if high.max_abs_coeff() > tol_fsum * ref or (ref == 0 and not high.is_zero()):
        raise Stage1InconsistencyError(
            f"degree 5-8 coefficients reach {high.max_abs_coeff():.3e} "
            f"against {ref:.3e} at degree <= 4")
    return low


def _stage1_result(Q: ArrowheadQ, U, inst, basis, source, tol_fsum, solution=None) -> Stage1Result:
    fsum = fsum_from(U, inst, basis, tol_fsum)
    qpoly = quadform_to_poly(basis, Q.dense())
    full = kron_quadform_to_poly(inst.polynomials(), basis, U)
    scale = max(qpoly.max_abs_coeff(), 1e-300)
    return Stage1Result(Q, U, fsum, source, qpoly.max_diff(full), scale, solution)


def stage1_direct(inst: Instance, basis: MonomialBasis | None = None,
                  tol_fsum: float = 1e-6) -> Stage1Result:
    basis = basis or build_basis(inst.n, inst.m, 2)
    tree = spanning_chains(inst)
    z0 = propagate_truth(inst, tree)
    cert = assemble_U(inst, tree, z0, basis)
    return _stage1_result(cert.Q, cert.U, inst, basis, "direct", tol_fsum)


def stage1_sdp(inst: Instance, basis: MonomialBasis | None = None,
               opts: PipelineConfig | None = None) -> Stage1Result:
    opts = opts or PipelineConfig()
    basis = basis or build_basis(inst.n, inst.m, 2)
    try:
        return _stage1_sdp_once(inst, basis, opts)
    except Stage1InconsistencyError:
        raise
    except PipelineError as e:
        if not opts.reduce:
            raise
        # without an interior point the dual can drift off on the face; the full
        # parametrization is larger but gives the iterates room
        log.info("stage 1 on the degree face failed (%s); retrying on the full basis", e)
        res = _stage1_sdp_once(inst, basis, replace(opts, reduce=False))
        res.source = "sdp-full"
        return res


def _stage1_sdp_once(inst: Instance, basis: MonomialBasis, opts: PipelineConfig) -> Stage1Result:
    prob = stage1_assemble(inst, basis, opts)
    sol = solve(prob.sdp, opts.solver_options())
    # Q is pinned to a singular matrix, so the problem has no interior point and the
    # gap often stalls; the identity residual below is the acceptance test instead.
    if sol.status == "infeasible-detected":
        raise PipelineError("stage1", f"solver returned {sol.status} after {sol.iterations} iterations")
    Q = ArrowheadQ.from_dense(sol.X[0])
    Xu = 0.5 * (sol.X[1] + sol.X[1].T)
    U = prob.lift @ Xu[: prob.lift.shape[1], : prob.lift.shape[1]] @ prob.lift.T
    res = _stage1_result(Q, 0.5 * (U + U.T), inst, basis, "sdp", opts.tol_fsum, sol)
    if res.identity_residual > opts.sdp_identity_tol * res.scale:
        raise PipelineError("stage1", f"identity residual {res.identity_residual:.3e} "
                                      f"exceeds {opts.sdp_identity_tol:g} x {res.scale:.3e}")
    return res


# -- stage 2 -------------------------------------------------------------------

@dataclass
class Stage2Problem:
    """max rho with rho eliminated through the constant-monomial equation:
    rho = rho_offset - <base_cost, X>.  The solver objective may add a small
    multiplier penalty on top of base_cost (tie-break among optimal solutions)."""

    sdp: SdpProblem
    basis: MonomialBasis
    monomials: np.ndarray       # codes of every matched monomial, constant included
    rho_offset: float
    gram_block: int
    delta_blocks: dict = field(default_factory=dict)   # k -> (delta block, complement block)
    scalar_index: dict = field(default_factory=dict)   # k -> position in the nonneg block
    scalar_block: int | None = None
    free_block: int | None = None
    base_cost: tuple | None = None

    @property
    def n_match(self) -> int:
        return len(self.monomials) - 1

    def rho(self, sol: SdpSolution) -> float:
        cost = self.base_cost if self.base_cost is not None else self.sdp.c
        return self.rho_offset - float(sum(np.sum(c * x) for c, x in zip(cost, sol.X)))


def _eliminate_constant(b: SdpBuilder, sense: str = "min") -> tuple[SdpProblem, float]:
    """Move row 0 (constant monomial) into the objective and drop it."""
    p = b.build(sense)
    c = []
    for blk, cost, a in zip(p.blocks, p.c, p.a):
        row = a.getrow(0).toarray().ravel()
        c.append(cost + (row.reshape(blk.dim, blk.dim) if blk.kind == "psd" else row))
    a = [mat[1:] for mat in p.a]
    return SdpProblem(p.blocks, tuple(c), tuple(a), p.b[1:], sense), float(p.b[0])


def _gram_rows(b: SdpBuilder, block: int, rm: _RowMap, ucodes):
    N = len(ucodes)
    i, j = np.triu_indices(N)
    b.add_entries(block, rm.rows(ucodes[i] + ucodes[j]), i, j, 1.0)


def stage2_assemble(fsum: Polynomial, inst: Instance, basis: MonomialBasis | None = None,
                    mu: float = 1e6, tiebreak: float = 0.0) -> Stage2Problem:
    """max rho s.t. fsum - rho + sum_k h_k^2 lambda_k = u2^T W u2, W PSD.

    lambda_k = u1^T Delta_k u1 with 0 <= Delta_k <= mu I when d_k = 1, a scalar in
    [0, mu] when d_k = 2.  tiebreak > 0 subtracts tiebreak * (sum tr Delta_k + sum
    lambda_k) from the objective, which selects small multipliers among the optimal
    solutions instead of the analytic centre of the box.
    """
    basis = basis or build_basis(inst.n, inst.m, 2)
    s, N = basis.s, basis.N
    codec = MonomialCodec(s)
    ucodes = codec.encode(basis.exps())
    u1 = ucodes[: s + 1]
    mono = codec.encode(list(monomials_up_to(s, 4)))
    b = SdpBuilder()
    rm = _RowMap(mono, 0)
    rhs = np.zeros(len(rm))
    fc, fv = codec.from_poly(fsum)
    if len(fc):
        np.add.at(rhs, rm.rows(fc) - rm.first, fv)
    b.add_constraints(rhs)
    wb = b.add_block("psd", N)
    _gram_rows(b, wb, rm, ucodes)

    h = inst.polynomials()
    deltas, scalars = {}, {}
    two = [k for k, d in enumerate(inst.degrees) if d == 2]
    for k, d in enumerate(inst.degrees):
        if d != 1:
            continue
        hc, hv = codec.from_poly(h[k] * h[k])
        db = b.add_block("psd", s + 1)
        sb = b.add_block("psd", s + 1)
        ai, aj = np.triu_indices(s + 1)
        cc = hc[None, :] + (u1[ai] + u1[aj])[:, None]
        vv = np.broadcast_to(hv[None, :], cc.shape)
        pair = np.broadcast_to(np.arange(len(ai))[:, None], cc.shape)
        b.add_entries(db, rm.rows(cc.ravel()), ai[pair.ravel()], aj[pair.ravel()], -vv.ravel())
        # Delta_k + Sigma_k = mu I
        rows = b.add_constraints(np.where(ai == aj, mu, 0.0))
        b.add_entries(db, rows, ai, aj, 1.0)
        b.add_entries(sb, rows, ai, aj, 1.0)
        deltas[k] = (db, sb)
    lb = None
    if two:
        L = len(two)
        lb = b.add_block("nonneg", 2 * L)
        for pos, k in enumerate(two):
            hc, hv = codec.from_poly(h[k] * h[k])
            b.add_entries(lb, rm.rows(hc), np.full(len(hc), pos), vals=-hv)
            scalars[k] = pos
        rows = b.add_constraints(np.full(L, mu))
        b.add_entries(lb, rows, np.arange(L), vals=1.0)
        b.add_entries(lb, rows, L + np.arange(L), vals=1.0)
    sdp, offset = _eliminate_constant(b)
    base = sdp.c
    if tiebreak > 0:
        c = list(sdp.c)
        for db, _ in deltas.values():
            c[db] = c[db] + tiebreak * np.eye(s + 1)
        if lb is not None:
            c[lb] = c[lb] + tiebreak * np.concatenate([np.ones(len(two)), np.zeros(len(two))])
        sdp = SdpProblem(sdp.blocks, tuple(c), sdp.a, sdp.b, sdp.sense)
    return Stage2Problem(sdp, basis, rm.codes, offset, wb, deltas, scalars, lb, base_cost=base)


def extract_gram(sol: SdpSolution, prob: Stage2Problem | None = None, block: int = 0) -> np.ndarray:
    if not sol.optimal:
        raise PipelineError("stage2", f"solver returned {sol.status}; no Gram matrix")
    G = np.asarray(sol.X[prob.gram_block if prob is not None else block], dtype=float)
    G = 0.5 * (G + G.T)
    w = np.linalg.eigvalsh(G)
    if w[0] < -1e-8 * max(w[-1], 0.0):
        raise PipelineError("gram", f"Gram matrix indefinite: min eigenvalue {w[0]:.3e}, max {w[-1]:.3e}")
    return G


# -- recovery ------------------------------------------------------------------

def recover(G, basis: MonomialBasis, opts: PipelineConfig | None = None) -> Recovery:
    opts = opts or PipelineConfig()
    G = np.asarray(G, dtype=float)
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    lmax = w[-1]
    s = basis.s
    rank = int(np.sum(w > opts.null_tol * lmax)) if lmax > 0 else 0
    u = V[:, 0]
    if u[0] < 0:
        u = -u
    nan = np.full(s, np.nan)
    if lmax <= 0:
        return Recovery(nan, w, rank, np.nan, np.nan, "failed", message="Gram matrix is zero")
    if abs(u[0]) < 1e-6 * np.linalg.norm(u):
        return Recovery(nan, w, rank, np.nan, np.nan, "failed",
                        message="null vector has a vanishing constant entry")
    v = u / u[0]
    z = v[1: s + 1].copy()
    status, msg = "recovered", ""
    if not (w[0] / lmax <= opts.null_tol and len(w) > 1 and w[1] / lmax >= opts.rank_tol):
        status = "rank-ambiguous"
        msg = f"lambda1/lmax = {w[0] / lmax:.3e}, lambda2/lmax = {w[1] / lmax if len(w) > 1 else 0:.3e}"
        if w[0] / lmax > opts.null_tol and len(w) > 1 and w[1] / lmax >= opts.rank_tol:
            status, msg = "failed", "Gram matrix has no null direction; " + msg
    else:
        zz = np.concatenate([[1.0], z])
        f = np.array(basis.factors) + 1
        want = zz[f[:, 0]] * zz[f[:, 1]]
        bad = np.abs(v - want) > opts.consistency_tol * (1.0 + np.abs(want))
        if np.any(bad):
            status = "rank-ambiguous"
            msg = f"null vector inconsistent with monomial structure at {int(bad.sum())} entries"
    return Recovery(z, w, rank, np.nan, np.nan, status, message=msg)


def polish(inst: Instance, z, max_iter: int = 20) -> np.ndarray:
    """Gauss-Newton refinement of sum_k h_k(z)^2."""
    res = scipy.optimize.least_squares(inst.residuals, np.asarray(z, dtype=float),
                                       method="lm", max_nfev=max_iter * (inst.s + 1))
    return res.x


# -- drivers -------------------------------------------------------------------

def _finish(rec: Recovery, inst: Instance, opts: PipelineConfig, rho, obj, timings) -> Recovery:
    rec = replace(rec, rho_star=rho, objective_stage2=obj, label=inst.label, timings=timings)
    if inst.truth is not None and np.all(np.isfinite(rec.z_star)):
        rec.error = error_of(rec.z_star, inst.truth)
    if opts.polish and np.all(np.isfinite(rec.z_star)):
        rec.z_polished = polish(inst, rec.z_star)
        if inst.truth is not None:
            rec.error_polished = error_of(rec.z_polished, inst.truth)
    return rec


def run_stage2(fsum: Polynomial, inst: Instance, basis: MonomialBasis,
               opts: PipelineConfig) -> tuple[Recovery, float, float, float]:
    try:
        prob = stage2_assemble(fsum, inst, basis, opts.mu, opts.tiebreak)
    except Exception as e:  # noqa: BLE001 - tag and re-raise
        raise PipelineError("stage2-assemble", str(e)) from e
    t0 = time.perf_counter()
    sol = solve(prob.sdp, opts.solver_options(2))
    dt = time.perf_counter() - t0
    G = extract_gram(sol, prob)
    rec = recover(G, basis, opts)
    rho = prob.rho(sol)
    return rec, rho, rho, dt


def solve_end_to_end(inst: Instance, opts: PipelineConfig | None = None,
                     stage1: Stage1Result | None = None) -> Recovery:
    opts = opts or PipelineConfig()
    basis = build_basis(inst.n, inst.m, 2)
    t0 = time.perf_counter()
    if stage1 is None:
        try:
            if opts.stage1 == "direct":
                stage1 = stage1_direct(inst, basis, opts.tol_fsum)
            elif opts.stage1 == "sdp":
                stage1 = stage1_sdp(inst, basis, opts)
            else:
                raise ValueError(f"unknown stage1 mode {opts.stage1!r}")
        except PipelineError:
            raise
        except Exception as e:  # noqa: BLE001
            raise PipelineError("stage1", f"{type(e).__name__}: {e}") from e
    t1 = time.perf_counter() - t0
    rec, rho, obj, t2 = run_stage2(stage1.fsum, inst, basis, opts)
    return _finish(rec, inst, opts, rho, obj, {"stage1_s": t1, "stage2_s": t2})


def baseline_assemble(inst: Instance, basis: MonomialBasis | None = None,
                      tiebreak: float = 0.0) -> Stage2Problem:
    """max rho s.t. u2^T u2 - rho + sum_k h_k lambda_k is SOS, lambda_k free of degree 4 - d_k.

    With tiebreak > 0 the multiplier coefficients are split as lambda = p - q with
    p, q >= 0 and tiebreak * sum(p + q) is added to the objective.  The moment side
    of the unpenalized problem typically has a single feasible point, which an
    interior-point method cannot approach; the penalty restores an interior.
    """
    basis = basis or build_basis(inst.n, inst.m, 2)
    s, N = basis.s, basis.N
    codec = MonomialCodec(s)
    ucodes = codec.encode(basis.exps())
    mono = codec.encode(list(monomials_up_to(s, 4)))
    rm = _RowMap(mono, 0)
    target = quadform_to_poly(basis, np.eye(N))
    rhs = np.zeros(len(rm))
    tc, tv = codec.from_poly(target)
    np.add.at(rhs, rm.rows(tc), tv)
    b = SdpBuilder()
    b.add_constraints(rhs)
    wb = b.add_block("psd", N)
    _gram_rows(b, wb, rm, ucodes)
    h = inst.polynomials()
    mults = []
    for k, d in enumerate(inst.degrees):
        mcodes = codec.encode(list(monomials_up_to(s, 4 - d)))
        mults.append(mcodes)
    total = sum(len(mc) for mc in mults)
    split = tiebreak > 0
    fb = b.add_block("nonneg" if split else "free", 2 * total if split else total)
    off = 0
    for k, mcodes in enumerate(mults):
        hc, hv = codec.from_poly(h[k])
        cc = hc[None, :] + mcodes[:, None]
        vv = np.broadcast_to(hv[None, :], cc.shape)
        var = np.broadcast_to(off + np.arange(len(mcodes))[:, None], cc.shape)
        b.add_entries(fb, rm.rows(cc.ravel()), var.ravel(), vals=-vv.ravel())
        if split:
            b.add_entries(fb, rm.rows(cc.ravel()), total + var.ravel(), vals=vv.ravel())
        off += len(mcodes)
    sdp, offset = _eliminate_constant(b)
    base = sdp.c
    if split:
        c = list(sdp.c)
        c[fb] = c[fb] + tiebreak
        sdp = SdpProblem(sdp.blocks, tuple(c), sdp.a, sdp.b, sdp.sense)
    return Stage2Problem(sdp, basis, rm.codes, offset, wb, free_block=fb, base_cost=base)


def baseline_identity(inst: Instance, opts: PipelineConfig | None = None) -> Recovery:
    opts = opts or PipelineConfig()
    basis = build_basis(inst.n, inst.m, 2)
    try:
        prob = baseline_assemble(inst, basis, opts.tiebreak)
    except Exception as e:  # noqa: BLE001
        raise PipelineError("baseline-assemble", str(e)) from e
    t0 = time.perf_counter()
    sol = solve(prob.sdp, opts.solver_options(2))
    dt = time.perf_counter() - t0
    G = extract_gram(sol, prob)
    rec = recover(G, basis, opts)
    rho = prob.rho(sol)
    return _finish(rec, inst, opts, rho, rho, {"stage1_s": 0.0, "stage2_s": dt})


__all__ = [
    "PipelineConfig", "PipelineError", "Recovery", "Stage1InconsistencyError", "Stage1Problem",
    "Stage1Result", "Stage2Problem", "baseline_assemble", "baseline_identity",
    "error_of", "extract_gram", "fsum_from", "recover", "solve_end_to_end",
    "stage1_assemble", "stage1_direct", "stage1_sdp", "stage2_assemble",
]
