"""Infeasible primal-dual path-following SDP solver.

Nesterov-Todd scaling, Mehrotra predictor-corrector, dense Schur complement.
Free blocks enter the Newton system directly through an augmented Schur system.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import SdpProblem, SdpSolution, residuals

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    verbose: bool = False
    # dense Kronecker Schur assembly below this many (active rows x dim^2) entries
    dense_schur_limit: int = 4_000_000
    stall_iters: int = 8
    refine_steps: int = 3


class _Cone:
    """One internal cone block with row-scaled data."""

    def __init__(self, kind: str, dim: int, A: sp.csr_matrix, C: np.ndarray, origin: int):
        self.kind = kind
        self.dim = dim
        self.A = A.tocsr()
        self.At = self.A.T.tocsr()
        self.C = C
        self.origin = origin
        self.rows = np.unique(self.A.tocoo().row)
        if kind == "psd":
            self._prepare_psd()

    def _prepare_psd(self):
        n = self.dim
        sub = self.A[self.rows].tocsr()
        self.dense = len(self.rows) * n * n <= _limit[0]
        if self.dense:
            self.Adense = sub.toarray().reshape(len(self.rows), n, n)
            return
        iu, ju = np.triu_indices(n)
        self.tri_index = iu * n + ju
        weight = np.where(iu == ju, 1.0, 2.0)
        col_of = -np.ones(n * n, dtype=np.int64)
        col_of[self.tri_index] = np.arange(len(iu))
        coo = sub.tocoo()
        keep_mask = col_of[coo.col] >= 0
        self.Ahalf = sp.csr_matrix(
            (coo.data[keep_mask] * weight[col_of[coo.col[keep_mask]]],
             (coo.row[keep_mask], col_of[coo.col[keep_mask]])),
            shape=(len(self.rows), len(iu)))
        self.entries = []
        indptr, indices, data = sub.indptr, sub.indices, sub.data
        for r in range(len(self.rows)):
            cols = indices[indptr[r]:indptr[r + 1]]
            p, q = np.divmod(cols, n)
            self.entries.append((p, q, data[indptr[r]:indptr[r + 1]].copy()))

    def apply(self, x) -> np.ndarray:
        return self.A @ x.ravel()

    def adjoint(self, y) -> np.ndarray:
        v = self.At @ y
        return v.reshape(self.dim, self.dim) if self.kind == "psd" else v

    def schur(self, W, M):
        rows = self.rows
        if not len(rows):
            return
        if self.kind != "psd":
            sub = self.A[rows]
            block = (sub.multiply(W[None, :]) @ sub.T).toarray()
            M[np.ix_(rows, rows)] += block
            return
        if self.dense:
            T = np.matmul(np.matmul(W, self.Adense), W)
            block = T.reshape(len(rows), -1) @ self.Adense.reshape(len(rows), -1).T
            M[np.ix_(rows, rows)] += block
            return
        ntri = len(self.tri_index)
        chunk = max(1, min(len(rows), 4_000_000 // ntri))
        Y = np.empty((ntri, chunk))
        out = np.empty((len(rows), len(rows)))
        for start in range(0, len(rows), chunk):
            stop = min(start + chunk, len(rows))
            for col, j in enumerate(range(start, stop)):
                p, q, v = self.entries[j]
                Yj = (W[:, p] * v) @ W[q, :]
                Y[:, col] = Yj.ravel()[self.tri_index]
            out[:, start:stop] = self.Ahalf @ Y[:, : stop - start]
        M[np.ix_(rows, rows)] += 0.5 * (out + out.T)


_limit = [SolverOptions.dense_schur_limit]


def _sym(A):
    return 0.5 * (A + A.T)


def _inner(a, b) -> float:
    return float(np.sum(a * b))


def _max_step_psd(L, d):
    """Largest alpha with L L^T + alpha d PSD (inf if d is PSD)."""
    T = sla.solve_triangular(L, d, lower=True, check_finite=False)
    T = sla.solve_triangular(L, T.T, lower=True, check_finite=False)
    lam = np.linalg.eigvalsh(_sym(T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, d):
    neg = d < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / d[neg]))


def _chol(X):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(X)
        w = np.maximum(w, 1e-300 + 1e-15 * max(w.max(), 1e-300))
        return np.linalg.cholesky(_sym((V * w) @ V.T))


def solve(p: SdpProblem, opts: SolverOptions | None = None, **kw) -> SdpSolution:
    opts = opts or SolverOptions(**kw)
    p.validate()
    _limit[0] = opts.dense_schur_limit
    m = p.m
    sign = 1.0 if p.sense == "min" else -1.0

    # row scaling over all blocks
    sq = np.zeros(m)
    for a in p.a:
        sq += np.asarray(a.multiply(a).sum(axis=1)).ravel()
    rownorm = np.sqrt(sq)
    empty = rownorm == 0
    if np.any(empty & (p.b != 0)):
        X0 = [np.zeros((blk.dim, blk.dim)) if blk.kind == "psd" else np.zeros(blk.dim)
              for blk in p.blocks]
        return _package(p, X0, np.zeros(m), [x.copy() for x in X0], "infeasible-detected", 0, [])
    dscale = np.where(empty, 1.0, 1.0 / np.where(empty, 1.0, rownorm))
    Dm = sp.diags(dscale)
    bs = dscale * p.b

    cones: list[_Cone] = []
    for k, (blk, c, a) in enumerate(zip(p.blocks, p.c, p.a)):
        As = (Dm @ a).tocsr()
        c = sign * c
        kind = {"psd": "psd", "nonneg": "lp", "free": "free"}[blk.kind]
        cones.append(_Cone(kind, blk.dim, As, c, k))
    nu = max(1, sum(cn.dim for cn in cones if cn.kind != "free"))
    free = [k for k, cn in enumerate(cones) if cn.kind == "free"]
    Af = Vf = None
    if free:
        # free variables only matter through A_f x_f; work in the row space of A_f
        Afull = sp.hstack([cones[k].A for k in free]).toarray()
        _, sv, vt = np.linalg.svd(Afull, full_matrices=False)
        keep = sv > 1e-12 * max(float(sv.max(initial=0.0)), 1e-300)
        Vf = vt[keep].T
        Af = Afull @ Vf
    fsplit = np.cumsum([cones[k].dim for k in free])[:-1]

    # SDPT3-style starting point
    X, S = [], []
    for cn in cones:
        n = cn.dim
        rows = cn.A
        anorm = np.sqrt(np.asarray(rows.multiply(rows).sum(axis=1)).ravel())
        cnorm = float(np.linalg.norm(cn.C))
        xi = max(10.0, np.sqrt(n), n * float(np.max((1 + np.abs(bs)) / (1 + anorm), initial=1.0)))
        eta = max(10.0, np.sqrt(n), float(anorm.max(initial=0.0)), cnorm)
        if cn.kind == "psd":
            X.append(xi * np.eye(n))
            S.append(eta * np.eye(n))
        elif cn.kind == "free":
            X.append(np.zeros(n))
            S.append(np.zeros(n))
        else:
            X.append(np.full(n, xi))
            S.append(np.full(n, eta))
    y = np.zeros(m)

    bnorm = float(np.abs(p.b).max(initial=0.0))
    cnorm_orig = max(float(np.abs(c).max(initial=0.0)) for c in p.c)
    history: list[dict] = []
    best = None
    status = "max-iterations"
    stall = 0
    it = 0
    mu_ref = np.inf
    best_pinf = np.inf

    def stats(X, y, S):
        rp = bs - sum(cn.apply(x) for cn, x in zip(cones, X))
        rd = [cn.C - cn.adjoint(y * 1.0) - s for cn, s in zip(cones, S)]
        pobj = sum(_inner(cn.C, x) for cn, x in zip(cones, X))
        dobj = float(bs @ y)
        pinf = float(np.abs(rp / dscale).max(initial=0.0)) / (1 + bnorm)
        dinf = max(float(np.abs(r).max(initial=0.0)) for r in rd) / (1 + cnorm_orig)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        return rp, rd, pobj, dobj, pinf, dinf, gap

    for it in range(opts.max_iter + 1):
        rp, rd, pobj, dobj, pinf, dinf, gap = stats(X, y, S)
        mu = sum(_inner(x, s) for cn, x, s in zip(cones, X, S) if cn.kind != "free") / nu
        history.append(dict(it=it, pobj=pobj, dobj=dobj, pinf=pinf, dinf=dinf, gap=gap, mu=mu))
        if opts.verbose:
            log.info("it %3d pobj %+.9e dobj %+.9e pinf %.2e dinf %.2e gap %.2e mu %.2e",
                     it, sign * pobj, sign * dobj, pinf, dinf, gap, mu)
        merit = max(pinf / opts.feas_tol, dinf / opts.feas_tol, gap / opts.gap_tol)
        if best is None or merit < best[0]:
            best = (merit, [x.copy() for x in X], y.copy(), [s.copy() for s in S])
            stall = 0
            mu_ref = mu
        elif mu < 1e-2 * mu_ref and pinf <= 10 * max(best_pinf, opts.feas_tol):
            # the relative gap can stay flat while mu still falls by decades
            stall = 0
            mu_ref = mu
        else:
            stall += 1
        best_pinf = min(best_pinf, pinf)
        if pinf <= opts.feas_tol and dinf <= opts.feas_tol and gap <= opts.gap_tol:
            status = "optimal"
            break
        if it == opts.max_iter:
            break
        if stall >= opts.stall_iters:
            status = "numerical-failure"
            break
        xmax = max(float(np.abs(x).max()) for x in X)
        ymax = float(np.abs(y).max(initial=0.0))
        if xmax > 1e14 * (1 + bnorm) or ymax > 1e14 * (1 + cnorm_orig):
            status = "infeasible-detected"
            break

        # NT scaling
        scal = []
        for cn, x, s in zip(cones, X, S):
            if cn.kind == "psd":
                L = _chol(x)
                R = _chol(s)
                U_, d, Vt = np.linalg.svd(R.T @ L)
                d = np.maximum(d, 1e-300)
                G = L @ (Vt.T / np.sqrt(d))
                Ginv = (np.sqrt(d)[:, None] * Vt) @ sla.solve_triangular(
                    L, np.eye(cn.dim), lower=True, check_finite=False)
                W = G @ G.T
                scal.append(dict(L=L, R=R, d=d, G=G, Ginv=Ginv, W=_sym(W)))
            elif cn.kind == "lp":
                scal.append(dict(d=np.sqrt(x * s), W=x / s))
            else:
                scal.append(None)

        M = np.zeros((m, m))
        for cn, sc in zip(cones, scal):
            if sc is not None:
                cn.schur(sc["W"], M)
        if free and Af.shape[1]:
            # M may be singular with only the free columns making the KKT system regular;
            # adding gamma Af Af^T (and gamma Af r2 on the right) keeps the solution
            AAt = Af @ Af.T
            gamma = (np.trace(M) + 1.0) / (np.trace(AAt) + 1e-300)
            M += gamma * AAt
        factor, delta = _factor(M)
        if factor is None:
            status = "numerical-failure"
            break
        if free and Af.shape[1]:
            # reduced system for the free variables: (Af^T M^-1 Af) dxf = ...
            MinvAf = sla.cho_solve(factor, Af, check_finite=False)
            Kf = _sym(Af.T @ MinvAf)
            kf_factor, _ = _factor(Kf)
            if kf_factor is None:
                status = "numerical-failure"
                break

        def kkt_solve(r1, r2):
            """Solve M dy + Af dxf = r1, Af^T dy = r2."""
            if not free:
                return sla.cho_solve(factor, r1, check_finite=False), None
            if not Af.shape[1]:
                return sla.cho_solve(factor, r1, check_finite=False), np.zeros(0)
            v = sla.cho_solve(factor, r1 + gamma * (Af @ r2), check_finite=False)
            dxf = sla.cho_solve(kf_factor, Af.T @ v - r2, check_finite=False)
            return v - MinvAf @ dxf, dxf

        def schur_apply(v):
            out = np.zeros(m)
            for cn, sc in zip(cones, scal):
                if sc is None:
                    continue
                t = cn.adjoint(v)
                if cn.kind == "psd":
                    out += cn.apply(sc["W"] @ t @ sc["W"])
                else:
                    out += cn.apply(sc["W"] * t)
            return out

        def direction(Rcs):
            gzg, wrw = [], []
            for cn, sc, Rc, r in zip(cones, scal, Rcs, rd):
                if sc is None:
                    gzg.append(np.zeros(cn.dim))
                    wrw.append(np.zeros(cn.dim))
                    continue
                d = sc["d"]
                if cn.kind == "psd":
                    Z = 2.0 * Rc / (d[:, None] + d[None, :])
                    gzg.append(_sym(sc["G"] @ Z @ sc["G"].T))
                    wrw.append(_sym(sc["W"] @ r @ sc["W"]))
                else:
                    gzg.append(Rc / d * np.sqrt(sc["W"]))
                    wrw.append(sc["W"] * r)
            rhs = rp - sum(cn.apply(g) for cn, g in zip(cones, gzg)) \
                + sum(cn.apply(w) for cn, w in zip(cones, wrw))
            rf = Vf.T @ np.concatenate([rd[k] for k in free]) if free else None
            dy, dxf = kkt_solve(rhs, rf)
            # refine against the Schur operator itself, not the assembled matrix
            for _ in range(opts.refine_steps):
                res = rhs - schur_apply(dy)
                if free:
                    res -= Af @ dxf
                    res2 = rf - Af.T @ dy
                else:
                    res2 = None
                size = np.linalg.norm(res) + (np.linalg.norm(res2) if free else 0.0)
                if size <= 1e-14 * (1 + np.linalg.norm(rhs)):
                    break
                ddy, ddxf = kkt_solve(res, res2)
                dy = dy + ddy
                if free:
                    dxf = dxf + ddxf
            fparts = dict(zip(free, np.split(Vf @ dxf, fsplit))) if free else {}
            dS, dX = [], []
            for k, (cn, sc, r, g) in enumerate(zip(cones, scal, rd, gzg)):
                if sc is None:
                    dS.append(np.zeros(cn.dim))
                    dX.append(fparts[k])
                    continue
                ds = r - cn.adjoint(dy)
                if cn.kind == "psd":
                    ds = _sym(ds)
                    dx = g - _sym(sc["W"] @ ds @ sc["W"])
                else:
                    dx = g - sc["W"] * ds
                dS.append(ds)
                dX.append(dx)
            return dX, dy, dS

        def steps(dX, dS):
            ap, ad = np.inf, np.inf
            for cn, sc, x, s, dx, ds in zip(cones, scal, X, S, dX, dS):
                if sc is None:
                    continue
                if cn.kind == "psd":
                    ap = min(ap, _max_step_psd(sc["L"], dx))
                    ad = min(ad, _max_step_psd(sc["R"], ds))
                else:
                    ap = min(ap, _max_step_lp(x, dx))
                    ad = min(ad, _max_step_lp(s, ds))
            return ap, ad

        # predictor
        Rc_aff = []
        for cn, sc in zip(cones, scal):
            if sc is None:
                Rc_aff.append(None)
                continue
            d = sc["d"]
            Rc_aff.append(-np.diag(d * d) if cn.kind == "psd" else -(d * d))
        dXa, dya, dSa = direction(Rc_aff)
        ap, ad = steps(dXa, dSa)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(_inner(x + ap * dx, s + ad * ds)
                     for cn, x, s, dx, ds in zip(cones, X, S, dXa, dSa) if cn.kind != "free") / nu
        expon = max(1.0, 3.0 * min(ap, ad) ** 2)
        sigma = min(1.0, max(0.0, mu_aff / mu) ** expon)
        gamma = 0.9 + 0.09 * min(ap, ad)

        # corrector
        Rc = []
        for cn, sc, dx, ds in zip(cones, scal, dXa, dSa):
            if sc is None:
                Rc.append(None)
                continue
            d = sc["d"]
            if cn.kind == "psd":
                tx = sc["Ginv"] @ dx @ sc["Ginv"].T
                ts = sc["G"].T @ ds @ sc["G"]
                corr = 0.5 * (tx @ ts + ts @ tx)
                Rc.append(sigma * mu * np.eye(cn.dim) - np.diag(d * d) - corr)
            else:
                tx = dx / np.sqrt(sc["W"])
                ts = ds * np.sqrt(sc["W"])
                Rc.append(sigma * mu - d * d - tx * ts)
        dX, dy, dS = direction(Rc)
        ap, ad = steps(dX, dS)
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        history[-1].update(alpha_p=ap, alpha_d=ad, sigma=sigma, reg=delta)
        if opts.verbose:
            log.info("      step p %.3f d %.3f sigma %.2e reg %.0e", ap, ad, sigma, delta)
        X = [x + ap * dx for x, dx in zip(X, dX)]
        S = [s + ad * ds for s, ds in zip(S, dS)]
        y = y + ad * dy
        X = [_sym(x) if cn.kind == "psd" else x for cn, x in zip(cones, X)]
        S = [_sym(s) if cn.kind == "psd" else s for cn, s in zip(cones, S)]

    if status != "optimal" and best is not None:
        _, X, y, S = best
    # back to the caller's scaling
    return _package(p, X, dscale * y, S, status, it, history)


def _factor(M):
    M = _sym(M)
    diag = np.abs(np.diag(M))
    scale = float(diag.max(initial=1.0)) or 1.0
    zero = diag == 0
    if np.any(zero):
        M[zero, zero] = scale
    for delta in (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            Mr = M + (delta * scale) * np.eye(len(M)) if delta else M
            return sla.cho_factor(Mr, lower=True, check_finite=False), delta
        except np.linalg.LinAlgError:
            continue
    return None, None


def _package(p, X, y, S, status, it, history) -> SdpSolution:
    res = residuals(p, X, y, S)
    sign = 1.0 if p.sense == "min" else -1.0
    pobj = p.objective(X)
    dobj = sign * float(p.b @ y)
    return SdpSolution(X=X, y=y, S=S, primal_objective=pobj, dual_objective=dobj,
                       primal_inf=res.primal_inf, dual_inf=res.dual_inf, gap=res.gap,
                       status=status, iterations=it, rel_primal_inf=res.rel_primal_inf,
                       rel_dual_inf=res.rel_dual_inf, history=history)
