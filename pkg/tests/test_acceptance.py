"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line to ``conftest.ACCEPTANCE_LINES`` (shown in the
terminal summary) before asserting, so a failing criterion still reports its numbers.
"""
import json
import time

import numpy as np
import pytest

from mcsos.certify import Certificate, arrowhead_Q, verify_identity
from mcsos.cli import EXIT_OK, main
from mcsos.model import instance_to_dict, parse_instance, propagate_truth, serialize_instance
from mcsos.pipeline import (PipelineConfig, PipelineError, baseline_identity, error_of,
                            solve_end_to_end, stage1_assemble, stage1_direct, stage2_assemble)
from mcsos.polybasis import build_basis, eval_basis
from mcsos.sdpcore import solve
from mcsos.sdpcore.planted import planted_suite
from mcsos.sdpcore.sdpa import export_sdpa, import_sdpa, problems_equal
from mcsos.toolkit import BenchConfig, GenConfig, bench_cases, gen_graph, gen_instance, sample_truth

from conftest import ACCEPTANCE_LINES, DATA, WORKED_TRUTH, TIGHT, worked_example, trivial_max, trivial_min

pytestmark = pytest.mark.slow

SEED = 2026


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def run_cases(cases, opts=None):
    """Solve every case; exceptions become a failed status with no error value."""
    out = []
    for c in cases:
        try:
            rec = solve_end_to_end(c.instance, opts or PipelineConfig())
            out.append((c, rec.status, rec.error, np.asarray(rec.gram_spectrum)))
        except PipelineError as e:
            out.append((c, f"failed:{e.stage}", None, None))
    return out


@pytest.fixture(scope="module")
def chain_batch():
    cfg = BenchConfig(master_seed=SEED, vertices=(6, 8), graphs=10, truths=3, stage1="sdp")
    t0 = time.perf_counter()
    res = run_cases(bench_cases(cfg))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def mixing_batches():
    base = BenchConfig(master_seed=SEED, vertices=(6,), graphs=3, truths=3)
    mixed = BenchConfig(master_seed=SEED, vertices=(6,), graphs=3, truths=3, mixings=3)
    return run_cases(bench_cases(base)), run_cases(bench_cases(mixed))


def test_1_worked_example_cli(capsys):
    t0 = time.perf_counter()
    code = main(["solve", str(DATA / "worked3x3.json"), "--stage1", "sdp"])
    dt = time.perf_counter() - t0
    rep = json.loads(capsys.readouterr().out)
    err = rep["error"] if rep["error"] is not None else np.inf
    ok = (code == EXIT_OK and rep["status"] == "recovered" and err <= 1e-4
          and abs(rep["objective_stage2"]) <= 1e-4 and dt <= 120)
    record(1, ok, f"status={rep['status']} Er={err:.3e} |rho*|={abs(rep['objective_stage2']):.3e} "
                  f"time={dt:.1f}s")
    assert ok
    np.testing.assert_allclose(rep["z_star"], WORKED_TRUTH, rtol=1e-4)


def test_2_certificate_identity_suite():
    rng = np.random.default_rng([SEED, 2])
    t0 = time.perf_counter()
    worst = 0.0
    for v in np.repeat([4, 6, 8, 10], 25):
        inst = gen_instance(gen_graph(int(v), rng), rng, GenConfig(vertices=int(v)))
        res = stage1_direct(inst)
        basis = build_basis(inst.n, inst.m, 2)
        cert = Certificate(res.Q, 0.0, res.U, propagate_truth(inst), inst, basis)
        worst = max(worst, verify_identity(cert, relative=True))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt <= 60
    record(2, ok, f"100 instances, max residual/max coeff={worst:.3e} time={dt:.1f}s")
    assert ok


def test_3_arrowhead_rank_law():
    rng = np.random.default_rng([SEED, 3])
    bad = 0
    worst_null = 0.0
    for _ in range(100):
        s = int(rng.integers(1, 10))
        n = int(rng.integers(1, s + 1))
        basis = build_basis(n, s + 1 - n, 2)
        z0 = sample_truth(s, rng, (-5.0, 5.0), 0.1)
        Q = arrowhead_Q(z0, basis).dense()
        w = np.linalg.eigvalsh(Q)
        lmax = w[-1]
        u = eval_basis(basis, z0)
        null = np.linalg.norm(Q @ u) / (np.linalg.norm(Q) * np.linalg.norm(u))
        worst_null = max(worst_null, null)
        if not (w[0] <= 1e-10 * lmax and np.all(w[1:] >= 1e-8 * lmax) and null <= 1e-9):
            bad += 1
    ok = bad == 0
    record(3, ok, f"100 z0, violations={bad}, max |Q u2|/(|Q|_F |u2|)={worst_null:.3e}")
    assert ok


def test_4_gram_rank_law(chain_batch):
    res, _ = chain_batch
    good = 0
    for _, _, _, w in res:
        if w is not None and w[-1] > 0 and w[1] / w[-1] >= 1e-6 and w[0] / w[-1] <= 1e-6:
            good += 1
    frac = good / len(res)
    ok = len(res) == 60 and frac >= 0.95
    record(4, ok, f"{good}/{len(res)} Gram matrices with the rank N-1 spectrum")
    assert ok


def test_5_chain_recovery(chain_batch):
    res, dt = chain_batch
    errs = [e for _, st, e, _ in res if st == "recovered" and e is not None and e <= 1e-4]
    frac = len(errs) / len(res)
    mean = float(np.mean(errs)) if errs else np.inf
    ok = frac >= 0.95
    stretch = mean <= 1e-5
    record(5, ok, f"{len(errs)}/{len(res)} recovered with Er<=1e-4, mean Er={mean:.3e} "
                  f"(stretch <=1e-5: {'met' if stretch else 'missed'}) batch time={dt:.0f}s")
    assert ok
    assert stretch


def test_6_hidden_connectivity(mixing_batches):
    base, mixed = mixing_batches
    good = [e for _, st, e, _ in mixed if st == "recovered" and e is not None and e <= 1e-3]
    ident = [e for _, st, e, _ in base if st == "recovered" and e is not None]
    frac = len(good) / len(mixed)
    mixed_mean = float(np.mean(good)) if good else np.inf
    ident_mean = float(np.mean(ident)) if ident else np.inf
    ok = len(mixed) == 27 and frac >= 0.90 and mixed_mean > ident_mean
    record(6, ok, f"{len(good)}/{len(mixed)} mixed recovered with Er<=1e-3, "
                  f"mean Er mixed={mixed_mean:.3e} vs C=I {ident_mean:.3e}")
    assert ok


def test_7_solver_correctness():
    worst_gap = worst_obj = 0.0
    not_opt = 0
    for pl in planted_suite(seed=0, count=50):
        sol = solve(pl.problem)
        not_opt += not sol.optimal
        worst_gap = max(worst_gap, sol.gap)
        worst_obj = max(worst_obj, abs(sol.primal_objective - pl.objective) / max(1.0, abs(pl.objective)))
    a, b = solve(trivial_min(), TIGHT), solve(trivial_max(), TIGHT)
    triv = max(abs(a.primal_objective - 1.0), abs(b.primal_objective - 1.0),
               float(np.abs(a.X[0] - np.diag([1.0, 0.0])).max()), abs(b.X[1][0] - 1.0))
    ok = not_opt == 0 and worst_gap <= 1e-8 and worst_obj <= 1e-7 and triv <= 1e-10
    record(7, ok, f"planted 50: non-optimal={not_opt} max gap={worst_gap:.2e} "
                  f"max obj err={worst_obj:.2e}; trivial err={triv:.2e}")
    assert ok


def test_8_cross_path_consistency():
    inst = worked_example()
    sdp = solve_end_to_end(inst, PipelineConfig(stage1="sdp"))
    direct = solve_end_to_end(inst, PipelineConfig(stage1="direct"))
    base = baseline_identity(inst)
    paths = error_of(direct.z_star, sdp.z_star)
    vs_base = error_of(base.z_star, sdp.z_star)
    ok = (sdp.status == direct.status == "recovered" and base.status == "recovered"
          and paths <= 1e-4 and vs_base <= 1e-3)
    record(8, ok, f"direct vs sdp={paths:.3e}, baseline vs arrowhead={vs_base:.3e}")
    assert ok


def _corpus_instances():
    out = [worked_example()]
    for cfg in (BenchConfig(master_seed=SEED, vertices=(4, 6, 8, 10), graphs=3, truths=2),
                BenchConfig(master_seed=SEED, vertices=(6,), graphs=2, truths=1, mixings=2)):
        out += [c.instance for c in bench_cases(cfg)]
    return out


def _corpus_sdps():
    inst = worked_example()
    basis = build_basis(inst.n, inst.m, 2)
    probs = [trivial_min(), trivial_max()]
    probs += [pl.problem for pl in planted_suite(seed=0, count=50)]
    probs.append(stage1_assemble(inst, basis).sdp)
    probs.append(stage1_assemble(inst, basis, PipelineConfig(reduce=False)).sdp)
    probs.append(stage2_assemble(stage1_direct(inst, basis).fsum, inst, basis).sdp)
    return probs


def test_9_format_roundtrip():
    bad_json = 0
    insts = _corpus_instances()
    for inst in insts:
        text = serialize_instance(inst)
        back = parse_instance(text)
        if (instance_to_dict(back) != instance_to_dict(inst) or serialize_instance(back) != text
                or not np.array_equal(back.truth, inst.truth)):
            bad_json += 1
    bad_sdpa = 0
    probs = _corpus_sdps()
    for p in probs:
        data = export_sdpa(p)
        q = import_sdpa(data)
        if not problems_equal(p, q, tol=0.0) or export_sdpa(q) != data:
            bad_sdpa += 1
    ok = bad_json == 0 and bad_sdpa == 0
    record(9, ok, f"{len(insts)} instances ({bad_json} lossy), {len(probs)} SDPs ({bad_sdpa} lossy)")
    assert ok
