import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcsos.model import BipartiteGraph, connectivity, propagate_truth
from mcsos.toolkit import (CSV_COLUMNS, TIMING_COLUMNS, BenchCase, BenchConfig, BenchReport,
                           GenConfig, GenerationError, bench_cases, bench_config_from_dict,
                           gen_graph, gen_instance, gen_mixing, generate, instance_from_graph,
                           load_bench_config, run_bench, run_case, sample_truth)


def test_genconfig_validation():
    GenConfig(vertices=2)
    for kw in (dict(vertices=1), dict(vertices=4, truth_range=(1, 1)),
               dict(vertices=4, degeneracy_floor=0.0), dict(vertices=4, mixing="sometimes"),
               dict(vertices=4, truth_range=(-0.05, 0.05))):
        with pytest.raises(ValueError):
            GenConfig(**kw)


def test_gen_graph_two_vertices(rng):
    g = gen_graph(2, rng)
    assert (g.n, g.m) == (1, 1) and g.edges == {(1, 1)}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gen_graph_v10(seed):
    g = gen_graph(10, np.random.default_rng(seed))
    assert len(g.edges) == 9
    assert g.n + g.m == 10 and 1 <= g.n <= 9
    assert connectivity(g).connected
    left, right = g.degrees()
    assert left.min() >= 1 and right.min() >= 1
    assert g.max_degree == max(left.max(), right.max())


def test_sample_truth_floor(rng):
    z = sample_truth(10_000, rng, (-5, 5), 0.1)
    assert np.all(np.abs(z) >= 0.1) and np.all(np.abs(z) <= 5)


def test_instance_from_graph_examples():
    inst = instance_from_graph(BipartiteGraph(1, 1, frozenset({(1, 1)})), [4.0])
    assert inst.K == 1 and inst.constraints[0].rhs == 4.0
    z0 = np.arange(1, 10, dtype=float)      # x2..x7, y1..y3
    g = BipartiteGraph(7, 3, frozenset({(3, 2)}))
    con = instance_from_graph(g, z0).constraints[0]
    assert (con.terms[0].i, con.terms[0].j) == (3, 2)
    assert con.rhs == z0[1] * z0[6 + 1]     # x3 = z0[1], y2 = z0[7]
    with pytest.raises(ValueError):
        instance_from_graph(g, z0[:-1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_generated_instances_valid(seed, v):
    rng = np.random.default_rng(seed)
    inst = gen_instance(gen_graph(v, rng), rng, GenConfig(vertices=v))
    assert inst.K == v - 1
    assert np.abs(inst.residuals(inst.truth)).max() <= 1e-12 * (1 + np.abs(inst.truth).max() ** 2)
    np.testing.assert_allclose(propagate_truth(inst), inst.truth, rtol=1e-10)


def test_gen_mixing(rng):
    C = gen_mixing(1, rng)
    assert C.shape == (1, 1) and abs(C[0, 0]) == 1.0
    for _ in range(10):
        C = gen_mixing(9, rng)
        np.testing.assert_allclose(np.linalg.norm(C, axis=1), 1.0, atol=1e-12)
        assert np.linalg.svd(C, compute_uv=False).min() >= 1e-3
    with pytest.raises(GenerationError):
        gen_mixing(3, rng, min_sv=10.0)
    with pytest.raises(ValueError):
        gen_mixing(0, rng)


def test_generate_mixed_keeps_truth():
    for (a, _), (b, C) in zip(generate(GenConfig(vertices=6, seed=4, count=3)),
                              generate(GenConfig(vertices=6, seed=4, count=3, mixing="random"))):
        assert np.array_equal(a.truth, b.truth)
        assert C.shape == (a.K, a.K)
        assert np.abs(b.residuals(b.truth)).max() <= 1e-12 * 25


# -- bench ------------------------------------------------------------------------------

def test_bench_config_parsing(tmp_path):
    path = tmp_path / "b.toml"
    path.write_text('master_seed = 9\nvertices = [4, 5]\ngraphs = 2\ntruths = 1\n'
                    'stage1 = "direct"\n[tolerances]\ngap_tol = 1e-7\n')
    cfg = load_bench_config(path)
    assert cfg.vertices == (4, 5) and cfg.master_seed == 9
    assert cfg.pipeline_config().gap_tol == 1e-7
    assert cfg.pipeline_config().stage1 == "direct"
    with pytest.raises(ValueError):
        bench_config_from_dict({"vertices": 4, "tolerances": {"nonsense": 1}})
    with pytest.raises(ValueError):
        bench_config_from_dict({"vertex": 4})


def test_bench_cases_layout():
    cfg = BenchConfig(master_seed=1, vertices=(5,), graphs=2, truths=3, mixings=2)
    cases = bench_cases(cfg)
    assert len(cases) == 2 * 3 * 2
    assert cases[0].label == "v5-g0-t0-c0"
    plain = bench_cases(BenchConfig(master_seed=1, vertices=(5,), graphs=2, truths=3))
    byl = {c.label: c for c in plain}
    for c in cases:
        base = byl[c.label.rsplit("-", 1)[0]]
        assert np.array_equal(c.instance.truth, base.instance.truth)
        assert c.mixing is not None


def _strip_timings(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows]


def test_bench_deterministic(tmp_path):
    cfg = BenchConfig(master_seed=3, vertices=(4,), graphs=2, truths=2, stage1="direct")
    a = run_bench(cfg, tmp_path / "a")
    b = run_bench(cfg, tmp_path / "b")
    assert a.to_csv(timings=False) == b.to_csv(timings=False)
    assert _strip_timings((tmp_path / "a" / "results.csv").read_text()) == \
        _strip_timings((tmp_path / "b" / "results.csv").read_text())
    header = (tmp_path / "a" / "results.csv").read_text().splitlines()[0]
    assert header.split(",") == list(CSV_COLUMNS)
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["aggregates"]["instances"] == 4
    assert summary["aggregates"]["recovered"] == 4


def test_report_aggregates():
    rows = [dict(label="a", status="recovered", Er=1e-8, stage1_s=1.0, stage2_s=2.0),
            dict(label="b", status="failed:stage2", Er=None, stage1_s=3.0, stage2_s=0.0),
            dict(label="c", status="rank-ambiguous", Er=0.5, stage1_s=2.0, stage2_s=1.0)]
    agg = BenchReport(rows).aggregates
    assert agg["instances"] == 3 and agg["recovered"] == 1
    assert agg["recovery_rate"] == pytest.approx(1 / 3)
    assert agg["mean_Er_recovered"] == 1e-8
    assert agg["mean_Er"] == pytest.approx((1e-8 + 0.5) / 2)
    assert agg["mean_stage1_s"] == 2.0


def test_run_case_records_failures(worked):
    C = gen_mixing(5, np.random.default_rng(0))
    from mcsos.model import apply_mixing
    from mcsos.pipeline import PipelineConfig
    row = run_case(BenchCase("mix", apply_mixing(worked, C)), PipelineConfig(stage1="direct"))
    assert row["status"] == "failed:stage1"
    assert set(row) == set(CSV_COLUMNS)


def test_single_example_bench(worked):
    from mcsos.pipeline import PipelineConfig
    row = run_case(BenchCase("worked", worked), PipelineConfig(stage1="sdp"))
    assert row["status"] == "recovered"
    assert row["K"] == 5 and row["N"] == 21 and row["max_degree"] == 2
    assert row["Er"] <= 1e-4
