"""Random chain instances, mixing matrices and the benchmark runner."""
from __future__ import annotations

import csv
import json
import io
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import BipartiteGraph, Instance, Term, Constraint, apply_mixing, bipartite_graph
from .pipeline import PipelineConfig, PipelineError, error_of, solve_end_to_end

log = logging.getLogger(__name__)

CSV_COLUMNS = ("label", "n", "m", "max_degree", "K", "N", "stage1_s", "stage2_s",
               "rho_star", "Er", "status")
TIMING_COLUMNS = ("stage1_s", "stage2_s")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    vertices: int
    seed: int = 0
    count: int = 1
    truth_range: tuple[float, float] = (-5.0, 5.0)
    mixing: str = "none"
    degeneracy_floor: float = 0.1

    def __post_init__(self):
        if self.vertices < 2:
            raise ValueError("need at least two vertices")
        lo, hi = self.truth_range
        if not lo < hi:
            raise ValueError("truth_range must satisfy lo < hi")
        if self.degeneracy_floor <= 0:
            raise ValueError("degeneracy_floor must be positive")
        if max(abs(lo), abs(hi)) <= self.degeneracy_floor:
            raise ValueError("truth_range lies inside the degeneracy floor")
        if self.mixing not in ("none", "random"):
            raise ValueError(f"mixing must be 'none' or 'random', got {self.mixing!r}")


def gen_graph(v: int, rng: np.random.Generator) -> BipartiteGraph:
    """Random spanning tree on n left and m = v - n right vertices (1-based labels).

    Seeds one edge, then repeatedly attaches a fresh vertex on a randomly chosen
    side to an already placed vertex of the other side.
    """
    if v < 2:
        raise ValueError("need at least two vertices")
    n = int(rng.integers(1, v))
    m = v - n
    left = list(range(1, n + 1))
    right = list(range(1, m + 1))
    l_first = left.pop(int(rng.integers(len(left))))
    r_first = right.pop(int(rng.integers(len(right))))
    used_l, used_r = [l_first], [r_first]
    edges = {(l_first, r_first)}
    while left or right:
        if rng.random() < 0.5:
            if left:
                r = used_r[int(rng.integers(len(used_r)))]
                l = left.pop(int(rng.integers(len(left))))
                used_l.append(l)
                edges.add((l, r))
        elif right:
            l = used_l[int(rng.integers(len(used_l)))]
            r = right.pop(int(rng.integers(len(right))))
            used_r.append(r)
            edges.add((l, r))
    return BipartiteGraph(n, m, frozenset(edges))


def sample_truth(size: int, rng: np.random.Generator, truth_range=(-5.0, 5.0),
                 floor: float = 0.1) -> np.ndarray:
    lo, hi = truth_range
    z = rng.uniform(lo, hi, size)
    bad = np.abs(z) < floor
    while np.any(bad):
        z[bad] = rng.uniform(lo, hi, int(bad.sum()))
        bad = np.abs(z) < floor
    return z


def instance_from_graph(graph: BipartiteGraph, z0, label: str = "") -> Instance:
    """One elementary constraint x_i y_j = (x0)_i (y0)_j per edge, truth attached."""
    z0 = np.asarray(z0, dtype=float)
    n, m = graph.n, graph.m
    if z0.shape != (n + m - 1,):
        raise ValueError(f"truth has length {z0.size}, expected {n + m - 1}")
    x0 = np.concatenate([[1.0], z0[: n - 1]])
    y0 = z0[n - 1:]
    cons = tuple(Constraint((Term(i, j, 1.0),), float(x0[i - 1] * y0[j - 1]))
                 for i, j in sorted(graph.edges))
    return Instance(n, m, cons, z0.copy(), label)


def gen_instance(graph: BipartiteGraph, rng: np.random.Generator,
                 cfg: GenConfig | None = None, label: str = "") -> Instance:
    lo, hi = cfg.truth_range if cfg else (-5.0, 5.0)
    floor = cfg.degeneracy_floor if cfg else 0.1
    z0 = sample_truth(graph.n + graph.m - 1, rng, (lo, hi), floor)
    return instance_from_graph(graph, z0, label)


def gen_mixing(K: int, rng: np.random.Generator, max_tries: int = 100,
               min_sv: float = 1e-3) -> np.ndarray:
    """K x K matrix, entries uniform in [-5, 5], rows scaled to unit 2-norm."""
    if K < 1:
        raise ValueError("K must be positive")
    for _ in range(max_tries):
        C = rng.uniform(-5.0, 5.0, (K, K))
        norms = np.linalg.norm(C, axis=1)
        if np.any(norms == 0):
            continue
        C /= norms[:, None]
        if np.linalg.svd(C, compute_uv=False).min() >= min_sv:
            return C
    raise GenerationError(f"no well-conditioned {K}x{K} mixing matrix in {max_tries} tries")


def generate(cfg: GenConfig) -> list[tuple[Instance, np.ndarray | None]]:
    """cfg.count instances, each on its own random graph; mixed when cfg.mixing == 'random'."""
    out = []
    for k, seq in enumerate(np.random.SeedSequence(cfg.seed).spawn(cfg.count)):
        rng = np.random.default_rng(seq)
        graph = gen_graph(cfg.vertices, rng)
        inst = gen_instance(graph, rng, cfg, label=f"v{cfg.vertices}-{k:03d}")
        C = None
        if cfg.mixing == "random":
            C = gen_mixing(inst.K, rng)
            inst = apply_mixing(inst, C, label=inst.label + "-mix")
        out.append((inst, C))
    return out


# -- benchmark -------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    master_seed: int = 0
    vertices: tuple[int, ...] = (6,)
    graphs: int = 3
    truths: int = 3
    mixings: int = 0           # 0 keeps C = I; k > 0 runs every instance under k random C
    stage1: str = "sdp"
    truth_range: tuple[float, float] = (-5.0, 5.0)
    degeneracy_floor: float = 0.1
    pipeline: dict = field(default_factory=dict)   # PipelineConfig overrides

    def pipeline_config(self) -> PipelineConfig:
        return replace(PipelineConfig(stage1=self.stage1), **self.pipeline)


def load_bench_config(path) -> BenchConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return bench_config_from_dict(doc)


def bench_config_from_dict(doc: dict) -> BenchConfig:
    doc = dict(doc)
    tol = doc.pop("tolerances", {}) or {}
    pipe = dict(doc.pop("pipeline", {}) or {})
    pipe.update(tol)
    known = {f for f in PipelineConfig.__dataclass_fields__}
    bad = set(pipe) - known
    if bad:
        raise ValueError(f"unknown pipeline options: {sorted(bad)}")
    fields_ = set(BenchConfig.__dataclass_fields__) - {"pipeline"}
    extra = set(doc) - fields_
    if extra:
        raise ValueError(f"unknown bench options: {sorted(extra)}")
    if "vertices" in doc:
        v = doc["vertices"]
        doc["vertices"] = tuple(v) if isinstance(v, (list, tuple)) else (int(v),)
    if "truth_range" in doc:
        doc["truth_range"] = tuple(doc["truth_range"])
    return BenchConfig(**doc, pipeline=pipe)


@dataclass(frozen=True)
class BenchCase:
    label: str
    instance: Instance
    mixing: np.ndarray | None = None


def bench_cases(cfg: BenchConfig) -> list[BenchCase]:
    """Deterministic case list: graphs and truths from independent child seeds.

    Mixing matrices are shared across graphs and truths for a given v, as K = v - 1
    is the same for every spanning tree on v vertices.
    """
    gcfg = dict(truth_range=cfg.truth_range, degeneracy_floor=cfg.degeneracy_floor)
    cases = []
    for v in cfg.vertices:
        g = GenConfig(vertices=v, seed=cfg.master_seed, **gcfg)
        mix = [gen_mixing(v - 1, np.random.default_rng([cfg.master_seed, v, 1, c]))
               for c in range(cfg.mixings)]
        for gi in range(cfg.graphs):
            graph = gen_graph(v, np.random.default_rng([cfg.master_seed, v, 0, gi]))
            for ti in range(cfg.truths):
                rng = np.random.default_rng([cfg.master_seed, v, 2, gi, ti])
                base = gen_instance(graph, rng, g, label=f"v{v}-g{gi}-t{ti}")
                if not mix:
                    cases.append(BenchCase(base.label, base))
                for ci, C in enumerate(mix):
                    label = f"{base.label}-c{ci}"
                    cases.append(BenchCase(label, apply_mixing(base, C, label=label), C))
    return cases


@dataclass
class BenchReport:
    rows: list[dict]

    @property
    def aggregates(self) -> dict:
        rows = self.rows
        ok = [r for r in rows if r["status"] == "recovered"]
        errs = [r["Er"] for r in rows if r["Er"] is not None and np.isfinite(r["Er"])]
        return {
            "instances": len(rows),
            "recovered": len(ok),
            "recovery_rate": len(ok) / len(rows) if rows else float("nan"),
            "mean_Er": float(np.mean(errs)) if errs else float("nan"),
            "mean_Er_recovered": float(np.mean([r["Er"] for r in ok])) if ok else float("nan"),
            "mean_stage1_s": float(np.mean([r["stage1_s"] for r in rows])) if rows else float("nan"),
            "mean_stage2_s": float(np.mean([r["stage2_s"] for r in rows])) if rows else float("nan"),
        }

    def to_csv(self, timings: bool = True) -> str:
        cols = [c for c in CSV_COLUMNS if timings or c not in TIMING_COLUMNS]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_cell(r[c]) for c in cols])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_case(case: BenchCase, opts: PipelineConfig) -> dict:
    inst = case.instance
    graph = bipartite_graph(inst)
    s = inst.s
    row = dict(label=case.label, n=inst.n, m=inst.m, max_degree=graph.max_degree, K=inst.K,
               N=(s + 2) * (s + 1) // 2, stage1_s=0.0, stage2_s=0.0, rho_star=None, Er=None,
               status="failed")
    try:
        rec = solve_end_to_end(inst, opts)
    except PipelineError as e:
        log.warning("%s: %s", case.label, e)
        row["status"] = f"failed:{e.stage}"
        return row
    except Exception as e:  # noqa: BLE001 - a bad instance must not abort the batch
        log.warning("%s: unexpected %s: %s", case.label, type(e).__name__, e)
        row["status"] = "failed:internal"
        return row
    row.update(stage1_s=float(rec.timings.get("stage1_s", 0.0)),
               stage2_s=float(rec.timings.get("stage2_s", 0.0)),
               rho_star=float(rec.rho_star), status=rec.status,
               Er=None if inst.truth is None else error_of(rec.z_star, inst.truth))
    return row


def run_bench(cfg: BenchConfig | str | Path, out_dir=None, progress: bool = False) -> BenchReport:
    if not isinstance(cfg, BenchConfig):
        cfg = load_bench_config(cfg)
    opts = cfg.pipeline_config()
    rows = []
    for case in bench_cases(cfg):
        t0 = time.perf_counter()
        row = run_case(case, opts)
        rows.append(row)
        if progress:
            print(f"{row['label']:>18s}  {row['status']:<14s}  Er={row['Er']}  "
                  f"({time.perf_counter() - t0:.1f}s)", flush=True)
    report = BenchReport(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(report.to_csv())
        (out / "summary.json").write_text(json.dumps(
            {"config": _jsonable(asdict(cfg)), "aggregates": report.aggregates}, indent=2))
    return report


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    return d
