"""Compare recovery error with and without random mixing of the constraints.

Runs the config once as given and once with mixings = 0 (C = I), on the same graphs
and truths, and prints the mean Er of each.
"""
import argparse
from dataclasses import replace
from pathlib import Path

from mcsos.toolkit import load_bench_config, run_bench

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "configs" / "hidden.toml"))
    ap.add_argument("--out", default="results/hidden")
    args = ap.parse_args()
    cfg = load_bench_config(args.config)
    mixed = run_bench(cfg, Path(args.out) / "mixed", progress=True).aggregates
    ident = run_bench(replace(cfg, mixings=0), Path(args.out) / "identity", progress=True).aggregates
    for name, agg in (("C = I", ident), ("random C", mixed)):
        print(f"{name:<10} recovered {agg['recovered']}/{agg['instances']}  "
              f"mean Er {agg['mean_Er_recovered']:.3e}")


if __name__ == "__main__":
    main()
