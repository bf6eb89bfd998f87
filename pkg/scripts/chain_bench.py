"""Run a chain-data benchmark from a TOML config and write results.csv / summary.json."""
import argparse
import json
from pathlib import Path

from mcsos.toolkit import load_bench_config, run_bench

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "configs" / "chain.toml"))
    ap.add_argument("--out", default="results/chain")
    args = ap.parse_args()
    report = run_bench(load_bench_config(args.config), args.out, progress=True)
    print(json.dumps(report.aggregates, indent=2))
    fails = [r for r in report.rows if r["status"] != "recovered"]
    for r in fails:
        print(f"not recovered: {r['label']} ({r['status']})")


if __name__ == "__main__":
    main()
