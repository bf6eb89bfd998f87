"""Command line entry point: ``mcsos <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_AMBIGUOUS, EXIT_FAILED, EXIT_USAGE = 0, 2, 3, 64
STATUS_EXIT = {"recovered": EXIT_OK, "rank-ambiguous": EXIT_AMBIGUOUS, "failed": EXIT_FAILED}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str) -> bytes:
    return sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()


def _fail(msg: str, code: int = EXIT_FAILED) -> int:
    print(f"mcsos: {msg}", file=sys.stderr)
    return code


def cmd_generate(args) -> int:
    from .model import serialize_instance
    from .toolkit import GenConfig, generate

    try:
        cfg = GenConfig(vertices=args.vertices, seed=args.seed, count=args.count,
                        mixing="random" if args.mix == "random" else "none")
    except ValueError as e:
        return _fail(str(e), EXIT_USAGE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for inst, C in generate(cfg):
        path = out / f"{inst.label}.json"
        path.write_text(serialize_instance(inst))
        if C is not None:
            (out / f"{inst.label}.mixing.json").write_text(json.dumps(C.tolist()))
        print(path)
    return EXIT_OK


def cmd_solve(args) -> int:
    from .model import InstanceError, parse_instance
    from .pipeline import PipelineConfig, PipelineError, solve_end_to_end

    try:
        inst = parse_instance(_read(args.file))
    except (OSError, InstanceError, ValueError) as e:
        return _fail(f"cannot read instance: {e}")
    opts = PipelineConfig(stage1=args.stage1, mu=args.mu, gap_tol=args.gap_tol,
                          polish=args.polish, reduce=not args.full_basis)
    try:
        rec = solve_end_to_end(inst, opts)
    except PipelineError as e:
        return _fail(str(e))
    text = rec.to_json()
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return STATUS_EXIT.get(rec.status, EXIT_FAILED)


def cmd_certify(args) -> int:
    from .certify import AssumptionError, assemble_U, verify_identity
    from .model import InstanceError, StructureError, parse_instance, propagate_truth, spanning_chains

    try:
        inst = parse_instance(_read(args.file))
    except (OSError, InstanceError, ValueError) as e:
        return _fail(f"cannot read instance: {e}")
    try:
        tree = spanning_chains(inst)
        cert = assemble_U(inst, tree, propagate_truth(inst, tree))
    except (StructureError, AssumptionError, ValueError) as e:
        return _fail(f"no chain certificate: {e}")
    text = cert.to_json(verify_identity(cert))
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .toolkit import load_bench_config, run_bench

    try:
        cfg = load_bench_config(args.config)
    except (OSError, ValueError, TypeError) as e:
        return _fail(f"bad bench config: {e}", EXIT_USAGE)
    report = run_bench(cfg, args.out, progress=not args.quiet)
    print(json.dumps(report.aggregates, indent=2))
    return EXIT_OK


def cmd_sdp_solve(args) -> int:
    from .sdpcore import solve
    from .sdpcore.sdpa import SdpaParseError, import_sdpa

    try:
        p = import_sdpa(_read(args.file))
    except (OSError, SdpaParseError) as e:
        return _fail(str(e))
    sol = solve(p, gap_tol=args.gap_tol, feas_tol=args.feas_tol, verbose=args.verbose)
    print(json.dumps({
        "status": sol.status, "iterations": sol.iterations,
        "primal_objective": sol.primal_objective, "dual_objective": sol.dual_objective,
        "gap": sol.gap, "primal_inf": sol.primal_inf, "dual_inf": sol.dual_inf,
    }, indent=2))
    return EXIT_OK if sol.optimal else EXIT_FAILED


def cmd_sdp_roundtrip(args) -> int:
    from .sdpcore.sdpa import SdpaParseError, export_sdpa, import_sdpa, problems_equal

    try:
        p = import_sdpa(_read(args.file))
        data = export_sdpa(p)
        q = import_sdpa(data)
    except (OSError, SdpaParseError) as e:
        return _fail(str(e))
    same = problems_equal(p, q, tol=0.0)
    if args.out:
        Path(args.out).write_bytes(data)
    print("roundtrip: identical" if same else "roundtrip: MISMATCH")
    return EXIT_OK if same else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mcsos", description="Exact rank-one matrix completion via two-stage SOS relaxations.")
    ap.add_argument("--version", action="version", version=f"mcsos {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver iterations")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="random chain instances")
    g.add_argument("--vertices", type=int, required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mix", choices=["none", "random"], default="none")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="recover z from an instance file")
    s.add_argument("file")
    s.add_argument("--stage1", choices=["sdp", "direct"], default="sdp")
    s.add_argument("--mu", type=float, default=1e6)
    s.add_argument("--gap-tol", type=float, default=1e-8)
    s.add_argument("--polish", action="store_true")
    s.add_argument("--full-basis", action="store_true",
                   help="Stage 1 over all K*N multiplier coordinates (no degree-face reduction)")
    s.add_argument("--report")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("certify", help="closed-form certificate for chain data")
    c.add_argument("file")
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)

    b = sub.add_parser("bench", help="run a benchmark described by a TOML file")
    b.add_argument("config")
    b.add_argument("--out", required=True)
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    sdp = sub.add_parser("sdp", help="SDPA-format utilities")
    ssub = sdp.add_subparsers(dest="sdp_command", required=True, parser_class=_Parser)
    so = ssub.add_parser("solve")
    so.add_argument("file")
    so.add_argument("--gap-tol", type=float, default=1e-8)
    so.add_argument("--feas-tol", type=float, default=1e-8)
    so.set_defaults(func=cmd_sdp_solve)
    rt = ssub.add_parser("roundtrip")
    rt.add_argument("file")
    rt.add_argument("--out")
    rt.set_defaults(func=cmd_sdp_roundtrip)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
