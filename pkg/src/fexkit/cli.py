"""Command-line front end: data generation, predictor training/evaluation,
informed/uninformed solving, Monte-Carlo verification and benchmarking.

Exit codes: 0 success, 2 usage or configuration error, 3 file I/O error,
4 numerical failure.  Every output file carries the resolved configuration
(a leading '# config:' comment line; JSON files use a "config" field).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from .benchmarks import BENCHMARK_SUITE, oracle_operator_set, run_benchmark, summarize
from .datagen import (
    DatasetRecord,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .errors import (
    DegenerateData,
    DomainError,
    EmptySearchSpace,
    FexkitError,
    GenerationFailure,
    MalformedSequence,
    MissingExternalPrediction,
    OutsideDomain,
    ParseError,
    UnknownToken,
)
from .expr import OperatorDictionary, parse_postfix, postfix_string
from .pde import BC_TYPES, PDE_TYPES, PdeInstance
from .predictor import (
    TrainConfig,
    all_zeros_average_mismatch,
    evaluate_predictor,
    external_model,
    load_model,
    oracle_model,
    predict,
    read_external_predictions,
    save_model,
    train_baseline,
)
from .solver import SolveConfig, solve
from .wos import WosConfig, verify_solution


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _config_line(command: str, args: argparse.Namespace) -> str:
    pairs = sorted((k, v) for k, v in vars(args).items()
                   if k not in ("func", "command") and not k.startswith("_"))
    return "config: " + command + " " + " ".join(f"{k}={v}" for k, v in pairs)


def _write_csv(path, header_line: str, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + header_line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _load_instance(path) -> PdeInstance:
    return PdeInstance.load(path)


def _instance_record(inst: PdeInstance, depth: int, seed: int) -> DatasetRecord:
    return DatasetRecord(inst.pde_type, inst.bc_type, inst.domain.dim, depth,
                         seed, postfix_string(inst.f), inst.g.postfix(), "")


def _resolve_ops(source: str, inst: PdeInstance, depth: int, seed: int):
    """Operator tokens for --ops-from, or None for an uninformed run."""
    if source in ("none", ""):
        return None
    if source == "oracle":
        return oracle_operator_set(inst)
    if source.endswith(".jsonl"):
        table = read_external_predictions(source)
        model = external_model(table, OperatorDictionary.default(inst.domain.dim))
        return predict(model, _instance_record(inst, depth, seed))
    if source.endswith(".json"):
        model = load_model(source)
        return predict(model, _instance_record(inst, depth, seed))
    raise ValueError(
        f"--ops-from must be none, oracle, a .json model or a .jsonl "
        f"predictions file (got {source!r})")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.n < 0:
        raise ValueError("--n must be >= 0")
    classes = None
    if args.types:
        classes = []
        for chunk in args.types.split(","):
            parts = chunk.strip().split(":")
            if len(parts) != 2:
                raise ValueError(f"--types entries look like pde:bc (got {chunk!r})")
            pde, bc = parts
            if pde not in PDE_TYPES or bc not in BC_TYPES:
                raise ValueError(f"unknown class {chunk!r}")
            classes.append((pde, bc))
    records = generate_dataset(args.n, args.depth, args.dim, args.seed,
                               classes=classes)
    write_dataset(records, args.out, header=_config_line("gen-data", args))
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train_predictor(args) -> int:
    records = read_dataset(args.data)
    if not records:
        raise ValueError(f"no records in {args.data}")
    if not 0.0 <= args.holdout < 1.0:
        raise ValueError("--holdout must be in [0, 1)")
    n_hold = int(len(records) * args.holdout)
    train = records[:len(records) - n_hold] if n_hold else records
    held = records[len(records) - n_hold:] if n_hold else []
    dictionary = OperatorDictionary.default(records[0].dim)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, l2=args.l2, seed=args.seed)
    model = train_baseline(train, dictionary, cfg)
    save_model(model, args.out, config=_config_line("train-predictor", args))
    line = (f"trained on {len(train)} records, "
            f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}")
    if held:
        report = evaluate_predictor(model, held, args.threshold)
        zeros = all_zeros_average_mismatch(held, dictionary)
        line += (f", held-out avg mismatch {report.average_mismatch:.4f} "
                 f"(all-zeros {zeros:.4f}, n={len(held)})")
    print(line)
    print(f"model saved to {args.out}")
    return 0


def _model_from_spec(spec: str, dim: int):
    if spec == "oracle":
        return oracle_model(OperatorDictionary.default(dim))
    if spec.endswith(".jsonl"):
        return external_model(read_external_predictions(spec),
                              OperatorDictionary.default(dim))
    return load_model(spec)


def cmd_eval_predictor(args) -> int:
    records = read_dataset(args.data)
    if not records:
        raise ValueError(f"no records in {args.data}")
    model = _model_from_spec(args.model, records[0].dim)
    report = evaluate_predictor(model, records, args.threshold)
    zeros = all_zeros_average_mismatch(records, model.output_dictionary)
    out = args.report or args.out
    if out:
        rows = [(r.seed, r.pde_type, r.bc_type, m, fn)
                for r, m, fn in zip(records, report.mismatches,
                                    report.false_negatives)]
        _write_csv(out, _config_line("eval-predictor", args),
                   ("seed", "pde_type", "bc_type", "mismatch", "false_negatives"),
                   rows)
        print(f"per-record report written to {out}")
    print(f"average mismatch {report.average_mismatch:.4f} over "
          f"{report.n_records} records (all-zeros baseline {zeros:.4f})")
    return 0


def cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    ops = _resolve_ops(args.ops_from, inst, args.depth, args.seed)
    cfg = SolveConfig(depth=args.depth, T_max=args.max_iters, seed=args.seed)
    result = solve(inst, ops, cfg)
    header = _config_line("solve", args)
    expr_path = args.out + ".expr.txt"
    with open(expr_path, "w", encoding="utf-8") as fh:
        fh.write("# " + header + "\n")
        fh.write(f"postfix: {result.postfix}\n")
        fh.write(f"infix: {result.infix}\n")
        fh.write(f"reward: {result.reward:.12g}\n")
        fh.write(f"loss: {result.loss:.12g}\n")
        fh.write(f"iterations: {result.iterations}\n")
        fh.write(f"converged: {result.converged}\n")
        if result.rel_l2_error is not None:
            fh.write(f"rel_l2_error: {result.rel_l2_error:.12g}\n")
    trace_path = args.out + ".trace.csv"
    rows = iter(result.trace.csv_rows())
    _write_csv(trace_path, header, next(rows), rows)
    mode = "informed" if result.informed else "uninformed"
    sizes = "x".join(str(len(s.choices)) for s in result.space.slots)
    print(f"{mode} search over {sizes} slot choices")
    print(f"solution: {result.infix}")
    print(f"reward {result.reward:.6f}, loss {result.loss:.3e}, "
          f"{result.iterations} iterations, {result.total_time:.2f}s"
          + (f", rel L2 {result.rel_l2_error:.3e}"
             if result.rel_l2_error is not None else ""))
    print(f"wrote {expr_path} and {trace_path}")
    return 0


def cmd_bench(args) -> int:
    if args.instances < 1 or args.instances > len(BENCHMARK_SUITE):
        raise ValueError(f"--instances must be in 1..{len(BENCHMARK_SUITE)}")
    suite = BENCHMARK_SUITE[:args.instances]
    cfg = SolveConfig(T_max=args.max_iters)

    def progress(row):
        print(f"{row.instance_id}: iter speedup {row.iteration_speedup:.2f}, "
              f"time speedup {row.time_speedup:.2f}", flush=True)

    rows = run_benchmark(suite, args.repeats, cfg, args.seed, progress)
    header = _config_line("bench", args)
    columns = ("instance_id", "pde_type", "bc_type", "true_solution", "repeats",
               "informed_iterations", "uninformed_iterations",
               "informed_time_s", "uninformed_time_s",
               "informed_rel_l2", "uninformed_rel_l2",
               "informed_converged", "uninformed_converged",
               "iteration_speedup", "time_speedup")
    table = [(r.instance_id, r.pde_type, r.bc_type, r.true_infix, r.repeats,
              f"{r.informed_iterations:.2f}", f"{r.uninformed_iterations:.2f}",
              f"{r.informed_time:.3f}", f"{r.uninformed_time:.3f}",
              f"{r.informed_rel_l2:.6e}", f"{r.uninformed_rel_l2:.6e}",
              r.informed_converged, r.uninformed_converged,
              f"{r.iteration_speedup:.3f}", f"{r.time_speedup:.3f}")
             for r in rows]
    rows_path = args.out + ".rows.csv"
    _write_csv(rows_path, header, columns, table)

    summary = summarize(rows)
    srows = [("all", f"{summary.median_iteration_speedup:.3f}",
              f"{summary.median_time_speedup:.3f}")]
    for pde in sorted(summary.per_pde_iteration_speedup):
        srows.append((pde, f"{summary.per_pde_iteration_speedup[pde]:.3f}",
                      f"{summary.per_pde_time_speedup[pde]:.3f}"))
    summary_path = args.out + ".summary.csv"
    _write_csv(summary_path, header,
               ("pde_type", "median_iteration_speedup", "median_time_speedup"),
               srows)
    print(f"median iteration speedup {summary.median_iteration_speedup:.2f}, "
          f"median time speedup {summary.median_time_speedup:.2f}")
    print(f"wrote {rows_path} and {summary_path}")
    return 0


def _read_points(path, dim: int) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [float(v) for v in line.replace(",", " ").split()]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: not a point row") from exc
            if len(vals) != dim:
                raise ParseError(f"line {lineno}: expected {dim} coordinates, "
                                 f"got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ParseError(f"no points in {path}")
    return np.asarray(rows)


def cmd_oracle(args) -> int:
    inst = _load_instance(args.instance)
    candidate = parse_postfix(args.candidate)
    points = None
    if args.points:
        points = _read_points(args.points, inst.domain.dim)
    cfg = WosConfig(n_paths=args.paths, seed=args.seed)
    report = verify_solution(candidate, inst, points=points, cfg=cfg)
    if args.out:
        columns = tuple(f"x{k}" for k in range(1, inst.domain.dim + 1))
        columns += ("candidate", "estimate", "stderr", "z_score", "flagged")
        rows = []
        for i in range(report.points.shape[0]):
            rows.append(tuple(f"{v:.10g}" for v in report.points[i])
                        + (f"{report.candidate_values[i]:.10g}",
                           f"{report.estimates[i]:.10g}",
                           f"{report.stderrs[i]:.3e}",
                           f"{report.z_scores[i]:.3f}",
                           int(report.flagged[i])))
        _write_csv(args.out, _config_line("oracle", args), columns, rows)
        print(f"wrote {args.out}")
    verdict = "passed" if report.passed else "FAILED"
    print(f"verification {verdict}: max z {report.max_z:.2f}, "
          f"{report.n_flagged}/{report.points.shape[0]} flagged "
          f"(threshold {report.threshold})")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads (execution is sequential; "
                             "accepted for interface compatibility)")

    parser = argparse.ArgumentParser(
        prog="fexkit",
        description="Symbolic PDE solving with operator-informed expression search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate a labeled dataset (JSONL)")
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--depth", type=int, default=3, help="solution tree depth")
    p.add_argument("--dim", type=int, default=3, help="spatial dimension")
    p.add_argument("--types", default="",
                   help="comma-separated pde:bc classes (default: all six)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-predictor", parents=[common],
                       help="train the baseline operator predictor")
    p.add_argument("--data", required=True, help="training dataset (JSONL)")
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=2.0)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--holdout", type=float, default=0.2,
                   help="trailing fraction held out for evaluation")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("eval-predictor", parents=[common],
                       help="evaluate a predictor on a dataset")
    p.add_argument("--data", required=True, help="evaluation dataset (JSONL)")
    p.add_argument("--model", required=True,
                   help="'oracle', a model .json, or a predictions .jsonl")
    p.add_argument("--report", default="", help="per-record CSV output path")
    p.add_argument("--out", default="", help="alias for --report")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval_predictor)

    p = sub.add_parser("solve", parents=[common],
                       help="run the expression search on one instance")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--ops-from", default="none", dest="ops_from",
                   help="none | oracle | model.json | predictions.jsonl")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.add_argument("--out", default="solve", help="output file prefix")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", parents=[common],
                       help="informed-vs-uninformed benchmark table")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--instances", type=int, default=len(BENCHMARK_SUITE),
                   help="use the first N suite instances")
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.add_argument("--out", default="bench", help="output file prefix")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", parents=[common],
                       help="Monte-Carlo verification of a candidate solution")
    p.add_argument("--instance", required=True, help="instance JSON path")
    p.add_argument("--candidate", required=True,
                   help="candidate solution in postfix tokens")
    p.add_argument("--points", default="", help="CSV of evaluation points")
    p.add_argument("--paths", type=int, default=10000, help="walks per point")
    p.add_argument("--out", default="", help="per-point report CSV path")
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (EmptySearchSpace, GenerationFailure, DomainError, OutsideDomain) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ParseError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, UnknownToken, MalformedSequence, DegenerateData,
            MissingExternalPrediction, FexkitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
