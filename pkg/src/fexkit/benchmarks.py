"""Informed-vs-uninformed solver benchmark harness.

Ten manufactured unit-box instances (five per PDE type) whose solutions are
exactly representable by the depth-2 skeleton (in both modes: every operator
of the solution appears in its oracle set), solved repeatedly with and
without an oracle-restricted operator pool, aggregated Table-style: mean
iterations and wall time, median relative error over converged repeats,
with per-instance speedup ratios.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace

import numpy as np

from .datagen import DatasetRecord
from .expr import Binary, Expression, Unary, Var, postfix_string, to_infix
from .pde import Domain, PdeInstance, manufactured_instance
from .predictor import oracle_predict
from .solver import SolveConfig, SolveResult, solve


# ---------------------------------------------------------------------------
# The instance suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkInstance:
    instance_id: str
    pde_type: str
    bc_type: str
    true_u: Expression

    def build(self, dim: int = 3) -> PdeInstance:
        return manufactured_instance(self.pde_type, self.bc_type,
                                     Domain("unit_box", dim), self.true_u)


def _sq(k):
    return Unary("^2", 1.0, 0.0, Var(k))


def _suite() -> tuple[BenchmarkInstance, ...]:
    p = [
        ("P1", Unary("Id", 16.0, 0.0, Unary("SIN", 1.0, 0.0, Var(3)))),
        ("P2", Unary("Id", 8.0, 2.0, Binary("*", _sq(1), Var(3)))),
        ("P3", Unary("Id", 8.0, 0.0,
                     Binary("*", Var(1), Unary("EXP", 1.0, 0.0, Var(2))))),
        ("P4", Unary("Id", 1.0, 2.0,
                     Binary("+", Unary("EXP", -4.0, 0.0, Var(3)),
                            Unary("SIN", 4.0, 0.0, Var(1))))),
        ("P5", Unary("Id", 1.0, 2.0,
                     Binary("*", Unary("^3", 4.0, 0.0, Var(3)),
                            Unary("^3", 8.0, 0.0, Var(3))))),
    ]
    c = [
        ("C1", Unary("Id", 16.0, 0.0, Unary("SIN", 1.0, 0.0, Var(3)))),
        ("C2", Unary("Id", 1.0, 2.0,
                     Binary("*", Unary("Id", -8.0, 0.0, Var(2)),
                            Unary("COS", 1.0, 0.0, Var(2))))),
        ("C3", Unary("SIN", 2.0, -2.0, Unary("Id", 2.0, 2.0, Var(3)))),
        ("C4", Unary("Id", 1.0, 2.0,
                     Binary("+", Unary("^4", -4.0, 0.0, Var(2)),
                            Unary("^3", 4.0, 0.0, Var(2))))),
        ("C5", Unary("EXP", 4.0, 0.0, Unary("SIN", 2.0, 2.0, Var(2)))),
    ]
    rows = [BenchmarkInstance(i, "poisson", "dirichlet", u) for i, u in p]
    rows += [BenchmarkInstance(i, "conservation", "cauchy", u) for i, u in c]
    return tuple(rows)


BENCHMARK_SUITE: tuple[BenchmarkInstance, ...] = _suite()


def oracle_operator_set(instance: PdeInstance,
                        true_u: Expression | None = None) -> tuple[str, ...]:
    """Oracle prediction for a concrete instance (reads operators off f, g)."""
    record = DatasetRecord(
        instance.pde_type, instance.bc_type, instance.domain.dim, 2, 0,
        postfix_string(instance.f), instance.g.postfix(),
        postfix_string(true_u) if true_u is not None else "")
    return oracle_predict(record, domain_kind=instance.domain.kind)


# ---------------------------------------------------------------------------
# Rows and aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    instance_id: str
    pde_type: str
    bc_type: str
    true_infix: str
    repeats: int
    informed_iterations: float
    uninformed_iterations: float
    informed_time: float
    uninformed_time: float
    informed_rel_l2: float
    uninformed_rel_l2: float
    informed_converged: int
    uninformed_converged: int

    @property
    def iteration_speedup(self) -> float:
        return self.uninformed_iterations / self.informed_iterations

    @property
    def time_speedup(self) -> float:
        return self.uninformed_time / self.informed_time


def _median_error(results: list[SolveResult]) -> float:
    # median over converged repeats: one stalled fine-tune should not
    # misrepresent an instance that is otherwise solved to the noise floor
    vals = [r.rel_l2_error for r in results if r.converged and r.rel_l2_error is not None]
    return float(np.median(vals)) if vals else float("nan")


def run_instance(bench: BenchmarkInstance, repeats: int = 5,
                 cfg: SolveConfig | None = None, seed: int = 0) -> BenchmarkRow:
    """Solve one instance `repeats` times in both modes and aggregate."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cfg = cfg or SolveConfig()
    inst = bench.build()
    ops = oracle_operator_set(inst, bench.true_u)
    informed, uninformed = [], []
    for r in range(repeats):
        run_cfg = replace(cfg, seed=seed + 17 * r)
        informed.append(solve(inst, ops, run_cfg))
        uninformed.append(solve(inst, None, run_cfg))
    return BenchmarkRow(
        bench.instance_id, bench.pde_type, bench.bc_type, to_infix(bench.true_u),
        repeats,
        float(np.mean([r.iterations for r in informed])),
        float(np.mean([r.iterations for r in uninformed])),
        float(np.mean([r.total_time for r in informed])),
        float(np.mean([r.total_time for r in uninformed])),
        _median_error(informed), _median_error(uninformed),
        sum(r.converged for r in informed),
        sum(r.converged for r in uninformed),
    )


def run_benchmark(instances=BENCHMARK_SUITE, repeats: int = 5,
                  cfg: SolveConfig | None = None, seed: int = 0,
                  progress=None) -> list[BenchmarkRow]:
    rows = []
    for bench in instances:
        row = run_instance(bench, repeats, cfg, seed)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


@dataclass(frozen=True)
class BenchmarkSummary:
    n_instances: int
    repeats: int
    median_iteration_speedup: float
    median_time_speedup: float
    per_pde_iteration_speedup: dict
    per_pde_time_speedup: dict


def summarize(rows) -> BenchmarkSummary:
    rows = list(rows)
    if not rows:
        raise ValueError("no benchmark rows to summarize")
    by_pde: dict[str, list[BenchmarkRow]] = {}
    for row in rows:
        by_pde.setdefault(row.pde_type, []).append(row)
    return BenchmarkSummary(
        len(rows), rows[0].repeats,
        statistics.median(r.iteration_speedup for r in rows),
        statistics.median(r.time_speedup for r in rows),
        {p: statistics.median(r.iteration_speedup for r in rs)
         for p, rs in by_pde.items()},
        {p: statistics.median(r.time_speedup for r in rs)
         for p, rs in by_pde.items()},
    )
