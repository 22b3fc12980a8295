"""Random solved-instance generation and prompt serialization.

Every record starts from a random closed-form solution u; the right-hand side
f and the boundary datum g are then derived symbolically, so the record
carries its own ground truth.  Prompts serialize the instance for a sequence
model and targets are the postfix tokens of u.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GenerationFailure, ParseError
from .expr import (
    DEFAULT_BINARY_SET,
    DEFAULT_UNARY_SET,
    Const,
    Expression,
    Var,
    postfix_string,
    random_tree,
    simplify,
)
from .pde import BC_TYPES, PDE_TYPES, Domain, boundary_data_for, residual_operator

EOS_TOKEN = "<EOS>"
PROMPT_TOKEN_BUDGET = 256
TARGET_TOKEN_BUDGET = 64
COMBINED_TOKEN_BUDGET = 300
MAX_GENERATION_ATTEMPTS = 100

# JSONL schema, in serialization order
RECORD_FIELDS = (
    "pde_type", "bc_type", "dim", "depth", "seed",
    "f_postfix", "g_postfix", "u_postfix",
)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    """One labeled instance: postfix strings for f, g and the solution u."""

    pde_type: str
    bc_type: str
    dim: int
    depth: int
    seed: int
    f_postfix: str
    g_postfix: str
    u_postfix: str


def _is_degenerate(u: Expression, f: Expression) -> bool:
    # a solution that simplifies to a bare leaf, or a vanishing right-hand
    # side, yields a record with no learnable structure
    if isinstance(simplify(u), (Var, Const)):
        return True
    return isinstance(f, Const) and f.value == 0.0


def generate_instance(pde_type: str, bc_type: str, depth: int, dim: int = 3,
                      seed: int = 0,
                      unary_set=DEFAULT_UNARY_SET, binary_set=DEFAULT_BINARY_SET,
                      u: Expression | None = None) -> DatasetRecord:
    """Sample a solution tree and derive f, g from it.

    Degenerate draws (zero right-hand side, or a tree that simplifies to a
    bare leaf) are resampled, up to 100 attempts.  Passing `u` skips sampling
    and derives the record from the given tree instead.
    """
    if pde_type not in PDE_TYPES:
        raise ValueError(f"unknown pde_type {pde_type!r}")
    if bc_type not in BC_TYPES:
        raise ValueError(f"unknown bc_type {bc_type!r}")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    domain = Domain("unit_box", dim)
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        cand = u if u is not None else random_tree(depth, unary_set, binary_set,
                                                   rng=rng, dim=dim)
        f = simplify(residual_operator(pde_type, cand, dim))
        if not _is_degenerate(cand, f):
            g = boundary_data_for(bc_type, cand, domain)
            return DatasetRecord(pde_type, bc_type, dim, depth, seed,
                                 postfix_string(f), g.postfix(),
                                 postfix_string(cand))
        if u is not None:
            raise GenerationFailure("the supplied solution tree is degenerate")
    raise GenerationFailure(
        f"no usable record for {pde_type}/{bc_type} depth={depth} dim={dim} "
        f"seed={seed} after {MAX_GENERATION_ATTEMPTS} attempts")


def generate_dataset(n: int, depth: int, dim: int = 3, seed: int = 0,
                     pde_types=PDE_TYPES, bc_types=BC_TYPES,
                     unary_set=DEFAULT_UNARY_SET,
                     binary_set=DEFAULT_BINARY_SET,
                     classes=None) -> list[DatasetRecord]:
    """n records, round-robin over (pde_type, bc_type); record i uses seed+i.

    The class list defaults to the full pde_types x bc_types product;
    `classes` supplies explicit (pde_type, bc_type) pairs instead.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if classes is None:
        classes = [(p, b) for p in pde_types for b in bc_types]
    else:
        classes = [tuple(c) for c in classes]
    if not classes:
        raise ValueError("at least one (pde_type, bc_type) class is required")
    records = []
    for i in range(n):
        p, b = classes[i % len(classes)]
        records.append(generate_instance(p, b, depth, dim, seed + i,
                                         unary_set, binary_set))
    return records


# ---------------------------------------------------------------------------
# Prompt rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptRendering:
    """Serialized prompt/target pair with the token budgets that shaped it."""

    prompt: str
    target: str
    prompt_token_budget: int = PROMPT_TOKEN_BUDGET
    target_token_budget: int = TARGET_TOKEN_BUDGET
    combined_budget: int = COMBINED_TOKEN_BUDGET


def count_tokens(text: str) -> int:
    """Whitespace token count."""
    return len(text.split())


def render_prompt(record: DatasetRecord,
                  prompt_budget: int = PROMPT_TOKEN_BUDGET,
                  target_budget: int = TARGET_TOKEN_BUDGET,
                  combined_budget: int = COMBINED_TOKEN_BUDGET) -> PromptRendering:
    """Byte-deterministic prompt/target rendering.

    The BC field is included only when the record carries a boundary datum.
    Overflowing sequences drop tokens from the right, except that a truncated
    target always keeps its trailing EOS token.
    """
    parts = ["Type:" + record.pde_type, "RHS:" + record.f_postfix]
    if record.g_postfix:
        parts.append("BC:" + record.g_postfix)
    parts.append("BC_Type:" + record.bc_type)
    parts.append("Solution:")
    prompt_tokens = " | ".join(parts).split()
    target_tokens = record.u_postfix.split() + [EOS_TOKEN]
    if len(target_tokens) > target_budget:
        target_tokens = target_tokens[:target_budget - 1] + [EOS_TOKEN]
    cap = min(prompt_budget, combined_budget - len(target_tokens))
    prompt_tokens = prompt_tokens[:cap]
    return PromptRendering(" ".join(prompt_tokens), " ".join(target_tokens),
                           prompt_budget, target_budget, combined_budget)


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------


def record_to_json_dict(record: DatasetRecord) -> dict:
    row = {k: getattr(record, k) for k in RECORD_FIELDS}
    rendering = render_prompt(record)
    row["prompt"] = rendering.prompt
    row["target"] = rendering.target
    return row


def write_dataset(records, path, header: str | None = None) -> int:
    """One JSON object per line; returns the number of records written.

    An optional header string is written first as a '# ...' comment line,
    which read_dataset skips.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write("# " + header + "\n")
        for record in records:
            fh.write(json.dumps(record_to_json_dict(record)) + "\n")
    return len(records)


def read_dataset(path) -> list[DatasetRecord]:
    """Inverse of write_dataset; rendered prompt/target fields are re-derivable
    and therefore not validated here."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise ParseError(f"line {lineno}: expected a JSON object")
            missing = [k for k in RECORD_FIELDS if k not in row]
            if missing:
                raise ParseError(f"line {lineno}: missing fields {missing}")
            records.append(DatasetRecord(**{k: row[k] for k in RECORD_FIELDS}))
    return records
