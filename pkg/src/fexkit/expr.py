"""Expression trees over a fixed operator vocabulary.

Provides the symbolic core used everywhere else: evaluation, differentiation,
simplification, postfix (de)serialization, operator-set extraction/encoding,
and random tree generation with the alternating unary/binary layout.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    DomainError,
    LengthMismatch,
    MalformedSequence,
    UnknownToken,
    UnsupportedOperator,
)

# ---------------------------------------------------------------------------
# Node types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    """Input variable leaf; indices are 1-based (token "x1" is index 1)."""

    index: int


@dataclass(frozen=True)
class Const:
    """Numeric constant leaf."""

    value: float


@dataclass(frozen=True)
class Param:
    """Scalar-parameter leaf bound at evaluation time (never serialized)."""

    index: int


@dataclass(frozen=True)
class Unary:
    """Unary node realizing alpha * op(child) + beta."""

    op: str
    alpha: float
    beta: float
    child: "Expression"


@dataclass(frozen=True)
class Binary:
    """Binary node combining two subtrees with +, -, * or /."""

    op: str
    left: "Expression"
    right: "Expression"


Expression = Union[Var, Const, Param, Unary, Binary]

# ---------------------------------------------------------------------------
# Operator tables
# ---------------------------------------------------------------------------

# token -> elementwise implementation (applied before the affine alpha/beta)
UNARY_EVAL = {
    "0": lambda v: np.zeros_like(v),
    "1": lambda v: np.ones_like(v),
    "Id": lambda v: v,
    "^2": lambda v: v * v,
    "^3": lambda v: v * v * v,
    "^4": lambda v: (v * v) * (v * v),
    "EXP": np.exp,
    "SIN": np.sin,
    "COS": np.cos,
    "SQRT": np.sqrt,
    "ABS": np.abs,
    "LG": np.log10,
    "LN": np.log,
    "SIGN": np.sign,
}

BINARY_EVAL = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
}

UNARY_TOKENS = tuple(UNARY_EVAL)
BINARY_TOKENS = tuple(BINARY_EVAL)

# Default generation sets: singular ops (/, sqrt, logs) and the derivative-only
# SIGN/ABS are excluded so generated data stays total on the whole domain.
DEFAULT_UNARY_SET = ("0", "1", "Id", "^2", "^3", "^4", "EXP", "SIN", "COS")
DEFAULT_BINARY_SET = ("+", "-", "*")

_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")

# words float() would happily parse but that are not valid numeric tokens
_NON_NUMERIC_WORDS = {"nan", "inf", "infinity", "-inf", "-infinity", "+inf", "+infinity"}


def token_kind(token: str) -> str | None:
    """Classify a token as 'var' / 'unary' / 'binary', or None if unknown."""
    if _VAR_RE.match(token):
        return "var"
    if token in UNARY_EVAL:
        return "unary"
    if token in BINARY_EVAL:
        return "binary"
    return None


def parse_number(token: str) -> float | None:
    """Return the numeric value of a literal token, or None if not numeric."""
    if token.lower() in _NON_NUMERIC_WORDS:
        return None
    try:
        return float(token)
    except ValueError:
        return None


def format_number(value: float) -> str:
    """Canonical decimal rendering: integers bare, floats via shortest repr."""
    f = float(value)
    if f.is_integer() and abs(f) < 1e16:
        return str(int(f))
    return repr(f)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def eval_array(expr: Expression, points: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
    """Evaluate `expr` at an (n, d) array of points.

    `params` binds Param leaves: a 1-d vector gives a single scalar per slot
    (result shape (n,)); a (k, m) matrix evaluates k parameter settings at
    once (result shape (k, n)).  Raises DomainError on singular arguments.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-d array of shape (n, d)")
    if params is not None:
        params = np.asarray(params, dtype=float)
    with np.errstate(all="ignore"):
        out = np.asarray(_eval(expr, pts, params), dtype=float)
    n = pts.shape[0]
    if params is not None and params.ndim == 2:
        return np.ascontiguousarray(np.broadcast_to(out, (params.shape[0], n)))
    return np.ascontiguousarray(np.broadcast_to(out, (n,)))


def _eval(e: Expression, pts: np.ndarray, params: np.ndarray | None):
    if isinstance(e, Var):
        if e.index > pts.shape[1]:
            raise DomainError(f"variable x{e.index} exceeds point dimension {pts.shape[1]}")
        return pts[:, e.index - 1]
    if isinstance(e, Const):
        return np.full(1, float(e.value))
    if isinstance(e, Param):
        if params is None:
            raise ValueError("expression contains Param leaves but no params were given")
        if params.ndim == 1:
            return np.full(1, params[e.index])
        return params[:, e.index : e.index + 1]
    if isinstance(e, Unary):
        v = _eval(e.child, pts, params)
        fn = UNARY_EVAL.get(e.op)
        if fn is None:
            raise UnsupportedOperator(f"unknown unary operator {e.op!r}")
        if e.op == "SQRT" and np.any(v < 0):
            raise DomainError("sqrt of a negative argument")
        if e.op in ("LG", "LN") and np.any(v <= 0):
            raise DomainError("log of a non-positive argument")
        return e.alpha * fn(v) + e.beta
    if isinstance(e, Binary):
        a = _eval(e.left, pts, params)
        b = _eval(e.right, pts, params)
        fn = BINARY_EVAL.get(e.op)
        if fn is None:
            raise UnsupportedOperator(f"unknown binary operator {e.op!r}")
        if e.op == "/" and np.any(b == 0):
            raise DomainError("division by zero")
        return fn(a, b)
    raise TypeError(f"not an Expression: {e!r}")


def evaluate(expr: Expression, point: Sequence[float], params: np.ndarray | None = None) -> float:
    """Evaluate `expr` at a single point (sequence of d coordinates)."""
    pts = np.asarray(point, dtype=float).reshape(1, -1)
    return float(eval_array(expr, pts, params)[..., 0])


# ---------------------------------------------------------------------------
# Smart constructors (light folding used while building derivative trees)
# ---------------------------------------------------------------------------


def _is_const(e: Expression, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _add(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def _sub(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("-", a, b)


def _mul(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0) or _is_const(b, 0):
        return Const(0.0)
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if isinstance(a, Const) and isinstance(b, Unary):
        return Unary(b.op, a.value * b.alpha, a.value * b.beta, b.child)
    if isinstance(b, Const) and isinstance(a, Unary):
        return Unary(a.op, b.value * a.alpha, b.value * a.beta, a.child)
    return Binary("*", a, b)


def _div(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 1):
        return a
    if _is_const(a, 0):
        return Const(0.0)
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return Binary("/", a, b)


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------


def differentiate(expr: Expression, var: int) -> Expression:
    """Symbolic partial derivative with respect to x_var (1-based), simplified."""
    return simplify(_diff(expr, var))


def _diff(e: Expression, k: int) -> Expression:
    if isinstance(e, Var):
        return Const(1.0 if e.index == k else 0.0)
    if isinstance(e, (Const, Param)):
        return Const(0.0)
    if isinstance(e, Unary):
        a, c = e.alpha, e.child
        dc = _diff(c, k)
        if e.op in ("0", "1"):
            return Const(0.0)
        if e.op == "Id":
            return _mul(Const(a), dc)
        if e.op == "^2":
            return _mul(Const(2 * a), _mul(c, dc))
        if e.op == "^3":
            return _mul(Const(3 * a), _mul(Unary("^2", 1.0, 0.0, c), dc))
        if e.op == "^4":
            return _mul(Const(4 * a), _mul(Unary("^3", 1.0, 0.0, c), dc))
        if e.op == "EXP":
            return _mul(Const(a), _mul(Unary("EXP", 1.0, 0.0, c), dc))
        if e.op == "SIN":
            return _mul(Const(a), _mul(Unary("COS", 1.0, 0.0, c), dc))
        if e.op == "COS":
            return _mul(Const(-a), _mul(Unary("SIN", 1.0, 0.0, c), dc))
        if e.op == "SQRT":
            return _mul(Const(a / 2.0), _div(dc, Unary("SQRT", 1.0, 0.0, c)))
        if e.op == "ABS":
            # subgradient convention: sign(0) = 0
            return _mul(Const(a), _mul(Unary("SIGN", 1.0, 0.0, c), dc))
        if e.op == "SIGN":
            # zero almost everywhere; the jump at 0 is dropped by convention
            return Const(0.0)
        if e.op == "LG":
            return _mul(Const(a / math.log(10.0)), _div(dc, c))
        if e.op == "LN":
            return _mul(Const(a), _div(dc, c))
        raise UnsupportedOperator(f"no derivative rule for unary {e.op!r}")
    if isinstance(e, Binary):
        dl, dr = _diff(e.left, k), _diff(e.right, k)
        if e.op == "+":
            return _add(dl, dr)
        if e.op == "-":
            return _sub(dl, dr)
        if e.op == "*":
            return _add(_mul(dl, e.right), _mul(e.left, dr))
        if e.op == "/":
            num = _sub(_mul(dl, e.right), _mul(e.left, dr))
            return _div(num, Unary("^2", 1.0, 0.0, e.right))
        raise UnsupportedOperator(f"no derivative rule for binary {e.op!r}")
    raise TypeError(f"not an Expression: {e!r}")


def gradient(expr: Expression, dim: int) -> tuple[Expression, ...]:
    """All first partials (d/dx1, ..., d/dxd)."""
    return tuple(differentiate(expr, k) for k in range(1, dim + 1))


def laplacian(expr: Expression, dim: int) -> Expression:
    """Sum of second partials over x1..xd, simplified."""
    total: Expression = Const(0.0)
    for k in range(1, dim + 1):
        total = _add(total, _diff(simplify(_diff(expr, k)), k))
    return simplify(total)


# ---------------------------------------------------------------------------
# Simplification
# ---------------------------------------------------------------------------


def _fold_unary(op: str, alpha: float, beta: float, value: float) -> Const | None:
    """Constant-fold alpha*op(value)+beta, or None when the fold is singular."""
    fn = UNARY_EVAL.get(op)
    if fn is None:
        return None
    if op == "SQRT" and value < 0:
        return None
    if op in ("LG", "LN") and value <= 0:
        return None
    with np.errstate(all="ignore"):
        folded = alpha * float(fn(np.float64(value))) + beta
    return Const(folded)


def simplify(expr: Expression) -> Expression:
    """Bottom-up constant folding plus identity elimination.

    Output evaluates identically to the input at every non-singular point;
    singular subtrees (e.g. a pending division by zero) are left in place.
    """
    if isinstance(expr, (Var, Const, Param)):
        return expr
    if isinstance(expr, Unary):
        c = simplify(expr.child)
        op, a, b = expr.op, expr.alpha, expr.beta
        if op == "0":
            return Const(float(b))
        if op == "1":
            return Const(float(a + b))
        if a == 0:
            return Const(float(b))
        if isinstance(c, Const):
            folded = _fold_unary(op, a, b, c.value)
            if folded is not None:
                return folded
        if op == "Id":
            if a == 1 and b == 0:
                return c
            if isinstance(c, Unary):
                return Unary(c.op, a * c.alpha, a * c.beta + b, c.child)
        return Unary(op, a, b, c)
    if isinstance(expr, Binary):
        l, r = simplify(expr.left), simplify(expr.right)
        op = expr.op
        if isinstance(l, Const) and isinstance(r, Const):
            if op != "/" or r.value != 0:
                return Const(float(BINARY_EVAL[op](l.value, r.value)))
        if op == "+":
            if _is_const(l, 0):
                return r
            if _is_const(r, 0):
                return l
            if isinstance(r, Const) and isinstance(l, Unary):
                return Unary(l.op, l.alpha, l.beta + r.value, l.child)
            if isinstance(l, Const) and isinstance(r, Unary):
                return Unary(r.op, r.alpha, r.beta + l.value, r.child)
        elif op == "-":
            if _is_const(r, 0):
                return l
            if l == r:
                return Const(0.0)
            if isinstance(r, Const) and isinstance(l, Unary):
                return Unary(l.op, l.alpha, l.beta - r.value, l.child)
            if isinstance(l, Const) and isinstance(r, Unary):
                return Unary(r.op, -r.alpha, l.value - r.beta, r.child)
        elif op == "*":
            if _is_const(l, 0) or _is_const(r, 0):
                return Const(0.0)
            if _is_const(l, 1):
                return r
            if _is_const(r, 1):
                return l
            if isinstance(l, Const) and isinstance(r, Unary):
                return Unary(r.op, l.value * r.alpha, l.value * r.beta, r.child)
            if isinstance(r, Const) and isinstance(l, Unary):
                return Unary(l.op, r.value * l.alpha, r.value * l.beta, l.child)
        elif op == "/":
            if _is_const(r, 1):
                return l
            if _is_const(l, 0):
                return Const(0.0)
        return Binary(op, l, r)
    raise TypeError(f"not an Expression: {expr!r}")


# ---------------------------------------------------------------------------
# Postfix serialization
# ---------------------------------------------------------------------------


def to_postfix(expr: Expression) -> list[str]:
    """Serialize to Reverse Polish tokens.

    Affine unary scaling renders after the operator token as plain arithmetic
    ("child OP alpha * beta +", alpha/beta omitted when 1/0), and the
    constant-valued unaries "0"/"1" fold to their numeric value, so any stack
    parser reconstructs an evaluation-identical tree.
    """
    out: list[str] = []
    _emit(expr, out)
    return out


def _emit(e: Expression, out: list[str]) -> None:
    if isinstance(e, Var):
        out.append(f"x{e.index}")
    elif isinstance(e, Const):
        out.append(format_number(e.value))
    elif isinstance(e, Param):
        raise ValueError("Param leaves are evaluation-time only and cannot be serialized")
    elif isinstance(e, Unary):
        if e.op == "0":
            out.append(format_number(e.beta))
            return
        if e.op == "1":
            out.append(format_number(e.alpha + e.beta))
            return
        _emit(e.child, out)
        out.append(e.op)
        if e.alpha != 1:
            out.extend([format_number(e.alpha), "*"])
        if e.beta != 0:
            out.extend([format_number(e.beta), "+"])
    elif isinstance(e, Binary):
        _emit(e.left, out)
        _emit(e.right, out)
        out.append(e.op)
    else:
        raise TypeError(f"not an Expression: {e!r}")


def postfix_string(expr: Expression) -> str:
    """Single-line postfix rendering (tokens joined by single spaces)."""
    return " ".join(to_postfix(expr))


def parse_postfix(tokens: Sequence[str] | str, dictionary: "OperatorDictionary | None" = None) -> Expression:
    """Rebuild an Expression from postfix tokens under stack discipline.

    Numeric literals are always accepted; operator/variable tokens must
    belong to `dictionary` when one is given.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    stack: list[Expression] = []
    for pos, tok in enumerate(tokens):
        num = parse_number(tok)
        if num is not None:
            stack.append(Const(num))
            continue
        kind = token_kind(tok)
        if kind is None or (dictionary is not None and tok not in dictionary):
            raise UnknownToken(f"token {tok!r} at position {pos} is not numeric and not in the dictionary")
        if kind == "var":
            stack.append(Var(int(tok[1:])))
        elif kind == "unary":
            if not stack:
                raise MalformedSequence(f"unary {tok!r} at position {pos}: stack underflow")
            stack.append(Unary(tok, 1.0, 0.0, stack.pop()))
        else:
            if len(stack) < 2:
                raise MalformedSequence(f"binary {tok!r} at position {pos}: stack underflow")
            right = stack.pop()
            left = stack.pop()
            stack.append(Binary(tok, left, right))
    if len(stack) != 1:
        raise MalformedSequence(f"sequence left {len(stack)} operands on the stack (expected exactly 1)")
    return stack[0]


# ---------------------------------------------------------------------------
# Operator dictionary, operator sets
# ---------------------------------------------------------------------------


class OperatorDictionary:
    """Ordered token list fixing the encoding index of each operator/variable."""

    def __init__(self, tokens: Iterable[str]):
        toks = tuple(tokens)
        if len(set(toks)) != len(toks):
            raise ValueError("dictionary tokens must be unique")
        for t in toks:
            if token_kind(t) is None:
                raise UnknownToken(f"token {t!r} is not part of the operator vocabulary")
        self.tokens = toks
        self._index = {t: i for i, t in enumerate(toks)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, OperatorDictionary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"OperatorDictionary({list(self.tokens)!r})"

    def index(self, token: str) -> int:
        if token not in self._index:
            raise UnknownToken(f"token {token!r} is not in the dictionary")
        return self._index[token]

    @classmethod
    def default(cls, dim: int = 3) -> "OperatorDictionary":
        """Working dictionary: variables, then the default unary/binary sets."""
        vars_ = tuple(f"x{k}" for k in range(1, dim + 1))
        return cls(vars_ + DEFAULT_UNARY_SET + DEFAULT_BINARY_SET)

    @classmethod
    def full(cls, dim: int = 3) -> "OperatorDictionary":
        """Entire engine vocabulary, including singular and derivative-only ops."""
        vars_ = tuple(f"x{k}" for k in range(1, dim + 1))
        return cls(vars_ + UNARY_TOKENS + BINARY_TOKENS)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "OperatorDictionary":
        with open(path, "r", encoding="utf-8") as fh:
            toks = [line.strip() for line in fh if line.strip()]
        return cls(toks)


def _canonical_rank(token: str) -> tuple[int, int]:
    kind = token_kind(token)
    if kind == "var":
        return (0, int(token[1:]))
    if kind == "unary":
        return (1, UNARY_TOKENS.index(token))
    return (2, BINARY_TOKENS.index(token))


def extract_operator_set(source) -> tuple[str, ...]:
    """Unique non-numeric tokens of an expression or token sequence.

    Variables count as tokens, numeric literals never do.  The result is
    ordered canonically (variables by index, then unary, then binary ops).
    """
    if isinstance(source, (Var, Const, Param, Unary, Binary)):
        tokens = to_postfix(source)
    elif isinstance(source, str):
        tokens = source.split()
    else:
        tokens = list(source)
    seen = set()
    for tok in tokens:
        if parse_number(tok) is not None:
            continue
        if token_kind(tok) is None:
            raise UnknownToken(f"token {tok!r} is not part of the operator vocabulary")
        seen.add(tok)
    return tuple(sorted(seen, key=_canonical_rank))


@dataclass(frozen=True)
class OperatorSetVector:
    """Binary indicator vector aligned with an OperatorDictionary."""

    bits: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, i):
        return self.bits[i]


def encode_operator_set(op_set: Iterable[str], dictionary: OperatorDictionary) -> OperatorSetVector:
    """Encode a token set against a dictionary; tokens outside it are dropped."""
    members = set(op_set)
    return OperatorSetVector(tuple(1 if t in members else 0 for t in dictionary.tokens))


def mismatch(a, b) -> int:
    """Hamming distance ||a - b||^2 between two binary operator-set vectors."""
    va, vb = tuple(a), tuple(b)
    if len(va) != len(vb):
        raise LengthMismatch(f"vector lengths differ: {len(va)} vs {len(vb)}")
    return sum(int(x != y) for x, y in zip(va, vb))


# ---------------------------------------------------------------------------
# Random trees
# ---------------------------------------------------------------------------


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def random_tree(depth: int, unary_set: Sequence[str] = DEFAULT_UNARY_SET,
                binary_set: Sequence[str] = DEFAULT_BINARY_SET, rng=0, dim: int = 3) -> Expression:
    """Random alternating-layer tree with `depth` unary layers.

    Depth 1 is a single unary over a variable leaf; depth k puts a unary over
    a binary node that combines two depth-(k-1) subtrees.  Coefficients are
    small integers: alpha uniform on {-4..4}\\{0}, beta = 0 with prob. 1/2.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    unary_set = tuple(unary_set)
    binary_set = tuple(binary_set)
    if not unary_set or any(t not in UNARY_EVAL for t in unary_set):
        raise ValueError("unary_set must be a non-empty subset of the unary vocabulary")
    if not binary_set or any(t not in BINARY_EVAL for t in binary_set):
        raise ValueError("binary_set must be a non-empty subset of the binary vocabulary")
    gen = _as_generator(rng)

    def draw_coeff() -> float:
        mag = int(gen.integers(1, 5))
        return float(mag if gen.random() < 0.5 else -mag)

    def build(k: int) -> Expression:
        op = str(gen.choice(unary_set))
        alpha = draw_coeff()
        beta = 0.0 if gen.random() < 0.5 else draw_coeff()
        if k == 1:
            child: Expression = Var(int(gen.integers(1, dim + 1)))
        else:
            bop = str(gen.choice(binary_set))
            left = build(k - 1)
            right = build(k - 1)
            child = Binary(bop, left, right)
        return Unary(op, alpha, beta, child)

    return build(depth)


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------


def node_count(expr: Expression) -> int:
    """Total number of nodes (leaves included)."""
    if isinstance(expr, (Var, Const, Param)):
        return 1
    if isinstance(expr, Unary):
        return 1 + node_count(expr.child)
    return 1 + node_count(expr.left) + node_count(expr.right)


def variables_in(expr: Expression) -> set[int]:
    """Indices of the variables that actually occur in the tree."""
    if isinstance(expr, Var):
        return {expr.index}
    if isinstance(expr, (Const, Param)):
        return set()
    if isinstance(expr, Unary):
        return variables_in(expr.child)
    return variables_in(expr.left) | variables_in(expr.right)


def bind_params(expr: Expression, values: Sequence[float]) -> Expression:
    """Replace every Param leaf with the corresponding numeric constant."""
    if isinstance(expr, Param):
        return Const(float(values[expr.index]))
    if isinstance(expr, (Var, Const)):
        return expr
    if isinstance(expr, Unary):
        return Unary(expr.op, expr.alpha, expr.beta, bind_params(expr.child, values))
    return Binary(expr.op, bind_params(expr.left, values), bind_params(expr.right, values))


_INFIX_UNARY = {
    "0": None, "1": None, "Id": None,
    "^2": "({})^2", "^3": "({})^3", "^4": "({})^4",
    "EXP": "exp({})", "SIN": "sin({})", "COS": "cos({})",
    "SQRT": "sqrt({})", "ABS": "abs({})", "LG": "lg({})", "LN": "ln({})",
    "SIGN": "sign({})",
}


def to_infix(expr: Expression) -> str:
    """Human-readable parenthesized rendering (for logs and CLI output)."""
    if isinstance(expr, Var):
        return f"x{expr.index}"
    if isinstance(expr, Const):
        return format_number(expr.value)
    if isinstance(expr, Param):
        return f"p{expr.index}"
    if isinstance(expr, Unary):
        if expr.op == "0":
            return format_number(expr.beta)
        if expr.op == "1":
            return format_number(expr.alpha + expr.beta)
        body = to_infix(expr.child)
        core = body if expr.op == "Id" else _INFIX_UNARY[expr.op].format(body)
        if expr.alpha == 1 and expr.beta == 0:
            return core if expr.op != "Id" else f"({core})"
        if expr.beta == 0:
            return f"({format_number(expr.alpha)}*{core})"
        return f"({format_number(expr.alpha)}*{core} + {format_number(expr.beta)})"
    return f"({to_infix(expr.left)} {expr.op} {to_infix(expr.right)})"
