"""fexkit: symbolic dataset generation, operator-set prediction, FEX PDE solving
and walk-on-spheres verification on a shared expression core."""

__version__ = "0.1.0"

from .expr import (
    Binary,
    Const,
    OperatorDictionary,
    Unary,
    Var,
    differentiate,
    encode_operator_set,
    evaluate,
    extract_operator_set,
    laplacian,
    mismatch,
    parse_postfix,
    postfix_string,
    random_tree,
    simplify,
    to_postfix,
)

__all__ = [
    "Binary",
    "Const",
    "OperatorDictionary",
    "Unary",
    "Var",
    "differentiate",
    "encode_operator_set",
    "evaluate",
    "extract_operator_set",
    "laplacian",
    "mismatch",
    "parse_postfix",
    "postfix_string",
    "random_tree",
    "simplify",
    "to_postfix",
    "__version__",
]
