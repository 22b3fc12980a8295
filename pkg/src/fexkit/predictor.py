"""Operator-set prediction.

Three interchangeable predictor kinds: an analytic `oracle` that reads the
operators off f and g, a trainable multi-label logistic `baseline` over
bag-of-token prompt features, and an `external` adapter that serves
predictions from a file so an outside model can be plugged in unchanged.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .datagen import DatasetRecord, render_prompt
from .errors import DegenerateData, MissingExternalPrediction, ParseError
from .expr import (
    OperatorDictionary,
    encode_operator_set,
    extract_operator_set,
    mismatch,
    parse_number,
)
from .pde import BC_TYPES, PDE_TYPES

# operators used when evaluating the domain's boundary/distance machinery
DOMAIN_OPERATORS = {"unit_box": ("ABS",), "unit_ball": ("^2", "+", "SQRT")}
# always-available elementary arithmetic
ELEMENTARY_OPERATORS = ("+", "*", "^2")


# ---------------------------------------------------------------------------
# Token post-processing and the analytic oracle
# ---------------------------------------------------------------------------


def postprocess(raw_tokens, dictionary: OperatorDictionary) -> tuple[str, ...]:
    """Clean a raw token stream into a valid operator set.

    Deduplicates, drops numeric literals and anything outside the dictionary.
    Never raises; the result is ordered by dictionary position.
    """
    tokens = raw_tokens.split() if isinstance(raw_tokens, str) else list(raw_tokens)
    members = {t for t in tokens if parse_number(t) is None and t in dictionary}
    return tuple(t for t in dictionary.tokens if t in members)


def oracle_predict(record: DatasetRecord,
                   dictionary: OperatorDictionary | None = None,
                   domain_kind: str = "unit_box") -> tuple[str, ...]:
    """Operator set sufficient to express the solution, read off f and g.

    Union of the tokens of f and g, the elementary arithmetic operators, and
    the operators of the domain's boundary machinery, intersected with the
    working dictionary.
    """
    if domain_kind not in DOMAIN_OPERATORS:
        raise ValueError(f"unknown domain kind {domain_kind!r}")
    if dictionary is None:
        dictionary = OperatorDictionary.default(record.dim)
    tokens = record.f_postfix.split()
    tokens += [t for t in record.g_postfix.split() if not t.startswith("FACE:")]
    tokens += ELEMENTARY_OPERATORS
    tokens += DOMAIN_OPERATORS[domain_kind]
    return postprocess(tokens, dictionary)


def record_label(record: DatasetRecord, dictionary: OperatorDictionary):
    """True multi-label target: the operator-set vector of the solution."""
    return encode_operator_set(extract_operator_set(record.u_postfix), dictionary)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMap:
    """Bag-of-tokens vocabulary plus one-hot pde/bc type slots."""

    prompt_tokens: tuple[str, ...]

    @property
    def dim(self) -> int:
        return len(self.prompt_tokens) + len(PDE_TYPES) + len(BC_TYPES)


def build_feature_map(records) -> FeatureMap:
    vocab = sorted({tok for r in records for tok in render_prompt(r).prompt.split()})
    return FeatureMap(tuple(vocab))


def featurize(record: DatasetRecord, feature_map: FeatureMap) -> np.ndarray:
    x = np.zeros(feature_map.dim)
    present = set(render_prompt(record).prompt.split())
    for i, tok in enumerate(feature_map.prompt_tokens):
        if tok in present:
            x[i] = 1.0
    off = len(feature_map.prompt_tokens)
    if record.pde_type in PDE_TYPES:
        x[off + PDE_TYPES.index(record.pde_type)] = 1.0
    off += len(PDE_TYPES)
    if record.bc_type in BC_TYPES:
        x[off + BC_TYPES.index(record.bc_type)] = 1.0
    return x


def _feature_matrix(records, feature_map: FeatureMap) -> np.ndarray:
    return np.stack([featurize(r, feature_map) for r in records])


def _label_matrix(records, dictionary: OperatorDictionary) -> np.ndarray:
    return np.array([tuple(record_label(r, dictionary)) for r in records], dtype=float)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass
class PredictorModel:
    """kind is one of oracle / baseline / external; baseline carries weights."""

    kind: str
    output_dictionary: OperatorDictionary
    feature_map: FeatureMap | None = None
    W: np.ndarray | None = None
    b: np.ndarray | None = None
    loss_history: list[float] = field(default_factory=list)
    external_predictions: dict[int, tuple[str, ...]] | None = None
    domain_kind: str = "unit_box"


def oracle_model(dictionary: OperatorDictionary | None = None,
                 dim: int = 3, domain_kind: str = "unit_box") -> PredictorModel:
    if dictionary is None:
        dictionary = OperatorDictionary.default(dim)
    return PredictorModel("oracle", dictionary, domain_kind=domain_kind)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 2.0
    l2: float = 0.0
    seed: int = 0


def train_baseline(records, dictionary: OperatorDictionary | None = None,
                   config: TrainConfig = TrainConfig()) -> PredictorModel:
    """Full-batch gradient descent on the mean per-label cross-entropy.

    Label columns that are constant across the training set carry no
    gradient signal: they are pinned to their constant value and excluded
    from the loss, with a warning.  A set whose columns are all constant
    (a single record, say) is memorized exactly through the pins.
    """
    records = list(records)
    if not records:
        raise ValueError("training set must be non-empty")
    if dictionary is None:
        dictionary = OperatorDictionary.default(records[0].dim)
    if len(dictionary) == 0:
        raise DegenerateData("the output dictionary is empty; there are no labels to train")
    feature_map = build_feature_map(records)
    X = _feature_matrix(records, feature_map)
    Y = _label_matrix(records, dictionary)
    n, k = Y.shape

    col_min, col_max = Y.min(axis=0), Y.max(axis=0)
    active = col_min != col_max
    W = np.zeros((k, feature_map.dim))
    b = np.zeros(k)
    if not np.all(active):
        dropped = [dictionary.tokens[i] for i in np.flatnonzero(~active)]
        warnings.warn(f"constant label columns pinned and excluded from training: {dropped}")
        # saturate the logit so the pinned columns predict their constant
        b[~active] = np.where(col_min[~active] == 1.0, 30.0, -30.0)

    mask = active.astype(float)
    n_active = float(mask.sum())
    if n_active == 0.0:
        # everything pinned: the model is already exact on the training set
        return PredictorModel("baseline", dictionary, feature_map, W, b,
                              [0.0] * config.epochs)
    history = []
    for _ in range(config.epochs):
        P = expit(X @ W.T + b)
        Pc = np.clip(P, 1e-12, 1.0 - 1e-12)
        bce = -(Y * np.log(Pc) + (1.0 - Y) * np.log(1.0 - Pc))
        history.append(float(np.sum(bce * mask) / (n * n_active)))
        dZ = (P - Y) * mask / (n * n_active)
        W -= config.lr * (dZ.T @ X + config.l2 * W)
        b -= config.lr * dZ.sum(axis=0)
    return PredictorModel("baseline", dictionary, feature_map, W, b, history)


def external_model(predictions: dict[int, tuple[str, ...]],
                   dictionary: OperatorDictionary | None = None,
                   dim: int = 3) -> PredictorModel:
    if dictionary is None:
        dictionary = OperatorDictionary.default(dim)
    table = {int(seed): tuple(ops) for seed, ops in predictions.items()}
    return PredictorModel("external", dictionary, external_predictions=table)


def read_external_predictions(path) -> dict[int, tuple[str, ...]]:
    """JSONL of {"seed": int, "ops": [token, ...]} rows."""
    table: dict[int, tuple[str, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict) or "seed" not in row or "ops" not in row:
                raise ParseError(f"line {lineno}: expected an object with seed and ops")
            table[int(row["seed"])] = tuple(str(t) for t in row["ops"])
    return table


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------


def predict(model: PredictorModel, record: DatasetRecord,
            threshold: float = 0.5) -> tuple[str, ...]:
    """Operator set for one record; always a subset of the output dictionary."""
    if model.kind == "oracle":
        return oracle_predict(record, model.output_dictionary, model.domain_kind)
    if model.kind == "baseline":
        p = expit(model.W @ featurize(record, model.feature_map) + model.b)
        chosen = [model.output_dictionary.tokens[i] for i in np.flatnonzero(p >= threshold)]
        return postprocess(chosen, model.output_dictionary)
    if model.kind == "external":
        if record.seed not in model.external_predictions:
            raise MissingExternalPrediction(f"no prediction for record seed {record.seed}")
        return postprocess(model.external_predictions[record.seed], model.output_dictionary)
    raise ValueError(f"unknown model kind {model.kind!r}")


@dataclass(frozen=True)
class PredictionReport:
    mismatches: tuple[int, ...]
    average_mismatch: float
    precision: dict[str, float]
    recall: dict[str, float]
    false_negatives: tuple[int, ...]

    @property
    def n_records(self) -> int:
        return len(self.mismatches)


def evaluate_predictor(model: PredictorModel, records,
                       threshold: float = 0.5) -> PredictionReport:
    """Per-record operator mismatch plus per-operator precision/recall.

    Precision/recall denominators of zero (an operator never predicted or
    never present) report as 1.0.
    """
    records = list(records)
    if not records:
        raise ValueError("test set must be non-empty")
    dictionary = model.output_dictionary
    mismatches, fns = [], []
    tp = np.zeros(len(dictionary))
    fp = np.zeros(len(dictionary))
    fn = np.zeros(len(dictionary))
    for rec in records:
        pred = encode_operator_set(predict(model, rec, threshold), dictionary)
        true = record_label(rec, dictionary)
        mismatches.append(mismatch(pred, true))
        p = np.asarray(tuple(pred), dtype=bool)
        t = np.asarray(tuple(true), dtype=bool)
        tp += p & t
        fp += p & ~t
        fn += ~p & t
        fns.append(int(np.sum(~p & t)))
    with np.errstate(invalid="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
        rec_ = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 1.0)
    return PredictionReport(
        tuple(mismatches), float(np.mean(mismatches)),
        {t: float(v) for t, v in zip(dictionary.tokens, prec)},
        {t: float(v) for t, v in zip(dictionary.tokens, rec_)},
        tuple(fns))


def all_zeros_average_mismatch(records, dictionary: OperatorDictionary) -> float:
    """Mean label cardinality: the score of the predict-nothing baseline."""
    Y = _label_matrix(records, dictionary)
    return float(Y.sum(axis=1).mean())


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(model: PredictorModel, path, config: str | None = None) -> None:
    """Model JSON; `config` is embedded as a field (JSON carries no comments)."""
    blob: dict = {"kind": model.kind,
                  "output_tokens": list(model.output_dictionary.tokens),
                  "domain_kind": model.domain_kind}
    if config is not None:
        blob["config"] = config
    if model.kind == "baseline":
        blob["feature_tokens"] = list(model.feature_map.prompt_tokens)
        blob["W"] = model.W.tolist()
        blob["b"] = model.b.tolist()
        blob["loss_history"] = model.loss_history
    if model.kind == "external":
        blob["predictions"] = {str(s): list(ops)
                               for s, ops in model.external_predictions.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_model(path) -> PredictorModel:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    kind = blob.get("kind")
    dictionary = OperatorDictionary(blob["output_tokens"])
    domain_kind = blob.get("domain_kind", "unit_box")
    if kind == "oracle":
        return PredictorModel("oracle", dictionary, domain_kind=domain_kind)
    if kind == "baseline":
        return PredictorModel(
            "baseline", dictionary, FeatureMap(tuple(blob["feature_tokens"])),
            np.asarray(blob["W"], dtype=float), np.asarray(blob["b"], dtype=float),
            list(blob.get("loss_history", [])), domain_kind=domain_kind)
    if kind == "external":
        preds = {int(s): tuple(ops) for s, ops in blob["predictions"].items()}
        return PredictorModel("external", dictionary,
                              external_predictions=preds, domain_kind=domain_kind)
    raise ParseError(f"unknown model kind {kind!r}")
