"""Classification metrics, accuracy-drop arithmetic, and drop tables.

Percent values are carried at full precision and rendered to 2 decimals
with half-up rounding only at the formatting boundary.  Macro averages
run over every schema class, with the empty-class convention P=R=F1=0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from epb.corpus import TaskSchema
from epb.errors import DataError


def format_pct(x: float, places: int = 2) -> str:
    q = Decimal(1).scaleb(-places)
    d = Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)
    if d.is_zero():
        d = abs(d)  # avoid "-0.00"
    return str(d)


# ---------------------------------------------------------------------------
# Confusion accumulation.  Single-label: C x C matrix, rows = gold.
# Multi-label: per-class TP/FP/FN/TN plus an exact-match counter.
# Both merge by entrywise addition.
# ---------------------------------------------------------------------------


class ConfusionAccumulator:
    def __init__(self, schema: TaskSchema):
        self.schema = schema
        c = len(schema.labels)
        if schema.single_label:
            self.matrix = np.zeros((c, c), dtype=np.int64)
        else:
            self.binary = np.zeros((c, 4), dtype=np.int64)  # TP FP FN TN
            self.exact = 0
            self.n = 0

    def add(self, gold, pred) -> None:
        if self.schema.single_label:
            self.matrix[self.schema.class_index(gold), self.schema.class_index(pred)] += 1
        else:
            g = {self.schema.class_index(x) for x in gold}
            p = {self.schema.class_index(x) for x in pred}
            for k in range(len(self.schema.labels)):
                ing, inp = k in g, k in p
                col = 0 if ing and inp else 1 if inp else 2 if ing else 3
                self.binary[k, col] += 1
            self.exact += int(g == p)
            self.n += 1

    def merge(self, other: "ConfusionAccumulator") -> None:
        if self.schema != other.schema:
            raise DataError("cannot merge accumulators over different schemas")
        if self.schema.single_label:
            self.matrix += other.matrix
        else:
            self.binary += other.binary
            self.exact += other.exact
            self.n += other.n


@dataclass(frozen=True)
class MetricReport:
    """Percent-scaled metrics; mcc stays in [-1, 1]."""

    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    mcc: float
    micro_f1: float | None = None  # multi-label only

    def as_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "mcc": self.mcc,
        }
        if self.micro_f1 is not None:
            d["micro_f1"] = self.micro_f1
        return d


def _prf(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray):
    with np.errstate(invalid="ignore"):
        p = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        r = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        f = np.where(p + r > 0, 2 * p * r / np.maximum(p + r, 1e-300), 0.0)
    return p, r, f


def _single_label_mcc(matrix: np.ndarray) -> float:
    m = matrix.astype(np.float64)
    s = m.sum()
    c = np.trace(m)
    t = m.sum(axis=1)  # gold counts
    p = m.sum(axis=0)  # predicted counts
    num = c * s - float(p @ t)
    den = math.sqrt(max(s * s - float(p @ p), 0.0)) * math.sqrt(
        max(s * s - float(t @ t), 0.0)
    )
    return num / den if den > 0 else 0.0


def report_from_accumulator(acc: ConfusionAccumulator) -> MetricReport:
    schema = acc.schema
    if schema.single_label:
        m = acc.matrix
        total = int(m.sum())
        if total == 0:
            raise DataError("no observations accumulated")
        tp = np.diag(m).astype(np.float64)
        fp = m.sum(axis=0) - tp
        fn = m.sum(axis=1) - tp
        support = m.sum(axis=1).astype(np.float64)
        p, r, f = _prf(tp, fp, fn)
        w = support / total
        accuracy = tp.sum() / total
        # support-weighted mean recall is sum(s_c/n * tp_c/s_c) = sum(tp)/n,
        # so it equals accuracy exactly; evaluate the simplified form
        return MetricReport(
            accuracy=100 * accuracy,
            weighted_precision=100 * float(w @ p),
            weighted_recall=100 * accuracy,
            weighted_f1=100 * float(w @ f),
            macro_precision=100 * float(p.mean()),
            macro_recall=100 * float(r.mean()),
            macro_f1=100 * float(f.mean()),
            mcc=_single_label_mcc(m),
        )
    if acc.n == 0:
        raise DataError("no observations accumulated")
    tp = acc.binary[:, 0].astype(np.float64)
    fp = acc.binary[:, 1].astype(np.float64)
    fn = acc.binary[:, 2].astype(np.float64)
    tn = acc.binary[:, 3].astype(np.float64)
    support = tp + fn
    p, r, f = _prf(tp, fp, fn)
    w = support / support.sum() if support.sum() > 0 else np.zeros_like(support)
    stp, sfp, sfn, stn = tp.sum(), fp.sum(), fn.sum(), tn.sum()
    micro_den = 2 * stp + sfp + sfn
    mcc_den = math.sqrt((stp + sfp) * (stp + sfn) * (stn + sfp) * (stn + sfn))
    return MetricReport(
        accuracy=100 * acc.exact / acc.n,
        weighted_precision=100 * float(w @ p),
        weighted_recall=100 * float(w @ r),
        weighted_f1=100 * float(w @ f),
        macro_precision=100 * float(p.mean()),
        macro_recall=100 * float(r.mean()),
        macro_f1=100 * float(f.mean()),
        mcc=(stp * stn - sfp * sfn) / mcc_den if mcc_den > 0 else 0.0,
        micro_f1=100 * (2 * stp / micro_den) if micro_den > 0 else 0.0,
    )


def compute_metrics(gold, predicted, schema: TaskSchema) -> MetricReport:
    """gold/predicted: label strings (single-label) or label collections
    (multi-label), aligned by position."""
    if len(gold) != len(predicted):
        raise DataError(
            f"gold has {len(gold)} items, predictions have {len(predicted)}"
        )
    acc = ConfusionAccumulator(schema)
    for g, p in zip(gold, predicted):
        acc.add(g, p)
    return report_from_accumulator(acc)


# ---------------------------------------------------------------------------
# Drops and the bold/italic significance classification
# ---------------------------------------------------------------------------

SIGNIFICANCE_FACTOR = 2.0  # "> 100% relative difference"


def drop(acc_original: float, acc_filtered: float) -> float:
    """Relative accuracy reduction in percent; negative when the filtered
    set scores higher."""
    if acc_original == 0:
        raise DataError("zero original accuracy")
    return (acc_original - acc_filtered) * 100.0 / acc_original


def classify_pair(
    base_drop: float, random_drop: float, factor: float = SIGNIFICANCE_FACTOR
) -> str:
    """How a random encoder's drop compares to the base encoder's."""
    if random_drop > base_drop:
        if base_drop > 0 and random_drop > factor * base_drop:
            return "higher-significant"
        return "higher"
    if random_drop < base_drop:
        return "lower"
    return "equal"


@dataclass(frozen=True)
class DropReport:
    acc_original: float
    acc_filtered: float

    @property
    def drop(self) -> float:
        return drop(self.acc_original, self.acc_filtered)

    def as_dict(self) -> dict:
        return {
            "acc_original": self.acc_original,
            "acc_filtered": self.acc_filtered,
            "drop": self.drop,
        }


def _mark(value: float, classification: str | None) -> str:
    text = format_pct(value)
    if classification in ("higher", "higher-significant"):
        return f"**{text}**"
    if classification == "lower":
        return f"*{text}*"
    return text


def drop_table_markdown(rows, cell_columns) -> str:
    """Render drop results in the dataset/encoder/version grid.

    rows: iterables of (dataset, encoder, {column: DropReport}) for the
    base version followed by the random version of the same encoder.
    cell_columns: ordered column keys, e.g. ("linear/exact", ...).
    Random-row cells are bolded when their drop exceeds the base row's
    and italicized when below it.
    """
    header = ["Dataset", "Encoder", "Version", *cell_columns]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    for base, random_ in rows:
        b_dataset, b_encoder, b_cells = base
        r_dataset, r_encoder, r_cells = random_
        if (b_dataset, b_encoder) != (r_dataset, r_encoder):
            raise DataError("base/random rows must describe the same cell")
        base_cells = [format_pct(b_cells[c].drop) for c in cell_columns]
        rand_cells = [
            _mark(r_cells[c].drop, classify_pair(b_cells[c].drop, r_cells[c].drop))
            for c in cell_columns
        ]
        lines.append(
            "| " + " | ".join([b_dataset, b_encoder, "base", *base_cells]) + " |"
        )
        lines.append("| " + " | ".join(["", "", "random", *rand_cells]) + " |")
    return "\n".join(lines) + "\n"
