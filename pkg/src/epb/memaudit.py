"""Memorization heuristics over training span surfaces.

Each heuristic keys on the literal span text (both spans for two-span
tasks) and answers from the training label distribution for that key:

  exact    answer only when the key carries exactly one label in train
  freq     most frequent training label for the key
  uniform  uniform draw over the key's distinct training labels

All heuristics abstain on keys unseen in train; abstentions score as
incorrect, with coverage reported separately.  Filtering keeps exactly
the test points a heuristic cannot classify.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass

from epb.corpus import DatasetSplit, LabeledExample, TaskSchema
from epb.errors import DataError
from epb.rng import substream

HEURISTICS = ("exact", "freq", "uniform")

# A label unit is the value a heuristic predicts: the single gold label,
# or the whole sorted gold tuple for multi-label tasks.
LabelUnit = tuple[str, ...]


def span_key(split: DatasetSplit, example: LabeledExample) -> tuple[str, ...]:
    """Surface key: the space-joined tokens of each span, case-sensitive."""
    sentence = split.sentence(example.sentence_id)
    parts = [" ".join(sentence.tokens[example.span1.start : example.span1.end])]
    if example.span2 is not None:
        parts.append(" ".join(sentence.tokens[example.span2.start : example.span2.end]))
    return tuple(parts)


def label_unit(example: LabeledExample) -> LabelUnit:
    return example.gold


def build_index(split: DatasetSplit) -> dict[tuple[str, ...], Counter]:
    """Map each training span key to its label-unit counts."""
    index: dict[tuple[str, ...], Counter] = {}
    for ex in split.train:
        index.setdefault(span_key(split, ex), Counter())[label_unit(ex)] += 1
    return index


def _unit_order(schema: TaskSchema, units) -> list[LabelUnit]:
    """Deterministic order for label units: canonical class order for
    single-label tasks, lexicographic for multi-label tuples."""
    units = list(units)
    if schema.single_label:
        pos = {(lab,): i for i, lab in enumerate(schema.labels)}
        return sorted(units, key=lambda u: pos[u])
    return sorted(units)


def _example_stream_tag(example: LabeledExample) -> int:
    """Stable per-example tag for sampling heuristics, independent of the
    example's position in the test file."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(example.sentence_id).encode())
    h.update(b"|%d,%d" % (example.span1.start, example.span1.end))
    if example.span2 is not None:
        h.update(b"|%d,%d" % (example.span2.start, example.span2.end))
    return int.from_bytes(h.digest(), "little")


class Heuristic:
    """Base: classify(example) -> LabelUnit or None (abstain)."""

    name: str

    def __init__(self, split: DatasetSplit, index=None):
        self.split = split
        self.schema = split.schema
        self.index = build_index(split) if index is None else index

    def classify(self, example: LabeledExample) -> LabelUnit | None:
        raise NotImplementedError

    def covers(self, example: LabeledExample) -> bool:
        """Whether the heuristic produces any answer for this example."""
        return self.classify(example) is not None


class MemExact(Heuristic):
    name = "exact"

    def classify(self, example):
        counts = self.index.get(span_key(self.split, example))
        if counts is None or len(counts) != 1:
            return None
        return next(iter(counts))


class MemFreq(Heuristic):
    name = "freq"

    def classify(self, example):
        counts = self.index.get(span_key(self.split, example))
        if counts is None:
            return None
        best = max(counts.values())
        ties = [u for u in counts if counts[u] == best]
        return _unit_order(self.schema, ties)[0]

    def gold_probability(self, example) -> float | None:
        """P(gold | key) under the training distribution; None if unseen."""
        counts = self.index.get(span_key(self.split, example))
        if counts is None:
            return None
        return counts[label_unit(example)] / sum(counts.values())


class MemUniform(Heuristic):
    name = "uniform"

    def __init__(self, split, index=None, seed: int = 0, space: str = "key"):
        super().__init__(split, index)
        if space not in ("key", "full"):
            raise DataError(f"unknown uniform space {space!r}")
        self.seed = seed
        self.space = space
        if space == "full":
            self._full_units = _unit_order(
                self.schema, {u for c in self.index.values() for u in c}
            )

    def _choices(self, counts: Counter) -> list[LabelUnit]:
        if self.space == "full":
            return self._full_units
        return _unit_order(self.schema, counts)

    def classify(self, example):
        counts = self.index.get(span_key(self.split, example))
        if counts is None:
            return None
        choices = self._choices(counts)
        rng = substream(self.seed, "mem-uniform", _example_stream_tag(example))
        return choices[int(rng.integers(len(choices)))]

    def gold_probability(self, example) -> float | None:
        counts = self.index.get(span_key(self.split, example))
        if counts is None:
            return None
        choices = self._choices(counts)
        return (1.0 / len(choices)) if label_unit(example) in choices else 0.0


def make_heuristic(
    name: str,
    split: DatasetSplit,
    index=None,
    seed: int = 0,
    uniform_space: str = "key",
) -> Heuristic:
    if name == "exact":
        return MemExact(split, index)
    if name == "freq":
        return MemFreq(split, index)
    if name == "uniform":
        return MemUniform(split, index, seed=seed, space=uniform_space)
    raise DataError(f"unknown heuristic {name!r}")


@dataclass(frozen=True)
class AuditReport:
    heuristic: str
    n_test: int
    n_covered: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        """Fraction correct over all test points; abstentions count wrong."""
        return self.n_correct / self.n_test

    @property
    def coverage(self) -> float:
        return self.n_covered / self.n_test


def audit(heuristic: Heuristic, split: DatasetSplit) -> AuditReport:
    """Score a heuristic on the test split."""
    if not split.test:
        raise DataError("empty test split")
    covered = correct = 0
    for ex in split.test:
        pred = heuristic.classify(ex)
        if pred is None:
            continue
        covered += 1
        if pred == label_unit(ex):
            correct += 1
    return AuditReport(heuristic.name, len(split.test), covered, correct)


def expected_accuracy(heuristic: Heuristic, split: DatasetSplit) -> float | None:
    """Expectation of accuracy over the sampling in freq/uniform; None for
    deterministic heuristics without a probability model (exact)."""
    if not isinstance(heuristic, (MemFreq, MemUniform)):
        return None
    if not split.test:
        raise DataError("empty test split")
    total = 0.0
    for ex in split.test:
        if isinstance(heuristic, MemFreq):
            pred = heuristic.classify(ex)
            total += float(pred == label_unit(ex)) if pred is not None else 0.0
        else:
            p = heuristic.gold_probability(ex)
            total += p if p is not None else 0.0
    return total / len(split.test)


def split_by_coverage(
    heuristic: Heuristic, split: DatasetSplit
) -> tuple[tuple[LabeledExample, ...], tuple[LabeledExample, ...]]:
    """Partition test into (kept, removed): kept has the points the
    heuristic abstains on, removed the ones it can classify.  Order is
    preserved within each side."""
    kept, removed = [], []
    for ex in split.test:
        (removed if heuristic.covers(ex) else kept).append(ex)
    return tuple(kept), tuple(removed)
