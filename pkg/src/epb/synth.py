"""Synthetic probing corpora with dial-controlled memorization bias.

Every key is a single token, every sentence is one token long.  The test
set is composed of three kinds of points:

  exact   key occurs in train with exactly one label, gold agrees
  ambig   key occurs in train under >= 2 labels
  unseen  key never occurs in train

so the fraction classifiable by the exact-match heuristic is rho_exact by
construction, and its accuracy equals its coverage.  Embeddings come in
two flavors: informative (4-sigma class-mean Gaussians, fresh noise per
example) and noise (a fixed label-independent Gaussian vector per token
type, the channel a probe can only exploit by memorizing surfaces).

The generator also emits its own ground-truth audit, computed by a naive
rescan of the emitted training examples rather than via the index
machinery it is meant to check.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from epb.corpus import (
    DatasetSplit,
    LabeledExample,
    Sentence,
    Span,
    SplitPart,
    TaskSchema,
)
from epb.errors import DataError
from epb.rng import substream

MODES = ("informative", "noise")
CLASS_SEPARATION = 4.0


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int
    n_classes: int
    train_size: int
    test_size: int
    rho_exact: float
    rho_ambig: float
    mode: str
    dim: int
    seed: int

    def __post_init__(self):
        if self.vocab_size < 1 or self.train_size < 1 or self.test_size < 1:
            raise DataError("sizes must be >= 1")
        if self.n_classes < 2:
            raise DataError("need at least 2 classes")
        if self.dim < 1:
            raise DataError("embedding dim must be >= 1")
        if not (0.0 <= self.rho_exact <= 1.0 and 0.0 <= self.rho_ambig <= 1.0):
            raise DataError("leak rates must lie in [0, 1]")
        if self.rho_exact + self.rho_ambig > 1.0 + 1e-12:
            raise DataError("rho_exact + rho_ambig exceeds 1")
        if self.mode not in MODES:
            raise DataError(f"unknown embedding mode {self.mode!r}")
        if self.mode == "informative" and self.n_classes > self.dim:
            raise DataError("informative mode needs n_classes <= dim")


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _pool_sizes(config: SynthConfig) -> tuple[int, int, int, int, int, int, int]:
    """(n_exact, n_ambig, n_unseen, k_exact, k_ambig, k_unseen, k_filler)."""
    n_exact = _half_up(config.rho_exact * config.test_size)
    n_ambig = min(
        _half_up(config.rho_ambig * config.test_size), config.test_size - n_exact
    )
    n_unseen = config.test_size - n_exact - n_ambig
    v = config.vocab_size
    k_exact = min(n_exact, max(1, v // 4)) if n_exact else 0
    k_ambig = min(n_ambig, max(1, v // 8)) if n_ambig else 0
    k_unseen = min(n_unseen, max(1, v // 8)) if n_unseen else 0
    min_train = k_exact + 2 * k_ambig
    if min_train > config.train_size:
        raise DataError(
            f"train size {config.train_size} cannot host {k_exact} exact and "
            f"{k_ambig} ambiguous keys"
        )
    filler_needed = config.train_size > min_train
    used = k_exact + k_ambig + k_unseen
    k_filler = v - used
    if used > v or (filler_needed and k_filler < 1):
        raise DataError("vocabulary too small for requested distinct keys")
    if not filler_needed:
        k_filler = 0
    return n_exact, n_ambig, n_unseen, k_exact, k_ambig, k_unseen, k_filler


def generate(config: SynthConfig) -> tuple[DatasetSplit, dict[int, np.ndarray], dict]:
    """Build (dataset, embedding table, ground-truth audit)."""
    n_exact, n_ambig, n_unseen, k_exact, k_ambig, k_unseen, k_filler = _pool_sizes(
        config
    )
    c = config.n_classes
    labels = tuple(f"c{i}" for i in range(c))
    width = len(str(config.vocab_size - 1))
    tokens = [f"t{i:0{width}d}" for i in range(config.vocab_size)]
    exact_keys = tokens[:k_exact]
    ambig_keys = tokens[k_exact : k_exact + k_ambig]
    unseen_keys = tokens[k_exact + k_ambig : k_exact + k_ambig + k_unseen]
    filler_keys = tokens[k_exact + k_ambig + k_unseen :] if k_filler else []

    # fixed label per exact/filler key, a distinct label pair per ambig key
    exact_label = {t: labels[i % c] for i, t in enumerate(exact_keys)}
    ambig_pair = {
        t: (labels[i % c], labels[(i + 1) % c]) for i, t in enumerate(ambig_keys)
    }
    filler_label = {t: labels[i % c] for i, t in enumerate(filler_keys)}

    train_rows: list[tuple[str, str]] = []
    occurrences: Counter = Counter()

    def emit_train(token: str) -> None:
        if token in ambig_pair:
            label = ambig_pair[token][occurrences[token] % 2]
        else:
            label = exact_label.get(token) or filler_label[token]
        train_rows.append((token, label))
        occurrences[token] += 1

    for t in exact_keys:
        emit_train(t)
    for t in ambig_keys:
        emit_train(t)
        emit_train(t)
    cycle = exact_keys + ambig_keys + filler_keys
    for r in range(config.train_size - len(train_rows)):
        emit_train(cycle[r % len(cycle)])
    order = substream(config.seed, "train-order").permutation(len(train_rows))
    train_rows = [train_rows[i] for i in order]

    rng_ambig = substream(config.seed, "ambig-gold")
    rng_unseen = substream(config.seed, "unseen-gold")
    test_rows: list[tuple[str, str, str]] = []  # token, gold, kind
    for i in range(n_exact):
        t = exact_keys[i % k_exact]
        test_rows.append((t, exact_label[t], "exact"))
    for i in range(n_ambig):
        t = ambig_keys[i % k_ambig]
        test_rows.append((t, ambig_pair[t][int(rng_ambig.integers(2))], "ambig"))
    for i in range(n_unseen):
        t = unseen_keys[i % k_unseen]
        test_rows.append((t, labels[int(rng_unseen.integers(c))], "unseen"))
    order = substream(config.seed, "test-order").permutation(len(test_rows))
    test_rows = [test_rows[i] for i in order]

    schema = TaskSchema(
        name="synth", arity="one-span", labeling="single-label", labels=labels
    )
    sentences: dict[int, Sentence] = {}
    train_examples = []
    test_examples = []
    sid = 0
    for token, label in train_rows:
        sentences[sid] = Sentence(sid, (token,))
        train_examples.append(LabeledExample(sid, Span(0, 1), None, (label,)))
        sid += 1
    test_kind: dict[int, str] = {}
    for token, gold, kind in test_rows:
        sentences[sid] = Sentence(sid, (token,))
        test_examples.append(LabeledExample(sid, Span(0, 1), None, (gold,)))
        test_kind[sid] = kind
        sid += 1

    split = DatasetSplit(
        schema=schema,
        sentences=sentences,
        train_part=SplitPart(
            sentence_ids=tuple(range(len(train_rows))),
            examples=tuple(train_examples),
        ),
        test_part=SplitPart(
            sentence_ids=tuple(range(len(train_rows), sid)),
            examples=tuple(test_examples),
        ),
    )

    class_index = {lab: i for i, lab in enumerate(labels)}
    table: dict[int, np.ndarray] = {}
    all_examples = list(train_examples) + list(test_examples)
    for ex in all_examples:
        token = sentences[ex.sentence_id].tokens[0]
        if config.mode == "noise":
            vec = substream(config.seed, "tokvec", token).standard_normal(config.dim)
        else:
            vec = substream(config.seed, "infnoise", ex.sentence_id).standard_normal(
                config.dim
            )
            vec[class_index[ex.gold[0]]] += CLASS_SEPARATION
        table[ex.sentence_id] = vec.astype(np.float32).reshape(1, config.dim)

    audit = _ground_truth_audit(split, test_kind)
    return split, table, audit


def _ground_truth_audit(split: DatasetSplit, test_kind: dict[int, str]) -> dict:
    """Per-point classifiability, recomputed by naive enumeration over the
    emitted train rows."""
    seen: dict[str, Counter] = {}
    for ex in split.train:
        token = split.sentences[ex.sentence_id].tokens[0]
        seen.setdefault(token, Counter())[ex.gold[0]] += 1

    schema_pos = {lab: i for i, lab in enumerate(split.schema.labels)}
    points = []
    cov = {"exact": 0, "freq": 0, "uniform": 0}
    correct_exact = 0
    correct_freq = 0
    expected_uniform = 0.0
    for ex in split.test:
        token = split.sentences[ex.sentence_id].tokens[0]
        counts = seen.get(token)
        can_exact = counts is not None and len(counts) == 1
        can_any = counts is not None
        if can_exact:
            cov["exact"] += 1
            correct_exact += int(next(iter(counts)) == ex.gold[0])
        if can_any:
            cov["freq"] += 1
            cov["uniform"] += 1
            best = max(counts.values())
            pick = min(
                (u for u in counts if counts[u] == best), key=schema_pos.__getitem__
            )
            correct_freq += int(pick == ex.gold[0])
            expected_uniform += (
                1.0 / len(counts) if ex.gold[0] in counts else 0.0
            )
        points.append(
            {
                "sentence_id": ex.sentence_id,
                "key": token,
                "gold": ex.gold[0],
                "kind": test_kind[ex.sentence_id],
                "exact": can_exact,
                "freq": can_any,
                "uniform": can_any,
            }
        )
    n = len(split.test)
    return {
        "n_test": n,
        "coverage": {k: cov[k] / n for k in cov},
        "covered": dict(cov),
        "accuracy": {
            "exact": correct_exact / n,
            "freq": correct_freq / n,
            "uniform_expected": expected_uniform / n,
        },
        "points": points,
    }
