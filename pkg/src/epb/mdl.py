"""Codelength accounting for probe quality.

Three quantities, all in bits (base-2 logs throughout):

  data codelength     sum of -log2 P(gold | vector) under a trained probe
  two-part code       data codelength + (p/2) * log2 n model cost
  prequential code    online code over a doubling schedule: the first
                      block is sent uniformly, each later block under a
                      fresh probe trained on everything before it

Gold probabilities are floored at 1e-12 so codelengths stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from epb.errors import DataError, NumericError
from epb.probes import ProbeConfig, ProbeModel, forward, train
from epb.rng import derive_seed, substream

PROB_FLOOR = 1e-12

# doubling schedule over the training stream
DEFAULT_SCHEDULE = (
    0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.0625, 0.125, 0.25, 0.5, 1.0,
)


@dataclass(frozen=True)
class Codelength:
    data_bits: float
    complexity_bits: float
    total_bits: float
    n: int
    p: int
    c_k: float = 0.0


def _gold_log2_probs(model: ProbeModel, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    probs = forward(model, X, mode="eval")
    if not np.isfinite(probs).all():
        raise NumericError("non-finite probability in codelength")
    if model.config.single_label:
        gold = probs[np.arange(X.shape[0]), np.asarray(Y, dtype=np.int64)]
        return np.log2(np.maximum(gold, PROB_FLOOR))
    # independent per-class Bernoulli factors, each floored
    Yb = np.asarray(Y, dtype=np.float64)
    factors = np.where(Yb > 0.5, probs, 1.0 - probs)
    return np.log2(np.maximum(factors, PROB_FLOOR)).sum(axis=1)


def data_codelength(model: ProbeModel, X: np.ndarray, Y: np.ndarray) -> float:
    """Bits to send the gold labels under the model, dropout off."""
    if X.shape[0] == 0:
        return 0.0
    return float(-_gold_log2_probs(model, X, Y).sum())


def two_part_codelength(model: ProbeModel, X: np.ndarray, Y: np.ndarray) -> Codelength:
    """Data bits plus the (p/2) log2 n parameter cost, residual term 0."""
    n = X.shape[0]
    if n < 1:
        raise DataError("two-part code needs at least one example")
    data = data_codelength(model, X, Y)
    complexity = model.n_params / 2.0 * math.log2(n)
    return Codelength(
        data_bits=data,
        complexity_bits=complexity,
        total_bits=data + complexity,
        n=n,
        p=model.n_params,
    )


def validate_schedule(fractions) -> tuple[float, ...]:
    fr = tuple(float(f) for f in fractions)
    if not fr:
        raise DataError("empty prequential schedule")
    prev = 0.0
    for f in fr:
        if not (0.0 < f <= 1.0):
            raise DataError(f"schedule boundary {f} outside (0, 1]")
        if f <= prev:
            raise DataError("schedule boundaries must be strictly increasing")
        prev = f
    if fr[-1] != 1.0:
        raise DataError("schedule must end at 1.0 to encode the whole stream")
    return fr


def block_sizes(fractions, n: int) -> list[int]:
    """Cumulative example counts per boundary, half-up rounded."""
    sizes = [int(math.floor(f * n + 0.5)) for f in fractions]
    prev = 0
    for f, s in zip(fractions, sizes):
        if s <= prev:
            raise DataError(f"block with zero examples at boundary {f}")
        prev = s
    return sizes


@dataclass(frozen=True)
class PrequentialResult:
    total_bits: float
    block_bits: tuple[float, ...]
    boundaries: tuple[int, ...]
    schedule: tuple[float, ...]
    n: int
    n_classes: int
    seed: int


def _uniform_bits_per_example(config: ProbeConfig) -> float:
    # multi-label: the uniform code covers all 2^C label subsets
    if config.single_label:
        return math.log2(config.n_classes)
    return float(config.n_classes)


def prequential_codelength(
    config: ProbeConfig,
    X: np.ndarray,
    Y: np.ndarray,
    schedule=DEFAULT_SCHEDULE,
    seed: int = 0,
) -> PrequentialResult:
    """Online codelength over a seed-shuffled stream.

    Block i > 1 is scored by a fresh single-replica probe trained on all
    examples before it; block 1 costs n1 * log2 C (uniform code).
    """
    fractions = validate_schedule(schedule)
    n = X.shape[0]
    if n < 1:
        raise DataError("empty training stream")
    sizes = block_sizes(fractions, n)
    order = substream(seed, "preq-order", n).permutation(n)
    Xs, Ys = X[order], Y[order]

    per_block: list[float] = []
    per_block.append(sizes[0] * _uniform_bits_per_example(config))
    for i in range(1, len(sizes)):
        lo, hi = sizes[i - 1], sizes[i]
        block_config = replace(
            config, replicas=1, seed=derive_seed(seed, "preq-block", i)
        )
        model = train(block_config, Xs[:lo], Ys[:lo])
        per_block.append(data_codelength(model, Xs[lo:hi], Ys[lo:hi]))
    return PrequentialResult(
        total_bits=float(sum(per_block)),
        block_bits=tuple(per_block),
        boundaries=tuple(sizes),
        schedule=fractions,
        n=n,
        n_classes=config.n_classes,
        seed=seed,
    )


@dataclass(frozen=True)
class EncoderComparison:
    total_a: float
    total_b: float
    difference: float  # a - b; positive when b is the shorter code
    ratio: float  # b / a

    def as_dict(self) -> dict:
        return {
            "total_a": self.total_a,
            "total_b": self.total_b,
            "difference": self.difference,
            "ratio": self.ratio,
        }


def _size_of(result) -> int:
    return result.n


def compare_encoders(result_a, result_b) -> EncoderComparison:
    """Compare two codelengths over the same data; a is conventionally the
    reference (e.g. the random encoder)."""
    if _size_of(result_a) != _size_of(result_b):
        raise DataError(
            f"codelengths cover different sizes: {result_a.n} vs {result_b.n}"
        )
    if isinstance(result_a, PrequentialResult) and isinstance(
        result_b, PrequentialResult
    ):
        if result_a.schedule != result_b.schedule:
            raise DataError("prequential comparisons need a common schedule")
    a, b = result_a.total_bits, result_b.total_bits
    if a > 0:
        ratio = b / a
    else:
        ratio = 1.0 if b == 0 else math.inf
    return EncoderComparison(total_a=a, total_b=b, difference=a - b, ratio=ratio)
