"""Builders and naive oracles shared across tests.

The oracles here are deliberately dumb reimplementations (plain loops,
no shared code with the package) so they can arbitrate the fast paths.
"""

import math

from epb.corpus import (
    DatasetSplit,
    LabeledExample,
    Sentence,
    Span,
    SplitPart,
    TaskSchema,
)


def build_split(train, test, labels, dev=(), labeling="single-label"):
    """Construct a DatasetSplit from compact row tuples.

    Row forms: (tokens, (s, e), gold) or (tokens, (s, e), (s2, e2), gold);
    tokens is a space-joined string, gold a label or tuple of labels.
    """

    def parse(rows, start_id):
        sentences = {}
        examples = []
        sid = start_id
        for row in rows:
            tokens = tuple(row[0].split())
            if len(row) == 3:
                _, s1, gold = row
                s2 = None
            else:
                _, s1, s2, gold = row
            sentences[sid] = Sentence(sid, tokens)
            gold_t = (gold,) if isinstance(gold, str) else tuple(sorted(gold))
            examples.append(
                LabeledExample(
                    sid, Span(*s1), Span(*s2) if s2 else None, gold_t
                )
            )
            sid += 1
        return sentences, examples, sid

    arity = "two-span" if train and len(train[0]) == 4 else "one-span"
    schema = TaskSchema("t", arity, labeling, tuple(labels))
    sentences = {}
    sid = 0
    parts = {}
    for name, rows in (("train", train), ("dev", dev), ("test", test)):
        part_sents, examples, sid = parse(rows, sid)
        sentences.update(part_sents)
        parts[name] = SplitPart(
            sentence_ids=tuple(part_sents), examples=tuple(examples)
        )
    return DatasetSplit(
        schema=schema,
        sentences=sentences,
        train_part=parts["train"],
        dev_part=parts["dev"],
        test_part=parts["test"],
    )


# ---------------------------------------------------------------------------
# brute-force metric oracle (single-label)
# ---------------------------------------------------------------------------


def naive_single_metrics(gold, pred, labels):
    n = len(gold)
    per_class = {}
    for lab in labels:
        tp = sum(1 for g, p in zip(gold, pred) if g == lab and p == lab)
        fp = sum(1 for g, p in zip(gold, pred) if g != lab and p == lab)
        fn = sum(1 for g, p in zip(gold, pred) if g == lab and p != lab)
        support = sum(1 for g in gold if g == lab)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[lab] = (prec, rec, f1, support)
    acc = sum(1 for g, p in zip(gold, pred) if g == p) / n
    weighted = [0.0, 0.0, 0.0]
    for prec, rec, f1, support in per_class.values():
        for i, v in enumerate((prec, rec, f1)):
            weighted[i] += v * support / n
    macro = [
        sum(vals[i] for vals in per_class.values()) / len(labels) for i in range(3)
    ]

    # covariance-form MCC from scratch
    idx = {lab: i for i, lab in enumerate(labels)}
    c = len(labels)
    m = [[0] * c for _ in range(c)]
    for g, p in zip(gold, pred):
        m[idx[g]][idx[p]] += 1
    s = n
    corr = sum(m[k][k] for k in range(c))
    tvec = [sum(m[k]) for k in range(c)]
    pvec = [sum(m[r][k] for r in range(c)) for k in range(c)]
    num = corr * s - sum(p * t for p, t in zip(pvec, tvec))
    den = math.sqrt(s * s - sum(p * p for p in pvec)) * math.sqrt(
        s * s - sum(t * t for t in tvec)
    )
    mcc = num / den if den > 0 else 0.0
    return {
        "accuracy": 100 * acc,
        "weighted_precision": 100 * weighted[0],
        "weighted_recall": 100 * weighted[1],
        "weighted_f1": 100 * weighted[2],
        "macro_precision": 100 * macro[0],
        "macro_recall": 100 * macro[1],
        "macro_f1": 100 * macro[2],
        "mcc": mcc,
    }


# ---------------------------------------------------------------------------
# brute-force heuristic oracle
# ---------------------------------------------------------------------------


def _key_of(split, ex):
    sent = split.sentences[ex.sentence_id]
    parts = [" ".join(sent.tokens[ex.span1.start : ex.span1.end])]
    if ex.span2 is not None:
        parts.append(" ".join(sent.tokens[ex.span2.start : ex.span2.end]))
    return tuple(parts)


def naive_heuristic_audit(split):
    """Per-heuristic (covered, exact_correct, freq_correct) by plain loops;
    freq ties resolved toward the earliest schema label."""
    table = {}
    for ex in split.train:
        key = _key_of(split, ex)
        unit = ex.gold
        table.setdefault(key, {}).setdefault(unit, 0)
        table[key][unit] += 1

    order = {(lab,): i for i, lab in enumerate(split.schema.labels)}
    out = {
        "exact": {"covered": 0, "correct": 0},
        "freq": {"covered": 0, "correct": 0},
        "uniform": {"covered": 0},
        "n": len(split.test),
    }
    per_point = []
    for ex in split.test:
        counts = table.get(_key_of(split, ex))
        point = {"exact": None, "freq": None}
        if counts is not None and len(counts) == 1:
            out["exact"]["covered"] += 1
            point["exact"] = next(iter(counts))
            out["exact"]["correct"] += int(point["exact"] == ex.gold)
        if counts is not None:
            out["freq"]["covered"] += 1
            out["uniform"]["covered"] += 1
            best = max(counts.values())
            ties = [u for u, c in counts.items() if c == best]
            if split.schema.single_label:
                ties.sort(key=order.__getitem__)
            else:
                ties.sort()
            point["freq"] = ties[0]
            out["freq"]["correct"] += int(ties[0] == ex.gold)
        per_point.append(point)
    out["points"] = per_point
    return out
