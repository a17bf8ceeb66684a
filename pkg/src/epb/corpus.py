"""Canonical data model for edge-probing datasets.

A dataset is a set of sentences plus labeled span examples, divided into
train/dev/test parts.  Ingestion supports the line-delimited span-JSON
format (one record per sentence) and the CoNLL-2003/2000 column formats,
where BIO tag runs are merged into spans.

Spans are half-open token intervals [start, end), which composes with
token slicing without off-by-one corrections.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace

from epb.errors import DataError
from epb.rng import substream

ARITIES = ("one-span", "two-span")
LABELINGS = ("single-label", "multi-label")

MAX_SENTENCE_ID = 2**64 - 1


@dataclass(frozen=True)
class Span:
    """Half-open token interval [start, end)."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise DataError(f"invalid span [{self.start}, {self.end})")


@dataclass(frozen=True)
class Sentence:
    id: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise DataError(f"sentence {self.id} has no tokens")
        if not (0 <= self.id <= MAX_SENTENCE_ID):
            raise DataError(f"sentence id {self.id} outside u64 range")


@dataclass(frozen=True)
class LabeledExample:
    """One probing instance: spans in a sentence plus its gold label(s).

    ``gold`` is a sorted tuple; a singleton for single-label tasks.
    """

    sentence_id: int
    span1: Span
    span2: Span | None
    gold: tuple[str, ...]

    def __post_init__(self):
        if not self.gold:
            raise DataError("example with empty gold label set")


@dataclass(frozen=True)
class TaskSchema:
    name: str
    arity: str
    labeling: str
    labels: tuple[str, ...]
    column: str | None = None  # CoNLL target column: ner | chunk | pos

    def __post_init__(self):
        if self.arity not in ARITIES:
            raise DataError(f"unknown arity {self.arity!r}")
        if self.labeling not in LABELINGS:
            raise DataError(f"unknown labeling {self.labeling!r}")
        if len(self.labels) < 2:
            raise DataError("label vocabulary needs at least 2 entries")
        if len(set(self.labels)) != len(self.labels):
            raise DataError("duplicate labels in vocabulary")

    @property
    def single_label(self) -> bool:
        return self.labeling == "single-label"

    def class_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"label {label!r} not in schema {self.name!r}") from None


@dataclass(frozen=True)
class SplitPart:
    """Examples of one split plus the sentence ids backing its file records."""

    sentence_ids: tuple[int, ...] = ()
    examples: tuple[LabeledExample, ...] = ()


@dataclass(frozen=True)
class DatasetSplit:
    schema: TaskSchema
    sentences: dict[int, Sentence] = field(default_factory=dict)
    train_part: SplitPart = field(default_factory=SplitPart)
    dev_part: SplitPart = field(default_factory=SplitPart)
    test_part: SplitPart = field(default_factory=SplitPart)

    @property
    def train(self) -> tuple[LabeledExample, ...]:
        return self.train_part.examples

    @property
    def dev(self) -> tuple[LabeledExample, ...]:
        return self.dev_part.examples

    @property
    def test(self) -> tuple[LabeledExample, ...]:
        return self.test_part.examples

    def sentence(self, sid: int) -> Sentence:
        try:
            return self.sentences[sid]
        except KeyError:
            raise DataError(f"dangling sentence id {sid}") from None


def load_schema(path: str | os.PathLike) -> TaskSchema:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    try:
        return TaskSchema(
            name=raw["name"],
            arity=raw["arity"],
            labeling=raw["labeling"],
            labels=tuple(raw["labels"]),
            column=raw.get("column"),
        )
    except KeyError as e:
        raise DataError(f"schema file {path} missing key {e}") from None


def save_schema(schema: TaskSchema, path: str | os.PathLike) -> None:
    doc = {
        "name": schema.name,
        "arity": schema.arity,
        "labeling": schema.labeling,
        "labels": list(schema.labels),
    }
    if schema.column is not None:
        doc["column"] = schema.column
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# ep-json: one record per sentence, canonical key order id/tokens/targets,
# target keys span1/span2/label, compact separators.  Multi-label lists are
# kept sorted so that read -> write is byte-identical on canonical files.
# ---------------------------------------------------------------------------


def _gold_from_json(label, line_no: int, schema: TaskSchema) -> tuple[str, ...]:
    if isinstance(label, str):
        gold = (label,)
    elif isinstance(label, list) and label and all(isinstance(x, str) for x in label):
        gold = tuple(sorted(set(label)))
    else:
        raise DataError(f"line {line_no}: bad label field {label!r}")
    if schema.single_label and len(gold) != 1:
        raise DataError(f"line {line_no}: {len(gold)} labels in a single-label task")
    return gold


def _check_span(js, n_tokens: int, line_no: int, name: str) -> Span:
    if (
        not isinstance(js, list)
        or len(js) != 2
        or not all(isinstance(v, int) for v in js)
    ):
        raise DataError(f"line {line_no}: bad {name} field {js!r}")
    s, e = js
    if not (0 <= s < e <= n_tokens):
        raise DataError(
            f"line {line_no}: {name} [{s}, {e}) outside sentence of {n_tokens} tokens"
        )
    return Span(s, e)


def read_ep_json(
    path: str | os.PathLike,
    schema: TaskSchema,
    unknown_labels: str = "reject",
) -> tuple[list[Sentence], list[LabeledExample], list[str]]:
    """Parse one ep-json file.

    Returns (sentences, examples, extra_labels) where extra_labels are
    labels outside the schema vocabulary, in first-seen order; non-empty
    only with unknown_labels="extend".
    """
    known = set(schema.labels)
    extra: list[str] = []
    sentences: list[Sentence] = []
    examples: list[LabeledExample] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {line_no}: {e.msg}") from None
            try:
                sid = rec["id"]
                tokens = rec["tokens"]
            except (KeyError, TypeError):
                raise DataError(f"{path}: line {line_no}: missing id/tokens") from None
            if not isinstance(sid, int) or not (0 <= sid <= MAX_SENTENCE_ID):
                raise DataError(f"{path}: line {line_no}: bad sentence id {sid!r}")
            if not isinstance(tokens, list) or not tokens:
                raise DataError(f"{path}: line {line_no}: empty token list")
            sentence = Sentence(sid, tuple(tokens))
            sentences.append(sentence)
            for tgt in rec.get("targets", ()):
                span1 = _check_span(tgt.get("span1"), len(tokens), line_no, "span1")
                span2 = None
                if schema.arity == "two-span":
                    if "span2" not in tgt:
                        raise DataError(
                            f"{path}: line {line_no}: two-span task without span2"
                        )
                    span2 = _check_span(tgt["span2"], len(tokens), line_no, "span2")
                elif "span2" in tgt:
                    raise DataError(f"{path}: line {line_no}: span2 in a one-span task")
                gold = _gold_from_json(tgt.get("label"), line_no, schema)
                for lab in gold:
                    if lab not in known:
                        if unknown_labels == "extend":
                            known.add(lab)
                            extra.append(lab)
                        else:
                            raise DataError(
                                f"{path}: line {line_no}: unknown label {lab!r}"
                            )
                examples.append(LabeledExample(sid, span1, span2, gold))
    return sentences, examples, extra


@dataclass(frozen=True)
class SpanTarget:
    """A target's spans without its label; enough to pool vectors."""

    sentence_id: int
    span1: Span
    span2: Span | None = None


def read_ep_json_spans(path: str | os.PathLike) -> list[SpanTarget]:
    """Parse just ids, tokens and spans from an ep-json file.

    Labels and task arity are not checked; pooling needs neither, and the
    file may mix one- and two-span targets.
    """
    targets: list[SpanTarget] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {line_no}: {e.msg}") from None
            try:
                sid = rec["id"]
                tokens = rec["tokens"]
            except (KeyError, TypeError):
                raise DataError(f"{path}: line {line_no}: missing id/tokens") from None
            if not isinstance(sid, int) or not (0 <= sid <= MAX_SENTENCE_ID):
                raise DataError(f"{path}: line {line_no}: bad sentence id {sid!r}")
            if not isinstance(tokens, list) or not tokens:
                raise DataError(f"{path}: line {line_no}: empty token list")
            for tgt in rec.get("targets", ()):
                span1 = _check_span(tgt.get("span1"), len(tokens), line_no, "span1")
                span2 = None
                if "span2" in tgt:
                    span2 = _check_span(tgt["span2"], len(tokens), line_no, "span2")
                targets.append(SpanTarget(sid, span1, span2))
    if not targets:
        raise DataError(f"{path}: no targets to pool")
    return targets


def _target_json(example: LabeledExample, schema: TaskSchema) -> dict:
    tgt: dict = {"span1": [example.span1.start, example.span1.end]}
    if example.span2 is not None:
        tgt["span2"] = [example.span2.start, example.span2.end]
    if schema.single_label:
        tgt["label"] = example.gold[0]
    else:
        tgt["label"] = list(example.gold)
    return tgt


def write_ep_json(
    path: str | os.PathLike,
    part: SplitPart,
    sentences: dict[int, Sentence],
    schema: TaskSchema,
) -> None:
    """Write one split part in canonical ep-json form."""
    by_sentence: dict[int, list[LabeledExample]] = {}
    for ex in part.examples:
        by_sentence.setdefault(ex.sentence_id, []).append(ex)
    order = part.sentence_ids
    if not order:  # derived part: emit sentences in first-reference order
        order = tuple(dict.fromkeys(ex.sentence_id for ex in part.examples))
    with open(path, "w", encoding="utf-8") as f:
        for sid in order:
            sentence = sentences[sid]
            rec = {
                "id": sid,
                "tokens": list(sentence.tokens),
                "targets": [
                    _target_json(ex, schema) for ex in by_sentence.get(sid, ())
                ],
            }
            f.write(json.dumps(rec, separators=(",", ":")))
            f.write("\n")


# ---------------------------------------------------------------------------
# CoNLL column formats.  2003: token POS chunk NER; 2000: token POS chunk.
# Blank lines delimit sentences, -DOCSTART- lines are skipped.
# ---------------------------------------------------------------------------

_CONLL_COLUMNS = {
    "conll2003": {"pos": 1, "chunk": 2, "ner": 3},
    "conll2000": {"pos": 1, "chunk": 2},
}
_CONLL_DEFAULT_COLUMN = {"conll2003": "ner", "conll2000": "chunk"}


def _bio_spans(tags: list[str]) -> list[tuple[Span, str]]:
    """Merge BIO runs into labeled spans; O tokens become 1-token O spans.

    An I-X that does not continue a same-type run opens a new span, which
    also accepts the IOB1 variant used by the raw CoNLL-2003 release.
    """
    out: list[tuple[Span, str]] = []
    start, label = None, None

    def flush(end: int):
        nonlocal start, label
        if start is not None:
            out.append((Span(start, end), label))
            start, label = None, None

    for i, tag in enumerate(tags):
        if tag == "O":
            flush(i)
            out.append((Span(i, i + 1), "O"))
        elif tag.startswith("B-"):
            flush(i)
            start, label = i, tag[2:]
        elif tag.startswith("I-"):
            if label != tag[2:]:
                flush(i)
                start, label = i, tag[2:]
        else:
            raise DataError(f"bad BIO tag {tag!r}")
    flush(len(tags))
    return out


def _read_conll_blocks(path: str | os.PathLike, n_cols: int):
    """Yield (first_line_no, rows) per sentence; rows are column lists."""
    rows: list[list[str]] = []
    first = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if line.startswith("-DOCSTART-"):
                continue
            if not line:
                if rows:
                    yield first, rows
                    rows = []
                continue
            cols = line.split()
            if len(cols) < n_cols:
                raise DataError(
                    f"{path}: line {line_no}: expected {n_cols} columns, got {len(cols)}"
                )
            if not rows:
                first = line_no
            rows.append(cols)
    if rows:
        yield first, rows


def read_conll(
    path: str | os.PathLike,
    fmt: str,
    schema: TaskSchema,
    start_id: int,
    unknown_labels: str = "reject",
) -> tuple[list[Sentence], list[LabeledExample], list[str]]:
    """Parse a CoNLL file into one-span examples.

    BIO columns (ner/chunk) are merged into entity spans with O tokens as
    single-token O spans; the pos column yields one span per token.
    Sentences get sequential ids from start_id.
    """
    if schema.arity != "one-span" or not schema.single_label:
        raise DataError(f"{fmt} ingestion requires a one-span single-label schema")
    column = schema.column or _CONLL_DEFAULT_COLUMN[fmt]
    try:
        col = _CONLL_COLUMNS[fmt][column]
    except KeyError:
        raise DataError(f"format {fmt} has no column {column!r}") from None

    known = set(schema.labels)
    extra: list[str] = []
    sentences: list[Sentence] = []
    examples: list[LabeledExample] = []
    sid = start_id

    def admit(label: str, line_no: int) -> None:
        if label not in known:
            if unknown_labels == "extend":
                known.add(label)
                extra.append(label)
            else:
                raise DataError(f"{path}: line {line_no}: unknown label {label!r}")

    for line_no, rows in _read_conll_blocks(path, n_cols=col + 1):
        tokens = tuple(r[0] for r in rows)
        tags = [r[col] for r in rows]
        sentences.append(Sentence(sid, tokens))
        if column == "pos":
            labeled = [(Span(i, i + 1), t) for i, t in enumerate(tags)]
        else:
            try:
                labeled = _bio_spans(tags)
            except DataError as e:
                raise DataError(f"{path}: sentence at line {line_no}: {e}") from None
        for span, label in labeled:
            admit(label, line_no)
            examples.append(LabeledExample(sid, span, None, (label,)))
        sid += 1
    return sentences, examples, extra


# ---------------------------------------------------------------------------
# Ingestion and split operations
# ---------------------------------------------------------------------------

FORMATS = ("conll2003", "conll2000", "ep-json")


def ingest(
    paths: dict[str, str | os.PathLike],
    fmt: str,
    schema: TaskSchema,
    unknown_labels: str = "reject",
) -> DatasetSplit:
    """Read the files in ``paths`` (keys among train/dev/test) into a split.

    CoNLL sentences receive sequential ids across all parts in
    train/dev/test order; ep-json ids come from the files, must be unique
    within a file, and may recur across parts only with identical tokens.
    """
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}")
    for key in paths:
        if key not in ("train", "dev", "test"):
            raise DataError(f"unknown split name {key!r}")

    all_sentences: dict[int, Sentence] = {}
    parts: dict[str, SplitPart] = {}
    labels = list(schema.labels)
    next_id = 0
    for part_name in ("train", "dev", "test"):
        if part_name not in paths:
            continue
        path = paths[part_name]
        if not os.path.exists(path):
            raise DataError(f"no such file: {path}")
        working = replace(schema, labels=tuple(labels))
        if fmt == "ep-json":
            sentences, examples, extra = read_ep_json(path, working, unknown_labels)
        else:
            sentences, examples, extra = read_conll(
                path, fmt, working, next_id, unknown_labels
            )
            next_id += len(sentences)
        labels.extend(extra)
        seen_here: set[int] = set()
        for s in sentences:
            if s.id in seen_here:
                raise DataError(f"{path}: duplicate sentence id {s.id}")
            seen_here.add(s.id)
            # parts may share a sentence (e.g. after an example-level dev
            # split); only conflicting tokens are an error
            existing = all_sentences.get(s.id)
            if existing is not None and existing.tokens != s.tokens:
                raise DataError(
                    f"{path}: duplicate sentence id {s.id} with conflicting tokens"
                )
            all_sentences[s.id] = s
        parts[part_name] = SplitPart(
            sentence_ids=tuple(s.id for s in sentences),
            examples=tuple(examples),
        )
    final_schema = replace(schema, labels=tuple(labels))
    return DatasetSplit(
        schema=final_schema,
        sentences=all_sentences,
        train_part=parts.get("train", SplitPart()),
        dev_part=parts.get("dev", SplitPart()),
        test_part=parts.get("test", SplitPart()),
    )


def make_dev_split(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Reserve a seeded fraction of train as the dev set.

    Dev size is round-half-up(fraction * n), at least 1.
    """
    if not (0.0 < fraction < 1.0):
        raise DataError(f"dev fraction {fraction} outside (0, 1)")
    if split.dev:
        raise DataError("dev split already present")
    n = len(split.train)
    if n == 0:
        raise DataError("empty train split")
    n_dev = max(1, int(math.floor(fraction * n + 0.5)))
    order = substream(seed, "dev-split", n).permutation(n)
    dev_idx = set(order[:n_dev].tolist())
    train_ex = tuple(ex for i, ex in enumerate(split.train) if i not in dev_idx)
    dev_ex = tuple(ex for i, ex in enumerate(split.train) if i in dev_idx)
    return replace(
        split,
        train_part=replace(split.train_part, examples=train_ex),
        dev_part=SplitPart(examples=dev_ex),
    )


def train_label_set(split: DatasetSplit) -> set[str]:
    return {lab for ex in split.train for lab in ex.gold}


def drop_unseen_labels(split: DatasetSplit) -> tuple[DatasetSplit, dict[str, int]]:
    """Discard dev/test examples whose gold has any label absent from train.

    Returns the filtered split and per-part removal counts.
    """
    seen = train_label_set(split)
    removed = {}
    parts = {}
    for name, part in (("dev", split.dev_part), ("test", split.test_part)):
        kept = tuple(ex for ex in part.examples if set(ex.gold) <= seen)
        removed[name] = len(part.examples) - len(kept)
        parts[name] = replace(part, examples=kept)
    return replace(split, dev_part=parts["dev"], test_part=parts["test"]), removed


def rebalance(split: DatasetSplit, seed: int) -> DatasetSplit:
    """Downsample every test class to the minority-class count, seeded.

    Train and dev are untouched.  Single-label tasks only; a schema class
    with zero test examples is an error.
    """
    if not split.schema.single_label:
        raise DataError("rebalance requires a single-label task")
    counts = Counter(ex.gold[0] for ex in split.test)
    for label in split.schema.labels:
        if counts[label] == 0:
            raise DataError(f"class {label!r} has zero test examples")
    target = min(counts.values())
    keep: set[int] = set()
    by_label: dict[str, list[int]] = {}
    for i, ex in enumerate(split.test):
        by_label.setdefault(ex.gold[0], []).append(i)
    for label in split.schema.labels:
        idx = by_label[label]
        rng = substream(seed, "rebalance", label)
        chosen = rng.choice(len(idx), size=target, replace=False)
        keep.update(idx[int(j)] for j in chosen)
    kept = tuple(ex for i, ex in enumerate(split.test) if i in keep)
    return replace(split, test_part=replace(split.test_part, examples=kept))


# ---------------------------------------------------------------------------
# Dataset directory convention: schema.json plus {train,dev,test}.jsonl
# ---------------------------------------------------------------------------


def save_dataset(split: DatasetSplit, out_dir: str | os.PathLike) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_schema(split.schema, os.path.join(out_dir, "schema.json"))
    for name, part in (
        ("train", split.train_part),
        ("dev", split.dev_part),
        ("test", split.test_part),
    ):
        if part.sentence_ids or part.examples:
            write_ep_json(
                os.path.join(out_dir, f"{name}.jsonl"),
                part,
                split.sentences,
                split.schema,
            )


def load_dataset(data_dir: str | os.PathLike) -> DatasetSplit:
    schema = load_schema(os.path.join(data_dir, "schema.json"))
    paths = {}
    for name in ("train", "dev", "test"):
        p = os.path.join(data_dir, f"{name}.jsonl")
        if os.path.exists(p):
            paths[name] = p
    return ingest(paths, "ep-json", schema)
