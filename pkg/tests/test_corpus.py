import json
import os

import pytest

from epb.corpus import (
    DatasetSplit,
    LabeledExample,
    Sentence,
    Span,
    SplitPart,
    TaskSchema,
    drop_unseen_labels,
    ingest,
    load_dataset,
    load_schema,
    make_dev_split,
    read_ep_json,
    rebalance,
    save_dataset,
    save_schema,
    write_ep_json,
    _bio_spans,
)
from epb.errors import DataError
from helpers import build_split


def test_span_half_open_validation():
    assert Span(0, 1).end == 1
    with pytest.raises(DataError):
        Span(2, 2)
    with pytest.raises(DataError):
        Span(-1, 2)
    with pytest.raises(DataError):
        Span(3, 1)


def test_sentence_and_example_validation():
    with pytest.raises(DataError):
        Sentence(1, ())
    with pytest.raises(DataError):
        Sentence(-1, ("a",))
    with pytest.raises(DataError):
        LabeledExample(0, Span(0, 1), None, ())


def test_schema_validation():
    with pytest.raises(DataError):
        TaskSchema("x", "three-span", "single-label", ("a", "b"))
    with pytest.raises(DataError):
        TaskSchema("x", "one-span", "single-label", ("a",))
    with pytest.raises(DataError):
        TaskSchema("x", "one-span", "single-label", ("a", "a"))
    s = TaskSchema("x", "one-span", "single-label", ("a", "b"))
    assert s.class_index("b") == 1
    with pytest.raises(DataError):
        s.class_index("c")


def test_schema_roundtrip(tmp_path):
    s = TaskSchema("ner", "one-span", "single-label", ("O", "PER"), column="ner")
    path = tmp_path / "schema.json"
    save_schema(s, path)
    assert load_schema(path) == s


# ---------------------------------------------------------------------------
# ep-json
# ---------------------------------------------------------------------------

CANONICAL = (
    '{"id":0,"tokens":["the","dog","ran"],"targets":'
    '[{"span1":[0,2],"label":"NP"},{"span1":[2,3],"label":"VP"}]}\n'
    '{"id":1,"tokens":["hi"],"targets":[{"span1":[0,1],"label":"NP"}]}\n'
)


def test_ep_json_roundtrip_is_byte_identical(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("NP", "VP"))
    path = tmp_path / "a.jsonl"
    path.write_text(CANONICAL)
    sentences, examples, extra = read_ep_json(path, schema)
    assert extra == []
    assert len(sentences) == 2 and len(examples) == 3
    out = tmp_path / "b.jsonl"
    part = SplitPart(tuple(s.id for s in sentences), tuple(examples))
    write_ep_json(out, part, {s.id: s for s in sentences}, schema)
    assert out.read_bytes() == path.read_bytes()


def test_ep_json_two_span_and_multilabel(tmp_path):
    schema = TaskSchema("t", "two-span", "multi-label", ("x", "y"))
    rec = {
        "id": 7,
        "tokens": ["a", "b", "c"],
        "targets": [{"span1": [0, 1], "span2": [1, 3], "label": ["y", "x"]}],
    }
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    _, examples, _ = read_ep_json(path, schema)
    assert examples[0].span2 == Span(1, 3)
    assert examples[0].gold == ("x", "y")  # sorted

    out = tmp_path / "round.jsonl"
    write_ep_json(out, SplitPart((7,), tuple(examples)),
                  {7: Sentence(7, ("a", "b", "c"))}, schema)
    parsed = json.loads(out.read_text())
    assert parsed["targets"][0]["label"] == ["x", "y"]


@pytest.mark.parametrize(
    "line,msg",
    [
        ('{"id":0,"tokens":[]}', "empty token"),
        ('{"tokens":["a"]}', "missing id"),
        ('{"id":0,"tokens":["a"],"targets":[{"span1":[0,2],"label":"x"}]}', "span1"),
        ('{"id":0,"tokens":["a"],"targets":[{"span1":[0,1],"label":"z"}]}', "unknown label"),
        ('{"id":0,"tokens":["a"],"targets":[{"span1":[0,1],"span2":[0,1],"label":"x"}]}', "span2"),
        ("not json", "line 1"),
    ],
)
def test_ep_json_rejects_bad_records(tmp_path, line, msg):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(DataError) as err:
        read_ep_json(path, schema)
    assert msg in str(err.value)


def test_ep_json_extend_collects_new_labels(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    path = tmp_path / "ext.jsonl"
    path.write_text('{"id":0,"tokens":["a"],"targets":[{"span1":[0,1],"label":"z"}]}\n')
    _, _, extra = read_ep_json(path, schema, unknown_labels="extend")
    assert extra == ["z"]


def test_single_label_schema_rejects_label_lists(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    path = tmp_path / "multi.jsonl"
    path.write_text(
        '{"id":0,"tokens":["a"],"targets":[{"span1":[0,1],"label":["x","y"]}]}\n'
    )
    with pytest.raises(DataError):
        read_ep_json(path, schema)


# ---------------------------------------------------------------------------
# CoNLL
# ---------------------------------------------------------------------------

CONLL2003 = """-DOCSTART- -X- -X- O

EU NNP B-NP B-ORG
rejects VBZ B-VP O
German JJ B-NP B-MISC
call NN I-NP O

Peter NNP B-NP B-PER
Blackburn NNP I-NP I-PER
"""


def test_conll2003_ner_span_merge(tmp_path):
    path = tmp_path / "c.conll"
    path.write_text(CONLL2003)
    schema = TaskSchema("ner", "one-span", "single-label",
                        ("O", "ORG", "MISC", "PER"))
    split = ingest({"train": path}, "conll2003", schema)
    assert len(split.sentences) == 2  # -DOCSTART- skipped
    got = [
        (ex.span1.start, ex.span1.end, ex.gold[0]) for ex in split.train
    ]
    assert got == [
        (0, 1, "ORG"), (1, 2, "O"), (2, 3, "MISC"), (3, 4, "O"),
        (0, 2, "PER"),
    ]


def test_conll2003_pos_column_gives_token_spans(tmp_path):
    path = tmp_path / "c.conll"
    path.write_text(CONLL2003)
    schema = TaskSchema("pos", "one-span", "single-label",
                        ("NNP", "VBZ", "JJ", "NN"), column="pos")
    split = ingest({"train": path}, "conll2003", schema)
    spans = [(ex.span1.start, ex.span1.end) for ex in split.train]
    assert spans == [(0, 1), (1, 2), (2, 3), (3, 4), (0, 1), (1, 2)]
    assert [ex.gold[0] for ex in split.train][:4] == ["NNP", "VBZ", "JJ", "NN"]


def test_conll2000_chunk_default_column(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("He PRP B-NP\nreckons VBZ B-VP\nthe DT B-NP\ncurrent JJ I-NP\n")
    schema = TaskSchema("chunk", "one-span", "single-label", ("NP", "VP"))
    split = ingest({"train": path}, "conll2000", schema)
    got = [(ex.span1.start, ex.span1.end, ex.gold[0]) for ex in split.train]
    assert got == [(0, 1, "NP"), (1, 2, "VP"), (2, 4, "NP")]


def test_bio_merge_handles_iob1_style_starts():
    # a stray I-X run (no preceding B-X) still opens a span
    spans = _bio_spans(["I-PER", "I-PER", "O", "I-ORG", "B-ORG"])
    assert spans == [
        (Span(0, 2), "PER"), (Span(2, 3), "O"), (Span(3, 4), "ORG"),
        (Span(4, 5), "ORG"),
    ]
    with pytest.raises(DataError):
        _bio_spans(["B-PER", "X-???"])


def test_conll_sequential_ids_across_parts(tmp_path):
    train = tmp_path / "train.txt"
    test = tmp_path / "test.txt"
    train.write_text("a NN B-NP\n\nb NN B-NP\n")
    test.write_text("c NN B-NP\n")
    schema = TaskSchema("chunk", "one-span", "single-label", ("NP", "VP"))
    split = ingest({"train": train, "test": test}, "conll2000", schema)
    assert split.train_part.sentence_ids == (0, 1)
    assert split.test_part.sentence_ids == (2,)


def test_ingest_rejects_duplicate_sentence_ids(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    a = tmp_path / "a.jsonl"
    a.write_text('{"id":5,"tokens":["a"],"targets":[]}\n')
    b = tmp_path / "b.jsonl"
    b.write_text('{"id":5,"tokens":["b"],"targets":[]}\n')
    with pytest.raises(DataError) as err:
        ingest({"train": a, "test": b}, "ep-json", schema)
    assert "duplicate sentence id" in str(err.value)


def test_ingest_rejects_within_file_duplicates(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    a = tmp_path / "a.jsonl"
    a.write_text(
        '{"id":5,"tokens":["a"],"targets":[]}\n'
        '{"id":5,"tokens":["a"],"targets":[]}\n'
    )
    with pytest.raises(DataError, match="duplicate sentence id"):
        ingest({"train": a}, "ep-json", schema)


def test_parts_may_share_identical_sentences(tmp_path):
    # an example-level dev split leaves both parts referencing the sentence
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    a = tmp_path / "a.jsonl"
    a.write_text('{"id":5,"tokens":["a","b"],"targets":'
                 '[{"span1":[0,1],"label":"x"}]}\n')
    b = tmp_path / "b.jsonl"
    b.write_text('{"id":5,"tokens":["a","b"],"targets":'
                 '[{"span1":[1,2],"label":"y"}]}\n')
    split = ingest({"train": a, "dev": b}, "ep-json", schema)
    assert len(split.sentences) == 1
    assert len(split.train) == 1 and len(split.dev) == 1


def test_dev_split_of_multi_target_sentences_survives_save_load(tmp_path):
    recs = []
    for i in range(3):
        recs.append(json.dumps({
            "id": i, "tokens": ["w", "v"],
            "targets": [{"span1": [0, 1], "label": "x"},
                        {"span1": [1, 2], "label": "y"}],
        }, separators=(",", ":")))
    src = tmp_path / "train.jsonl"
    src.write_text("\n".join(recs) + "\n")
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    split = ingest({"train": src}, "ep-json", schema)
    split = make_dev_split(split, 0.34, seed=1)  # 2 of 6 examples to dev
    out = tmp_path / "d"
    save_dataset(split, out)
    loaded = load_dataset(out)
    assert set(loaded.train) == set(split.train)
    assert set(loaded.dev) == set(split.dev)
    out2 = tmp_path / "d2"
    save_dataset(loaded, out2)
    for name in ("schema.json", "train.jsonl", "dev.jsonl"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes(), name


def test_ingest_missing_file_and_bad_format(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    with pytest.raises(DataError):
        ingest({"train": tmp_path / "nope.jsonl"}, "ep-json", schema)
    with pytest.raises(DataError):
        ingest({}, "tsv", schema)


# ---------------------------------------------------------------------------
# split operations
# ---------------------------------------------------------------------------


def _flat_split(n_train, labels=("a", "b")):
    rows = [(f"w{i}", (0, 1), labels[i % len(labels)]) for i in range(n_train)]
    return build_split(rows, [("t", (0, 1), labels[0])], labels)


def test_make_dev_split_sizes_round_half_up():
    split = make_dev_split(_flat_split(10), 0.25, seed=3)
    assert len(split.dev) == 3  # floor(2.5 + 0.5)
    assert len(split.train) == 7
    split = make_dev_split(_flat_split(100), 0.001, seed=3)
    assert len(split.dev) == 1  # minimum of one example


def test_make_dev_split_is_seeded_and_disjoint():
    a = make_dev_split(_flat_split(40), 0.2, seed=1)
    b = make_dev_split(_flat_split(40), 0.2, seed=1)
    c = make_dev_split(_flat_split(40), 0.2, seed=2)
    assert a.dev == b.dev
    assert a.dev != c.dev
    ids = {ex.sentence_id for ex in a.dev} | {ex.sentence_id for ex in a.train}
    assert len(ids) == 40


def test_make_dev_split_rejects_existing_dev_and_bad_fraction():
    split = build_split([("x", (0, 1), "a")], [("y", (0, 1), "a")], ("a", "b"),
                        dev=[("z", (0, 1), "a")])
    with pytest.raises(DataError):
        make_dev_split(split, 0.1, seed=0)
    with pytest.raises(DataError):
        make_dev_split(_flat_split(10), 1.0, seed=0)


def test_drop_unseen_labels():
    split = build_split(
        [("x", (0, 1), "a")],
        [("y", (0, 1), "a"), ("z", (0, 1), "b")],
        ("a", "b"),
        dev=[("q", (0, 1), "b")],
    )
    out, removed = drop_unseen_labels(split)
    assert removed == {"dev": 1, "test": 1}
    assert [ex.gold[0] for ex in out.test] == ["a"]
    assert out.train == split.train


def test_drop_unseen_labels_multilabel_requires_all_seen():
    split = build_split(
        [("x", (0, 1), ("a",))],
        [("y", (0, 1), ("a", "b")), ("z", (0, 1), ("a",))],
        ("a", "b"),
        labeling="multi-label",
    )
    out, removed = drop_unseen_labels(split)
    assert removed["test"] == 1
    assert len(out.test) == 1


def test_rebalance_downsamples_to_minority():
    rows = [(f"w{i}", (0, 1), "a") for i in range(8)]
    rows += [(f"v{i}", (0, 1), "b") for i in range(3)]
    split = build_split([("x", (0, 1), "a")], rows, ("a", "b"))
    out = rebalance(split, seed=5)
    from collections import Counter

    counts = Counter(ex.gold[0] for ex in out.test)
    assert counts == {"a": 3, "b": 3}
    # seeded: same seed, same pick
    again = rebalance(split, seed=5)
    assert out.test == again.test


def test_rebalance_rejects_missing_class_and_multilabel():
    split = build_split([("x", (0, 1), "a")], [("y", (0, 1), "a")], ("a", "b"))
    with pytest.raises(DataError) as err:
        rebalance(split, seed=0)
    assert "zero test examples" in str(err.value)
    multi = build_split(
        [("x", (0, 1), ("a",))], [("y", (0, 1), ("a",))], ("a", "b"),
        labeling="multi-label",
    )
    with pytest.raises(DataError):
        rebalance(multi, seed=0)


def test_dataset_directory_roundtrip(tmp_path):
    split = build_split(
        [("the cat sat", (0, 2), "NP"), ("dogs bark", (0, 1), "NP")],
        [("a b", (1, 2), "VP")],
        ("NP", "VP"),
        dev=[("x y z", (0, 3), "NP")],
    )
    out = tmp_path / "data"
    save_dataset(split, out)
    assert sorted(os.listdir(out)) == [
        "dev.jsonl", "schema.json", "test.jsonl", "train.jsonl",
    ]
    loaded = load_dataset(out)
    assert loaded.schema == split.schema
    assert loaded.train == split.train
    assert loaded.dev == split.dev
    assert loaded.test == split.test

    # saving the loaded dataset reproduces the files byte for byte
    out2 = tmp_path / "data2"
    save_dataset(loaded, out2)
    for name in os.listdir(out):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_target_less_sentences_survive_roundtrip(tmp_path):
    schema = TaskSchema("t", "one-span", "single-label", ("x", "y"))
    path = tmp_path / "a.jsonl"
    path.write_text(
        '{"id":0,"tokens":["a"],"targets":[]}\n'
        '{"id":1,"tokens":["b"],"targets":[{"span1":[0,1],"label":"x"}]}\n'
    )
    split = ingest({"train": path}, "ep-json", schema)
    assert len(split.sentences) == 2 and len(split.train) == 1
    out = tmp_path / "data"
    save_dataset(split, out)
    assert (out / "train.jsonl").read_bytes() == path.read_bytes()


def test_dangling_sentence_lookup():
    split = DatasetSplit(schema=TaskSchema("t", "one-span", "single-label", ("a", "b")))
    with pytest.raises(DataError):
        split.sentence(3)
