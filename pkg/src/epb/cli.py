"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Commands that write a report also render a figure next to it (same stem,
.png) unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import epb
from epb import figures, pipeline
from epb.corpus import (
    SplitPart,
    drop_unseen_labels,
    ingest,
    load_dataset,
    load_schema,
    make_dev_split,
    read_ep_json_spans,
    rebalance,
    save_dataset,
    write_ep_json,
)
from epb.embedstore import read_archive, pool_split, validate_archive, write_archive, write_pooled
from epb.errors import DataError, NumericError, UsageError
from epb.mdl import (
    DEFAULT_SCHEDULE,
    prequential_codelength,
    two_part_codelength,
    validate_schedule,
)
from epb.memaudit import HEURISTICS, audit, build_index, expected_accuracy, make_heuristic, split_by_coverage
from epb.metrics import DropReport, classify_pair, compute_metrics, format_pct
from epb.probes import load_model, save_model, targets_matrix
from epb.synth import SynthConfig, generate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _figure_path(out: str) -> str:
    return os.path.splitext(out)[0] + ".png"


def _emit_report(args, payload: dict, digest: str, tsv=None, md=None) -> None:
    """Write or print one report in the chosen format."""
    fmt = getattr(args, "report", "json")
    out = getattr(args, "out", None)
    if out is None:
        if fmt == "json":
            json.dump(payload, sys.stdout, indent=2, sort_keys=True)
            sys.stdout.write("\n")
        elif fmt == "tsv" and tsv:
            header, rows = tsv
            print("\t".join(header))
            for row in rows:
                print("\t".join(str(v) for v in row))
        elif fmt == "md" and md:
            sys.stdout.write(md)
        else:
            raise UsageError(f"format {fmt!r} needs --out for this command")
        return
    if fmt == "json":
        pipeline.write_json_report(out, payload, digest)
    elif fmt == "tsv":
        if tsv is None:
            raise UsageError("tsv output is not available for this command")
        pipeline.write_tsv_report(out, tsv[0], tsv[1], digest)
    else:
        if md is None:
            raise UsageError("markdown output is not available for this command")
        pipeline.write_md_report(out, md, digest)


def _manifest(args, inputs: dict, seeds: dict) -> pipeline.RunManifest:
    config = {
        k: v
        for k, v in sorted(vars(args).items())
        if k != "func" and isinstance(v, (str, int, float, bool, type(None)))
    }
    return pipeline.manifest_for_inputs(config, inputs, seeds)


# ---------------------------------------------------------------------------
# dataset commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> None:
    schema = load_schema(args.schema)
    paths = {}
    for part in ("train", "dev", "test"):
        value = getattr(args, part)
        if value is not None:
            paths[part] = value
    if not paths:
        raise UsageError("ingest needs at least one of --train/--dev/--test")
    split = ingest(paths, args.format, schema, unknown_labels=args.unknown_labels)
    if args.drop_unseen:
        split, removed = drop_unseen_labels(split)
        print(f"dropped unseen-label examples: dev={removed['dev']} test={removed['test']}")
    save_dataset(split, args.out)
    print(
        f"ingested {len(split.sentences)} sentences: "
        f"train={len(split.train)} dev={len(split.dev)} test={len(split.test)} "
        f"labels={len(split.schema.labels)}"
    )


def cmd_split(args) -> None:
    split = load_dataset(args.dataset)
    split = make_dev_split(split, args.dev_frac, args.seed)
    if args.drop_unseen:
        split, removed = drop_unseen_labels(split)
        print(f"dropped unseen-label examples: dev={removed['dev']} test={removed['test']}")
    save_dataset(split, args.out_dir)
    print(f"train={len(split.train)} dev={len(split.dev)} test={len(split.test)}")


def cmd_balance(args) -> None:
    split = load_dataset(args.dataset)
    before = len(split.test)
    split = rebalance(split, args.seed)
    save_dataset(split, args.out_dir)
    print(f"test downsampled {before} -> {len(split.test)}")


# ---------------------------------------------------------------------------
# heuristic commands
# ---------------------------------------------------------------------------


def cmd_audit(args) -> None:
    split = load_dataset(args.dataset)
    names = (list(HEURISTICS) if args.heuristic == "all"
             else [args.heuristic.removeprefix("mem-")])
    index = build_index(split)
    manifest = _manifest(args, {"dataset": args.dataset}, {"seed": args.seed})
    reports = []
    payload = {}
    for name in names:
        h = make_heuristic(name, split, index, seed=args.seed,
                           uniform_space=args.uniform_space)
        rep = audit(h, split)
        reports.append(rep)
        entry = {
            "n_test": rep.n_test,
            "covered": rep.n_covered,
            "correct": rep.n_correct,
            "accuracy": rep.accuracy,
            "coverage": rep.coverage,
        }
        expected = expected_accuracy(h, split)
        if expected is not None:
            entry["expected_accuracy"] = expected
        payload[name] = entry
    header = ["heuristic", "n_test", "covered", "correct", "accuracy", "coverage"]
    rows = [
        [r.heuristic, r.n_test, r.n_covered, r.n_correct,
         format_pct(100 * r.accuracy), format_pct(100 * r.coverage)]
        for r in reports
    ]
    md_lines = ["| " + " | ".join(header) + " |",
                "|" + "|".join(["---"] * len(header)) + "|"]
    md_lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in rows]
    _emit_report(args, payload, manifest.digest, (header, rows),
                 "\n".join(md_lines) + "\n")
    if args.out and not args.no_figures:
        figures.save_audit_figure(reports, _figure_path(args.out))


def cmd_filter(args) -> None:
    split = load_dataset(args.dataset)
    h = make_heuristic(args.heuristic.removeprefix("mem-"), split, seed=args.seed,
                       uniform_space=args.uniform_space)
    kept, removed = split_by_coverage(h, split)
    write_ep_json(args.out, SplitPart(examples=tuple(kept)),
                  split.sentences, split.schema)
    write_ep_json(args.removed, SplitPart(examples=tuple(removed)),
                  split.sentences, split.schema)
    print(f"kept {len(kept)} of {len(split.test)} test examples "
          f"({len(removed)} classifiable by {args.heuristic})")


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def cmd_emb(args) -> None:
    if args.emb_command == "validate":
        summary = validate_archive(args.archive)
        json.dump(summary, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return
    # pool
    targets = read_ep_json_spans(args.dataset)
    dim, table = read_archive(args.emb)
    pooled = pool_split(table, targets, dim)
    write_pooled(args.out, pooled)
    print(f"pooled {len(pooled)} targets at dim {dim} -> {args.out}")


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    with open(args.config, encoding="utf-8") as f:
        raw = json.load(f)
    try:
        config = SynthConfig(**raw)
    except TypeError as e:
        raise DataError(f"bad synth config: {e}") from None
    split, table, audit_doc = generate(config)
    os.makedirs(args.out_dir, exist_ok=True)
    save_dataset(split, args.out_dir)
    write_archive(os.path.join(args.out_dir, "embeddings.epemb"), table, config.dim)
    with open(os.path.join(args.out_dir, "ground-truth-audit.json"), "w",
              encoding="utf-8") as f:
        json.dump(audit_doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"synthetic corpus: train={len(split.train)} test={len(split.test)} "
          f"mode={config.mode} -> {args.out_dir}")


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------


def cmd_train(args) -> None:
    split = load_dataset(args.dataset)
    dim, _ = read_archive(args.emb)
    config = pipeline.probe_config_from(
        {
            "hidden": args.hidden, "dropout": args.dropout, "epochs": args.epochs,
            "batch": args.batch, "lr": args.lr, "warmup": args.warmup,
            "replicas": args.replicas,
        },
        args.probe, dim, split, seed=args.seed,
    )
    model = pipeline.train_on_archive(config, args.emb, split)
    save_model(model, args.out)
    scores = model.log.epoch_dev_scores
    tail = f" dev={scores[-1]:.4f} (replica {model.log.replica})" if scores else ""
    print(f"trained {args.probe} probe: {model.n_params} parameters{tail}")


def cmd_eval(args) -> None:
    if args.gold or args.pred:
        if not (args.gold and args.pred and args.schema):
            raise UsageError("label-file mode needs --gold, --pred and --schema")
        schema = load_schema(args.schema)
        gold = _read_label_file(args.gold, schema)
        pred = _read_label_file(args.pred, schema)
        report = compute_metrics(gold, pred, schema)
        inputs = {"gold": args.gold, "pred": args.pred}
    else:
        if not (args.model and args.dataset and args.emb):
            raise UsageError("model mode needs --model, --dataset and --emb")
        model = load_model(args.model)
        split = load_dataset(args.dataset)
        report = pipeline.evaluate_model(model, args.emb, split, part=args.split)
        inputs = {"model": args.model, "dataset": args.dataset, "emb": args.emb}
    manifest = _manifest(args, inputs, {})
    header, rows = pipeline.metric_rows(report)
    _emit_report(args, report.as_dict(), manifest.digest, (header, rows),
                 pipeline.metrics_markdown(report))
    if args.out and not args.no_figures:
        figures.save_metrics_figure(report, _figure_path(args.out))


def _read_label_file(path, schema):
    items = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if schema.single_label:
                items.append(line)
            else:
                items.append(tuple(sorted(set(line.split(",")))))
    return items


def cmd_drop(args) -> None:
    if args.original_acc is not None or args.filtered_acc is not None:
        if args.original_acc is None or args.filtered_acc is None:
            raise UsageError("arithmetic mode needs both --original-acc and --filtered-acc")
        report = DropReport(args.original_acc, args.filtered_acc)
        inputs = {}
    else:
        if not (args.model and args.emb and args.dataset and args.filtered_dataset):
            raise UsageError(
                "dataset mode needs --model, --emb, --dataset and --filtered-dataset"
            )
        model = load_model(args.model)
        original = pipeline.evaluate_model(model, args.emb, load_dataset(args.dataset))
        filtered = pipeline.evaluate_model(
            model, args.emb, load_dataset(args.filtered_dataset)
        )
        report = DropReport(original.accuracy, filtered.accuracy)
        inputs = {
            "model": args.model, "emb": args.emb,
            "dataset": args.dataset, "filtered_dataset": args.filtered_dataset,
        }
    payload = report.as_dict()
    if args.base_drop is not None:
        payload["classification"] = classify_pair(args.base_drop, report.drop)
    manifest = _manifest(args, inputs, {})
    header = ["acc_original", "acc_filtered", "drop"]
    rows = [[format_pct(report.acc_original), format_pct(report.acc_filtered),
             format_pct(report.drop)]]
    if "classification" in payload:
        header.append("classification")
        rows[0].append(payload["classification"])
    md = ("| " + " | ".join(header) + " |\n"
          "|" + "|".join(["---"] * len(header)) + "|\n"
          "| " + " | ".join(rows[0]) + " |\n")
    _emit_report(args, payload, manifest.digest, (header, rows), md)
    if args.out and not args.no_figures:
        figures.save_drop_figure(["drop"], [report.drop], None,
                                 _figure_path(args.out))


def cmd_mdl(args) -> None:
    split = load_dataset(args.dataset)
    dim, table = read_archive(args.emb)
    config = pipeline.probe_config_from(
        {"hidden": args.hidden, "dropout": args.dropout, "epochs": args.epochs,
         "batch": args.batch, "lr": args.lr, "warmup": args.warmup,
         "replicas": args.replicas},
        args.probe, dim, split, seed=args.seed,
    )
    pooled = pool_split(table, split.train, dim)
    Y = targets_matrix(split.train, split.schema)
    manifest = _manifest(args, {"dataset": args.dataset, "emb": args.emb},
                         {"seed": args.seed})
    if args.mode == "two-part":
        model = pipeline.train_on_archive(config, args.emb, split)
        code = two_part_codelength(model, pooled.X, Y)
        payload = {
            "mode": "two-part",
            "data_bits": code.data_bits,
            "complexity_bits": code.complexity_bits,
            "total_bits": code.total_bits,
            "n": code.n,
            "p": code.p,
            "c_k": code.c_k,
        }
        result = None
    else:
        schedule = (
            DEFAULT_SCHEDULE if args.schedule == "default"
            else validate_schedule(float(x) for x in args.schedule.split(","))
        )
        result = prequential_codelength(config, pooled.X, Y, schedule, seed=args.seed)
        payload = {
            "mode": "prequential",
            "total_bits": result.total_bits,
            "block_bits": list(result.block_bits),
            "boundaries": list(result.boundaries),
            "schedule": list(result.schedule),
            "n": result.n,
            "seed": result.seed,
        }
    _emit_report(args, payload, manifest.digest)
    if args.out and not args.no_figures and result is not None:
        figures.save_prequential_figure({args.probe: result}, _figure_path(args.out))


def cmd_pipeline(args) -> None:
    manifest = pipeline.run_pipeline(args.config, args.out_dir, threads=args.threads)
    print(f"pipeline complete: {args.out_dir} (manifest {manifest.digest[:12]})")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


_CLI_HEURISTICS = ("mem-exact", "mem-freq", "mem-uniform")


def _add_report_args(p, formats=("json", "tsv", "md")) -> None:
    p.add_argument("--report", choices=formats, default="json")
    p.add_argument("--out", default=None, help="report file (stdout if omitted)")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering a figure next to --out")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="epb", description=epb.__doc__)
    top.add_argument("--version", action="version", version=epb.__version__)
    sub = top.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("ingest", help="read a corpus into the dataset layout")
    p.add_argument("--format", required=True, choices=("conll2003", "conll2000", "ep-json"))
    p.add_argument("--schema", required=True)
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--unknown-labels", choices=("reject", "extend"), default="reject")
    p.add_argument("--drop-unseen", action="store_true",
                   help="discard dev/test examples with labels unseen in train")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="carve a seeded dev set out of train")
    p.add_argument("--dataset", required=True)
    p.add_argument("--dev-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-unseen", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("balance", help="downsample test classes to the minority count")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("audit", help="score memorization heuristics on the test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--heuristic", choices=(*_CLI_HEURISTICS, "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uniform-space", choices=("key", "full"), default="key")
    _add_report_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("filter", help="keep only test points a heuristic cannot classify")
    p.add_argument("--dataset", required=True)
    p.add_argument("--heuristic", choices=_CLI_HEURISTICS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uniform-space", choices=("key", "full"), default="key")
    p.add_argument("--out", required=True, help="ep-json file for the kept test points")
    p.add_argument("--removed", required=True,
                   help="ep-json file for the classifiable test points")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("emb", help="embedding archive tools")
    esub = p.add_subparsers(dest="emb_command", required=True, metavar="action")
    v = esub.add_parser("validate", help="structural check of an archive")
    v.add_argument("archive")
    v.set_defaults(func=cmd_emb)
    pl = esub.add_parser("pool", help="pool span vectors for an ep-json file")
    pl.add_argument("--dataset", required=True, help="ep-json file with targets")
    pl.add_argument("--emb", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_emb)

    p = sub.add_parser("synth", help="generate a synthetic corpus with known biases")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a probe on pooled vectors")
    p.add_argument("--probe", choices=("linear", "mlp"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=1024)
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--replicas", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report from a model or label files")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--emb")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--gold")
    p.add_argument("--pred")
    p.add_argument("--schema")
    _add_report_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("drop", help="accuracy drop between original and filtered tests")
    p.add_argument("--original-acc", type=float)
    p.add_argument("--filtered-acc", type=float)
    p.add_argument("--model")
    p.add_argument("--emb")
    p.add_argument("--dataset")
    p.add_argument("--filtered-dataset")
    p.add_argument("--base-drop", type=float,
                   help="classify this drop against a base encoder's drop")
    _add_report_args(p)
    p.set_defaults(func=cmd_drop)

    p = sub.add_parser("mdl", help="codelength reports")
    p.add_argument("--mode", choices=("two-part", "prequential"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--probe", choices=("linear", "mlp"), default="linear")
    p.add_argument("--schedule", default="default",
                   help="'default' or comma-separated fractions ending at 1.0")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=1024)
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_report_args(p, formats=("json",))
    p.set_defaults(func=cmd_mdl)

    p = sub.add_parser("pipeline", help="run every (encoder, probe, filter) cell")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=None,
                   help="parallel cells (default: EPB_THREADS or 1)")
    p.set_defaults(func=cmd_pipeline)

    return top


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except UsageError as e:
        print(f"epb: usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"epb: data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"epb: numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
