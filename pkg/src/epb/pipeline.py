"""Run manifests, report emission, and the end-to-end pipeline.

A manifest pins everything a run depends on: toolkit version, seeds,
sha256 digests of every input file, and the fully resolved config.  Its
digest is computed over exactly those fields, so timings (recorded for
the log) never influence it, and re-running with equal inputs reproduces
every report byte for byte.  Reports are emitted as json (full
precision), tsv, and markdown, each carrying the manifest digest.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

import epb
from epb import figures
from epb.corpus import DatasetSplit, load_dataset
from epb.embedstore import read_archive, pool_split
from epb.errors import DataError, EpbError
from epb.mdl import (
    DEFAULT_SCHEDULE,
    prequential_codelength,
    two_part_codelength,
    validate_schedule,
)
from epb.memaudit import build_index, make_heuristic, split_by_coverage
from epb.metrics import (
    DropReport,
    classify_pair,
    compute_metrics,
    drop_table_markdown,
    format_pct,
)
from epb.probes import ProbeConfig, predict, save_model, targets_matrix, train
from epb.rng import derive_seed


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class RunManifest:
    def __init__(self, config: dict, inputs: dict[str, str], seeds: dict[str, int]):
        self.version = epb.__version__
        self.config = config
        self.inputs = dict(sorted(inputs.items()))
        self.seeds = dict(sorted(seeds.items()))
        self.timings: dict[str, float] = {}

    @property
    def digest(self) -> str:
        body = {
            "version": self.version,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "config": self.config,
        }
        return hashlib.sha256(_canonical(body).encode()).hexdigest()

    def save(self, path) -> None:
        doc = {
            "version": self.version,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "config": self.config,
            "digest": self.digest,
            "timings": self.timings,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")


def manifest_for_inputs(config: dict, paths: dict[str, str], seeds: dict) -> RunManifest:
    digests = {}
    for key, path in paths.items():
        if os.path.isdir(path):
            for name in sorted(os.listdir(path)):
                full = os.path.join(path, name)
                if os.path.isfile(full):
                    digests[f"{key}/{name}"] = sha256_file(full)
        else:
            digests[key] = sha256_file(path)
    return RunManifest(config=config, inputs=digests, seeds=seeds)


# ---------------------------------------------------------------------------
# Report writers: json carries full precision, tsv/md carry 2-decimal
# percents; every file names the manifest digest.
# ---------------------------------------------------------------------------


def write_json_report(path, payload: dict, digest: str) -> None:
    doc = dict(payload)
    doc["manifest_digest"] = digest
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def write_tsv_report(path, header, rows, digest: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(str(v) for v in row) + "\n")
        f.write(f"# manifest={digest}\n")


def write_md_report(path, markdown: str, digest: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(markdown)
        if not markdown.endswith("\n"):
            f.write("\n")
        f.write(f"\nmanifest: `{digest}`\n")


def metric_rows(report) -> tuple[list[str], list[list[str]]]:
    d = report.as_dict()
    header = list(d.keys())
    row = [
        format_pct(v) if k != "mcc" else f"{v:.4f}" for k, v in d.items()
    ]
    return header, [row]


def metrics_markdown(report) -> str:
    header, rows = metric_rows(report)
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
        "| " + " | ".join(rows[0]) + " |",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Model evaluation plumbing shared by eval, drop and pipeline
# ---------------------------------------------------------------------------


def pool_parts(archive_path, split: DatasetSplit, parts=("train", "dev", "test")):
    dim, table = read_archive(archive_path)
    out = {}
    for name in parts:
        examples = getattr(split, name)
        out[name] = pool_split(table, examples, dim)
    return out


def predictions_to_labels(model, X, schema):
    """Predicted class indices/matrices mapped back to schema labels."""
    pred = predict(model, X)
    if schema.single_label:
        return [schema.labels[int(i)] for i in pred]
    return [
        tuple(schema.labels[k] for k in np.flatnonzero(row)) for row in pred
    ]


def evaluate_examples(model, table, dim, examples, schema):
    pooled = pool_split(table, examples, dim)
    pred = predictions_to_labels(model, pooled.X, schema)
    gold = [ex.gold[0] if schema.single_label else ex.gold for ex in examples]
    return compute_metrics(gold, pred, schema)


def evaluate_model(model, archive_path, split: DatasetSplit, part="test"):
    dim, table = read_archive(archive_path)
    return evaluate_examples(model, table, dim, getattr(split, part), split.schema)


def probe_config_from(train_cfg: dict, kind: str, dim: int, split: DatasetSplit,
                      seed: int) -> ProbeConfig:
    return ProbeConfig(
        kind=kind,
        input_dim=dim,
        n_classes=len(split.schema.labels),
        labeling=split.schema.labeling,
        hidden_dim=int(train_cfg.get("hidden", 1024)),
        dropout=float(train_cfg.get("dropout", 0.1)),
        epochs=int(train_cfg.get("epochs", 3)),
        batch_size=int(train_cfg.get("batch", 16)),
        lr=float(train_cfg.get("lr", 1e-3)),
        warmup=float(train_cfg.get("warmup", 0.1)),
        replicas=int(train_cfg.get("replicas", 3)),
        seed=seed,
    )


def train_on_archive(config: ProbeConfig, archive_path, split: DatasetSplit):
    dim, table = read_archive(archive_path)
    if dim != config.input_dim:
        raise DataError(
            f"archive dimension {dim} does not match probe input {config.input_dim}"
        )
    pooled_train = pool_split(table, split.train, dim)
    Y_train = targets_matrix(split.train, split.schema)
    if split.dev:
        pooled_dev = pool_split(table, split.dev, dim)
        Y_dev = targets_matrix(split.dev, split.schema)
        return train(config, pooled_train.X, Y_train, pooled_dev.X, Y_dev)
    return train(config, pooled_train.X, Y_train)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _threads_from_env() -> int:
    raw = os.environ.get("EPB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"EPB_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise DataError("EPB_THREADS must be >= 1")
    return n


def _filtered_tests(split: DatasetSplit, filters, seed: int, uniform_space: str):
    """Filtered test example tuples per heuristic name."""
    index = build_index(split)
    out = {}
    for name in filters:
        h = make_heuristic(name, split, index, seed=seed, uniform_space=uniform_space)
        kept, _removed = split_by_coverage(h, split)
        if not kept:
            raise DataError(f"filter {name!r} removes every test example")
        out[name] = kept
    return out


def _stage(stage: str, digest: str, fn, *args):
    try:
        return fn(*args)
    except EpbError as e:
        raise type(e)(f"stage {stage} (manifest {digest[:12]}): {e}") from e


class _Cell:
    """One (archive variant, probe kind) unit of pipeline work."""

    def __init__(self, encoder: str, variant: str, probe: str, archive: str):
        self.encoder = encoder
        self.variant = variant
        self.probe = probe
        self.archive = archive
        self.name = f"{encoder}-{variant}-{probe}"


def _run_cell(cell: _Cell, split, filtered, train_cfg, seed, mdl_cfg, digest):
    dim, table = read_archive(cell.archive)
    config = probe_config_from(
        train_cfg, cell.probe, dim, split,
        seed=derive_seed(seed, "cell", cell.encoder, cell.variant, cell.probe),
    )
    model = _stage(f"{cell.name}/train", digest, train_on_archive,
                   config, cell.archive, split)
    original = _stage(
        f"{cell.name}/eval", digest,
        evaluate_examples, model, table, dim, split.test, split.schema,
    )
    filtered_reports = {}
    drops = {}
    for fname, kept in filtered.items():
        rep = _stage(
            f"{cell.name}/eval-{fname}", digest,
            evaluate_examples, model, table, dim, kept, split.schema,
        )
        filtered_reports[fname] = rep
        drops[fname] = DropReport(original.accuracy, rep.accuracy)
    mdl_result = None
    if mdl_cfg:
        pooled = pool_split(table, split.train, dim)
        Y = targets_matrix(split.train, split.schema)
        if mdl_cfg.get("mode", "prequential") == "two-part":
            mdl_result = two_part_codelength(model, pooled.X, Y)
        else:
            schedule = mdl_cfg.get("schedule", "default")
            fr = DEFAULT_SCHEDULE if schedule == "default" else validate_schedule(schedule)
            mdl_result = prequential_codelength(
                replace(config, replicas=1), pooled.X, Y, fr,
                seed=derive_seed(seed, "mdl", cell.name),
            )
    return model, original, filtered_reports, drops, mdl_result


def _write_cell_reports(out_dir, cell, model, original, filtered_reports, drops,
                        mdl_result, digest):
    models_dir = os.path.join(out_dir, "models")
    reports_dir = os.path.join(out_dir, "reports")
    save_model(model, os.path.join(models_dir, f"{cell.name}.epm"))

    def emit_metrics(tag, report):
        base = os.path.join(reports_dir, f"{cell.name}-{tag}")
        write_json_report(base + ".json", report.as_dict(), digest)
        header, rows = metric_rows(report)
        write_tsv_report(base + ".tsv", header, rows, digest)
        write_md_report(base + ".md", metrics_markdown(report), digest)

    emit_metrics("original", original)
    for fname, rep in filtered_reports.items():
        emit_metrics(f"filtered-{fname}", rep)

    base = os.path.join(reports_dir, f"{cell.name}-drops")
    payload = {f: d.as_dict() for f, d in drops.items()}
    write_json_report(base + ".json", payload, digest)
    header = ["filter", "acc_original", "acc_filtered", "drop"]
    rows = [
        [f, format_pct(d.acc_original), format_pct(d.acc_filtered),
         format_pct(d.drop)]
        for f, d in drops.items()
    ]
    write_tsv_report(base + ".tsv", header, rows, digest)
    md = ["| filter | acc_original | acc_filtered | drop |",
          "|---|---|---|---|"]
    md += ["| " + " | ".join(r) + " |" for r in rows]
    write_md_report(base + ".md", "\n".join(md) + "\n", digest)

    if mdl_result is not None:
        base = os.path.join(reports_dir, f"{cell.name}-mdl")
        if hasattr(mdl_result, "block_bits"):
            payload = {
                "total_bits": mdl_result.total_bits,
                "block_bits": list(mdl_result.block_bits),
                "boundaries": list(mdl_result.boundaries),
                "schedule": list(mdl_result.schedule),
                "n": mdl_result.n,
                "seed": mdl_result.seed,
            }
        else:
            payload = {
                "data_bits": mdl_result.data_bits,
                "complexity_bits": mdl_result.complexity_bits,
                "total_bits": mdl_result.total_bits,
                "n": mdl_result.n,
                "p": mdl_result.p,
            }
        write_json_report(base + ".json", payload, digest)


def run_pipeline(config_path, out_dir, threads: int | None = None) -> RunManifest:
    """Execute every (encoder variant, probe) cell of a pipeline config and
    write models, reports, the combined drop table, and figures."""
    with open(config_path, encoding="utf-8") as f:
        cfg = json.load(f)
    for key in ("dataset", "encoders"):
        if key not in cfg:
            raise DataError(f"pipeline config missing {key!r}")
    dataset_dir = cfg["dataset"]
    probes = cfg.get("probes", ["linear", "mlp"])
    filters = cfg.get("filters", ["exact", "freq", "uniform"])
    seed = int(cfg.get("seed", 0))
    train_cfg = cfg.get("train", {})
    mdl_cfg = cfg.get("mdl")
    uniform_space = cfg.get("uniform_space", "key")
    dataset_name = cfg.get("name", os.path.basename(os.path.normpath(dataset_dir)))

    input_paths = {"config": config_path, "dataset": dataset_dir}
    cells: list[_Cell] = []
    pairs: list[tuple[str, str, str]] = []  # encoder, base path, random path
    for enc in cfg["encoders"]:
        name = enc["name"]
        if "archive" in enc:
            input_paths[f"archive/{name}"] = enc["archive"]
            for p in probes:
                cells.append(_Cell(name, "only", p, enc["archive"]))
        else:
            for variant in ("base", "random"):
                if variant not in enc:
                    raise DataError(
                        f"encoder {name!r} needs 'archive' or both 'base' and 'random'"
                    )
                input_paths[f"archive/{name}-{variant}"] = enc[variant]
                for p in probes:
                    cells.append(_Cell(name, variant, p, enc[variant]))
            pairs.append((name, enc["base"], enc["random"]))

    manifest = manifest_for_inputs(cfg, input_paths, seeds={"seed": seed})
    digest = manifest.digest

    split = _stage("load-dataset", digest, load_dataset, dataset_dir)
    filtered = _stage(
        "filter", digest, _filtered_tests, split, filters, seed, uniform_space
    )

    os.makedirs(out_dir, exist_ok=True)
    for sub in ("models", "reports", "figures"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    threads = _threads_from_env() if threads is None else threads
    results = {}

    def work(cell: _Cell):
        t0 = time.perf_counter()
        out = _run_cell(cell, split, filtered, train_cfg, seed, mdl_cfg, digest)
        return cell, out, time.perf_counter() - t0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(work, cells))
    else:
        done = [work(c) for c in cells]
    for cell, out, elapsed in done:
        results[cell.name] = (cell, out)
        manifest.timings[cell.name] = elapsed

    for cell, out in results.values():
        model, original, freports, drops, mdl_result = out
        _write_cell_reports(out_dir, cell, model, original, freports, drops,
                            mdl_result, digest)

    # combined drop table in the dataset/encoder/version layout
    columns = [f"{p}/{f}" for p in probes for f in filters]
    table_rows = []
    mdl_curves = {}
    for enc_name, _base, _random in pairs:
        def row(variant):
            cells_ = {}
            for p in probes:
                _cell, (_m, _orig, _fr, drops, mdl_result) = results[
                    f"{enc_name}-{variant}-{p}"
                ]
                for f in filters:
                    cells_[f"{p}/{f}"] = drops[f]
                if mdl_result is not None and hasattr(mdl_result, "block_bits"):
                    mdl_curves[f"{enc_name}-{variant}-{p}"] = mdl_result
            return (dataset_name, enc_name, cells_)

        table_rows.append((row("base"), row("random")))
    if table_rows:
        md = drop_table_markdown(table_rows, columns)
        write_md_report(os.path.join(out_dir, "drop-table.md"), md, digest)

    for enc_name, _b, _r in pairs:
        labels = []
        base_vals = []
        rand_vals = []
        for p in probes:
            for f in filters:
                labels.append(f"{p}/{f}")
                base_vals.append(results[f"{enc_name}-base-{p}"][1][3][f].drop)
                rand_vals.append(results[f"{enc_name}-random-{p}"][1][3][f].drop)
        figures.save_drop_figure(
            labels, base_vals, rand_vals,
            os.path.join(out_dir, "figures", f"drop-{enc_name}.png"),
        )
    single = [c for c, _ in results.values() if c.variant == "only"]
    for cell in single:
        drops = results[cell.name][1][3]
        labels = list(drops.keys())
        figures.save_drop_figure(
            labels, [drops[f].drop for f in labels], None,
            os.path.join(out_dir, "figures", f"drop-{cell.name}.png"),
        )
    if mdl_curves:
        figures.save_prequential_figure(
            mdl_curves, os.path.join(out_dir, "figures", "prequential.png")
        )

    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest
