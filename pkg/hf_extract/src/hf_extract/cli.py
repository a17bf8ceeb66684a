"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

import hf_extract
from hf_extract.errors import DataError, UsageError
from hf_extract.extractor import VARIANTS, ExtractorConfig, extract_file


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="hf_extract",
        description="write per-token top-layer encoder vectors as an "
        "embedding archive",
    )
    p.add_argument("--model", required=True, help="model name or local path")
    p.add_argument("--variant", required=True, choices=list(VARIANTS))
    p.add_argument("--seed", type=int, default=None,
                   help="weight seed, required for --variant random")
    p.add_argument("--in", dest="corpus", required=True, metavar="CORPUS.JSONL")
    p.add_argument("--out", required=True, metavar="OUT.EPEMB")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--version", action="version", version=hf_extract.__version__)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = ExtractorConfig(
            model=args.model,
            variant=args.variant,
            seed=args.seed,
            batch_size=args.batch_size,
        )
        stats = extract_file(config, args.corpus, args.out)
        json.dump(stats, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
