#!/usr/bin/env python3
"""Convert a tab-separated relation corpus to the JSONL format trained on.

Expects the column layout used by the widely circulated distant-supervision
releases: one sentence per line,

    e1_kb_id TAB e2_kb_id TAB e1_surface TAB e2_surface TAB relation TAB
    token token ... ###END###

Tokens are already space-separated; the trailing ###END### sentinel is
dropped if present. Entity indices are resolved as the first token equal to
the corresponding surface form (entity mentions in these releases are
underscore-joined single tokens). Lines whose surface forms never appear are
counted and skipped rather than failing the whole file.

Example:

    python scripts/convert_tsv_corpus.py train.txt corpus/train.jsonl
"""

import argparse
import sys

sys.path.insert(0, "src")

from rescnn import dataset as ds

SENTINEL = "###END###"


def convert_line(line):
    """One TSV line to a CorpusInstance, or a reason string on failure."""
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 6:
        return f"expected 6 tab-separated fields, got {len(parts)}"
    e1_id, e2_id, e1_surface, e2_surface, relation = parts[:5]
    tokens = "\t".join(parts[5:]).split()
    if tokens and tokens[-1] == SENTINEL:
        tokens = tokens[:-1]
    if not tokens:
        return "empty sentence"
    try:
        e1_idx = tokens.index(e1_surface)
        e2_idx = tokens.index(e2_surface)
    except ValueError:
        return "entity surface form not found in sentence"
    return ds.CorpusInstance(
        tokens=tuple(tokens),
        e1_idx=e1_idx,
        e2_idx=e2_idx,
        e1_id=e1_id,
        e2_id=e2_id,
        relation=relation,
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="tab-separated input file")
    parser.add_argument("dest", help="JSONL output path")
    args = parser.parse_args(argv)

    instances = []
    skipped = {}
    with open(args.source, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            result = convert_line(line)
            if isinstance(result, str):
                skipped[result] = skipped.get(result, 0) + 1
                continue
            instances.append(result)
    if not instances:
        print("no convertible sentences found", file=sys.stderr)
        return 2
    ds.write_corpus(args.dest, instances)
    print(f"wrote {len(instances)} sentences to {args.dest}")
    for reason, count in sorted(skipped.items()):
        print(f"skipped {count}: {reason}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
