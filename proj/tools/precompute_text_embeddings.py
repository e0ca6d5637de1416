#!/usr/bin/env python3
"""Fill a precomputed text-embedding store for the precomputed-text backends.

Reads the claim and document columns of one or more split CSVs, encodes every
distinct text with a sentence-transformers checkpoint, and writes one entry per
text at <out>/<key[0:2]>/<key>.vec where key is the sha256 of the canonical text.

Entry layout: b"EMB1" | u32 dim | dim x f32 | u32 crc32(values), little endian.

    python tools/precompute_text_embeddings.py --model all-mpnet-base-v2 \
        --out models/sentence-text data/train.csv data/val.csv data/test.csv
"""

import argparse
import csv
import hashlib
import os
import struct
import sys
import tempfile
import unicodedata
import zlib


def canonicalize(text):
    """NFC, then collapse whitespace runs to one space and trim."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def encode_entry(values):
    payload = struct.pack("<%df" % len(values), *values)
    return b"EMB1" + struct.pack("<I", len(values)) + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def entry_path(root, text):
    key = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return os.path.join(root, key[:2], key + ".vec")


def write_atomic(path, data):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def collect_texts(paths, columns):
    texts = set()
    for path in paths:
        with open(path, newline="", encoding="utf-8-sig") as f:
            reader = csv.DictReader(f)
            missing = [c for c in columns if c not in (reader.fieldnames or [])]
            if missing:
                sys.exit("%s: missing column(s) %s" % (path, ", ".join(missing)))
            for row in reader:
                for c in columns:
                    t = canonicalize(row[c] or "")
                    if t:
                        texts.add(t)
    return sorted(texts)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", required=True, help="sentence-transformers checkpoint name or path")
    ap.add_argument("--out", required=True, help="store directory (the backend's asset path)")
    ap.add_argument("--columns", default="claim,document", help="comma-separated text columns")
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("csv", nargs="+")
    args = ap.parse_args()

    texts = collect_texts(args.csv, args.columns.split(","))
    todo = [t for t in texts if not os.path.exists(entry_path(args.out, t))]
    print("%d distinct texts, %d to encode" % (len(texts), len(todo)))
    if not todo:
        return

    from sentence_transformers import SentenceTransformer

    model = SentenceTransformer(args.model)
    vectors = model.encode(todo, batch_size=args.batch_size, show_progress_bar=True, convert_to_numpy=True)
    for text, vec in zip(todo, vectors):
        write_atomic(entry_path(args.out, text), encode_entry([float(v) for v in vec]))
    print("wrote %d entries of dim %d to %s" % (len(todo), vectors.shape[1], args.out))


if __name__ == "__main__":
    main()
