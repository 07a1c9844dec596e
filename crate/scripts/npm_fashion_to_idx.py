#!/usr/bin/env python3
"""Convert the per-class JSON dumps shipped in the `fashion-mnist` npm package
into gzipped IDX files (the format `valp` reads).

usage: npm_fashion_to_idx.py <package/src/clothes> <out dir> [train_per_class test_per_class]

The per-class pools are split deterministically (first images of each class go
to train, the last ones to test), then each split is shuffled with a fixed seed.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src = Path(sys.argv[1])
    out = Path(sys.argv[2])
    train_per_class = int(sys.argv[3]) if len(sys.argv) > 3 else 6000
    test_per_class = int(sys.argv[4]) if len(sys.argv) > 4 else 1000
    out.mkdir(parents=True, exist_ok=True)

    train, test = [], []
    for c in range(10):
        rows = [r for r in json.load(open(src / f"{c}.json"))["data"] if len(r) == 784]
        train += [(r, c) for r in rows[:train_per_class]]
        test += [(r, c) for r in rows[-test_per_class:]]

    rng = random.Random(20190101)
    rng.shuffle(train)
    rng.shuffle(test)
    for name, split in (("train", train), ("t10k", test)):
        write_images(out / f"{name}-images-idx3-ubyte.gz", [r for r, _ in split])
        write_labels(out / f"{name}-labels-idx1-ubyte.gz", [c for _, c in split])
        print(f"{name}: {len(split)} images")


if __name__ == "__main__":
    main()
