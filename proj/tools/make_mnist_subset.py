#!/usr/bin/env python3
"""Write a desk-scale MNIST subset as IDX files.

The source is the 5 000-sample MNIST excerpt shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 784 pixel columns followed by the label).
Samples are shuffled with a fixed seed and split into disjoint train/test parts.

usage: make_mnist_subset.py MNIST_5K_CSV_GZ OUT_DIR [--train 2000] [--test 500]
"""
import argparse
import gzip
import random
import struct
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv_gz")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    rows = []
    with gzip.open(args.csv_gz, "rt") as f:
        for line in f:
            vals = [int(float(v)) for v in line.strip().split(",")]
            rows.append((vals[:784], vals[784]))
    random.Random(args.seed).shuffle(rows)
    train = rows[: args.train]
    test = rows[args.train : args.train + args.test]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", [r[0] for r in train])
    write_labels(out / "train-labels-idx1-ubyte", [r[1] for r in train])
    write_images(out / "test-images-idx3-ubyte", [r[0] for r in test])
    write_labels(out / "test-labels-idx1-ubyte", [r[1] for r in test])


if __name__ == "__main__":
    main()
