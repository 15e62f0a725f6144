#!/usr/bin/env python3
"""Build the bundled MNIST subset (gzipped IDX files) from the `mnist` npm package.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist_subset.py package/src/digits crates/core/data/mnist-subset

The npm package ships 10k MNIST digits as 3-decimal floats; pixels are mapped
back to bytes with round(v * 255). The first `--train` digits of every class
form the training split, the next `--test` digits the test split. Both splits
are shuffled with a fixed seed so classes are interleaved.
"""
import argparse
import gzip
import json
import os
import random
import struct


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--test", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    train, test = [], []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        n = len(raw) // 784
        assert n >= args.train + args.test, (digit, n)
        images = [
            [max(0, min(255, round(v * 255))) for v in raw[i * 784:(i + 1) * 784]]
            for i in range(args.train + args.test)
        ]
        train += [(img, digit) for img in images[: args.train]]
        test += [(img, digit) for img in images[args.train:]]

    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, split in (("train", train), ("t10k", test)):
        pixels = [p for img, _ in split for p in img]
        labels = [label for _, label in split]
        write_idx(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte.gz"), 0x803, [len(split), 28, 28], pixels)
        write_idx(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte.gz"), 0x801, [len(split)], labels)
        print(name, len(split))


if __name__ == "__main__":
    main()
