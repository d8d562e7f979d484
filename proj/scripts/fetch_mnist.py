#!/usr/bin/env python3
"""Materialize MNIST IDX files from the `mnist` npm package.

The package bundles ~10k real MNIST digits (~1000 per class) as JSON with
pixels scaled to [0,1]. This script converts them back to bytes and writes
standard IDX files: the first `--train-per-class` samples of each digit go
to the train pair, the remainder to the t10k-style test pair.

Usage: python3 scripts/fetch_mnist.py [--out data/mnist] [--train-per-class 500]
"""

import argparse
import json
import os
import shutil
import struct
import subprocess
import sys
import tempfile


def locate_digits_dir(workdir: str) -> str:
    candidates = [
        os.path.join("node_modules", "mnist", "src", "digits"),
        os.path.join(workdir, "node_modules", "mnist", "src", "digits"),
        "/tmp/node_modules/mnist/src/digits",
    ]
    for c in candidates:
        if os.path.isdir(c):
            return c
    print("installing the `mnist` npm package ...", flush=True)
    subprocess.run(["npm", "install", "mnist", "--no-save"], cwd=workdir, check=True)
    path = os.path.join(workdir, "node_modules", "mnist", "src", "digits")
    if not os.path.isdir(path):
        raise RuntimeError("npm install succeeded but the digits directory is missing")
    return path


def write_idx(images, labels, images_path, labels_path):
    n = len(images)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--train-per-class", type=int, default=500)
    args = ap.parse_args()

    workdir = tempfile.mkdtemp(prefix="bdclean_mnist_")
    try:
        digits_dir = locate_digits_dir(workdir)
        train_images, train_labels = [], []
        test_images, test_labels = [], []
        for digit in range(10):
            with open(os.path.join(digits_dir, f"{digit}.json")) as f:
                flat = json.load(f)["data"]
            if len(flat) % 784 != 0:
                raise RuntimeError(f"digit {digit}: unexpected payload length {len(flat)}")
            count = len(flat) // 784
            for i in range(count):
                pixels = [
                    min(255, max(0, int(round(v * 255.0))))
                    for v in flat[i * 784:(i + 1) * 784]
                ]
                if i < args.train_per_class:
                    train_images.append(pixels)
                    train_labels.append(digit)
                else:
                    test_images.append(pixels)
                    test_labels.append(digit)

        os.makedirs(args.out, exist_ok=True)
        write_idx(train_images, train_labels,
                  os.path.join(args.out, "train-images-idx3-ubyte"),
                  os.path.join(args.out, "train-labels-idx1-ubyte"))
        write_idx(test_images, test_labels,
                  os.path.join(args.out, "t10k-images-idx3-ubyte"),
                  os.path.join(args.out, "t10k-labels-idx1-ubyte"))
        print(f"wrote {len(train_images)} train / {len(test_images)} test samples to {args.out}")
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
