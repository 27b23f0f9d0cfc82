"""Convert the digits bundled with the `mnist` npm package into IDX files.

Usage: python3 scripts/npm_digits_to_idx.py <package>/src/digits data/mnist-desk

The npm package stores each digit class as a flat JSON array of 28x28 images
with intensities rounded to three decimals of byte/255, so rounding v*255
recovers the original bytes exactly. Images are shuffled with a fixed seed.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"])
        raw = raw.reshape(-1, 784)
        images.append(np.rint(raw * 255.0).astype(np.uint8))
        labels.append(np.full(len(raw), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20180801).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = len(labels)

    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(dst / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.tobytes())
    print(n, np.bincount(labels))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
