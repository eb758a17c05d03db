#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) bundles 10000 MNIST digits
as per-class JSON arrays of 784 floats in [0, 1] rounded to three decimals.
Rounding v * 255 recovers the original bytes exactly.

Samples are interleaved with a fixed permutation so that any prefix of the
output holds every class.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_json_to_idx.py package/src/digits data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        blob = json.loads((src / f"{digit}.json").read_text())
        flat = blob["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = bytes(int(round(v * 255)) for v in flat[i:i + 784])
            samples.append((digit, pixels))

    random.Random(20170101).shuffle(samples)
    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    with open(dst / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for _, pixels in samples:
            f.write(pixels)
    with open(dst / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
