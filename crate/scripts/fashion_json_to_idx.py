"""Convert the per-class JSON dump of Fashion-MNIST into IDX files.

The first 6000 images of each class go to the train split and the rest to
t10k; both splits are shuffled with a fixed seed so the output is stable.
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 6000


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    train, test = [], []
    for label in range(10):
        rows = json.loads((src / f"{label}.json").read_text())["data"]
        # the class-0 dump carries two empty trailing rows
        rows = [row for row in rows if len(row) == 784]
        for i, row in enumerate(rows):
            (train if i < TRAIN_PER_CLASS else test).append((row, label))
    rng = random.Random(20200101)
    for name, items in (("train", train), ("t10k", test)):
        rng.shuffle(items)
        pixels = bytearray()
        for row, _ in items:
            pixels.extend(row)
        labels = [label for _, label in items]
        write_idx(dst / f"{name}-images-idx3-ubyte", 0x803, [len(items), 28, 28], pixels)
        write_idx(dst / f"{name}-labels-idx1-ubyte", 0x801, [len(items)], labels)
        print(f"{name}: {len(items)} images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
