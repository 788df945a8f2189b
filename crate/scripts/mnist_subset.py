"""Write the 5000-sample MNIST subset shipped inside the mlxtend wheel as
gzipped IDX files (4000 train / 1000 test, stratified, seeded).

    pip download mlxtend --no-deps -d /tmp/pk
    python3 scripts/mnist_subset.py /tmp/pk/mlxtend-*.whl data/mnist-5k
"""
import gzip
import random
import struct
import sys
import zipfile
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main(wheel, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = [list(map(int, line.split(","))) for line in gzip.decompress(raw).decode().split()]
    by_label = {}
    for row in rows:
        by_label.setdefault(row[-1], []).append(row[:-1])
    rng = random.Random(20240101)
    train, test = [], []
    for label in sorted(by_label):
        items = by_label[label]
        rng.shuffle(items)
        cut = len(items) * 4 // 5
        train += [(label, px) for px in items[:cut]]
        test += [(label, px) for px in items[cut:]]
    rng.shuffle(train)
    rng.shuffle(test)
    for prefix, split in (("train", train), ("t10k", test)):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", 0x803, [len(split), 28, 28],
                  [p for _, px in split for p in px])
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", 0x801, [len(split)],
                  [label for label, _ in split])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
