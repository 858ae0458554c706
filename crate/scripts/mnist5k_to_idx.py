#!/usr/bin/env python3
"""Convert the 5,000-image MNIST sample shipped inside the mlxtend wheel to gzipped IDX files.

    pip download mlxtend==0.24.0 --no-deps -d /tmp/mlx
    python3 scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl data/mnist5k

Each CSV row holds 784 pixel values followed by the label.
"""
import argparse
import gzip
import struct
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("wheel", type=Path)
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    text = gzip.decompress(zipfile.ZipFile(args.wheel).read(MEMBER)).decode()
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        if len(row) != 785:
            raise SystemExit(f"unexpected row width {len(row)}")
        pixels.extend(int(float(v)) for v in row[:784])
        labels.append(int(float(row[784])))

    args.out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    # mtime=0 keeps the output byte-identical across runs
    with gzip.GzipFile(args.out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28) + bytes(pixels))
    with gzip.GzipFile(args.out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n) + bytes(labels))
    print(f"wrote {n} images to {args.out}")


if __name__ == "__main__":
    main()
