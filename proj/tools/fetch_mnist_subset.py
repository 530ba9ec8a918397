#!/usr/bin/env python3
"""Write a 5000-image MNIST subset as IDX files.

The subset ships inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz,
500 images per digit, label in the last column). The wheel is fetched with
pip unless --wheel points at a local copy.
"""

import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
IMAGES = "train-images-idx3-ubyte"
LABELS = "train-labels-idx1-ubyte"


def find_wheel(explicit, workdir):
    if explicit:
        return pathlib.Path(explicit)
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet",
         "mlxtend==0.24.0", "-d", str(workdir)],
        check=True,
    )
    wheels = sorted(pathlib.Path(workdir).glob("mlxtend-*.whl"))
    if not wheels:
        sys.exit("pip did not produce an mlxtend wheel")
    return wheels[0]


def read_rows(wheel):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER)).decode("ascii")
    pixels, labels = [], []
    for line in io.StringIO(raw):
        line = line.strip()
        if not line:
            continue
        values = [int(float(v)) for v in line.split(",")]
        if len(values) != 785:
            sys.exit(f"unexpected row width {len(values)}")
        pixels.append(bytes(values[:784]))
        labels.append(values[784])
    return pixels, labels


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="directory for the IDX files")
    ap.add_argument("--wheel", help="local mlxtend wheel")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    if (out / IMAGES).exists() and (out / LABELS).exists():
        return
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        pixels, labels = read_rows(find_wheel(args.wheel, tmp))

    n = len(labels)
    with open(out / IMAGES, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for row in pixels:
            f.write(row)
    with open(out / LABELS, "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
