"""Build an MNIST subset in IDX format from the npm ``mnist`` package.

The package ships about 10,000 real MNIST digits as JSON arrays of
``pixel / 255`` rounded to three decimals, one file per digit. Rounding back
with ``round(v * 255)`` recovers the original bytes exactly.

Usage::

    python3 scripts/fetch_mnist_subset.py [--source DIR] [--out data/mnist]

Without ``--source`` the package is fetched with ``npm pack mnist@1.1.0``.
"""

import argparse
import json
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from imsat.data import save_idx

PACKAGE = "mnist@1.1.0"


def _fetch_package(workdir):
    try:
        out = subprocess.run(["npm", "pack", PACKAGE, "--silent"], cwd=workdir,
                             check=True, capture_output=True, text=True)
    except (OSError, subprocess.CalledProcessError) as exc:
        sys.exit(f"could not fetch {PACKAGE} with npm: {exc}")
    tarball = Path(workdir) / out.stdout.strip().splitlines()[-1]
    with tarfile.open(tarball) as tar:
        tar.extractall(workdir, filter="data")
    return Path(workdir) / "package" / "src" / "digits"


def load_digits(source):
    images, labels = [], []
    for digit in range(10):
        path = Path(source) / f"{digit}.json"
        values = np.asarray(json.loads(path.read_text())["data"], dtype=np.float64)
        if values.size % 784:
            sys.exit(f"{path}: {values.size} values is not a whole number of 28x28 images")
        pixels = np.rint(values * 255.0).clip(0, 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pixels)
        labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", help="directory holding 0.json ... 9.json")
    ap.add_argument("--out", default="data/mnist")
    args = ap.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        source = args.source or _fetch_package(tmp)
        images, labels = load_digits(source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_idx(out / "images-idx3-ubyte", images, out / "labels-idx1-ubyte", labels)
    counts = np.bincount(labels, minlength=10)
    print(f"wrote {len(labels)} images to {out} (per digit: {counts.tolist()})")


if __name__ == "__main__":
    main()
