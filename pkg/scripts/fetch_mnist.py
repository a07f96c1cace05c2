#!/usr/bin/env python3
"""Download the MNIST / Fashion-MNIST IDX files for the experiment CLI.

The core package never touches the network; this helper grabs the four
standard files per dataset into a target directory. Usage:

    python scripts/fetch_mnist.py --dataset mnist --out data/mnist
    python scripts/fetch_mnist.py --dataset fashion --out data/fashion

Point `dlam train --data-dir` (or DLAM_MNIST_DIR for the test suite) at the
output directory. Files stay gzip-compressed; the loader reads .gz directly.
"""

import argparse
import sys
import urllib.request
from pathlib import Path

MIRRORS = {
    "mnist": "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "fashion": "https://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}

FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", choices=sorted(MIRRORS), default="mnist")
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = MIRRORS[args.dataset]
    for name in FILES:
        dest = out / name
        if dest.exists():
            print(f"{dest} already present")
            continue
        url = base + name
        print(f"fetching {url}")
        try:
            urllib.request.urlretrieve(url, dest)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
