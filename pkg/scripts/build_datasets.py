"""Rebuild the files under data/ from packaged copies of the public datasets.

The sandbox has no route to the original hosts, so the raw files are taken
from two package archives that bundle them:

* ``keel_ds`` wheel (pip): ``wisconsin.dat`` and ``pima.dat``
* ``mnist-data`` tarball (npm): the four MNIST idx files

Usage::

    pip download keel_ds==0.2.5 --no-deps -d /tmp
    npm pack mnist-data@1.2.6 --pack-destination /tmp
    python3 scripts/build_datasets.py --keel /tmp/keel_ds-0.2.5-py3-none-any.whl \
        --mnist /tmp/mnist-data-1.2.6.tgz --out data
"""
import argparse
import gzip
import io
import tarfile
import zipfile
from pathlib import Path

import numpy as np

BREAST_CANCER_COLUMNS = [
    "clump_thickness", "cell_size", "cell_shape", "marginal_adhesion",
    "epithelial_size", "bare_nuclei", "bland_chromatin", "normal_nucleoli",
    "mitoses",
]
DIABETES_COLUMNS = [
    "pregnancies", "glucose", "blood_pressure", "skin_thickness", "insulin",
    "bmi", "pedigree", "age",
]


def _keel_rows(wheel, name):
    with zipfile.ZipFile(wheel) as zf:
        text = zf.read(f"keel_ds/data/balanced/raw/{name}").decode()
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        rows.append([tok.strip() for tok in line.split(",")])
    return rows


def write_breast_cancer(wheel, out):
    rows = _keel_rows(wheel, "wisconsin.dat")
    with open(out, "w") as fh:
        fh.write(",".join(BREAST_CANCER_COLUMNS + ["label"]) + "\n")
        for r in rows:
            # 2 = benign, 4 = malignant
            fh.write(",".join(r) + "\n")
    return len(rows)


def write_diabetes(wheel, out):
    rows = _keel_rows(wheel, "pima.dat")
    with open(out, "w") as fh:
        fh.write(",".join(DIABETES_COLUMNS + ["label"]) + "\n")
        for r in rows:
            label = {"tested_positive": "1", "tested_negative": "0"}[r[-1]]
            fh.write(",".join(r[:-1] + [label]) + "\n")
    return len(rows)


def _read_idx(raw):
    magic = int.from_bytes(raw[:4], "big")
    ndim = magic & 0xFF
    dims = [int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim)]
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def write_mnist_pair(tgz, out_dir, digits=(2, 6)):
    with tarfile.open(tgz) as tf:
        def load(name):
            return _read_idx(tf.extractfile(f"package/data/{name}").read())

        parts = {
            "train": (load("train-images-idx3-ubyte"), load("train-labels-idx1-ubyte")),
            "test": (load("t10k-images-idx3-ubyte"), load("t10k-labels-idx1-ubyte")),
        }
    counts = {}
    for split, (images, labels) in parts.items():
        keep = np.isin(labels, digits)
        images = images[keep].reshape(int(keep.sum()), -1)
        labels = labels[keep]
        d = images.shape[1]
        path = Path(out_dir) / f"mnist-{digits[0]}-{digits[1]}-{split}.libsvm.gz"
        buf = io.StringIO()
        for img, lab in zip(images, labels):
            nz = np.flatnonzero(img)
            toks = [f"{j + 1}:{img[j]}" for j in nz]
            if not len(nz) or nz[-1] != d - 1:
                toks.append(f"{d}:0")
            buf.write(f"{lab} " + " ".join(toks) + "\n")
        # mtime=0 keeps the archive byte-stable across rebuilds
        with open(path, "wb") as raw_fh:
            with gzip.GzipFile(fileobj=raw_fh, mode="wb", mtime=0) as gz:
                gz.write(buf.getvalue().encode())
        counts[split] = len(labels)
    return counts


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--keel", required=True, help="path to the keel_ds wheel")
    ap.add_argument("--mnist", required=True, help="path to the mnist-data npm tarball")
    ap.add_argument("--out", default="data")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_bc = write_breast_cancer(args.keel, out / "breast-cancer.csv")
    n_db = write_diabetes(args.keel, out / "diabetes.csv")
    n_mn = write_mnist_pair(args.mnist, out)
    print(f"breast-cancer: {n_bc} rows")
    print(f"diabetes: {n_db} rows")
    print(f"mnist 2-6: {n_mn}")


if __name__ == "__main__":
    main()
