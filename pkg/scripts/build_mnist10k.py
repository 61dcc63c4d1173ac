"""Build the bundled 10k-digit MNIST subset as gzip IDX files.

The npm package ``mnist`` (MIT licensed) ships 1000 real MNIST digits per
class as JSON arrays of grey levels divided by 255. This script downloads
that tarball, restores the uint8 pixels, and writes a stratified
8000 / 2000 train/test split in the standard IDX layout:

    python scripts/build_mnist10k.py data/mnist
"""
import io
import json
import sys
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from qvae.data import load_mnist_idx, write_mnist_idx  # noqa: E402

URL = "https://registry.npmjs.org/mnist/-/mnist-1.1.0.tgz"
TEST_PER_CLASS = 200


def main(out_dir, tarball=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = Path(tarball).read_bytes() if tarball else urllib.request.urlopen(URL).read()
    images, labels = [], []
    with tarfile.open(fileobj=io.BytesIO(raw), mode="r:gz") as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            flat = np.array(json.load(member)["data"], dtype=float)
            pix = np.rint(flat * 255.0).astype(np.uint8).reshape(-1, 784)
            images.append(pix)
            labels.append(np.full(len(pix), digit, dtype=np.uint8))
    rng = np.random.default_rng(0)
    train_idx, test_idx = [], []
    offset = 0
    for pix in images:
        perm = offset + rng.permutation(len(pix))
        test_idx.extend(perm[:TEST_PER_CLASS])
        train_idx.extend(perm[TEST_PER_CLASS:])
        offset += len(pix)
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    for name, idx in (("train", np.array(train_idx)), ("test", np.array(test_idx))):
        idx = rng.permutation(idx)
        write_mnist_idx(images[idx], labels[idx],
                        out / f"{name}-images-idx3-ubyte.gz",
                        out / f"{name}-labels-idx1-ubyte.gz")
        ds = load_mnist_idx(out / f"{name}-images-idx3-ubyte.gz",
                            out / f"{name}-labels-idx1-ubyte.gz")
        print(f"{name}: {len(ds)} images, label counts {np.bincount(ds.labels)}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/mnist",
         sys.argv[2] if len(sys.argv) > 2 else None)
