"""Datasets: bars and dots, Chebyshev regression, MNIST (IDX files) and PCA."""
from __future__ import annotations

from dataclasses import dataclass
import csv
import gzip
import os

import numpy as np

from .errors import ShapeError, FormatError, DomainError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
MNIST_ENV = "DQNN_MNIST"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    seed: int | None = None
    name: str = ""

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ShapeError("features and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def to_csv(self, path):
        export_csv(self, path)


# ---------------------------------------------------------------------------
# bars and dots

def bar_pattern(d: int) -> np.ndarray:
    h = d // 2
    return np.concatenate([np.ones(h), -np.ones(d - h)])


def dot_pattern(d: int, phase: int = 0) -> np.ndarray:
    p = np.where(np.arange(d) % 2 == 0, 1.0, -1.0)
    return p if phase == 0 else -p


def gen_bars_dots(d: int, n_samples: int, sigma: float, rng, shifts: bool = True,
                  split: str = "train", seed=None) -> Dataset:
    """Balanced bars (+1) and dots (-1) with iid Gaussian noise of std sigma.

    With ``shifts`` every cyclic translation of the bar and both dot phases
    are drawn uniformly; otherwise only the base patterns are used.
    """
    if d < 2:
        raise ShapeError("need d >= 2")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    labels = np.where(np.arange(n_samples) % 2 == 0, 1.0, -1.0)
    rng.shuffle(labels)
    x = np.empty((n_samples, d))
    n_bar = int(np.sum(labels > 0))
    bar_shift = rng.integers(0, d, n_bar) if shifts else np.zeros(n_bar, dtype=int)
    dot_phase = rng.integers(0, 2, n_samples - n_bar) if shifts else np.zeros(n_samples - n_bar, dtype=int)
    base = bar_pattern(d)
    x[labels > 0] = np.stack([np.roll(base, s) for s in bar_shift]) if n_bar else x[labels > 0]
    if n_samples - n_bar:
        x[labels < 0] = np.stack([dot_pattern(d, p) for p in dot_phase])
    x = x + sigma * rng.normal(size=x.shape)
    return Dataset(x, labels, split, seed, "bars_dots")


# ---------------------------------------------------------------------------
# Chebyshev

def chebyshev(n: int, x):
    """T_n(x) by the three-term recurrence."""
    if n < 0:
        raise DomainError("order must be >= 0")
    x = np.asarray(x, dtype=float)
    t0, t1 = np.ones_like(x), x
    if n == 0:
        return t0 if t0.ndim else float(t0)
    for _ in range(n - 1):
        t0, t1 = t1, 2 * x * t1 - t0
    return t1 if t1.ndim else float(t1)


def gen_chebyshev(order: int, n_train: int = 25, n_test: int = 110, noise: float = 0.5,
                  test_noise: float = 0.0, rng=None, seed=None):
    """Equally spaced points on [-1, 1]; noise is the std of the additive Gaussian."""
    rng = np.random.default_rng(seed) if rng is None else rng
    xs = np.linspace(-1, 1, n_train)
    xt = np.linspace(-1, 1, n_test)
    ys = chebyshev(order, xs) + noise * rng.normal(size=n_train)
    yt = chebyshev(order, xt) + test_noise * rng.normal(size=n_test)
    return (Dataset(xs[:, None], ys, "train", seed, f"chebyshev_T{order}"),
            Dataset(xt[:, None], yt, "test", seed, f"chebyshev_T{order}"))


# ---------------------------------------------------------------------------
# IDX

def _open(path):
    path = os.fspath(path)
    if not os.path.exists(path) and os.path.exists(path + ".gz"):
        path += ".gz"
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def parse_idx(buf: bytes, magic: int | None = None) -> np.ndarray:
    """Decode an unsigned-byte IDX blob; header errors report the byte offset."""
    if len(buf) < 4:
        raise FormatError(f"truncated header at byte {len(buf)}: need 4 magic bytes")
    m = int.from_bytes(buf[:4], "big")
    if buf[0] or buf[1]:
        raise FormatError(f"bad magic 0x{m:08x} at byte 0")
    if buf[2] != 0x08:
        raise FormatError(f"unsupported element type 0x{buf[2]:02x} at byte 2")
    if magic is not None and m != magic:
        raise FormatError(f"bad magic 0x{m:08x} at byte 0, expected 0x{magic:08x}")
    ndim = buf[3]
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise FormatError(f"truncated header at byte {len(buf)}: need {end} bytes for {ndim} dims")
    dims = tuple(int.from_bytes(buf[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim))
    size = int(np.prod(dims)) if dims else 1
    if len(buf) < end + size:
        raise FormatError(f"truncated data at byte {len(buf)}: expected {end + size} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=end).reshape(dims)


def read_idx(path, magic: int | None = None) -> np.ndarray:
    with _open(path) as f:
        return parse_idx(f.read(), magic)


def write_idx(path, arr):
    arr = np.asarray(arr, dtype=np.uint8)
    head = bytes([0, 0, 0x08, arr.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in arr.shape)
    with open(path, "wb") as f:
        f.write(head + arr.tobytes())


def load_mnist(path=None, split: str = "train") -> Dataset:
    """Images scaled to [0, 1] and flattened, from a directory of IDX files."""
    path = path or os.environ.get(MNIST_ENV)
    if not path:
        raise FileNotFoundError(f"no MNIST path given and {MNIST_ENV} is unset")
    img_name, lab_name = MNIST_FILES[split]
    images = read_idx(os.path.join(path, img_name), IDX_IMAGES)
    labels = read_idx(os.path.join(path, lab_name), IDX_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(x, labels.astype(int), split, None, "mnist")


def load_mnist_sample(n_train: int = 4000, seed: int = 0):
    """5000-image MNIST subset shipped with mlxtend, split by a seeded permutation."""
    from mlxtend.data import mnist_data
    x, y = mnist_data()
    perm = np.random.default_rng(seed).permutation(len(y))
    x, y = x[perm] / 255.0, y[perm].astype(int)
    return (Dataset(x[:n_train], y[:n_train], "train", seed, "mnist_5k"),
            Dataset(x[n_train:], y[n_train:], "test", seed, "mnist_5k"))


def load_mnist_any(path=None, n_train: int = 4000, seed: int = 0):
    """Full IDX files when a path (or the env var) is set, else the bundled subset."""
    path = path or os.environ.get(MNIST_ENV)
    if path:
        return load_mnist(path, "train"), load_mnist(path, "test")
    return load_mnist_sample(n_train, seed)


# ---------------------------------------------------------------------------
# PCA

@dataclass
class PCABasis:
    mean: np.ndarray
    components: np.ndarray        # (k, d), orthonormal rows
    explained_variance: np.ndarray


def pca_fit(x, k: int) -> PCABasis:
    x = np.asarray(x, dtype=float)
    if not 1 <= k <= x.shape[1]:
        raise ShapeError(f"k must be in 1..{x.shape[1]}")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False)
    w, v = np.linalg.eigh(np.atleast_2d(cov))
    order = np.argsort(w)[::-1][:k]
    comps = v[:, order].T
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), idx])[:, None]
    return PCABasis(mean, comps, np.clip(w[order], 0, None))


def pca_apply(basis: PCABasis, x) -> np.ndarray:
    return (np.asarray(x, dtype=float) - basis.mean) @ basis.components.T


def pca_reconstruct(basis: PCABasis, z) -> np.ndarray:
    return np.asarray(z) @ basis.components + basis.mean


# ---------------------------------------------------------------------------
# export

def export_csv(ds: Dataset, path):
    """Header row then one sample per line, label last."""
    d = ds.features.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(d)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [lab.item() if hasattr(lab, "item") else lab])


def probe_accuracy(ds: Dataset) -> float:
    """Accuracy of a fixed probe, linear in the cyclic neighbour products x_i x_{i+1}.

    Noise-free bars score d - 4 and dots -d; the threshold sits at -2.
    """
    x = ds.features
    score = np.sum(x * np.roll(x, -1, axis=1), axis=1)
    return float(np.mean(np.where(score > -2, 1.0, -1.0) == ds.labels))
