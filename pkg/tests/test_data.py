import gzip

import numpy as np
import pytest

from dqnn import data as D
from dqnn.errors import DomainError, FormatError, ShapeError


def test_patterns():
    dot = D.gen_bars_dots(10, 40, 0.0, np.random.default_rng(0))
    alt = np.array([1, -1] * 5, float)
    for row, lab in zip(dot.features, dot.labels):
        if lab < 0:
            assert np.array_equal(row, alt) or np.array_equal(row, -alt)
        else:
            assert any(np.array_equal(row, np.roll(np.r_[np.ones(5), -np.ones(5)], s))
                       for s in range(10))
    assert abs(dot.labels.sum()) == 0
    with pytest.raises(ShapeError):
        D.gen_bars_dots(1, 10, 0.1, np.random.default_rng(0))
    with pytest.raises(DomainError):
        D.gen_bars_dots(4, 10, -1, np.random.default_rng(0))


def test_no_shift_switch():
    ds = D.gen_bars_dots(6, 20, 0.0, np.random.default_rng(1), shifts=False)
    bars = ds.features[ds.labels > 0]
    assert np.all(bars == D.bar_pattern(6))


def test_determinism():
    a = D.gen_bars_dots(10, 100, 1.8, np.random.default_rng(5))
    b = D.gen_bars_dots(10, 100, 1.8, np.random.default_rng(5))
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    c1 = D.gen_chebyshev(2, seed=3)
    c2 = D.gen_chebyshev(2, seed=3)
    assert c1[0].labels.tobytes() == c2[0].labels.tobytes()


def test_probe_monotone():
    accs = [D.probe_accuracy(D.gen_bars_dots(10, 4000, s, np.random.default_rng(0)))
            for s in (0.0, 0.5, 1.0, 1.8)]
    assert accs[0] == 1.0
    assert all(a > b for a, b in zip(accs, accs[1:]))


def test_chebyshev():
    assert D.chebyshev(0, 0.3) == 1.0
    assert D.chebyshev(2, 0.5) == pytest.approx(-0.5)
    assert D.chebyshev(4, 1.0) == pytest.approx(1.0)
    x = np.linspace(-1, 1, 9)
    assert np.allclose(D.chebyshev(3, x), np.cos(3 * np.arccos(x)))
    tr, te = D.gen_chebyshev(2, 25, 110, 0.5, 0.0, np.random.default_rng(0))
    assert len(tr) == 25 and len(te) == 110
    assert np.allclose(te.labels, D.chebyshev(2, te.features[:, 0]))
    with pytest.raises(DomainError):
        D.chebyshev(-1, 0.0)


def _idx_bytes(arr):
    arr = np.asarray(arr, np.uint8)
    return bytes([0, 0, 8, arr.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in arr.shape) + \
        arr.tobytes()


def test_idx_roundtrip(tmp_path):
    arr = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    p = tmp_path / "a.idx"
    D.write_idx(p, arr)
    assert np.array_equal(D.read_idx(p, D.IDX_IMAGES), arr)
    with gzip.open(tmp_path / "b.idx.gz", "wb") as f:
        f.write(_idx_bytes(arr))
    assert np.array_equal(D.read_idx(tmp_path / "b.idx"), arr)
    head = D.parse_idx(_idx_bytes(np.zeros((60000, 28, 28))), D.IDX_IMAGES)
    assert head.shape == (60000, 28, 28)


def test_idx_errors():
    good = _idx_bytes(np.zeros((2, 3)))
    with pytest.raises(FormatError, match="byte 0"):
        D.parse_idx(b"\x01" + good[1:])
    with pytest.raises(FormatError, match="byte 2"):
        D.parse_idx(good[:2] + b"\x0d" + good[3:])
    with pytest.raises(FormatError, match="byte 6"):
        D.parse_idx(good[:6])
    with pytest.raises(FormatError, match="byte 16: expected 18"):
        D.parse_idx(good[:-2])
    with pytest.raises(FormatError, match="expected 0x00000801"):
        D.parse_idx(_idx_bytes(np.zeros((2, 3))), D.IDX_LABELS)


def test_load_mnist_dir(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 28, 28))
    D.write_idx(tmp_path / "train-images-idx3-ubyte", imgs)
    D.write_idx(tmp_path / "train-labels-idx1-ubyte", np.arange(5))
    ds = D.load_mnist(tmp_path, "train")
    assert ds.features.shape == (5, 784) and ds.features.max() <= 1.0
    D.write_idx(tmp_path / "train-labels-idx1-ubyte", np.arange(4))
    with pytest.raises(FormatError):
        D.load_mnist(tmp_path, "train")


def test_pca(rng):
    x = rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6))
    full = D.pca_fit(x, 6)
    assert np.max(np.abs(D.pca_reconstruct(full, D.pca_apply(full, x)) - x)) < 1e-8
    assert np.max(np.abs(D.pca_apply(full, x.mean(0)))) < 1e-10
    assert np.allclose(full.components @ full.components.T, np.eye(6), atol=1e-10)
    assert np.all(np.diff(full.explained_variance) <= 1e-12)
    top = D.pca_fit(x, 2)
    idx = np.argmax(np.abs(top.components), axis=1)
    assert np.all(top.components[np.arange(2), idx] > 0)
    with pytest.raises(ShapeError):
        D.pca_fit(x, 7)


def test_export_csv(tmp_path):
    ds = D.gen_bars_dots(4, 6, 0.1, np.random.default_rng(0))
    p = tmp_path / "d.csv"
    D.export_csv(ds, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x0,x1,x2,x3,label" and len(lines) == 7
    back = np.loadtxt(p, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, :4], ds.features)
