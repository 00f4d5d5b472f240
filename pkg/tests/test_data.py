import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forward_thinking.data import (AugmentConfig, BadMagicError, CountMismatchError, Dataset,
                                   IdxParseError, RawDataset, TruncatedIdxError, affine_source_matrix,
                                   augment, load_idx, load_mnist, normalize, split, synth_squares,
                                   synth_xor, warp_images, write_idx)
from forward_thinking.errors import ContractError, DomainError
from forward_thinking.tensor import SeededRng

# Two 2x2 images, written byte by byte (independent of write_idx).
FIXTURE_PIXELS = [0, 17, 128, 255, 1, 2, 254, 3]
FIXTURE_LABELS = [7, 2]


def fixture_bytes():
    images = bytes([0, 0, 8, 3]) + struct.pack(">III", 2, 2, 2) + bytes(FIXTURE_PIXELS)
    labels = bytes([0, 0, 8, 1]) + struct.pack(">I", 2) + bytes(FIXTURE_LABELS)
    return images, labels


@pytest.fixture
def idx_pair(tmp_path):
    img, lab = fixture_bytes()
    (tmp_path / "img").write_bytes(img)
    (tmp_path / "lab").write_bytes(lab)
    return tmp_path / "img", tmp_path / "lab"


def test_fixture_pixels_recovered_exactly(idx_pair):
    raw = load_idx(*idx_pair)
    assert raw.images.dtype == np.uint8 and raw.images.shape == (2, 2, 2)
    assert raw.images.reshape(-1).tolist() == FIXTURE_PIXELS
    assert raw.labels.tolist() == FIXTURE_LABELS


def test_gzip_by_extension(tmp_path):
    img, lab = fixture_bytes()
    (tmp_path / "i.gz").write_bytes(gzip.compress(img))
    (tmp_path / "l.gz").write_bytes(gzip.compress(lab))
    raw = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
    assert raw.images.reshape(-1).tolist() == FIXTURE_PIXELS


def test_write_idx_matches_independent_writer_bytes(tmp_path, idx_pair):
    raw = load_idx(*idx_pair)
    write_idx(raw, tmp_path / "a", tmp_path / "b")
    img, lab = fixture_bytes()
    assert (tmp_path / "a").read_bytes() == img
    assert (tmp_path / "b").read_bytes() == lab


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_write_then_load_is_identity(n, h, w, seed):
    import tempfile
    from pathlib import Path
    gen = SeededRng(seed).generator
    raw = RawDataset(gen.integers(0, 256, (n, h, w), dtype=np.uint8), gen.integers(0, 10, n, dtype=np.uint8))
    with tempfile.TemporaryDirectory() as d:
        write_idx(raw, Path(d) / "i", Path(d) / "l")
        back = load_idx(Path(d) / "i", Path(d) / "l")
    assert np.array_equal(back.images, raw.images) and back.images.shape == (n, h, w)
    assert np.array_equal(back.labels, raw.labels)


def test_bad_magic(tmp_path, idx_pair):
    img, _ = fixture_bytes()
    (tmp_path / "bad").write_bytes(b"\x00\x00\x00\x00" + img[4:])
    with pytest.raises(BadMagicError) as e:
        load_idx(tmp_path / "bad", idx_pair[1])
    assert e.value.offset == 0
    with pytest.raises(BadMagicError):
        load_idx(idx_pair[1], idx_pair[1])


def test_truncated_files(tmp_path, idx_pair):
    img, _ = fixture_bytes()
    for cut, where in ((2, "magic"), (10, "header"), (len(img) - 1, "payload")):
        (tmp_path / "t").write_bytes(img[:cut])
        with pytest.raises(TruncatedIdxError) as e:
            load_idx(tmp_path / "t", idx_pair[1])
        assert e.value.offset == cut, where
    (tmp_path / "long").write_bytes(img + b"\x00")
    with pytest.raises(IdxParseError):
        load_idx(tmp_path / "long", idx_pair[1])


def test_count_mismatch(tmp_path, idx_pair):
    lab = bytes([0, 0, 8, 1]) + struct.pack(">I", 3) + bytes([1, 2, 3])
    (tmp_path / "l3").write_bytes(lab)
    with pytest.raises(CountMismatchError):
        load_idx(idx_pair[0], tmp_path / "l3")


def test_mnist_headers(mnist_dir):
    train = load_mnist(mnist_dir, "train", "image")
    test = load_mnist(mnist_dir, "t10k", "flat")
    assert train.features.shape == (60000, 1, 28, 28)
    assert test.features.shape == (10000, 784)
    assert train.n_classes == 10 and set(np.unique(test.labels)) == set(range(10))


# -- normalize -----------------------------------------------------------

def test_normalize(idx_pair):
    raw = load_idx(*idx_pair)
    flat = normalize(raw, "flat")
    assert flat.features.shape == (2, 4) and flat.n_classes == 10
    assert flat.features[0, 0] == 0.0 and flat.features[0, 3] == 1.0
    assert normalize(raw, "image").features.shape == (2, 1, 2, 2)
    big = RawDataset(SeededRng(0).generator.integers(0, 256, (5, 28, 28), dtype=np.uint8), np.zeros(5, np.uint8))
    d = normalize(big, "flat")
    assert d.features.shape[1] == 784
    assert abs(d.features.mean() - big.images.mean() / 255.0) <= 1e-12
    with pytest.raises(DomainError):
        normalize(raw, "nchw")


# -- augmentation ----------------------------------------------------------

def small_images(n=6, seed=0):
    r = SeededRng(seed)
    return Dataset(r.random((n, 1, 7, 7)), np.arange(n) % 3, 3)


def test_augment_zero_copies_and_zero_magnitude():
    data = small_images()
    assert augment(data, AugmentConfig(copies_per_image=0)) is data
    out = augment(data, AugmentConfig(0, 0.0, (1.0, 1.0), 2, seed=4))
    assert len(out) == 18
    for j in (1, 2):
        np.testing.assert_allclose(out.features[6 * j:6 * (j + 1)], data.features, rtol=0, atol=1e-9)


def test_augment_ninety_degree_rotation_is_pixel_permutation():
    img = np.arange(1, 10, dtype=float).reshape(1, 3, 3) / 10.0
    mat = affine_source_matrix(3, 3, math.pi / 2, 1.0, 0.0, 0.0)
    out = warp_images(img, mat[None])
    expect = np.array([[7, 4, 1], [8, 5, 2], [9, 6, 3]], dtype=float) / 10.0
    np.testing.assert_allclose(out[0], expect, rtol=0, atol=1e-9)


def test_integer_shift_moves_pixels():
    img = np.zeros((1, 5, 5))
    img[0, 2, 2] = 1.0
    out = warp_images(img, affine_source_matrix(5, 5, 0.0, 1.0, 1.0, -1.0)[None])
    assert out[0, 1, 3] == pytest.approx(1.0, abs=1e-12) and out.sum() == pytest.approx(1.0)


def test_augment_requires_image_layout():
    with pytest.raises(ContractError):
        augment(small_images().flat(), AugmentConfig())


def test_augment_config_validation():
    with pytest.raises(DomainError):
        AugmentConfig(scale_range=(1.1, 1.2))
    with pytest.raises(DomainError):
        AugmentConfig(copies_per_image=-1)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_augment_properties(copies, seed):
    data = small_images(8, seed % 100)
    a = augment(data, AugmentConfig(copies_per_image=copies, seed=seed))
    b = augment(data, AugmentConfig(copies_per_image=copies, seed=seed))
    assert np.array_equal(a.features, b.features)
    assert len(a) == 8 * (copies + 1)
    assert np.array_equal(np.bincount(a.labels), (copies + 1) * np.bincount(data.labels))
    assert a.features.min() >= 0.0 and a.features.max() <= 1.0
    assert np.array_equal(a.features[:8], data.features)


def test_augment_uses_per_sample_streams():
    data = small_images(6)
    full = augment(data, AugmentConfig(copies_per_image=1, seed=3))
    # sample i's copy depends only on (seed, i), not on the other samples
    part = augment(data.subset(slice(0, 3)), AugmentConfig(copies_per_image=1, seed=3))
    assert np.array_equal(full.features[6:9], part.features[3:6])


# -- synthetic sets --------------------------------------------------------

def test_synth_xor():
    d = synth_xor(400, 0.0, seed=1)
    assert len(np.unique(d.features, axis=0)) == 4
    assert np.all((d.labels == 1) == (np.sign(d.features[:, 0]) != np.sign(d.features[:, 1])))
    noisy = synth_xor(2000, 0.2, seed=2)
    assert np.bincount(noisy.labels).tolist() == [1000, 1000]
    with pytest.raises(DomainError):
        synth_xor(10, 0.1, 0)
    assert np.array_equal(synth_xor(8, 0.3, 5).features, synth_xor(8, 0.3, 5).features)


def test_synth_squares():
    d = synth_squares(20, seed=0)
    assert d.features.shape == (20, 1, 8, 8)
    assert np.bincount(d.labels).tolist() == [10, 10]
    for x, y in zip(d.features[:, 0], d.labels):
        rows, cols = np.nonzero(x)
        box = x[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
        assert box.shape[0] == box.shape[1]
        assert (box.all()) == (y == 0)


# -- split -----------------------------------------------------------------

def test_split_cases():
    d = Dataset(np.arange(10.0)[:, None], np.zeros(10, int), 2)
    tr, va = split(d, 0.5, seed=0)
    assert (len(tr), len(va)) == (5, 5)
    ids = np.concatenate([tr.features[:, 0], va.features[:, 0]])
    assert sorted(ids.tolist()) == list(range(10))
    assert set(tr.features[:, 0]).isdisjoint(va.features[:, 0])
    tr2, _ = split(d, 0.5, seed=0)
    assert np.array_equal(tr.features, tr2.features)
    assert len(split(d, 0.25, 1)[0]) == 8  # ceil(7.5)
    for f in (0.0, 1.0):
        with pytest.raises(DomainError):
            split(d, f, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 200), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_split_partition_law(n, f, seed):
    d = Dataset(np.arange(float(n))[:, None], np.zeros(n, int), 2)
    tr, va = split(d, f, seed)
    assert len(tr) == math.ceil(round(n * (1 - f), 9))
    assert sorted(np.concatenate([tr.features[:, 0], va.features[:, 0]]).tolist()) == list(range(n))


def test_dataset_label_domain():
    with pytest.raises(DomainError):
        Dataset(np.zeros((2, 1)), np.array([0, 2]), 2)


def test_xor_defeats_a_linear_head_on_average():
    from forward_thinking.shallow import ShallowNet, TrainConfig, accuracy_of, train_shallow
    accs = []
    for seed in range(10):
        d = synth_xor(2000, 0.2, seed)
        head, _ = train_shallow(ShallowNet.head_only(SeededRng(seed), 2, 2), d, d,
                                TrainConfig(learning_rate=0.05, epochs=50, batch_size=32))
        accs.append(accuracy_of(head, d))
    assert abs(np.mean(accs) - 0.5) <= 0.05
