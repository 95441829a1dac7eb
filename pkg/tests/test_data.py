import numpy as np
import pytest

from qsvrg.data import (
    DataFormatError,
    binarize_one_vs_all,
    dataset_hash,
    load_mnist,
    load_mnist_idx,
    load_power_csv,
    load_snapshot,
    partition,
    read_idx,
    save_snapshot,
    synthesize,
    unit_rows,
    write_idx,
)

POWER_HEADER = (
    "Date;Time;Global_active_power;Global_reactive_power;Voltage;"
    "Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3\n"
)


def write_power(path, rows):
    path.write_text(POWER_HEADER + "".join(r + "\n" for r in rows))
    return path


def power_rows(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        v = rng.uniform(0.1, 5, 7)
        out.append(f"16/12/2006;{i % 24:02d}:{i % 60:02d}:00;" + ";".join(f"{x:.3f}" for x in v))
    return out


def test_power_csv_shape_labels_and_skips(tmp_path):
    rows = power_rows(40)
    rows[3] = "16/12/2006;17:28:00;?;?;?;?;?;?;"
    rows[7] = "garbage"
    ds = load_power_csv(write_power(tmp_path / "p.txt", rows))
    assert ds.dim == 9
    assert ds.n_samples == 38
    assert ds.meta["skipped_rows"] == 2
    assert set(np.unique(ds.labels)) == {-1.0, 1.0}
    assert abs(ds.labels.sum()) <= 1
    np.testing.assert_allclose(ds.features[:, -1], 1.0)
    np.testing.assert_allclose(ds.features[:, :-1].mean(axis=0), 0.0, atol=1e-12)


def test_power_normalization_is_invertible(tmp_path):
    rows = power_rows(20, seed=1)
    ds = load_power_csv(write_power(tmp_path / "p.txt", rows))
    raw_voltage = float(rows[0].split(";")[4])
    m, s = ds.meta["norm_mean"][1], ds.meta["norm_scale"][1]
    assert ds.features[0, 1] * s + m == pytest.approx(raw_voltage)


def test_power_subsample_is_seeded(tmp_path):
    path = write_power(tmp_path / "p.txt", power_rows(100))
    a = load_power_csv(path, subsample=30, seed=5)
    b = load_power_csv(path, subsample=30, seed=5)
    assert a.n_samples == 30
    assert dataset_hash(a) == dataset_hash(b)


def test_power_all_missing_is_an_error(tmp_path):
    path = write_power(tmp_path / "p.txt", ["16/12/2006;17:28:00;?;?;?;?;?;?;?"] * 3)
    with pytest.raises(ValueError, match="no usable rows"):
        load_power_csv(path)


def test_power_unreadable(tmp_path):
    with pytest.raises(DataFormatError):
        load_power_csv(tmp_path / "missing.txt")


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (5, 28, 28), dtype=np.uint8)
    labs = np.array([9, 0, 3, 9, 1], dtype=np.uint8)
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", labs)
    X, y = load_mnist_idx(tmp_path / "i", tmp_path / "l")
    assert X.shape == (5, 784)
    assert X.min() >= 0 and X.max() <= 1
    np.testing.assert_array_equal(np.round(X * 255).astype(np.uint8).reshape(5, 28, 28), imgs)
    np.testing.assert_array_equal(y, labs)
    write_idx(tmp_path / "i2", read_idx(tmp_path / "i"))
    assert (tmp_path / "i2").read_bytes() == (tmp_path / "i").read_bytes()


def test_idx_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x00\x00\x08\x04" + b"\x00" * 12)
    with pytest.raises(DataFormatError):
        read_idx(tmp_path / "bad")
    write_idx(tmp_path / "i", np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx(tmp_path / "l", np.zeros(4, dtype=np.uint8))
    with pytest.raises(DataFormatError):
        load_mnist_idx(tmp_path / "i", tmp_path / "l")
    raw = (tmp_path / "l").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(DataFormatError):
        read_idx(tmp_path / "short")


def test_mnist_unit_rows(tmp_path):
    imgs = np.zeros((2, 2, 2), dtype=np.uint8)
    imgs[0, 0, 0] = 255
    imgs[0, 1, 1] = 255
    write_idx(tmp_path / "train-images-idx3-ubyte", imgs)
    write_idx(tmp_path / "train-labels-idx1-ubyte", np.array([1, 2], dtype=np.uint8))
    X, _ = load_mnist(tmp_path, normalize="unit")
    assert np.linalg.norm(X[0]) == pytest.approx(1.0)
    np.testing.assert_array_equal(X[1], 0.0)
    with pytest.raises(ValueError):
        load_mnist(tmp_path, normalize="l1")
    np.testing.assert_allclose(unit_rows(np.array([[3.0, 4.0]])), [[0.6, 0.8]])


def test_binarize():
    np.testing.assert_array_equal(binarize_one_vs_all([1, 2, 3], 9), [-1, -1, -1])
    np.testing.assert_array_equal(binarize_one_vs_all([9, 2, 9], 9), [1, -1, 1])


@pytest.mark.parametrize("policy", ["contiguous", "round_robin"])
@pytest.mark.parametrize("n, k", [(10, 3), (7, 7), (100, 1)])
def test_partition_disjoint_cover(policy, n, k):
    shards = partition(n, k, policy, seed=2)
    assert len(shards) == k
    allidx = np.concatenate(shards)
    assert sorted(allidx.tolist()) == list(range(n))
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1


def test_partition_errors():
    with pytest.raises(ValueError):
        partition(3, 0)
    with pytest.raises(ValueError):
        partition(3, 4)
    with pytest.raises(ValueError):
        partition(3, 2, "random")


def test_synthesize_deterministic():
    a, wa = synthesize(50, 4, seed=3)
    b, wb = synthesize(50, 4, seed=3)
    assert dataset_hash(a) == dataset_hash(b)
    np.testing.assert_array_equal(wa, wb)
    assert np.linalg.norm(wa) == pytest.approx(1.0)


def test_snapshot_round_trip_and_determinism(tmp_path):
    ds, _ = synthesize(20, 3, seed=1)
    h1 = save_snapshot(ds, tmp_path / "a.snap")
    h2 = save_snapshot(ds, tmp_path / "b.snap")
    assert h1 == h2
    assert (tmp_path / "a.snap").read_bytes() == (tmp_path / "b.snap").read_bytes()
    back = load_snapshot(tmp_path / "a.snap")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_snapshot_corruption_detected(tmp_path):
    ds, _ = synthesize(20, 3, seed=1)
    save_snapshot(ds, tmp_path / "a.snap")
    raw = bytearray((tmp_path / "a.snap").read_bytes())
    raw[-20] ^= 0xFF
    (tmp_path / "a.snap").write_bytes(bytes(raw))
    with pytest.raises(DataFormatError):
        load_snapshot(tmp_path / "a.snap")
    (tmp_path / "b.snap").write_bytes(b"NOTASNAP")
    with pytest.raises(DataFormatError):
        load_snapshot(tmp_path / "b.snap")
