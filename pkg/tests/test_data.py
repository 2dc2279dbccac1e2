import numpy as np
import pytest

from hamvi.data import ConfigurationError, Dataset, load, read_binary, read_csv, write_binary, write_csv


def test_cached_moments():
    rng = np.random.default_rng(0)
    rows = rng.normal(3.0, 2.0, size=(1000, 4))
    data = Dataset(rows)
    assert np.allclose(data.mean, rows.mean(axis=0), atol=1e-12 * 1000)
    assert np.allclose(data.scatter, ((rows - rows.mean(axis=0)) ** 2).sum(axis=0))
    assert (data.n, data.dim) == (1000, 4)


def test_rows_are_copied_and_frozen():
    rows = np.ones((3, 2))
    data = Dataset(rows)
    rows[0, 0] = 5.0
    assert data.rows[0, 0] == 1.0
    with pytest.raises(ValueError):
        data.rows[0, 0] = 2.0


def test_one_dimensional_input_is_a_column():
    assert Dataset([1.0, 2.0, 3.0]).rows.shape == (3, 1)
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 2, 2)))


def test_csv_round_trip(tmp_path):
    data = Dataset(np.random.default_rng(1).normal(size=(7, 3)))
    write_csv(data, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,x2"
    back = read_csv(tmp_path / "d.csv")
    assert np.array_equal(back.rows, data.rows)
    assert load(tmp_path / "d.csv").checksum() == data.checksum()


def test_csv_without_header(tmp_path):
    (tmp_path / "d.csv").write_text("1,2\n3,4\n")
    assert np.array_equal(read_csv(tmp_path / "d.csv").rows, [[1, 2], [3, 4]])


def test_binary_layout(tmp_path):
    data = Dataset([[1.0, 2.0], [3.0, 4.5]])
    write_binary(data, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"HVID"
    assert int.from_bytes(raw[4:8], "little") == 2 and int.from_bytes(raw[8:12], "little") == 2
    assert np.frombuffer(raw[12:], "<f8").tolist() == [1.0, 2.0, 3.0, 4.5]
    assert np.array_equal(load(tmp_path / "d.bin").rows, data.rows)


def test_binary_errors(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ConfigurationError):
        read_binary(tmp_path / "bad.bin")
    write_binary(Dataset(np.ones((2, 2))), tmp_path / "t.bin")
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-8])
    with pytest.raises(ConfigurationError):
        read_binary(tmp_path / "t.bin")


def test_subset_and_checksum():
    data = Dataset(np.arange(12.0).reshape(6, 2))
    sub = data.subset([0, 2])
    assert np.array_equal(sub.rows, [[0, 1], [4, 5]])
    assert sub.checksum() != data.checksum()
    assert Dataset(np.arange(12.0).reshape(6, 2)).checksum() == data.checksum()
