import numpy as np
import pytest
from scipy.special import ndtr

from pmgp.datasets import (
    Dataset,
    GenerationError,
    IngestionError,
    Standardizer,
    draw_labels,
    emit_csv,
    generate_synthetic,
    ingest_csv,
)
from pmgp.kernels import Hyperparams


class TestGenerateSynthetic:
    def test_reference_regime(self):
        hyper = Hyperparams.from_values(2.08, [0.35])
        ds, f = generate_synthetic(50, 2, hyper, seed=1)
        assert ds.n == 50 and ds.d == 2
        assert np.all((ds.X >= 0) & (ds.X <= 1))
        assert f.shape == (50,)

    def test_exact_balance(self):
        hyper = Hyperparams.from_values(2.08, [0.35])
        for seed in range(5):
            ds, _ = generate_synthetic(30, 2, hyper, seed=seed)
            assert int(np.sum(ds.y > 0)) == 15

    def test_deterministic(self):
        hyper = Hyperparams.from_values(1.0, [0.5])
        a, fa = generate_synthetic(20, 3, hyper, seed=7)
        b, fb = generate_synthetic(20, 3, hyper, seed=7)
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(fa, fb)

    def test_odd_n_rejected(self):
        with pytest.raises(GenerationError):
            generate_synthetic(7, 1, Hyperparams.from_values(1.0, [1.0]))

    def test_label_rule_calibrated(self, rng):
        f = np.array([-1.5, -0.2, 0.0, 0.7, 2.0])
        counts = np.zeros(5)
        reps = 100_000
        for _ in range(reps):
            counts += draw_labels(f, rng) > 0
        freq = counts / reps
        expected = ndtr(f)
        se = np.sqrt(expected * (1 - expected) / reps)
        assert np.all(np.abs(freq - expected) < 4 * se + 1e-9)

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset(X=np.zeros((2, 1)), y=np.array([1.0, 0.5]))
        with pytest.raises(ValueError):
            Dataset(X=np.zeros((2, 1)), y=np.array([1.0]))


class TestIngest:
    def _write(self, tmp_path, text, name="data.csv"):
        p = tmp_path / name
        p.write_text(text)
        return p

    def test_round_trip_lossless(self, tmp_path, rng):
        hyper = Hyperparams.from_values(1.3, [0.4])
        ds, _ = generate_synthetic(12, 2, hyper, seed=3)
        path = tmp_path / "ds.csv"
        emit_csv(ds, path)
        back, _ = ingest_csv(path)
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.y, ds.y)

    def test_standardization(self, tmp_path):
        p = self._write(tmp_path, "x1,x2,y\n1.0,10.0,1\n3.0,30.0,-1\n")
        ds, std = ingest_csv(p, standardize=True)
        assert np.allclose(ds.X.mean(axis=0), 0.0, atol=1e-15)
        assert np.allclose(ds.X.std(axis=0), 1.0, atol=1e-15)
        assert std is not None

    def test_standardizer_reuse_on_test_data(self, tmp_path):
        p_train = self._write(tmp_path, "x1,y\n0.0,1\n2.0,-1\n", "train.csv")
        p_test = self._write(tmp_path, "x1,y\n1.0,1\n3.0,-1\n", "test.csv")
        _, std = ingest_csv(p_train, standardize=True)
        test, _ = ingest_csv(p_test, standardize=True, standardizer=std)
        # Shifted by the training mean (1.0) and scale (1.0).
        assert np.allclose(test.X[:, 0], [0.0, 2.0])

    def test_standardizer_json_round_trip(self, tmp_path):
        p = self._write(tmp_path, "x1,x2,y\n1.0,4.0,1\n2.0,8.0,-1\n")
        _, std = ingest_csv(p, standardize=True)
        clone = Standardizer.from_dict(std.to_dict())
        X = np.array([[5.0, 6.0]])
        assert np.array_equal(std.transform(X), clone.transform(X))

    def test_constant_column_warns_and_zeroes(self, tmp_path):
        p = self._write(tmp_path, "x1,x2,y\n2.0,1.0,1\n2.0,3.0,-1\n")
        with pytest.warns(UserWarning):
            ds, _ = ingest_csv(p, standardize=True)
        assert np.all(ds.X[:, 0] == 0.0)

    def test_non_numeric_cell_location(self, tmp_path):
        p = self._write(tmp_path, "x1,y\n1.0,1\nfoo,-1\n")
        with pytest.raises(IngestionError, match=r":3: .*'foo'.*'x1'"):
            ingest_csv(p)

    def test_missing_label_column(self, tmp_path):
        p = self._write(tmp_path, "x1,x2\n1.0,2.0\n")
        with pytest.raises(IngestionError, match="label"):
            ingest_csv(p)

    def test_three_classes_rejected(self, tmp_path):
        p = self._write(tmp_path, "x1,y\n1.0,1\n2.0,-1\n3.0,0\n")
        with pytest.raises(IngestionError, match="two classes"):
            ingest_csv(p)

    def test_zero_one_labels_mapped(self, tmp_path):
        p = self._write(tmp_path, "x1,y\n1.0,1\n2.0,0\n")
        ds, _ = ingest_csv(p)
        assert set(ds.y) == {-1.0, 1.0}
        assert ds.y[1] == -1.0

    def test_string_labels_mapped_sorted(self, tmp_path):
        p = self._write(tmp_path, "x1,y\n1.0,M\n2.0,F\n")
        ds, _ = ingest_csv(p)
        assert ds.y[0] == 1.0  # 'M' sorts after 'F'
        assert ds.y[1] == -1.0

    def test_row_filter(self, tmp_path):
        p = self._write(tmp_path, "x1,x2,y\n1.0,5.0,1\n2.0,1.0,-1\n3.0,6.0,-1\n")
        ds, _ = ingest_csv(p, row_filter="x2 >= 5")
        assert ds.n == 2
        assert np.array_equal(ds.X[:, 0], [1.0, 3.0])
        assert np.array_equal(ds.y, [1.0, -1.0])

    def test_ragged_row_rejected(self, tmp_path):
        p = self._write(tmp_path, "x1,x2,y\n1.0,2.0,1\n3.0,1\n")
        with pytest.raises(IngestionError, match=":3"):
            ingest_csv(p)

    def test_empty_file(self, tmp_path):
        p = self._write(tmp_path, "")
        with pytest.raises(IngestionError, match="empty"):
            ingest_csv(p)
