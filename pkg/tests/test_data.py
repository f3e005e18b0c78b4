import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvforge import data as D

from malformed_cases import CASES


def parse(kind, text):
    return D.parse_libsvm(text, source="fx") if kind == "libsvm" else D.parse_csv(text, source="fx")


class TestLibsvm:
    def test_sparse_row(self):
        ds = D.parse_libsvm("+1 1:0.5 3:2.0\n")
        assert ds.labels.tolist() == [1]
        np.testing.assert_array_equal(ds.features, [[0.5, 0.0, 2.0]])

    def test_negative_label_maps_to_zero(self):
        ds = D.parse_libsvm("-1 2:1\n")
        assert ds.labels.tolist() == [0]
        np.testing.assert_array_equal(ds.features, [[0.0, 1.0]])

    def test_multiclass_labels_kept(self):
        ds = D.parse_libsvm("0 1:1\n3 1:2\n1 1:3\n")
        assert ds.labels.tolist() == [0, 3, 1] and ds.num_classes == 4

    def test_comments_and_blank_lines(self):
        ds = D.parse_libsvm("# header\n\n1 1:1 # trailing\n-1 1:2\n")
        assert len(ds) == 2

    def test_declared_width(self):
        assert D.parse_libsvm("1 2:1\n", num_features=5).dim == 5

    def test_empty_input(self):
        with pytest.raises(D.EmptyError):
            D.parse_libsvm("# nothing\n\n")

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 10)) * (rng.random((50, 10)) < 0.6)
        y = rng.integers(0, 2, 50)
        buf = io.StringIO()
        D.emit_libsvm(X, y, buf)
        back = D.parse_libsvm(buf.getvalue(), num_features=10)
        np.testing.assert_array_equal(back.features, X)
        np.testing.assert_array_equal(back.labels, y)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=3),
                    min_size=1, max_size=8))
    def test_round_trip_is_bit_exact(self, rows):
        X = np.array(rows)
        y = np.arange(len(rows)) % 3
        buf = io.StringIO()
        D.emit_libsvm(X, y, buf)
        back = D.parse_libsvm(buf.getvalue(), num_features=3)
        assert back.features.tobytes() == (X + 0.0).tobytes()


class TestMalformed:
    @pytest.mark.parametrize("case,kind,text,line", CASES, ids=[c[0] for c in CASES])
    def test_line_numbered_error(self, case, kind, text, line):
        with pytest.raises(D.FormatError) as info:
            parse(kind, text)
        assert info.value.line == line
        assert str(info.value).startswith(f"fx:{line}:")

    def test_suite_size(self):
        assert len(CASES) == 12


class TestCsv:
    def test_parse(self):
        ds = D.parse_csv("x,label,z\n1.5,1,2\n0,0,3\n")
        np.testing.assert_array_equal(ds.features, [[1.5, 2.0], [0.0, 3.0]])
        assert ds.labels.tolist() == [1, 0]

    def test_missing_label_column(self):
        with pytest.raises(D.FormatError):
            D.parse_csv("a,b\n1,2\n")


class TestEmbeddings:
    def test_round_trip_fixture(self, tmp_path):
        X = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
        y = np.array([0, 9, 3])
        D.write_embeddings(tmp_path / "e.emb", X, y)
        ds = D.load_embeddings(tmp_path / "e.emb")
        np.testing.assert_array_equal(ds.features, X.astype(np.float64))
        assert ds.labels.tolist() == [0, 9, 3] and ds.num_classes == 10

    def test_zero_records(self, tmp_path):
        (tmp_path / "e.emb").write_bytes(D.EMB_MAGIC + struct.pack("<II", 0, 4))
        with pytest.raises(D.EmptyError):
            D.load_embeddings(tmp_path / "e.emb")

    def test_header_only(self, tmp_path):
        (tmp_path / "e.emb").write_bytes(D.EMB_MAGIC + struct.pack("<II", 3, 4))
        with pytest.raises(D.TruncatedError, match=str(len(D.EMB_MAGIC) + 8 + 48 + 6)):
            D.load_embeddings(tmp_path / "e.emb")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "e.emb").write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(D.FormatError):
            D.load_embeddings(tmp_path / "e.emb")


def labelled(n=1000, k=2, seed=0):
    rng = np.random.default_rng(seed)
    ds = D.Dataset(rng.normal(size=(n, 3)), rng.integers(0, k, n), k)
    return D.split(ds, (n, 0, 0), seed)


class TestNoise:
    def test_rate_zero(self):
        ds = labelled()
        out = D.inject_noise(ds, D.NoiseSpec(0.0))
        np.testing.assert_array_equal(out.labels, ds.labels)
        assert not out.noise_mask.any()

    def test_circular_shift_wraps(self):
        ds = D.Dataset(np.zeros((2, 1)), [9, 9], 10, np.array([D.TRAIN, D.TRAIN]))
        out = D.inject_noise(ds, D.NoiseSpec(0.5, "circular_shift"))
        assert sorted(out.labels.tolist()) == [0, 9]

    @pytest.mark.parametrize("kind,k", [("binary_flip", 2), ("circular_shift", 5)])
    def test_exact_count_all_changed(self, kind, k):
        ds = labelled(k=k)
        out = D.inject_noise(ds, D.NoiseSpec(0.3, kind, seed=4))
        assert out.noise_mask.sum() == 300
        changed = out.labels != ds.labels
        np.testing.assert_array_equal(changed, out.noise_mask)

    def test_only_train_rows_touched(self):
        ds = D.split(labelled(), (500, 300, 200), 1)
        out = D.inject_noise(ds, D.NoiseSpec(0.5, seed=2))
        assert not out.noise_mask[ds.split != D.TRAIN].any()
        assert out.noise_mask.sum() == 250

    def test_binary_flip_needs_binary(self):
        with pytest.raises(D.DataError):
            D.inject_noise(labelled(k=3), D.NoiseSpec(0.1))

    def test_rate_bounds(self):
        with pytest.raises(ValueError):
            D.NoiseSpec(1.0)


class TestBinarize:
    def test_ten_to_two(self):
        ds = labelled(k=10)
        out = D.binarize(ds, 1)
        assert set(out.labels.tolist()) <= {0, 1} and out.num_classes == 2
        assert out.labels.sum() == np.sum(ds.labels == 1)

    def test_binary_identity(self):
        ds = labelled()
        np.testing.assert_array_equal(D.binarize(ds, 1).labels, ds.labels)

    def test_histogram(self):
        ds = labelled(k=4, seed=3)
        out = D.binarize(ds, 2)
        pos = int(np.sum(ds.labels == 2))
        assert np.bincount(out.labels).tolist() == [len(ds) - pos, pos]


class TestSplit:
    def test_all_train(self):
        ds = D.split(labelled(100), (100, 0, 0), 0)
        assert ds.split_counts() == {"train": 100, "validation": 0, "test": 0}

    def test_seeded(self):
        ds = labelled(100)
        np.testing.assert_array_equal(D.split(ds, (50, 30, 20), 7).split, D.split(ds, (50, 30, 20), 7).split)

    def test_disjoint_and_sized(self):
        ds = D.split(labelled(100), (50, 30, 15), 2)
        parts = [set(ds.indices(p).tolist()) for p in (D.TRAIN, D.VALIDATION, D.TEST)]
        assert [len(p) for p in parts] == [50, 30, 15]
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])

    def test_oversized(self):
        with pytest.raises(D.DataError):
            D.split(labelled(10), (8, 2, 1), 0)


class TestStandardizeAndStorage:
    def test_train_statistics(self):
        ds = D.synthetic_task((200, 50, 50), dim=4, seed=1)
        X, _ = D.standardize(ds).train
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-12)

    def test_save_load(self, tmp_path):
        ds = D.inject_noise(D.synthetic_task((40, 10, 10), dim=3, seed=2), D.NoiseSpec(0.2, seed=1))
        manifest = D.save_dataset(ds, tmp_path / "d")
        back = D.load_dataset(tmp_path / "d")
        assert back.checksums() == manifest["checksums"]
        np.testing.assert_array_equal(back.noise_mask, ds.noise_mask)

    def test_checksum_mismatch_detected(self, tmp_path):
        ds = D.synthetic_task((40, 10, 10), dim=3, seed=2)
        D.save_dataset(ds, tmp_path / "d")
        with np.load(tmp_path / "d" / "dataset.npz") as z:
            arrays = dict(z)
        arrays["labels"] = 1 - arrays["labels"]
        np.savez(tmp_path / "d" / "dataset.npz", **arrays)
        with pytest.raises(D.DataError):
            D.load_dataset(tmp_path / "d")

    def test_synthetic_means(self):
        ds = D.two_gaussians(20_000, dim=20, separation=1.5, seed=0)
        mu = ds.features[ds.labels == 1].mean(axis=0)
        assert np.linalg.norm(mu) == pytest.approx(1.5, abs=0.05)
