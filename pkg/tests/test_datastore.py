import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmhclust.clustering import ClusteringConfig, kmedoids
from dmhclust.datastore import (LESIONS, DatasetBundle, LabelVector, LesionFeatureSet,
                                SyntheticSpec, decode_matrix, encode_matrix, generate_synthetic,
                                load_dataset, save_dataset, split_by_patient)
from dmhclust.errors import DataError
from dmhclust.metrics import align_clusters_to_labels, classification_metrics


def _write_csv_dataset(tmp_path, rows_per_block=(6, 6, 6, 6), labels=True):
    lines = []
    for name, n in zip(LESIONS, rows_per_block):
        text = "id,f0,f1\n" + "".join(f"p{i},{i}.5,{-i}\n" for i in range(n))
        (tmp_path / f"{name}.csv").write_text(text)
        lines.append(f"block.{name} = {name}.csv")
    if labels:
        (tmp_path / "labels.csv").write_text("id,label\n" + "".join(f"p{i},{i % 2}\n" for i in range(6)))
        lines.append("labels = labels.csv")
    (tmp_path / "manifest.txt").write_text("format = csv\n" + "\n".join(lines) + "\n")
    return tmp_path / "manifest.txt"


def _random_bundle(seed=0, n=8, dims=(3, 3, 2, 4), with_labels=True):
    rng = np.random.default_rng(seed)
    ids = tuple(f"p{i}" for i in range(n))
    feats = LesionFeatureSet(tuple(rng.standard_normal((n, d)) for d in dims), ids)
    labels = LabelVector(rng.integers(0, 2, n), ids) if with_labels else None
    return DatasetBundle(feats, labels)


def test_load_hand_written_csv(tmp_path):
    bundle = load_dataset(_write_csv_dataset(tmp_path))
    assert bundle.n == 6
    assert bundle.features.dims == (2, 2, 2, 2)
    np.testing.assert_array_equal(bundle.features.block("edema")[:, 0], np.arange(6) + 0.5)
    np.testing.assert_array_equal(bundle.labels.labels, [0, 1, 0, 1, 0, 1])


def test_row_count_mismatch_names_block_3(tmp_path):
    with pytest.raises(DataError, match="block 3"):
        load_dataset(_write_csv_dataset(tmp_path, (6, 6, 5, 6)))


def test_non_finite_value_reports_position(tmp_path):
    manifest = _write_csv_dataset(tmp_path)
    path = tmp_path / "microaneurysm.csv"
    path.write_text(path.read_text().replace("2.5,", "nan,"))
    with pytest.raises(DataError, match="row 2, col 0"):
        load_dataset(manifest)


def test_bad_label_and_unknown_key(tmp_path):
    manifest = _write_csv_dataset(tmp_path)
    (tmp_path / "labels.csv").write_text("id,label\n" + "".join(f"p{i},2\n" for i in range(6)))
    with pytest.raises(DataError, match="label outside"):
        load_dataset(manifest)
    manifest.write_text(manifest.read_text() + "colour = blue\n")
    with pytest.raises(DataError, match="unknown manifest keys"):
        load_dataset(manifest)


def test_missing_file(tmp_path):
    manifest = _write_csv_dataset(tmp_path)
    (tmp_path / "edema.csv").unlink()
    with pytest.raises(DataError, match="missing"):
        load_dataset(manifest)


def test_binary_round_trip_exact(tmp_path):
    bundle = _random_bundle(n=8)
    loaded = load_dataset(save_dataset(bundle, tmp_path, "binary"))
    for a, b in zip(bundle.features.blocks, loaded.features.blocks):
        assert np.array_equal(a, b)
    assert loaded.ids == bundle.ids
    np.testing.assert_array_equal(loaded.labels.labels, bundle.labels.labels)


def test_save_load_save_is_byte_identical(tmp_path):
    bundle = _random_bundle(seed=3)
    first = save_dataset(bundle, tmp_path / "a", "binary")
    save_dataset(load_dataset(first), tmp_path / "b", "binary")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_csv_round_trip(tmp_path):
    bundle = _random_bundle(seed=1)
    loaded = load_dataset(save_dataset(bundle, tmp_path, "csv"))
    for a, b in zip(bundle.features.blocks, loaded.features.blocks):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    ids = ("a",)
    point_one = DatasetBundle(LesionFeatureSet(tuple(np.array([[0.1]]) for _ in range(4)), ids))
    again = load_dataset(save_dataset(point_one, tmp_path / "p", "csv"))
    assert abs(again.features[0][0, 0] - 0.1) <= 1e-12


def test_no_labels_means_no_label_entry(tmp_path):
    manifest = save_dataset(_random_bundle(with_labels=False), tmp_path)
    assert "labels" not in manifest.read_text()
    assert load_dataset(manifest).labels is None


def test_matrix_header_layout():
    data = encode_matrix(np.array([[1.0, 2.0, 3.0]]))
    assert data[:4] == b"DMHF"
    assert data[4:6] == (1).to_bytes(2, "little")
    assert data[6:10] == (1).to_bytes(4, "little") and data[10:14] == (3).to_bytes(4, "little")
    assert len(data) == 14 + 3 * 8
    np.testing.assert_array_equal(decode_matrix(data), [[1.0, 2.0, 3.0]])


def test_split_ten_patients_8_1_1():
    bundle = _random_bundle(n=10)
    train, val, test = split_by_patient(bundle, (0.8, 0.1, 0.1), seed=0)
    assert (train.n, val.n, test.n) == (8, 1, 1)


def test_split_single_patient_all_in_train():
    b = _random_bundle(n=5)
    same = DatasetBundle(LesionFeatureSet(b.features.blocks, ("x",) * 5),
                         LabelVector(b.labels.labels, ("x",) * 5))
    train, val, test = split_by_patient(same, (1.0, 0.0, 0.0), seed=7)
    assert train.n == 5 and val is None and test is None


def test_split_too_few_patients():
    b = _random_bundle(n=2)
    with pytest.raises(DataError, match="distinct patients"):
        split_by_patient(b, (0.6, 0.2, 0.2))


def test_split_seed_dependence():
    runs = [_random_bundle(seed=s, n=10) for s in range(20)]
    differs = 0
    for b in runs:
        a1 = [s.ids for s in split_by_patient(b, (0.8, 0.1, 0.1), seed=1)]
        a2 = [s.ids for s in split_by_patient(b, (0.8, 0.1, 0.1), seed=1)]
        assert a1 == a2
        differs += a1 != [s.ids for s in split_by_patient(b, (0.8, 0.1, 0.1), seed=2)]
    assert differs >= 1


@settings(max_examples=60, deadline=None)
@given(n_rows=st.integers(3, 40), n_patients=st.integers(3, 15), seed=st.integers(0, 2 ** 32 - 1),
       r=st.tuples(st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1)))
def test_split_is_a_disjoint_cover(n_rows, n_patients, seed, r):
    rng = np.random.default_rng(seed)
    ids = tuple(f"p{rng.integers(n_patients)}" for _ in range(n_rows))
    ratios = np.array(r) / sum(r)
    bundle = DatasetBundle(LesionFeatureSet(tuple(rng.standard_normal((n_rows, 2)) for _ in range(4)), ids))
    if len(set(ids)) < 3:
        with pytest.raises(DataError):
            split_by_patient(bundle, ratios, seed)
        return
    parts = split_by_patient(bundle, ratios, seed)
    seen = [set(p.ids) for p in parts]
    assert sum(p.n for p in parts) == n_rows
    assert not (seen[0] & seen[1] or seen[0] & seen[2] or seen[1] & seen[2])
    assert set().union(*seen) == set(ids)
    # rows keep their original relative order
    for p in parts:
        assert list(p.ids) == [i for i in ids if i in set(p.ids)]


def test_synthetic_shape_and_balance():
    b = generate_synthetic(SyntheticSpec(50, (3, 4, 5, 6), (1, 1, 1, 1), seed=9))
    assert b.n == 100 and b.features.dims == (3, 4, 5, 6)
    assert np.bincount(b.labels.labels).tolist() == [50, 50]
    again = generate_synthetic(SyntheticSpec(50, (3, 4, 5, 6), (1, 1, 1, 1), seed=9))
    assert all(np.array_equal(x, y) for x, y in zip(b.features.blocks, again.features.blocks))


def test_synthetic_zero_separation_is_symmetric():
    b = generate_synthetic(SyntheticSpec(2000, (2, 2, 2, 2), (0, 0, 0, 0), seed=4))
    y = b.labels.labels
    for X in b.features.blocks:
        gap = np.linalg.norm(X[y == 1].mean(axis=0) - X[y == 0].mean(axis=0))
        assert gap < 0.15  # ~ 5 standard errors for n=2000
        np.testing.assert_allclose(X.std(axis=0), 1.0, atol=0.05)


def test_synthetic_mean_norm_matches_separation():
    b = generate_synthetic(SyntheticSpec(5000, (4, 4, 4, 4), (0, 1, 3, 6), seed=2))
    y = b.labels.labels
    for X, sep in zip(b.features.blocks, (0, 1, 3, 6)):
        gap = np.linalg.norm(X[y == 1].mean(axis=0) - X[y == 0].mean(axis=0))
        assert abs(gap - sep) < 0.1


def test_synthetic_only_block_three_is_clusterable():
    for seed in range(10):
        b = generate_synthetic(SyntheticSpec(50, (8, 8, 8, 8), (0, 0, 10, 0), seed=seed))
        accs = []
        for X in (b.features[2], b.features[0]):
            assignment, _ = kmedoids(X, ClusteringConfig(seed=seed))
            accs.append(classification_metrics(align_clusters_to_labels(assignment, b.labels),
                                               b.labels).accuracy)
        assert accs[0] >= 0.99
        assert accs[1] <= 0.65


def test_spec_validation():
    with pytest.raises(DataError):
        SyntheticSpec(0)
    with pytest.raises(DataError):
        SyntheticSpec(5, (1, 2, 3), (0, 0, 0))
    with pytest.raises(DataError):
        SyntheticSpec(5, (1, 1, 1, 1), (0, -1, 0, 0))
