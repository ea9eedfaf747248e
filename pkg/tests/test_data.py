import numpy as np
import pytest

from evosnn.data import DatasetError, SchemaError, load_csv, load_dataset, make_blobs, save_csv, split_indices


def test_blobs_shape_and_balance():
    ds = make_blobs(n=200)
    assert ds.inputs.shape == (200, 1, 8, 8) and ds.inputs.dtype == np.float32
    assert 0.0 <= ds.inputs.min() and ds.inputs.max() <= 1.0
    assert ds.num_classes == 2 and 60 < ds.labels.sum() < 140
    assert len(ds.train_idx) == 160 and len(ds.val_idx) == 40


def test_blobs_linearly_separable_by_intensity():
    ds = make_blobs(n=400)
    mass = ds.inputs.reshape(400, -1).sum(axis=1)
    thr = 0.5 * (mass[ds.labels == 0].max() + mass[ds.labels == 1].min())
    assert mass[ds.labels == 0].max() < mass[ds.labels == 1].min()
    assert ((mass > thr) == ds.labels.astype(bool)).all()


def test_blobs_deterministic():
    assert make_blobs(n=50).fingerprint() == make_blobs(n=50).fingerprint()
    assert make_blobs(n=50).fingerprint() != make_blobs(n=50, seed=8).fingerprint()


def test_split_disjoint_cover():
    tr, va = split_indices(37, seed=3)
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(37))
    assert len(va) == 7


def test_csv_roundtrip(tmp_path):
    ds = make_blobs(n=30, size=4)
    p = tmp_path / "d.csv"
    save_csv(ds, p)
    back = load_csv(p)
    assert np.array_equal(back.inputs, ds.inputs)
    assert np.array_equal(back.labels, ds.labels)


def test_csv_255_scale(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,a,b,c,d\n0,0,255,0,0\n1,255,255,0,51\n")
    ds = load_csv(p)
    assert ds.inputs[1, 0].ravel().tolist() == pytest.approx([1, 1, 0, 0.2])


@pytest.mark.parametrize(
    "text,match",
    [
        ("", "empty"),
        ("x,a\n0,1\n", "header"),
        ("label,a,b\n0,1,1\n", "square"),
        ("label,a\n", "no data"),
        ("label,a\n0,1\n1,1,1\n", "line 3"),
        ("label,a\n0,zz\n", "line 2"),
        ("label,a\n-1,0\n", "negative"),
        ("label,a\n0,300\n", "outside"),
    ],
)
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(DatasetError, match=match):
        load_csv(p)


def test_csv_label_out_of_range(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,a\n0,0\n3,0\n")
    with pytest.raises(SchemaError, match="line 3"):
        load_csv(p, num_classes=2)


def test_load_dataset_specs(tmp_path):
    assert len(load_dataset("blobs:40:3")) == 40
    assert load_dataset("blobs:40:3").fingerprint() == make_blobs(n=40, seed=3).fingerprint()
    with pytest.raises(DatasetError, match="no such file"):
        load_dataset(tmp_path / "missing.csv")
