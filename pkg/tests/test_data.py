import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtl import data
from qtl.classical import DenseLayer, OptimizerState, adam_step, cross_entropy_batch
from qtl.data import CSVParseError, DataError, Dataset, SyntheticSpec, gen_synthetic
from qtl.rng import Rng


def test_balanced_round_robin():
    ds = gen_synthetic(SyntheticSpec(n_samples=4, n_classes=2, dim=3))
    assert np.bincount(ds.labels).tolist() == [2, 2]


def test_same_seed_bit_exact():
    for kind in data.KINDS:
        spec = SyntheticSpec(kind=kind, n_samples=50, dim=4, n_classes=2, seed=11)
        a, b = gen_synthetic(spec), gen_synthetic(spec)
        if kind == "transfer_pair":
            for x, y in zip(a, b):
                assert np.array_equal(x.features, y.features)
        else:
            assert np.array_equal(a.features, b.features)
            assert np.array_equal(a.labels, b.labels)


def test_different_seed_differs():
    a = gen_synthetic(SyntheticSpec(seed=1))
    b = gen_synthetic(SyntheticSpec(seed=2))
    assert not np.array_equal(a.features, b.features)


def _fit_linear(ds, epochs=200, lr=0.05):
    layer = DenseLayer.init(Rng(0), ds.dim, ds.n_classes)
    state = OptimizerState(learning_rate=lr)
    for _ in range(epochs):
        logits = layer.forward(ds.features)
        _, grad = cross_entropy_batch(logits, ds.labels)
        _, grads = layer.backward(ds.features, grad / len(ds))
        adam_step(layer.params(), grads, state, lr)
    return np.mean(np.argmax(layer.forward(ds.features), axis=1) == ds.labels)


def test_wide_separation_is_linearly_separable():
    ds = gen_synthetic(SyntheticSpec(kind="blobs", class_separation=10, dim=4, n_samples=400))
    assert _fit_linear(ds) >= 0.95


def test_transfer_pair_shapes_and_shift():
    src, tgt = gen_synthetic(SyntheticSpec(kind="transfer_pair", n_samples=40, n_target=20, dim=6))
    assert src.dim == tgt.dim and src.n_classes == tgt.n_classes
    assert len(tgt) == 20
    assert not np.allclose(src.features[:20], tgt.features)


def test_transfer_pair_is_rotation_plus_shift():
    spec = SyntheticSpec(kind="transfer_pair", n_samples=30, dim=5, rotation_angle=0.7,
                         mean_shift=0.0)
    _, tgt = gen_synthetic(spec)
    # a pure rotation preserves row norms of the untransformed target draw
    raw = SyntheticSpec(kind="transfer_pair", n_samples=30, dim=5, rotation_angle=1e-300,
                        mean_shift=0.0)
    _, base = gen_synthetic(raw)
    assert np.allclose(np.linalg.norm(tgt.features, axis=1), np.linalg.norm(base.features, axis=1),
                       rtol=1e-12)


def test_plane_rotation_orthogonal():
    r = data.plane_rotation(7, 0.4)
    assert np.allclose(r @ r.T, np.eye(7), atol=1e-15)
    assert r[6, 6] == 1.0


@pytest.mark.parametrize("kw", [
    dict(n_samples=1, n_classes=2),
    dict(class_separation=0.0),
    dict(class_separation=-1.0),
    dict(kind="spiral"),
    dict(kind="transfer_pair", rotation_angle=0.0, mean_shift=0.0),
    dict(n_classes=1),
])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        gen_synthetic(SyntheticSpec(**kw))


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), [0], 2)
    with pytest.raises(DataError):
        Dataset([[np.nan, 0.0]], [0], 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 0)), [0, 1], 2)


def test_csv_two_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label\n0.5,1.0,0\n-1,2,1\n")
    ds = data.load_csv(p)
    assert ds.n_classes == 2 and len(ds) == 2 and ds.dim == 2


def test_csv_fractional_label_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,label\n0.5,0\n1.0,2.5\n")
    with pytest.raises(CSVParseError) as err:
        data.load_csv(p)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


@pytest.mark.parametrize("body,line", [
    ("f0,label\n0.5,0\nnan,1\n", 3),
    ("f0,label\ninf,0\n", 2),
    ("f0,label\n0.5,0,1\n", 2),
    ("f0,label\nabc,0\n", 2),
    ("f0,label\n0.5,-1\n", 2),
    ("x,label\n0.5,0\n", 1),
])
def test_csv_parse_errors(tmp_path, body, line):
    p = tmp_path / "d.csv"
    p.write_text(body)
    with pytest.raises(CSVParseError) as err:
        data.load_csv(p)
    assert err.value.line == line


def test_csv_missing_file(tmp_path):
    with pytest.raises(OSError):
        data.load_csv(tmp_path / "nope.csv")


def test_csv_round_trip(tmp_path):
    ds = gen_synthetic(SyntheticSpec(n_samples=60, dim=5, seed=3))
    p = tmp_path / "r.csv"
    data.save_csv(ds, p)
    back = data.load_csv(p)
    assert np.allclose(back.features, ds.features, rtol=1e-12, atol=0)
    assert np.array_equal(back.labels, ds.labels)
    assert b"\r" not in p.read_bytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12))
def test_csv_round_trip_property(vals):
    import tempfile, os
    x = np.array(vals).reshape(-1, 1)
    ds = Dataset(x, np.zeros(len(vals), dtype=int), 1)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "p.csv")
        data.save_csv(ds, path)
        back = data.load_csv(path)
    assert np.allclose(back.features, x, rtol=1e-12, atol=0)


def test_split_sizes_and_disjoint():
    ds = gen_synthetic(SyntheticSpec(n_samples=10, n_classes=2, dim=2))
    ds.features[:, 0] = np.arange(10)
    tr, te = data.split(ds, 0.8, seed=0)
    assert (len(tr), len(te)) == (8, 2)
    a, b = set(tr.features[:, 0]), set(te.features[:, 0])
    assert not a & b and a | b == set(range(10))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(8, 200), c=st.integers(2, 5), frac=st.floats(0.2, 0.9), seed=st.integers(0, 99))
def test_split_stratified(n, c, frac, seed):
    if n < c:
        return
    ds = Dataset(np.zeros((n, 1)), np.arange(n) % c, c)
    tr, te = data.split(ds, frac, seed)
    assert len(tr) == int(np.floor(n * frac))
    counts = np.bincount(ds.labels, minlength=c)
    tr_counts = np.bincount(tr.labels, minlength=c)
    assert np.all(np.abs(tr_counts - counts * len(tr) / n) <= 1)


def test_split_deterministic_and_errors():
    ds = gen_synthetic(SyntheticSpec(n_samples=40))
    a, b = data.split(ds, 0.8, 5), data.split(ds, 0.8, 5)
    assert np.array_equal(a[0].features, b[0].features)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(DataError):
            data.split(ds, bad, 0)
    with pytest.raises(DataError):
        data.split(Dataset(np.zeros((2, 1)), [0, 1], 2), 0.3, 0)


def test_split_does_not_mutate():
    ds = gen_synthetic(SyntheticSpec(n_samples=40))
    before = ds.features.copy()
    data.split(ds, 0.8, 1)
    assert np.array_equal(ds.features, before)


def test_batches():
    assert [b.size for b in data.batches(5, 2, 0, 0)] == [2, 2, 1]
    a, b = data.batches(100, 16, 3, 1), data.batches(100, 16, 3, 1)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    e1 = np.concatenate(data.batches(100, 100, 3, 1))
    e2 = np.concatenate(data.batches(100, 100, 3, 2))
    assert not np.array_equal(e1, e2)
    with pytest.raises(DataError):
        data.batches(5, 0, 0, 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), bs=st.integers(1, 40), seed=st.integers(0, 2**32), ep=st.integers(0, 60))
def test_batches_cover_each_index_once(n, bs, seed, ep):
    got = np.concatenate(data.batches(n, bs, seed, ep))
    assert np.array_equal(np.sort(got), np.arange(n))
