import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oialr import checkpoint
from oialr.exceptions import ShapeError
from oialr.factorization import materialize
from oialr.linalg import orthogonal_component, qr_mixing
from oialr.metrics import (
    MEAN_ID,
    LayerBasis,
    SnapshotTracker,
    compare_snapshots,
    lagged_report,
    layer_basis,
    mixing_similarity,
    stability,
    take_snapshot,
)
from oialr.nn import DenseLayer, SequentialModel, build_mlp, convert_to_low_rank


def basis_of(w, layer_id="fc1"):
    return layer_basis(DenseLayer(layer_id, w, np.zeros(w.shape[0])))


def test_self_stability_is_one(rng):
    b = basis_of(rng.normal(size=(12, 5)))
    assert abs(stability(b, b) - 1.0) <= 1e-12


def test_negated_basis_is_minus_one():
    uv = np.eye(4, 2)
    b_i = LayerBasis("fc1", uv, np.eye(2), 2)
    b_j = LayerBasis("fc1", -uv, np.eye(2), 2)
    assert stability(b_i, b_j) == -1.0


def test_random_bases_match_trace_oracle(rng):
    qi, _ = np.linalg.qr(rng.normal(size=(64, 8)))
    qj, _ = np.linalg.qr(rng.normal(size=(64, 8)))
    b_i, b_j = LayerBasis("a", qi, np.eye(8), 8), LayerBasis("a", qj, np.eye(8), 8)
    trace = sum(qi[a, c] * qj[a, c] for a in range(64) for c in range(8))
    assert stability(b_i, b_j) == pytest.approx(trace / 8, abs=1e-12)
    assert abs(stability(b_i, b_j)) < 0.5


def test_rows_mode_divides_by_row_count(rng):
    b = basis_of(rng.normal(size=(12, 5)))
    assert stability(b, b, mode="rows") == pytest.approx(5 / 12, abs=1e-12)


def test_stability_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        stability(basis_of(rng.normal(size=(6, 3))), basis_of(rng.normal(size=(6, 2))))


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_stability_scale_invariant(rng, c):
    w = rng.normal(size=(10, 6))
    assert stability(basis_of(w), basis_of(c * w)) == pytest.approx(1.0, abs=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_stability_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = basis_of(rng.normal(size=(7, 4))), basis_of(rng.normal(size=(7, 4)))
    assert abs(stability(a, b) - stability(b, a)) <= 1e-12


def test_mixing_similarity_examples(rng):
    r = np.triu(rng.normal(size=(3, 3)))
    assert mixing_similarity(r, r, 9) == 1.0
    r_j = np.zeros((3, 3))
    r_j[1, 2] = 3.0
    assert mixing_similarity(np.zeros((3, 3)), r_j, 9) == 0.0


def test_mixing_similarity_loop_oracle(rng):
    r_i, r_j = np.triu(rng.normal(size=(4, 4))), np.triu(rng.normal(size=(4, 4)))
    acc = 0.0
    for a in range(4):
        for b in range(4):
            acc += (r_i[a, b] - r_j[a, b]) ** 2
    assert mixing_similarity(r_i, r_j, 40) == pytest.approx(1 - (acc / 40) ** 0.5, abs=1e-14)


def test_mixing_similarity_monotone(rng):
    r = np.triu(rng.normal(size=(4, 4)))
    d = np.triu(rng.normal(size=(4, 4)))
    vals = [mixing_similarity(r, r + t * d, 16) for t in np.linspace(0, 3, 7)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_mixing_similarity_shape_mismatch():
    with pytest.raises(ShapeError):
        mixing_similarity(np.eye(2), np.eye(3), 9)


def test_snapshot_identity_layer():
    snap = take_snapshot(SequentialModel([DenseLayer("fc1", np.eye(3), np.zeros(3))]), 0)
    (entry,) = snap.layers
    np.testing.assert_allclose(entry.uv, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(entry.r_mix, np.eye(3), atol=1e-15)


def test_low_rank_snapshot_matches_full_rank_path():
    model = build_mlp([7, 5, 9, 3], seed=1)
    full = take_snapshot(model, 0)
    convert_to_low_rank(model)
    low = take_snapshot(model, 0)
    for a, b in zip(full.layers, low.layers):
        np.testing.assert_allclose(b.uv, a.uv, atol=1e-8)
        assert a.uv.shape[0] >= a.uv.shape[1]
        lrw = model.layer(a.layer_id).low_rank
        m = materialize(lrw)
        m = m.T if m.shape[0] < m.shape[1] else m
        np.testing.assert_allclose(b.uv, orthogonal_component(m), atol=1e-8)
        np.testing.assert_allclose(b.r_mix, qr_mixing(m)[1], atol=1e-12)


def test_snapshot_of_checkpoint_is_bit_identical(tmp_path):
    model = build_mlp([6, 4, 3], seed=2)
    convert_to_low_rank(model, exclude_last=True)
    path = tmp_path / "m.ckpt"
    checkpoint.save_model(path, model)
    a = take_snapshot(model, 3)
    b = take_snapshot(checkpoint.load_model(path), 3)
    for x, y in zip(a.layers, b.layers):
        assert x.uv.tobytes() == y.uv.tobytes() and x.r_mix.tobytes() == y.r_mix.tobytes() and x.rank == y.rank


def test_lagged_report_short_history_is_empty():
    assert lagged_report([take_snapshot(build_mlp([3, 2]), 0)], lag=5) == []


def test_lagged_report_constant_model():
    model = build_mlp([5, 4, 3], seed=0)
    history = [take_snapshot(model, e) for e in range(4)]
    records = lagged_report(history, lag=1)
    assert len(records) == 3 * 3
    for r in records:
        assert r.stability == pytest.approx(1.0, abs=1e-12) and r.similarity == 1.0


def test_lagged_report_matches_pairwise_calls(rng):
    model = build_mlp([5, 4, 3], seed=0)
    history = []
    for e in range(3):
        history.append(take_snapshot(model, e))
        for l in model.dense_layers:
            l.weight = l.weight + 0.3 * rng.normal(size=l.weight.shape)
    records = lagged_report(history, lag=2)
    assert [(r.epoch_i, r.epoch_j, r.layer_id) for r in records] == [(2, 0, "fc1"), (2, 0, "fc2"), (2, 0, MEAN_ID)]
    per_layer = []
    for rec, (a, b) in zip(records, zip(history[2].layers, history[0].layers)):
        s = stability(a, b)
        d = mixing_similarity(a.r_mix, b.r_mix, a.uv.size)
        assert rec.stability == s and rec.similarity == d
        per_layer.append((s, d))
    assert records[-1].stability == pytest.approx(np.mean([p[0] for p in per_layer]), abs=1e-15)


def test_compare_across_ranks(rng):
    model = build_mlp([8, 6, 2], seed=3)
    convert_to_low_rank(model)
    before = take_snapshot(model, 0)
    layer = model.layer("fc1")
    lrw = layer.low_rank
    layer.low_rank = type(lrw)(lrw.u[:, :2], lrw.sigma[:2, :2], lrw.v[:, :2])
    after = take_snapshot(model, 1)
    rec = compare_snapshots(after, before)[0]
    # the two kept directions are identical, so normalizing by the smaller rank gives 1
    assert rec.stability == pytest.approx(1.0, abs=1e-10)


def test_tracker_eviction_and_loader():
    model = build_mlp([4, 3], seed=0)
    snaps = {e: take_snapshot(model, e) for e in range(12)}
    loaded = []

    def loader(epoch):
        loaded.append(epoch)
        return snaps.get(epoch)

    tracker = SnapshotTracker(lag=5, budget=3, loader=loader)
    assert tracker.budget == 5
    out = [tracker.add(snaps[e]) for e in range(12)]
    assert all(r == [] for r in out[:5]) and all(len(r) == 2 for r in out[5:])
    assert len(tracker) == 5
    assert loaded == []  # lag fits in the budget, so nothing was reloaded
    tracker2 = SnapshotTracker(lag=2, budget=1, loader=loader)
    tracker2.budget = 1
    for e in range(4):
        tracker2.add(snaps[e])
    assert loaded == [0, 1]
