import math

import numpy as np
import pytest

from mvpp import memorybank as mb
from mvpp import numerics as nx
from mvpp import xattn as xa
from mvpp.dataset import SynthConfig, TargetTransform, generate_synthetic, split, target_matrix
from mvpp.layers import Standardizer, bank_features, features_of
from mvpp.numerics import Matrix, UsageError

from conftest import make_record, random_records
from toys import xattn_toy

DIMS = (5, 6, 7)


def consts(params):
    return {k: Matrix(v, check=False) for k, v in params.items()}


def tiny_setup(seed=0, n=40):
    rng = np.random.default_rng(seed)
    recs = random_records(rng, n, dims=DIMS)
    bank = mb.build(recs)
    params = xa.init_params(DIMS, 8, 8, rng)
    model = xa.XAttnModel(nx.to_storage(params), Standardizer(5.0, 2.0), 8, 4)
    return rng, recs, bank, model


# ---------------------------------------------------------------- attention


def test_single_neighbor_returns_its_value():
    V = np.array([[0.3, -1.2, 2.0]])
    ctx = xa.cross_attention(np.ones((1, 4)), np.ones((1, 4)), V)
    assert np.allclose(ctx.data, V)


def test_identical_keys_average_values():
    V = np.array([[1.0, 0.0], [3.0, 4.0]])
    ctx = xa.cross_attention(np.array([[0.5, 1.0]]), np.array([[2.0, 1.0], [2.0, 1.0]]), V)
    assert np.allclose(ctx.data, [[2.0, 2.0]])


def test_scaled_logits_hand_case():
    q = np.array([[1.0, 1.0, 0.0, 0.0]])
    K = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])  # q.k1 = 2, q.k2 = 0
    _, w = xa.cross_attention(q, K, np.eye(2), return_weights=True)
    e = math.e
    assert w.data[0] == pytest.approx([e / (e + 1), 1 / (e + 1)], abs=1e-12)


def test_attention_weights_sum_to_one():
    rng, recs, bank, model = tiny_setup()
    nb = xa.neighbor_table(bank, recs[:10], 4, exclude_self=True)
    _, w = xa.forward(consts(model.params), features_of(recs[:10], DIMS), bank_features(bank),
                      rng.normal(size=len(bank)), nb, 8, return_weights=True)
    assert np.all(np.abs(w.data.sum(axis=1) - 1) < 1e-6)


# ---------------------------------------------------------------- encoders


def test_encode_target_zero_weights_gives_tanh_of_absence_sum():
    rng = np.random.default_rng(1)
    params = {k: np.zeros_like(v) for k, v in xa.init_params(DIMS, 8, 8, rng).items()}
    absent = [rng.normal(size=(1, 8)) for _ in range(3)]
    for j in range(3):
        params[f"absent{j}"] = absent[j]
    rec = make_record("x", visual=rng.normal(size=5))
    out = xa.encode_target(rec, params, DIMS)
    # visual projects to zero; the other two slots carry their absence vectors
    assert np.allclose(out, np.tanh(absent[1] + absent[2])[0], atol=1e-6)
    assert np.array_equal(out, xa.encode_target(rec, params, DIMS))


def test_encode_target_ignores_encoders_of_missing_modalities():
    rng = np.random.default_rng(2)
    params = xa.init_params(DIMS, 8, 8, rng)
    rec = make_record("x", textual=rng.normal(size=7))
    base = xa.encode_target(rec, params, DIMS)
    params["enc0.W"] = params["enc0.W"] * 5 + 1
    params["enc1.W"] = -params["enc1.W"]
    assert np.array_equal(base, xa.encode_target(rec, params, DIMS))
    params["absent0"] = params["absent0"] + 1
    assert not np.allclose(base, xa.encode_target(rec, params, DIMS))


def test_encode_target_needs_a_modality():
    params = xa.init_params(DIMS, 8, 8, np.random.default_rng(0))
    with pytest.raises(UsageError):
        xa.encode_target(make_record("x", playable=False), params, DIMS)


def test_encode_neighbors_shapes_duplicates_and_linearity():
    rng = np.random.default_rng(3)
    P = consts(xa.init_params(DIMS, 8, 8, rng))
    fused = Matrix(rng.normal(size=(1, 8)))
    K, V = xa.encode_neighbors(P, fused, np.array([0.7]), np.array([0.9]))
    assert K.shape == (1, 8) and V.shape == (1, 8)
    two = Matrix(np.vstack([fused.data, fused.data]))
    K2, V2 = xa.encode_neighbors(P, two, np.array([0.7, 0.7]), np.array([0.9, 0.9]))
    assert np.array_equal(K2.data[0], K2.data[1]) and np.array_equal(V2.data[0], V2.data[1])
    # doubling the target moves V by Wv applied to the delta on the target channel
    _, Vd = xa.encode_neighbors(P, fused, np.array([1.4]), np.array([0.9]))
    assert np.allclose(Vd.data - V.data, 0.7 * P["Wv"].data[8], atol=1e-12)
    with pytest.raises(UsageError):
        xa.encode_neighbors(P, Matrix(np.zeros((0, 8)), check=False), np.array([]), np.array([]))


# ---------------------------------------------------------------- prediction


def test_degenerate_net_passes_the_shared_target_through():
    rng = np.random.default_rng(4)
    recs = [make_record(f"b{i}", visual=rng.normal(size=5), acoustic=rng.normal(size=6),
                        textual=rng.normal(size=7), targets=(500, 1, 1, 1)) for i in range(6)]
    bank = mb.build(recs)
    d, h, c = 8, 4, 10.0
    params = xa.init_params(DIMS, d, h, rng)
    params["Wv"] = np.zeros((d + 2, d))
    params["Wv"][d, 0] = 1.0                     # value channel 0 = standardised neighbour target
    params["head1.W"] = np.zeros((d, h))
    params["head1.W"][0, 0] = 1.0
    params["head1.b"] = np.zeros((1, h))
    params["head1.b"][0, 0] = c                  # keep the relu in its linear region
    params["head2.W"] = np.zeros((h, 1))
    params["head2.W"][0, 0] = 1.0
    params["head2.b"] = np.array([[-c]])
    scaler = Standardizer(3.0, 1.5)
    model = xa.XAttnModel(params, scaler, d, 4)
    q = make_record("q", visual=rng.normal(size=5))
    assert xa.predict(q, bank, model, 0) == pytest.approx(math.log1p(500), abs=1e-5)


def test_predict_deterministic_and_leave_one_out():
    _, recs, bank, model = tiny_setup()
    a = xa.predict(recs[0], bank, model, 1)
    assert a == xa.predict(recs[0], bank, model, 1)
    res = mb.retrieve(bank, recs[0], 4, exclude_id=recs[0].video_id)
    assert recs[0].video_id not in res.ids
    loo = xa.predict(recs[0], bank, model, 1, exclude_id=recs[0].video_id)
    without = xa.predict(recs[0], mb.build(recs[1:]), model, 1)
    assert loo == pytest.approx(without, abs=1e-6)
    batch = xa.predict_batch(recs[:1], bank, model, 1, exclude_self=True).pred[0]
    assert loo == pytest.approx(batch, abs=1e-9)


def test_neighbor_order_does_not_matter():
    _, recs, bank, model = tiny_setup(seed=5)
    nb = xa.neighbor_table(bank, recs[:8], 4, exclude_self=True)
    perm = np.random.default_rng(0).permutation(4)
    shuffled = xa.NeighborSet(nb.idx[:, perm], nb.score[:, perm], nb.valid[:, perm])
    a = xa.predict_batch(recs[:8], bank, model, 2, nb=nb).pred
    b = xa.predict_batch(recs[:8], bank, model, 2, nb=shuffled).pred
    assert np.allclose(a, b, atol=1e-5)


def test_short_neighbor_lists_are_padded_not_attended():
    rng = np.random.default_rng(6)
    recs = random_records(rng, 3, dims=DIMS)
    bank = mb.build(recs)
    model = xa.XAttnModel(xa.init_params(DIMS, 8, 8, rng), Standardizer(0.0, 1.0), 8, 10)
    out = xa.predict_batch(recs, bank, model, 0, exclude_self=True)
    assert np.all(out.count == 2)
    assert np.all(np.isfinite(out.pred))


def test_gradient_check_on_toy_instance():
    assert nx.finite_diff_check(*xattn_toy()) < 1e-4


# ---------------------------------------------------------------- training


def quick_cfg(**kw):
    return xa.XAttnConfig(**{"d": 16, "h": 16, "k": 5, "epochs": 6, "batch_size": 32, "patience": 3, **kw})


def test_first_epoch_beats_initial_loss(small_world):
    data, sp = small_world
    bank = mb.build(sp.train)
    res = xa.train(sp.train, sp.val, bank, 0, quick_cfg(epochs=1))
    assert res.history[1]["train_loss"] < res.history[0]["train_loss"]


def test_training_is_deterministic(small_world):
    _, sp = small_world
    bank = mb.build(sp.train)
    a = xa.train(sp.train, sp.val, bank, 1, quick_cfg(epochs=3, seed=4))
    b = xa.train(sp.train, sp.val, bank, 1, quick_cfg(epochs=3, seed=4))
    assert a.model.params.keys() == b.model.params.keys()
    assert all(a.model.params[k].tobytes() == b.model.params[k].tobytes() for k in a.model.params)
    assert a.history == b.history


def test_early_stopping_returns_the_best_recorded_epoch(small_world):
    _, sp = small_world
    bank = mb.build(sp.train)
    res = xa.train(sp.train, sp.val, bank, 2, quick_cfg(epochs=10, patience=2, lr=2e-2))
    best = min(h["val_mse"] for h in res.history)
    assert res.history[res.best_epoch]["val_mse"] == best
    recomputed = xa.predict_batch(sp.val, bank, res.model, 2).pred
    y = TargetTransform().forward(target_matrix(sp.val)[:, 2])
    assert float(np.mean((recomputed - y) ** 2)) == pytest.approx(best, rel=1e-9)


def test_empty_validation_trains_fixed_epochs(small_world, caplog):
    _, sp = small_world
    bank = mb.build(sp.train)
    res = xa.train(sp.train, [], bank, 0, quick_cfg(epochs=2))
    assert len(res.history) == 3
    assert "empty validation" in caplog.text


def test_empty_training_set_rejected(small_world):
    _, sp = small_world
    with pytest.raises(UsageError):
        xa.train([], sp.val, mb.build(sp.train), 0)


@pytest.mark.slow
def test_noise_free_world_is_learned_almost_exactly():
    # 2-d per-video latent: 1200 training videos cover it densely enough for retrieval
    data = generate_synthetic(SynthConfig(n_videos=1500, n_authors=5, noise=0.0, seed=3, latent_dim=2,
                                          missing_frac=0.0))
    sp = split(data.records, 0.8, 3)
    bank = mb.build(sp.train)
    res = xa.train(sp.train, sp.val, bank, 0, xa.XAttnConfig(seed=1, epochs=80, patience=15))
    pred = xa.predict_batch(sp.val, bank, res.model, 0).pred
    y = np.log1p(target_matrix(sp.val)[:, 0])
    assert np.corrcoef(pred, y)[0, 1] >= 0.99
