import numpy as np
import pytest

from mvpp import completion as cp
from mvpp import numerics as nx
from mvpp.dataset import SynthConfig, TargetTransform, generate_synthetic, split, target_matrix
from mvpp.layers import Features, Standardizer, batches, dense, features_of, mlp_head
from mvpp.numerics import Matrix, UsageError

from conftest import make_record, random_records
from toys import completion_toy

DIMS = (5, 6, 7)


def consts(params):
    return {k: Matrix(v, check=False) for k, v in params.items()}


def plcc(a, b):
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------- masking


def test_mask_p0_leaves_record_alone():
    rec = make_record("x", visual=[1.0], acoustic=[2.0], textual=[3.0])
    out, pat = cp.mask_modalities(rec, 0.0, np.random.default_rng(0))
    assert pat.masked == (False, False, False)
    assert out == rec


def test_mask_p1_keeps_exactly_one():
    rng = np.random.default_rng(1)
    rec = make_record("x", visual=[1.0], acoustic=[2.0], textual=[3.0])
    for _ in range(50):
        out, pat = cp.mask_modalities(rec, 1.0, rng)
        assert sum(not m for m in pat.masked) == 1
        assert len(out.available()) == 1


def test_missing_modalities_count_as_masked():
    rec = make_record("x", acoustic=[2.0])
    _, pat = cp.mask_modalities(rec, 0.0, np.random.default_rng(0))
    assert pat.masked == (True, False, True)
    assert pat.visible == ("acoustic",)


def test_mask_is_seed_reproducible():
    avail = np.random.default_rng(0).random((200, 3)) < 0.8
    avail[~avail.any(axis=1), 0] = True
    a = cp.draw_masks(avail, 0.4, np.random.default_rng(11))
    b = cp.draw_masks(avail, 0.4, np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_never_all_masked_over_many_draws():
    rng = np.random.default_rng(2)
    avail = rng.random((100_000, 3)) < 0.7
    avail[~avail.any(axis=1), 2] = True
    hidden = cp.draw_masks(avail, 1.0, rng)
    visible = ~hidden
    assert visible.any(axis=1).all()
    assert (visible.sum(axis=1) == 1).all()
    assert not (visible & ~avail).any()
    # the surviving modality is uniform among the available ones
    full = avail.all(axis=1)
    share = visible[full].mean(axis=0)
    assert np.all(np.abs(share - 1 / 3) < 0.01)


def test_mask_pattern_rejects_all_masked():
    with pytest.raises(ValueError):
        cp.MaskPattern((True, True, True))
    with pytest.raises(ValueError):
        cp.draw_masks(np.ones((1, 3), bool), 1.5, np.random.default_rng(0))


# ---------------------------------------------------------------- encoder / decoder


def test_symmetric_encoders_collapse_to_one_slot():
    rng = np.random.default_rng(3)
    dims = (4, 4, 4)
    params = cp.init_params(dims, 8, 8, rng)
    for j in (1, 2):
        params[f"enc{j}.W"], params[f"enc{j}.b"] = params["enc0.W"], params["enc0.b"]
    x = rng.normal(size=4)
    feats = features_of([make_record("x", visual=x, acoustic=x, textual=x)], dims, dtype=np.float64)
    P = consts(params)
    fused = cp.encode_incomplete(P, feats)
    single = Features((feats.X[0],) * 3, feats.avail)
    one = dense(Matrix(single.X[0]), P, "enc0")
    assert np.allclose(fused.data, np.tanh(dense(one, P, "fuse").data), atol=1e-12)


def test_single_visible_modality_uses_one_encoder_and_two_tokens():
    rng = np.random.default_rng(4)
    params = cp.init_params(DIMS, 8, 8, rng)
    rec = random_records(rng, 1, dims=DIMS)[0]
    feats = features_of([rec], DIMS).masked(np.array([[True, False, True]]))
    base = cp.encode_incomplete(consts(params), feats).data
    changed = dict(params)
    changed["enc0.W"] = params["enc0.W"] + 1
    changed["enc2.b"] = params["enc2.b"] - 1
    assert np.array_equal(base, cp.encode_incomplete(consts(changed), feats).data)
    changed["mask0"] = params["mask0"] + 0.5
    assert not np.allclose(base, cp.encode_incomplete(consts(changed), feats).data)


def test_zero_decoders_reconstruct_zero_and_empty_mask_costs_nothing():
    rng = np.random.default_rng(5)
    params = cp.init_params(DIMS, 8, 8, rng)
    for j in range(3):
        params[f"dec{j}.W"] = np.zeros_like(params[f"dec{j}.W"])
    recs = random_records(rng, 4, dims=DIMS)
    feats = features_of(recs, DIMS)
    P = consts(params)
    outs = cp.reconstruct(cp.encode_incomplete(P, feats), P)
    assert all(not o.data.any() for o in outs)
    loss, n = cp.reconstruction_loss(outs, feats, np.zeros((4, 3), bool))
    assert loss.item() == 0.0 and n == 0


def test_reconstruction_counts_only_hidden_present_pairs():
    rng = np.random.default_rng(6)
    recs = random_records(rng, 4, dims=DIMS, p_missing=0.0)
    recs[0] = recs[0].without("visual")
    feats = features_of(recs, DIMS)
    hidden = np.array([[True, True, False], [True, False, False], [False, False, False], [False, True, True]])
    P = consts(cp.init_params(DIMS, 8, 8, rng))
    _, n = cp.reconstruction_loss(cp.reconstruct(cp.encode_incomplete(P, feats.masked(hidden)), P), feats, hidden)
    assert n == 4  # row 0's visual is missing, so it has no ground truth


def test_gradient_check_on_toy_instance():
    assert nx.finite_diff_check(*completion_toy()) < 1e-4


def test_predict_from_incomplete_deterministic_and_guarded():
    rng = np.random.default_rng(7)
    model = cp.CompletionModel(cp.init_params(DIMS, 8, 8, rng), Standardizer(1.0, 2.0), 8)
    rec = random_records(rng, 1, dims=DIMS)[0]
    pat = cp.MaskPattern((False, True, True))
    assert cp.predict_from_incomplete(rec, pat, model, DIMS) == cp.predict_from_incomplete(rec, pat, model, DIMS)
    with pytest.raises(UsageError):
        cp.predict_from_incomplete(rec.without("visual"), pat, model, DIMS)


# ---------------------------------------------------------------- training


def quick_cfg(**kw):
    return cp.CompletionConfig(**{"d": 16, "h": 16, "epochs": 6, "batch_size": 32, "patience": 3, **kw})


def test_supervised_only_loss_decreases(small_world):
    _, sp = small_world
    res = cp.train_semisupervised(sp.train, [], sp.val, 0, (16, 16, 16), quick_cfg(lam=0.0, epochs=3))
    sups = [h["sup"] for h in res.history]
    assert sups[1] < sups[0]
    assert all(h["recon"] == 0.0 for h in res.history)


def test_same_seed_same_model(small_world):
    data, sp = small_world
    cfg = quick_cfg(epochs=2, seed=3)
    a = cp.train_semisupervised(sp.train, data.unlabeled, sp.val, 1, data.dims, cfg)
    b = cp.train_semisupervised(sp.train, data.unlabeled, sp.val, 1, data.dims, cfg)
    assert all(a.model.params[k].tobytes() == b.model.params[k].tobytes() for k in a.model.params)
    assert a.history == b.history


def test_lambda_zero_ignores_the_unlabeled_pool(small_world):
    data, sp = small_world
    cfg = quick_cfg(epochs=2, lam=0.0)
    a = cp.train_semisupervised(sp.train, data.unlabeled, sp.val, 3, data.dims, cfg)
    b = cp.train_semisupervised(sp.train, [], sp.val, 3, data.dims, cfg)
    assert a.history == b.history


def test_unlabeled_rows_feed_reconstruction_only(small_world):
    data, sp = small_world
    labeled, unlabeled = sp.train[:10], data.unlabeled[:6]
    rng = np.random.default_rng(0)
    params = cp.init_params(data.dims, 8, 8, rng)
    feats = features_of(labeled + unlabeled, data.dims)
    hidden = cp.draw_masks(feats.avail, 0.5, rng)
    P = consts(params)
    _, n_all = cp.reconstruction_loss(cp.reconstruct(cp.encode_incomplete(P, feats.masked(hidden)), P), feats,
                                      hidden)
    lab = feats.rows(np.arange(10))
    _, n_lab = cp.reconstruction_loss(cp.reconstruct(cp.encode_incomplete(P, lab.masked(hidden[:10])), P), lab,
                                      hidden[:10])
    unl = feats.rows(np.arange(10, 16))
    _, n_unl = cp.reconstruction_loss(cp.reconstruct(cp.encode_incomplete(P, unl.masked(hidden[10:])), P), unl,
                                      hidden[10:])
    assert n_all == n_lab + n_unl and n_unl > 0


def test_empty_labeled_set_rejected(small_world):
    data, sp = small_world
    with pytest.raises(UsageError):
        cp.train_semisupervised([], data.unlabeled, sp.val, 0, data.dims)


def supervised_oracle(labeled, val, metric, dims, cfg):
    """Plain full-modality supervised training written out by hand, for comparison."""
    init_ss, _, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, shuffle_rng = np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)
    tf = TargetTransform()
    y = tf.forward(target_matrix(labeled)[:, metric])
    mu, sd = float(y.mean()), float(y.std())
    z = ((y - mu) / sd)[:, None]
    params = nx.to_storage(cp.init_params(dims, cfg.d, cfg.h, init_rng))
    feats = features_of(labeled, dims)
    f_val = features_of(val, dims)
    y_val = tf.forward(target_matrix(val)[:, metric])

    def fwd(P, f):
        slots = [nx.add(nx.matmul(Matrix(x, check=False), P[f"enc{j}.W"]), P[f"enc{j}.b"]) for j, x in enumerate(f.X)]
        mean = nx.scale(nx.add(nx.add(slots[0], slots[1]), slots[2]), 1.0 / 3.0)
        return mlp_head(nx.tanh(dense(mean, P, "fuse")), P)

    def val_mse(p):
        out = fwd(consts(p), f_val).data[:, 0].astype(np.float64) * sd + mu
        return float(np.mean((out - y_val) ** 2))

    first = nx.mse_loss(fwd(consts(params), feats), z).item()
    hist = [(first * sd ** 2, val_mse(params))]
    state, hyper = nx.AdamState.fresh(params), nx.AdamHyper(lr=cfg.lr)
    for _ in range(cfg.epochs):
        total = 0.0
        for sel in batches(shuffle_rng, len(labeled), cfg.batch_size):
            loss, g = nx.value_and_grad(lambda P: nx.mse_loss(fwd(P, feats.rows(sel)), z[sel]), params)
            params, state = nx.adam_step(params, g, state, hyper)
            params = nx.to_storage(params)
            total += loss * len(sel)
        hist.append((total / len(labeled) * sd ** 2, val_mse(params)))
    return hist


def test_p0_lambda0_equals_plain_supervised_training():
    data = generate_synthetic(SynthConfig(n_videos=200, n_authors=3, dims=(8, 8, 8), seed=8, missing_frac=0.0))
    sp = split(data.records, 0.8, 8)
    cfg = quick_cfg(p=0.0, lam=0.0, epochs=4, patience=10, seed=5)
    res = cp.train_semisupervised(sp.train, [], sp.val, 0, data.dims, cfg)
    oracle = supervised_oracle(sp.train, sp.val, 0, data.dims, cfg)
    got = [(h["sup"], h["val_mse"]) for h in res.history]
    assert len(got) == len(oracle)
    assert np.allclose(got, oracle, rtol=1e-9, atol=0)


@pytest.fixture(scope="module")
def noise_free():
    data = generate_synthetic(SynthConfig(n_videos=800, n_authors=5, dims=(32, 32, 32), noise=0.0, seed=9,
                                          missing_frac=0.0, n_unlabeled=200))
    sp = split(data.records, 0.8, 9)
    res = cp.train_semisupervised(sp.train, data.unlabeled, sp.val, 0, data.dims,
                                  cp.CompletionConfig(d=32, h=32, seed=2))
    return data, sp, res


def test_noise_free_full_visibility_plcc(noise_free):
    data, sp, res = noise_free
    pred = cp.predict_batch(sp.val, res.model, data.dims)
    assert plcc(pred, np.log1p(target_matrix(sp.val)[:, 0])) >= 0.95


def test_single_modality_degrades_gracefully(noise_free):
    data, sp, res = noise_free
    y = np.log1p(target_matrix(sp.val)[:, 0])
    full = cp.predict_batch(sp.val, res.model, data.dims)
    one = cp.predict_batch(sp.val, res.model, data.dims, hide=np.tile([[False, True, True]], (len(sp.val), 1)))
    mse_full, mse_one = np.mean((full - y) ** 2), np.mean((one - y) ** 2)
    assert np.isfinite(mse_full) and np.isfinite(mse_one)
    assert mse_one >= mse_full


def test_reconstruction_beats_the_mean_embedding(noise_free):
    data, sp, res = noise_free
    p, seed = 0.3, 17
    model_mse = cp.reconstruction_mse(sp.val, res.model, data.dims, p, seed)
    # baseline: predict the training-set mean (normalised) embedding for every hidden modality
    tr = features_of(sp.train, data.dims, dtype=np.float64)
    va = features_of(sp.val, data.dims, dtype=np.float64)
    hidden = cp.draw_masks(va.avail, p, np.random.default_rng(seed))
    w = hidden & va.avail
    num = sum(float(((va.X[j] - tr.X[j].mean(axis=0)) ** 2)[w[:, j]].sum()) for j in range(3))
    den = sum(float(w[:, j].sum()) * va.X[j].shape[1] for j in range(3))
    assert model_mse < num / den
