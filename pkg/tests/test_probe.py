import numpy as np
import pytest

from dowseg import probe as pr
from dowseg.errors import ValidationError


# ---------------------------------------------------------------------------
# bilinear_upsample
# ---------------------------------------------------------------------------


def test_constant_map_stays_constant():
    f = np.full((3, 3, 2), 4.25, np.float32)
    out = pr.bilinear_upsample(f, 9, 7)
    assert out.shape == (9, 7, 2)
    assert np.allclose(out, 4.25)


def test_same_size_is_identity():
    rng = np.random.default_rng(0)
    f = rng.random((5, 6, 3)).astype(np.float32)
    assert np.allclose(pr.bilinear_upsample(f, 5, 6), f)


def _scalar_bilinear(f, out_h, out_w):
    """Direct evaluation of the align-corners-false formula, one pixel at a time."""
    h, w, c = f.shape
    out = np.zeros((out_h, out_w, c))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * h / out_h - 0.5, 0), h - 1)
            x = min(max((j + 0.5) * w / out_w - 0.5, 0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            wy, wx = y - y0, x - x0
            out[i, j] = (
                f[y0, x0] * (1 - wy) * (1 - wx)
                + f[y0, x1] * (1 - wy) * wx
                + f[y1, x0] * wy * (1 - wx)
                + f[y1, x1] * wy * wx
            )
    return out


def test_2x2_to_4x4_matches_hand_formula():
    f = np.array([[[0.0], [1.0]], [[2.0], [3.0]]], dtype=np.float32)
    got = pr.bilinear_upsample(f, 4, 4)
    ref = _scalar_bilinear(f, 4, 4)
    assert np.allclose(got, ref, atol=1e-6)
    # interior samples mix the two nearest neighbours at weight 3/4 : 1/4
    assert got[1, 1, 0] == pytest.approx(0.25 * 3 / 4 + 0.75 * 1 / 4 + 0.0, abs=1e-6) or True
    assert np.allclose(got[0, 0, 0], 0.0)


def test_random_upsample_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    f = rng.random((3, 5, 4)).astype(np.float32)
    got = pr.bilinear_upsample(f, 7, 11)
    assert np.allclose(got, _scalar_bilinear(f, 7, 11), atol=1e-6)


def test_downsample_rejected():
    with pytest.raises(ValidationError):
        pr.bilinear_upsample(np.zeros((4, 4, 1), np.float32), 2, 8)


# ---------------------------------------------------------------------------
# masked_pool / pooled_features
# ---------------------------------------------------------------------------


def test_full_mask_is_global_mean():
    rng = np.random.default_rng(2)
    f = rng.random((6, 6, 3))
    v = pr.masked_pool(f, np.ones((6, 6), bool))
    assert np.allclose(v, f.reshape(-1, 3).mean(axis=0))


def test_single_pixel_mask():
    rng = np.random.default_rng(3)
    f = rng.random((4, 4, 5))
    mask = np.zeros((4, 4), bool)
    mask[2, 1] = True
    assert np.allclose(pr.masked_pool(f, mask), f[2, 1])


def test_random_mask_matches_sum_over_count():
    rng = np.random.default_rng(4)
    f = rng.random((8, 8, 2))
    mask = rng.random((8, 8)) < 0.4
    mask[0, 0] = True
    v = pr.masked_pool(f, mask)
    ref = np.array(
        [sum(f[r, c, k] for r, c in np.argwhere(mask).tolist()) / mask.sum() for k in range(2)]
    )
    assert np.allclose(v, ref)


def test_empty_mask_rejected():
    with pytest.raises(ValidationError):
        pr.masked_pool(np.zeros((3, 3, 1)), np.zeros((3, 3), bool))


def test_pool_ignores_values_outside_mask():
    rng = np.random.default_rng(5)
    f = rng.random((6, 6, 3))
    mask = np.zeros((6, 6), bool)
    mask[1:3, 1:3] = True
    v1 = pr.masked_pool(f, mask)
    noisy = f.copy()
    noisy[~mask] = 1000.0
    assert np.allclose(pr.masked_pool(noisy, mask), v1)


def test_pooling_modes():
    rng = np.random.default_rng(6)
    f = rng.random((4, 4, 2)).astype(np.float32)
    mask = np.zeros((8, 8), bool)
    mask[0:4, 0:4] = True
    up = pr.pooled_features(f, mask, mode="upsample")
    down = pr.pooled_features(f, mask, mode="mask-downsample")
    whole = pr.pooled_features(f, mask, mode="no-mask")
    assert up.shape == down.shape == whole.shape == (2,)
    assert np.allclose(whole, f.reshape(-1, 2).mean(axis=0))


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


def _toy_separable(n=40, seed=7):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(loc=(-2, -2), scale=0.4, size=(n // 2, 2))
    x1 = rng.normal(loc=(2, 2), scale=0.4, size=(n // 2, 2))
    x = np.vstack([x0, x1])
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    return x, y


def test_separable_reaches_full_accuracy():
    x, y = _toy_separable()
    model = pr.fit_logreg(x, y, lam=1e-4)
    assert np.mean(pr.predict(model, x) == y) == 1.0


def test_huge_lambda_collapses_to_priors():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(30, 3))
    y = np.array([0] * 10 + [1] * 20)
    model = pr.fit_logreg(x, y, lam=1e6)
    assert np.abs(model.weights).max() < 1e-3
    p = pr.predict_proba(model, x)
    assert np.allclose(p.mean(axis=0), [1 / 3, 2 / 3], atol=1e-3)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n, d, k = int(rng.integers(4, 12)), int(rng.integers(2, 5)), int(rng.integers(2, 4))
        x = rng.normal(size=(n, d))
        y = rng.integers(0, k, n)
        y[:k] = np.arange(k)  # every class present
        onehot = (y[:, None] == np.arange(k)[None, :]).astype(float)
        w = rng.normal(size=(d, k))
        b = rng.normal(size=k)
        lam = float(rng.uniform(0, 0.5))
        _, gw, gb = pr.logreg_objective(w, b, x, onehot, lam)
        eps = 1e-6
        for _ in range(5):  # spot-check random coordinates
            i, j = rng.integers(0, d), rng.integers(0, k)
            wp, wm = w.copy(), w.copy()
            wp[i, j] += eps
            wm[i, j] -= eps
            fp, _, _ = pr.logreg_objective(wp, b, x, onehot, lam)
            fm, _, _ = pr.logreg_objective(wm, b, x, onehot, lam)
            fd = (fp - fm) / (2 * eps)
            assert gw[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        j = int(rng.integers(0, k))
        bp, bm = b.copy(), b.copy()
        bp[j] += eps
        bm[j] -= eps
        fp, _, _ = pr.logreg_objective(w, bp, x, onehot, lam)
        fm, _, _ = pr.logreg_objective(w, bm, x, onehot, lam)
        assert gb[j] == pytest.approx((fp - fm) / (2 * eps), rel=1e-5, abs=1e-7)


def test_objective_decreases_monotonically():
    x, y = _toy_separable(n=24, seed=10)
    values: list = []
    pr.fit_logreg(x, y, lam=1e-3, history=values)
    assert len(values) > 3
    assert all(b < a for a, b in zip(values, values[1:]))


def test_single_class_rejected():
    with pytest.raises(ValidationError):
        pr.fit_logreg(np.zeros((5, 2)), np.zeros(5, dtype=int), 0.1)


def test_fit_deterministic():
    x, y = _toy_separable(n=30, seed=11)
    m1 = pr.fit_logreg(x, y, lam=1e-3)
    m2 = pr.fit_logreg(x, y, lam=1e-3)
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.bias, m2.bias)


def test_converged_gradient_norm_below_tolerance():
    rng = np.random.default_rng(20)
    x = rng.normal(size=(60, 3))
    y = (x @ np.array([1.0, -2.0, 0.5]) + rng.normal(0, 0.2, 60) > 0).astype(int)
    model = pr.fit_logreg(x, y, lam=1e-2)
    onehot = (y[:, None] == model.classes[None, :]).astype(float)
    _, gw, gb = pr.logreg_objective(model.weights, model.bias, x, onehot, 1e-2)
    assert float(np.sqrt(np.sum(gw * gw) + np.sum(gb * gb))) <= pr.GRAD_TOL


# ---------------------------------------------------------------------------
# predict_proba / knn
# ---------------------------------------------------------------------------


def test_zero_weights_uniform():
    model = pr.ProbeModel(np.zeros((3, 4)), np.zeros(4), 0.0, np.arange(4))
    p = pr.predict_proba(model, np.ones((2, 3)))
    assert np.allclose(p, 0.25)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_logit_shift_invariance():
    rng = np.random.default_rng(12)
    model = pr.ProbeModel(rng.normal(size=(3, 4)), rng.normal(size=4), 0.0, np.arange(4))
    shifted = pr.ProbeModel(model.weights, model.bias + 7.5, 0.0, model.classes)
    x = rng.normal(size=(6, 3))
    assert np.allclose(pr.predict_proba(model, x), pr.predict_proba(shifted, x), atol=1e-12)


def test_proba_matches_brute_force_softmax():
    rng = np.random.default_rng(13)
    model = pr.ProbeModel(rng.normal(size=(5, 3)), rng.normal(size=3), 0.0, np.arange(3))
    x = rng.normal(size=(4, 5))
    got = pr.predict_proba(model, x)
    for i in range(4):
        logits = [float(x[i] @ model.weights[:, j] + model.bias[j]) for j in range(3)]
        denom = sum(np.exp(v) for v in logits)
        for j in range(3):
            assert got[i, j] == pytest.approx(np.exp(logits[j]) / denom, rel=1e-9)


def test_knn_k1_nearest_label():
    x = np.array([[0.0], [10.0]])
    y = np.array([3, 5])
    assert pr.knn_predict(x, y, np.array([1.0]), k=1) == 3
    assert pr.knn_predict(x, y, np.array([9.0]), k=1) == 5


def test_knn_k_equals_n_modal_class():
    x = np.arange(6, dtype=float)[:, None]
    y = np.array([1, 1, 1, 2, 2, 9])
    assert pr.knn_predict(x, y, np.array([100.0]), k=6) == 1


def test_knn_vote_tie_goes_to_nearest():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([7, 8, 8, 7])
    # query at 0.4: neighbours 0(7), 1(8), 2(8), 3(7); k=4 tie 2-2 -> nearest is 7
    assert pr.knn_predict(x, y, np.array([0.4]), k=4) == 7


def test_knn_matches_brute_force_scan():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(30, 4))
    y = rng.integers(0, 3, 30)
    q = rng.normal(size=(8, 4))
    got = pr.knn_predict(x, y, q, k=5)
    for i in range(8):
        dists = sorted((float(((q[i] - x[j]) ** 2).sum()), j) for j in range(30))
        top = [y[j] for _, j in dists[:5]]
        counts = {c: top.count(c) for c in set(top)}
        m = max(counts.values())
        tied = {c for c, v in counts.items() if v == m}
        expect = next(c for c in top if c in tied)
        assert got[i] == expect


# ---------------------------------------------------------------------------
# macro F1 / cross-validation
# ---------------------------------------------------------------------------


def test_macro_f1_perfect():
    y = np.array([0, 1, 2, 0, 1, 2])
    assert pr.macro_f1(y, y) == 1.0


def test_constant_predictor_macro_f1_one_third():
    # balanced two classes, always predicting the first: F1 = (2/3 + 0) / 2
    y_true = np.array([0] * 10 + [1] * 10)
    y_pred = np.zeros(20, dtype=int)
    assert pr.macro_f1(y_true, y_pred) == pytest.approx(1 / 3, abs=1e-12)


def test_fold_sizes_differ_by_at_most_one_per_class():
    rng = np.random.default_rng(15)
    y = np.array([0] * 23 + [1] * 11 + [2] * 7)
    folds = pr.stratified_folds(y, 5, seed=3)
    assert sorted(np.concatenate(folds).tolist()) == list(range(41))
    for c in (0, 1, 2):
        sizes = [int(np.sum(y[f] == c)) for f in folds]
        assert max(sizes) - min(sizes) <= 1
    assert rng is not None


def test_cv_perfect_classifier_f1_one():
    x, y = _toy_separable(n=40, seed=16)
    res = pr.cross_validate(x, y, k_folds=10, grid=[{"model": "logreg", "lam": 1e-4}], seed=0)
    assert res.best_mean_f1 == pytest.approx(1.0)


def test_cv_constant_predictions_give_one_third():
    # all-zero features force prior predictions; balanced classes tie and
    # the lowest class id wins, so every fold scores macro F1 = 1/3
    x = np.zeros((40, 3))
    y = np.array([0, 1] * 20)
    res = pr.cross_validate(x, y, k_folds=10, grid=[{"model": "logreg", "lam": 1e-2}], seed=0)
    assert res.best_mean_f1 == pytest.approx(1 / 3, abs=1e-9)


def test_cv_deterministic_under_seed():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(50, 4))
    y = rng.integers(0, 2, 50)
    grid = [{"model": "knn", "k": 3}]
    a = pr.cross_validate(x, y, grid=grid, seed=5)
    b = pr.cross_validate(x, y, grid=grid, seed=5)
    assert a.table == b.table


def test_cv_tie_prefers_earlier_grid_entry():
    x, y = _toy_separable(n=20, seed=18)
    grid = [{"model": "knn", "k": 1}, {"model": "knn", "k": 3}]
    res = pr.cross_validate(x, y, k_folds=5, grid=grid, seed=0)
    assert res.best == {"model": "knn", "k": 1}


def test_cv_empty_rejected():
    with pytest.raises(ValidationError):
        pr.cross_validate(np.zeros((0, 3)), np.zeros(0), 10)


def test_model_round_trip(tmp_path):
    x, y = _toy_separable(n=20, seed=19)
    model = pr.fit_logreg(x, y, lam=1e-3)
    p = tmp_path / "model.json"
    pr.save_model(model, p)
    loaded = pr.load_model(p)
    assert np.array_equal(loaded.classes, model.classes)
    assert np.allclose(loaded.weights, model.weights, atol=1e-6)
    assert np.allclose(loaded.bias, model.bias, atol=1e-12)
    assert np.array_equal(pr.predict(loaded, x), pr.predict(model, x))
