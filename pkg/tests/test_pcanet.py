import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarcd import pcanet
from sarcd.pcanet import (PcaNetModel, UntrainedModel, classify, convolve, extract_features,
                          hash_maps, learn_stage1_filters, learn_stage2_filters, load_model,
                          make_patches, save_model, train_classifier, train_pcanet)


def block_matrix(maps, kf):
    """Loop-built Y: every kf x kf block of every map, mean-removed, as a column."""
    maps = np.asarray(maps).reshape(-1, *np.shape(maps)[-2:])
    cols = []
    for m in maps:
        for i in range(m.shape[0] - kf + 1):
            for j in range(m.shape[1] - kf + 1):
                b = m[i:i + kf, j:j + kf].ravel()
                cols.append(b - b.mean())
    return np.array(cols).T


def oracle_filters(maps, kf, L):
    """Left singular vectors of Y are the eigenvectors of Y Y^T."""
    U, s, _ = np.linalg.svd(block_matrix(maps, kf), full_matrices=False)
    return U[:, :L].T.reshape(L, kf, kf)


def oracle_convolve(maps, filters):
    kf = filters.shape[-1]
    a = kf // 2
    H, W = maps.shape[-2:]
    padded = np.pad(maps, [(0, 0)] * (maps.ndim - 2) + [(a, kf - 1 - a)] * 2)
    out = np.zeros(maps.shape[:-2] + (len(filters), H, W))
    for l, f in enumerate(filters):
        for i in range(H):
            for j in range(W):
                out[..., l, i, j] = (padded[..., i:i + kf, j:j + kf] * f).sum(axis=(-2, -1))
    return out


def assert_same_up_to_sign(A, B, tol):
    for a, b in zip(A.reshape(len(A), -1), B.reshape(len(B), -1)):
        s = np.sign(a @ b)
        assert np.max(np.abs(a - s * b)) < tol


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stage1_eigen_oracle(seed):
    rng = np.random.default_rng(seed)
    patches = rng.gamma(4.0, 25.0, (300, 14, 7))
    t0 = time.perf_counter()
    W1 = learn_stage1_filters(patches, 5, 8)
    assert time.perf_counter() - t0 < 5.0
    assert_same_up_to_sign(W1, oracle_filters(patches, 5, 8), 1e-8)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stage2_eigen_oracle(seed):
    rng = np.random.default_rng(seed)
    patches = rng.normal(size=(40, 6, 3))
    W1 = learn_stage1_filters(patches, 3, 4)
    outs = oracle_convolve(patches, W1)
    np.testing.assert_allclose(convolve(patches, W1), outs, atol=1e-12)
    W2 = learn_stage2_filters(outs, 3, 4)
    assert_same_up_to_sign(W2, oracle_filters(outs, 3, 4), 1e-8)


def test_filters_orthonormal_and_ordered():
    rng = np.random.default_rng(4)
    patches = rng.normal(size=(100, 10, 5))
    for W in pcanet.learn_filters(patches, 3, 6, 5):
        V = W.reshape(len(W), -1)
        np.testing.assert_allclose(V @ V.T, np.eye(len(W)), atol=1e-12)
    Y = block_matrix(patches, 3)
    # mean removal leaves at most kf*kf - 1 directions
    W1 = learn_stage1_filters(patches, 3, 8).reshape(8, -1)
    variances = np.sum((W1 @ Y) ** 2, axis=1)
    assert np.all(np.diff(variances) <= 1e-9 * variances[0])


def test_top_filters_capture_most_mass():
    rng = np.random.default_rng(8)
    patches = rng.normal(size=(80, 10, 5)) * np.linspace(0.5, 2.0, 5)
    Y = block_matrix(patches, 3)
    W = learn_stage1_filters(patches, 3, 4).reshape(4, -1)
    mass = np.sum((W @ Y) ** 2)
    for _ in range(50):
        Q, _ = np.linalg.qr(rng.normal(size=(9, 4)))
        assert mass >= np.sum((Q.T @ Y) ** 2) - 1e-9


def test_rank_one_direction():
    rng = np.random.default_rng(1)
    v = rng.normal(size=9)
    v -= v.mean()
    v /= np.linalg.norm(v)
    coef = rng.normal(size=50)
    patches = (coef[:, None] * v + rng.normal(size=(50, 1))).reshape(50, 3, 3)
    W = learn_stage1_filters(patches, 3, 1)
    assert_same_up_to_sign(W, v.reshape(1, 3, 3), 1e-10)


def test_rank_deficit_falls_back(caplog):
    patches = np.ones((10, 6, 3)) * np.arange(10)[:, None, None]  # constant blocks
    patches[:, 0, 0] += 1.0
    W = learn_stage1_filters(patches, 3, 8)
    assert len(W) < 8
    assert "rank" in caplog.text


def test_stage2_pass_through_with_delta_filter():
    rng = np.random.default_rng(3)
    patches = rng.normal(size=(30, 6, 3))
    delta = np.zeros((1, 3, 3))
    delta[0, 1, 1] = 1.0
    outs = convolve(patches, delta)
    np.testing.assert_array_equal(outs[:, 0], patches)
    np.testing.assert_allclose(learn_stage2_filters(outs, 3, 5),
                               learn_stage1_filters(patches, 3, 5), atol=1e-12)


def test_hash_examples():
    R = np.zeros((2, 1, 1))
    R[:, 0, 0] = [1.5, -2.0]
    assert hash_maps(R)[0, 0] == 1
    assert np.all(hash_maps(-np.abs(np.random.default_rng(0).normal(size=(4, 3, 3)))) == 0)
    assert np.all(hash_maps(np.zeros((4, 3, 3))) == 0)
    assert np.all(hash_maps(np.full((5, 3, 3), 0.1)) == 2 ** 5 - 1)


@given(st.integers(1, 8), st.integers(0, 1000))
def test_hash_range(L2, seed):
    T = hash_maps(np.random.default_rng(seed).normal(size=(L2, 4, 4)))
    assert T.min() >= 0 and T.max() <= 2 ** L2 - 1


def random_model(k=3, kf=3, L1=3, L2=2, block=(0, 0, 0), seed=0):
    rng = np.random.default_rng(seed)
    f1 = rng.normal(size=(L1, kf, kf))
    f2 = rng.normal(size=(L2, kf, kf))
    return PcaNetModel(k, kf, f1, f2, block)


@pytest.mark.parametrize("k,block", [(3, (0, 0, 0)), (7, (0, 0, 0)), (7, (4, 4, 2))])
def test_feature_dimension(k, block):
    m = random_model(k=k, block=block)
    P = np.random.default_rng(1).normal(size=(5, 2 * k, k))
    F = extract_features(m, P)
    assert F.shape == (5, m.feature_dim)
    # each (filter, block) histogram sums to the block's pixel count
    br, bc = m.block_shape
    sums = F.reshape(5, m.L1, m.n_blocks, -1).sum(axis=-1)
    np.testing.assert_array_equal(sums, br * bc)
    if block == (0, 0, 0):
        assert m.feature_dim == m.L1 * 2 * 2 ** m.L2


def test_all_nonpositive_responses_fill_bin_zero():
    m = random_model()
    m.filters2 = -np.abs(m.filters2)
    m.filters1 = np.abs(m.filters1)
    F = extract_features(m, np.abs(np.random.default_rng(2).normal(size=(3, 6, 3))) + 0.1)
    h = F.reshape(3, m.L1, m.n_blocks, 2 ** m.L2)
    assert np.all(h[..., 1:] == 0)


def test_histogram_permutation_invariant_within_block():
    m = random_model(k=3)
    rng = np.random.default_rng(5)
    T = rng.integers(0, 4, size=(1, m.L1, 6, 3))
    shuffled = T.copy()
    top = shuffled[0, :, :3, :].reshape(m.L1, -1)
    shuffled[0, :, :3, :] = rng.permuted(top, axis=1).reshape(m.L1, 3, 3)
    np.testing.assert_array_equal(pcanet._block_histograms(T, m),
                                  pcanet._block_histograms(shuffled, m))


def test_make_patches_stacks_pair():
    v1 = np.arange(9.0)[None]
    v2 = -np.arange(9.0)[None]
    P = make_patches(v1, v2, 3)
    assert P.shape == (1, 6, 3)
    np.testing.assert_array_equal(P[0, :3], v1.reshape(3, 3))
    np.testing.assert_array_equal(P[0, 3:], v2.reshape(3, 3))


def test_svm_separable_and_flip():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.5, (40, 2)), rng.normal(3, 0.5, (40, 2))])
    y = np.repeat([0, 1], 40)
    w, b = train_classifier(X, y, C=1.0, tol=1e-8, max_iter=100_000)
    assert np.all(((X @ w + b) >= 0).astype(int) == y)
    wf, bf = train_classifier(X, 1 - y, C=1.0, tol=1e-8, max_iter=100_000)
    np.testing.assert_allclose(wf, -w, rtol=1e-3, atol=1e-4)
    assert bf == pytest.approx(-b, abs=1e-3)


def test_svm_duplicated_dataset_same_boundary():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(-4, 0.5, (30, 2)), rng.normal(4, 0.5, (30, 2))])
    y = np.repeat([0, 1], 30)
    w, b = train_classifier(X, y, C=1.0, tol=1e-8, max_iter=100_000)
    w2, b2 = train_classifier(np.vstack([X, X]), np.tile(y, 2), C=1.0, tol=1e-8,
                              max_iter=100_000)
    np.testing.assert_allclose(w2 / np.linalg.norm(w2), w / np.linalg.norm(w), atol=1e-2)
    grid = rng.uniform(-6, 6, (500, 2))
    assert np.mean(((grid @ w + b) >= 0) == ((grid @ w2 + b2) >= 0)) > 0.99


def test_svm_single_class():
    with pytest.raises(ValueError):
        train_classifier(np.ones((4, 2)), [1, 1, 1, 1])


def two_blob_patches(n, k, rng, centres=None, sigma=20.0):
    """Noisy copies of two fixed 2k x k centre patches."""
    if centres is None:
        centres = rng.gamma(4.0, 25.0, (2, 2 * k, k))
    y = rng.integers(0, 2, n)
    return centres[y] + rng.normal(0, sigma, (n, 2 * k, k)), y, centres


def test_pcanet_agrees_with_nearest_centroid():
    rng = np.random.default_rng(9)
    P, y, centres = two_blob_patches(400, 5, rng)
    model = train_pcanet(P, y, filter_size=3, L1=4, L2=4)
    assert model.trained
    Q, _, _ = two_blob_patches(400, 5, rng, centres)
    ctr = [P[y == c].reshape(-1, 50).mean(axis=0) for c in (0, 1)]
    nc = np.argmin([np.linalg.norm(Q.reshape(-1, 50) - c, axis=1) for c in ctr], axis=0)
    assert np.mean(classify(model, Q) == nc) >= 0.95
    # a training patch far from the boundary keeps its label
    pred = classify(model, P)
    scores = pcanet.decision_function(model, extract_features(model, P))
    far = np.argmax(np.abs(scores))
    assert pred[far] == y[far]


def test_zero_decision_goes_to_class_one():
    m = random_model()
    m.svm_w = np.zeros(m.feature_dim)
    m.svm_b = 0.0
    assert classify(m, np.zeros((1, 6, 3)))[0] == 1


def test_untrained_model():
    with pytest.raises(UntrainedModel):
        classify(random_model(), np.zeros((1, 6, 3)))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    P, y, _ = two_blob_patches(60, 3, rng)
    model = train_pcanet(P, y, filter_size=3, L1=3, L2=3, block=(3, 3, 1))
    path = tmp_path / "m.bin"
    save_model(model, path)
    buf = path.read_bytes()
    assert buf[:8] == b"PCANET\x00\x01"
    head = struct.unpack_from("<9I", buf, 8)
    assert head == (1, 3, 3, 3, 3, 3, 3, 1, model.feature_dim)
    assert len(buf) == 8 + 36 + 8 * (2 * 3 * 9 + model.feature_dim + 1)
    back = load_model(path)
    np.testing.assert_array_equal(back.filters1, model.filters1)
    np.testing.assert_array_equal(back.filters2, model.filters2)
    np.testing.assert_array_equal(back.svm_w, model.svm_w)
    assert back.svm_b == model.svm_b and back.block == model.block
    np.testing.assert_array_equal(classify(back, P), classify(model, P))


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTAMODEL" + bytes(64))
    with pytest.raises(ValueError):
        load_model(p)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_filter_larger_than_patch_rejected(seed):
    P = np.random.default_rng(seed).normal(size=(4, 6, 3))
    with pytest.raises(ValueError):
        train_pcanet(P, [0, 1, 0, 1], filter_size=5)
