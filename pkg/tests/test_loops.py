import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkstitch import loops, sim3
from chunkstitch.errors import (
    RankDeficient,
    TooFewFrames,
    ZeroProjection,
    ZeroToken,
    ZeroVector,
)


# --- pooling ---

def test_pool_single_token():
    x = np.array([[3.0, 4.0, 0.0]])
    np.testing.assert_allclose(loops.pool_tokens(x), [0.6, 0.8, 0.0])


def test_pool_identical_tokens_equals_single():
    x = np.array([[3.0, 4.0, 0.0]])
    repeated = np.repeat(x, 5, axis=0)
    np.testing.assert_allclose(loops.pool_tokens(repeated), loops.pool_tokens(x))


def test_pool_two_orthonormal_tokens():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(loops.pool_tokens(x), [0.5, 0.5])


def test_pool_rejects_zero_token():
    with pytest.raises(ZeroToken):
        loops.pool_tokens(np.array([[1.0, 0.0], [0.0, 0.0]]))


# --- signed power ---

def test_signed_power_values():
    out = loops.signed_power(np.array([0.25, -0.09]), beta=0.5)
    expected = np.array([0.5, -0.3])
    np.testing.assert_allclose(out, expected / np.linalg.norm(expected))


def test_signed_power_zero_vector():
    with pytest.raises(ZeroVector):
        loops.signed_power(np.zeros(4))


@settings(deadline=None, max_examples=100)
@given(st.floats(0.1, 1.0), st.integers(0, 10**6))
def test_signed_power_unit_norm_and_sign(beta, seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=16)
    out = loops.signed_power(g, beta)
    assert np.linalg.norm(out) == pytest.approx(1.0)
    np.testing.assert_array_equal(np.sign(out), np.sign(g))


# --- whitening ---

def _whitening_oracle(g, r, d_out):
    """Independent route: SVD of the centered matrix instead of eigh."""
    mean = g.mean(axis=0)
    centered = g - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = s**2 / (len(g) - 1)
    q = vt.T[:, r:r + d_out]
    return mean, q / np.sqrt(eigvals[r:r + d_out])


def test_fit_whitening_matches_svd_oracle():
    rng = np.random.default_rng(40)
    g = rng.normal(size=(50, 8))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    model = loops.fit_whitening(g, r=0, d_out=8)
    mean_o, proj_o = _whitening_oracle(g, 0, 8)
    np.testing.assert_allclose(model.mean, mean_o, atol=1e-12)
    # columns agree up to sign
    for k in range(8):
        a, b = model.projection[:, k], proj_o[:, k]
        assert min(np.abs(a - b).max(), np.abs(a + b).max()) < 1e-8


def test_fit_whitening_whitens_retained_dims():
    rng = np.random.default_rng(41)
    g = rng.normal(size=(50, 8))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    model = loops.fit_whitening(g, r=0, d_out=8)
    centered = g - model.mean
    whitened = centered @ model.projection
    cov = whitened.T @ whitened / (len(g) - 1)
    np.testing.assert_allclose(cov, np.eye(8), atol=1e-9)


def test_fit_whitening_removes_shared_direction():
    # rows vary dominantly along c; each off-c offset appears as a +/- pair
    # sharing one alpha, so both the sample mean and the cross-covariance
    # between c and the offsets vanish exactly instead of 1/sqrt(N)-noisily
    rng = np.random.default_rng(42)
    d, n_pairs = 8, 150
    c = np.zeros(d)
    c[0] = 1.0
    alphas = rng.normal(loc=0.0, scale=2.0, size=n_pairs)
    offsets = rng.normal(scale=0.05, size=(n_pairs, d))
    offsets[:, 0] = 0.0
    g = np.concatenate([
        alphas[:, None] * c + offsets,
        alphas[:, None] * c - offsets,
    ])
    model = loops.fit_whitening(g, r=1, d_out=4)
    residual = model.projection.T @ (c - model.mean)
    assert np.linalg.norm(residual) < 1e-6 * np.linalg.norm(c)


def test_fit_whitening_identical_rows_rank_deficient():
    g = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (20, 1))
    with pytest.raises(RankDeficient):
        loops.fit_whitening(g, r=1, d_out=2)


def test_fit_whitening_too_few_frames():
    rng = np.random.default_rng(43)
    g = rng.normal(size=(5, 8))
    with pytest.raises(TooFewFrames):
        loops.fit_whitening(g, r=1, d_out=6)


def test_fit_whitening_rejects_bad_dims():
    rng = np.random.default_rng(44)
    g = rng.normal(size=(50, 8))
    with pytest.raises(ValueError):
        loops.fit_whitening(g, r=1, d_out=8)


def test_apply_whitening_mean_is_zero_projection():
    rng = np.random.default_rng(45)
    g = rng.normal(size=(30, 6))
    model = loops.fit_whitening(g, r=1, d_out=4)
    with pytest.raises(ZeroProjection):
        loops.apply_whitening(model.mean, model)


def test_apply_whitening_axis_alignment():
    rng = np.random.default_rng(46)
    g = rng.normal(size=(40, 8))
    model = loops.fit_whitening(g, r=1, d_out=4)
    # recover unit eigenvectors from the scaled projection columns
    q = model.projection / np.linalg.norm(model.projection, axis=0)
    for k in range(4):
        for alpha in (1e-3, 1.0, 50.0):
            z = loops.apply_whitening(model.mean + alpha * q[:, k], model)
            expected = np.zeros(4)
            expected[k] = 1.0
            np.testing.assert_allclose(z, expected, atol=1e-9)


def test_apply_whitening_scale_invariant_residual():
    rng = np.random.default_rng(47)
    g = rng.normal(size=(40, 8))
    model = loops.fit_whitening(g, r=1, d_out=4)
    resid = rng.normal(size=8)
    z1 = loops.apply_whitening(model.mean + resid, model)
    z2 = loops.apply_whitening(model.mean + 3.7 * resid, model)
    np.testing.assert_allclose(z1, z2, atol=1e-12)


def test_whitening_centers_training_set():
    rng = np.random.default_rng(48)
    g = rng.normal(size=(60, 8))
    model = loops.fit_whitening(g, r=1, d_out=5)
    raw = (g - model.mean) @ model.projection  # before per-vector normalization
    assert np.linalg.norm(raw.mean(axis=0)) < 1e-8


# --- similarity + NMS ---

def test_similarity_orthogonal_rows():
    np.testing.assert_allclose(loops.similarity_matrix(np.eye(4)), np.eye(4))


def test_similarity_duplicate_row():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    s = loops.similarity_matrix(z)
    assert s[0, 1] == pytest.approx(1.0)
    assert s[0, 2] == pytest.approx(0.0)


def test_similarity_matches_brute_force():
    rng = np.random.default_rng(49)
    z = rng.normal(size=(30, 6))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    s = loops.similarity_matrix(z)
    brute = np.array([[z[i] @ z[j] for j in range(30)] for i in range(30)])
    np.fill_diagonal(brute, 1.0)
    np.testing.assert_allclose(s, brute, atol=1e-12)
    assert (s <= 1.0).all() and (s >= -1.0).all()
    np.testing.assert_array_equal(s, s.T)


def _nms_oracle(sim, threshold, min_gap, radius):
    n = sim.shape[0]
    cands = [
        (float(sim[i, j]), i, j)
        for i in range(n)
        for j in range(i + max(min_gap, 1), n)
        if sim[i, j] >= threshold
    ]
    cands.sort(key=lambda c: (-c[0], c[1], c[2]))
    out = []
    for v, i, j in cands:
        if all(max(abs(i - a), abs(j - b)) > radius for _, a, b in out):
            out.append((v, i, j))
    return [(i, j, v) for v, i, j in out]


def test_detect_loops_single_pair():
    sim = np.zeros((400, 400))
    np.fill_diagonal(sim, 1.0)
    sim[10, 300] = sim[300, 10] = 0.9
    out = loops.detect_loops(sim, threshold=0.65, min_frame_gap=200, nms_radius=25)
    assert [(c.frame_i, c.frame_j, c.similarity) for c in out] == [(10, 300, 0.9)]


def test_detect_loops_empty_when_below_threshold():
    sim = np.full((50, 50), 0.1)
    np.fill_diagonal(sim, 1.0)
    assert loops.detect_loops(sim, 0.65, 10, 5) == []


def test_detect_loops_nms_example():
    sim = np.zeros((600, 600))
    sim[100, 500] = sim[500, 100] = 0.95
    sim[101, 502] = sim[502, 101] = 0.90
    out = loops.detect_loops(sim, threshold=0.5, min_frame_gap=150, nms_radius=5)
    assert [(c.frame_i, c.frame_j) for c in out] == [(100, 500)]


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 10**6))
def test_detect_loops_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(40, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    sim = loops.similarity_matrix(z)
    got = loops.detect_loops(sim, threshold=0.6, min_frame_gap=5, nms_radius=3)
    expected = _nms_oracle(sim, 0.6, 5, 3)
    assert [(c.frame_i, c.frame_j, c.similarity) for c in got] == expected
    for c in got:
        assert c.frame_j - c.frame_i >= 5


def test_detect_loops_deterministic():
    rng = np.random.default_rng(50)
    z = rng.normal(size=(60, 5))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    sim = loops.similarity_matrix(z)
    a = loops.detect_loops(sim, 0.5, 4, 2)
    b = loops.detect_loops(sim.copy(), 0.5, 4, 2)
    assert a == b


# --- loop batches ---

def test_build_loop_batch_two_windows():
    batch = loops.build_loop_batch(100, 500, 40, 1000)
    assert len(batch) == 40
    first, second = batch[:20], batch[20:]
    assert 100 in first and 500 in second
    assert first == sorted(first) and second == sorted(second)
    assert all(abs(f - 100) <= 20 for f in first)
    assert all(abs(f - 500) <= 20 for f in second)


def test_build_loop_batch_clamped_at_start():
    batch = loops.build_loop_batch(2, 500, 40, 1000)
    assert batch[:20] == list(range(0, 20))
    assert len(batch) == 40


def test_build_loop_batch_clamped_at_end():
    batch = loops.build_loop_batch(100, 998, 40, 1000)
    assert batch[20:] == list(range(980, 1000))


def test_build_loop_batch_overlapping_windows_dedup():
    batch = loops.build_loop_batch(100, 105, 40, 1000)
    assert len(batch) == len(set(batch))
    assert len(batch) < 40


# --- loop transform composition ---

def test_loop_sim3_identity_cases():
    rng = np.random.default_rng(51)
    s = sim3.random_sim3(rng)
    out = loops.loop_sim3(sim3.Sim3.identity(), s)
    np.testing.assert_allclose(out.matrix(), s.matrix(), atol=1e-12)
    ident = loops.loop_sim3(s, s)
    np.testing.assert_allclose(ident.matrix(), np.eye(4), atol=1e-9)


def test_loop_sim3_matches_matrix_oracle():
    rng = np.random.default_rng(52)
    for _ in range(50):
        a, b = sim3.random_sim3(rng), sim3.random_sim3(rng)
        out = loops.loop_sim3(a, b)
        oracle = b.matrix() @ np.linalg.inv(a.matrix())
        np.testing.assert_allclose(out.matrix(), oracle, atol=1e-9)


# --- end-to-end descriptor properties ---

def make_clustered_tokens(rng, n_frames=100, n_clusters=4, d=16, k=8,
                          shared_strength=6.0, shared_jitter=2.0,
                          cluster_strength=1.0, noise=0.02):
    """Frames assigned round-robin to clusters, contaminated by one shared
    direction whose per-frame magnitude varies (so it dominates the
    descriptor covariance, the hubness mechanism whitening is meant to cut).
    """
    shared = rng.normal(size=d)
    shared /= np.linalg.norm(shared)
    centroids = rng.normal(size=(n_clusters, d))
    labels = np.arange(n_frames) % n_clusters
    frames = []
    for f in range(n_frames):
        amount = shared_strength + shared_jitter * rng.normal()
        base = amount * shared + cluster_strength * centroids[labels[f]]
        frames.append(base + rng.normal(scale=noise, size=(k, d)))
    return frames, labels


def _descriptor_pipeline(frames, r=1, d_out=None, beta=0.5):
    pooled = np.array([loops.signed_power(loops.pool_tokens(x), beta) for x in frames])
    model = loops.fit_whitening(pooled, r=r, d_out=d_out)
    return pooled, np.array([loops.apply_whitening(g, model) for g in pooled])


def test_descriptor_scale_invariance():
    rng = np.random.default_rng(53)
    frames, _ = make_clustered_tokens(rng)
    pooled, whitened = _descriptor_pipeline(frames, d_out=3)
    scaled = [7.3 * frames[i] for i in range(len(frames))]
    pooled2, whitened2 = _descriptor_pipeline(scaled, d_out=3)
    np.testing.assert_allclose(pooled, pooled2, atol=1e-12)
    np.testing.assert_allclose(whitened, whitened2, atol=1e-9)


def test_whitening_reduces_hubness():
    rng = np.random.default_rng(54)
    frames, labels = make_clustered_tokens(rng)
    pooled, whitened = _descriptor_pipeline(frames, d_out=3)
    off = labels[:, None] != labels[None, :]
    before = loops.similarity_matrix(pooled)[off].mean()
    after = loops.similarity_matrix(whitened)[off].mean()
    assert after < before


def test_whitened_recall_at_one_is_perfect():
    # separable clusters with noise well below the inter-cluster distance;
    # d_out matches the informative rank (5 clusters span 4 directions,
    # minus the one removed), so whitening does not amplify pure noise
    rng = np.random.default_rng(55)
    n_frames, n_clusters, d, k = 100, 5, 16, 8
    centroids = rng.normal(size=(n_clusters, d))
    sep = min(
        np.linalg.norm(centroids[i] - centroids[j])
        for i in range(n_clusters) for j in range(i + 1, n_clusters)
    )
    labels = np.arange(n_frames) % n_clusters
    frames = [
        centroids[labels[f]] + rng.normal(scale=0.05 * sep, size=(k, d))
        for f in range(n_frames)
    ]
    _, whitened = _descriptor_pipeline(frames, d_out=3)
    sim = loops.similarity_matrix(whitened)
    np.fill_diagonal(sim, -np.inf)
    nearest = sim.argmax(axis=1)
    assert (labels[nearest] == labels).all()
    # same-cluster frames always beat cross-cluster frames
    for f in range(n_frames):
        same = sim[f, (labels == labels[f]) & (np.arange(n_frames) != f)]
        cross = sim[f, labels != labels[f]]
        assert same.min() > cross.max()
