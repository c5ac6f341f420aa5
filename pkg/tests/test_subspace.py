import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semgraph.errors import InputError
from semgraph.subspace import (FeatureWindow, default_lambda, innovation, pcp, rank_select,
                               reconcile, shrink, windowed_innovation)

D = 128


def normed(v):
    return v / np.linalg.norm(v)


def rank2_plus_sparse(seed, n=100, d=D, density=0.01):
    """Known-factor construction; the construction itself is the oracle."""
    rng = np.random.default_rng(seed)
    L0 = rng.standard_normal((n, 2)) @ rng.standard_normal((2, d))
    mask = rng.random((n, d)) < density
    S0 = np.where(mask, np.sign(rng.standard_normal((n, d))), 0.0)
    return L0, S0


def transient_stream(f, n, seed, noise=0.01, support=8, amp=1.2):
    """Two steady subspaces with a mid-transition frame at f that carries a
    coordinate-concentrated off-plane component (the innovation)."""
    rng = np.random.default_rng(seed)
    a = normed(rng.standard_normal(D))
    b = normed(rng.standard_normal(D))
    c = np.zeros(D)
    c[rng.choice(D, size=support, replace=False)] = rng.standard_normal(support)
    c -= (c @ a) * a + (c @ b) * b
    c = normed(c)
    rows = []
    for t in range(n):
        if t < f:
            base = a
        elif t == f:
            base = normed(0.5 * a + 0.5 * b + amp * c)
        else:
            base = b
        rows.append(normed(base + noise * rng.standard_normal(D)))
    return np.array(rows)


def step_stream(f, n, seed, noise=0.01):
    """Hard switch between two disjoint-support directions at frame f."""
    rng = np.random.default_rng(seed)
    a = np.zeros(D)
    a[:8] = 1 / np.sqrt(8)
    b = np.zeros(D)
    b[8:16] = 1 / np.sqrt(8)
    rows = []
    for t in range(n):
        v = (a if t < f else b) + noise * rng.standard_normal(D)
        rows.append(normed(v))
    return np.array(rows)


def base_track(rng, base, n, tid, noise=0.03):
    rows = np.tile(base, (n, 1)) + noise * rng.standard_normal((n, D))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return FeatureWindow(tid, tuple(range(n)), rows)


# -- shrink -------------------------------------------------------------------

def test_shrink_definition_cases():
    assert shrink(np.array([0.0]), 0.5)[0] == 0.0
    assert shrink(np.array([0.7]), 0.2)[0] == pytest.approx(0.5)
    assert shrink(np.array([-0.1]), 0.2)[0] == 0.0
    assert shrink(np.array([-0.7]), 0.2)[0] == pytest.approx(-0.5)


def test_shrink_matches_scalar_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((13, 7))
    lam = 0.3
    got = shrink(x, lam)
    for i in range(13):
        for j in range(7):
            v = x[i, j]
            expected = np.sign(v) * max(abs(v) - lam, 0.0)
            assert got[i, j] == pytest.approx(expected)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 5), elements=st.floats(-10, 10)), st.floats(0, 5))
def test_shrink_identity_and_contraction(x, lam):
    assert np.array_equal(shrink(x, 0.0), x)
    assert np.abs(shrink(x, lam)).sum() <= np.abs(x).sum() + 1e-9


# -- pcp ------------------------------------------------------------------------

def test_pcp_zero_matrix_converges_immediately():
    dec = pcp(np.zeros((6, 9)), lam=0.1, rank_policy=1)
    assert dec.iterations_used == 1
    assert dec.converged
    assert not dec.L.any() and not dec.S.any()


def test_pcp_exact_low_rank_with_large_lambda():
    rng = np.random.default_rng(2)
    d_mat = np.outer(rng.standard_normal(20), rng.standard_normal(30))
    dec = pcp(d_mat, lam=10.0, rank_policy=1, tol=1e-9)
    assert not dec.S.any()
    assert np.linalg.norm(dec.L - d_mat) / np.linalg.norm(d_mat) < 1e-9


def test_pcp_recovers_planted_factors():
    L0, S0 = rank2_plus_sparse(seed=0)
    dec = pcp(L0 + S0, lam=default_lambda(L0.shape), rank_policy=2, tol=1e-6)
    assert dec.converged
    assert np.linalg.norm(dec.L - L0) / np.linalg.norm(L0) <= 1e-2


def test_pcp_objective_never_increases():
    L0, S0 = rank2_plus_sparse(seed=3)
    dec = pcp(L0 + S0, lam=default_lambda(L0.shape), rank_policy="auto", tol=1e-8)
    objs = np.array(dec.objectives)
    assert len(objs) >= 2
    assert (np.diff(objs) <= 1e-9 * np.abs(objs[:-1])).all()


def test_pcp_rank_bound_is_exact():
    rng = np.random.default_rng(4)
    d_mat = rng.standard_normal((30, 40))
    for t in (1, 2, 5):
        dec = pcp(d_mat, lam=0.05, rank_policy=t, max_iter=20)
        assert np.linalg.matrix_rank(dec.L, tol=1e-8) <= t
        assert dec.t == t


def test_pcp_rejects_bad_input():
    with pytest.raises(InputError):
        pcp(np.array([[np.nan, 0.0]]), lam=0.1)
    with pytest.raises(InputError):
        pcp(np.zeros((3, 3)), lam=-1.0)
    with pytest.raises(InputError):
        pcp(np.zeros((3, 3)), rank_policy="magic")


# -- rank_select ------------------------------------------------------------------

def test_rank_select_exact_rank_one():
    rng = np.random.default_rng(5)
    m = np.outer(rng.standard_normal(20), rng.standard_normal(30))
    assert rank_select(m, np.zeros_like(m), 0.05) == 1


def test_rank_select_planted_rank_three():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((50, 3)) @ rng.standard_normal((3, 64))
    m = m + 1e-4 * rng.standard_normal(m.shape)
    assert rank_select(m, np.zeros_like(m), 0.05) == 3


def test_rank_select_zero_matrix():
    z = np.zeros((5, 8))
    assert rank_select(z, z, 0.05) == 0


def test_rank_select_stays_small_on_steady_feature_windows():
    # steady tracked-object windows should need no more than a few directions
    rng = np.random.default_rng(7)
    base = normed(rng.standard_normal(D))
    rows = np.tile(base, (40, 1)) + 0.02 * rng.standard_normal((40, D))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    assert rank_select(rows, np.zeros_like(rows), 0.05) <= 3


# -- innovation --------------------------------------------------------------------

def test_innovation_zero_sparse_component_has_no_peaks():
    dec = pcp(np.zeros((10, 16)), lam=0.1, rank_policy=1)
    series = innovation(dec, threshold=0.5)
    assert series.detected_peaks == ()
    assert (series.masses == 0).all()


def test_innovation_single_spiked_row():
    rng = np.random.default_rng(8)
    L0 = np.tile(normed(rng.standard_normal(16)), (12, 1))
    D_mat = L0.copy()
    D_mat[5] = D_mat[5] + np.eye(16)[3] * 2.0
    dec = pcp(D_mat, lam=0.1, rank_policy=1, tol=1e-8)
    series = innovation(dec, threshold=0.5)
    assert series.detected_peaks == (5,)


def test_innovation_peak_at_simulated_lighting_change():
    # full-clip analog: one decomposition over the whole stream, the sparse
    # mass maximal at the transition frame
    stream = transient_stream(f=106, n=160, seed=9)
    dec = pcp(stream, rank_policy=2, tol=1e-7)
    series = innovation(dec, threshold=1.0)
    assert series.detected_peaks == (106,)
    assert int(np.argmax(series.masses)) == 106


# -- windowed_innovation --------------------------------------------------------------

def test_windowed_constant_stream_is_flat():
    rng = np.random.default_rng(10)
    rows = np.tile(normed(rng.standard_normal(D)), (48, 1))
    series = windowed_innovation(rows, 8, threshold=1.0, rank_policy=1)
    assert series.detected_peaks == ()
    assert series.masses.max() == pytest.approx(0.0, abs=1e-9)
    assert len(series.masses) == 48


@pytest.mark.parametrize("buffer_size", [8, 16, 32])
@pytest.mark.parametrize("f", [13, 30, 37])
def test_windowed_peak_lands_on_change_frame(buffer_size, f):
    stream = transient_stream(f, 64, seed=3)
    series = windowed_innovation(stream, buffer_size, threshold=1.0, rank_policy=2)
    assert len(series.detected_peaks) == 1
    assert abs(series.detected_peaks[0] - f) <= 1


def test_windowed_peak_width_grows_with_buffer():
    widths = []
    for buffer_size in (8, 16, 32):
        series = windowed_innovation(step_stream(21, 64, seed=0), buffer_size,
                                     threshold=1.0, rank_policy=1)
        half_max = series.masses.max() / 2
        widths.append(int((series.masses >= half_max).sum()))
    assert widths == sorted(widths)
    assert widths[0] < widths[-1]


def test_windowed_rejects_tiny_buffers():
    with pytest.raises(InputError):
        windowed_innovation(np.zeros((4, 8)), 1)


def test_relative_threshold_scales_with_stream_energy():
    stream = transient_stream(30, 64, seed=3)
    absolute = windowed_innovation(stream, 16, threshold=1.0, rank_policy=2)
    # unit-norm rows have l1 energy well above 1; a relative fraction of it
    # should land near the same effective threshold
    relative = windowed_innovation(stream, 16, threshold=1.0, rank_policy=2,
                                   relative=True)
    energy = float(np.abs(stream).sum(axis=1).mean())
    assert relative.threshold == pytest.approx(energy)
    assert np.array_equal(relative.masses, absolute.masses)
    small = windowed_innovation(stream, 16, threshold=0.12, rank_policy=2,
                                relative=True)
    assert small.detected_peaks == (30,)


def test_relative_innovation_threshold():
    rng = np.random.default_rng(20)
    L0 = np.tile(normed(rng.standard_normal(16)), (12, 1))
    D_mat = L0.copy()
    D_mat[5] = D_mat[5] + np.eye(16)[3] * 2.0
    dec = pcp(D_mat, lam=0.1, rank_policy=1, tol=1e-8)
    series = innovation(dec, threshold=0.3, relative=True)
    assert series.detected_peaks == (5,)
    assert series.threshold > 0.3  # scaled by the per-row energy


# -- reconcile ----------------------------------------------------------------------

def test_reconcile_merges_identical_streams():
    rng = np.random.default_rng(11)
    base = normed(rng.standard_normal(D))
    rows = np.tile(base, (20, 1))
    tracks = {0: FeatureWindow(0, tuple(range(20)), rows),
              1: FeatureWindow(1, tuple(range(20)), rows)}
    assert reconcile(tracks) == [(0, 1)]


def test_reconcile_never_merges_orthogonal_streams():
    a = np.zeros(D)
    a[0] = 1.0
    b = np.zeros(D)
    b[1] = 1.0
    tracks = {0: FeatureWindow(0, (0, 1, 2), np.tile(a, (3, 1))),
              1: FeatureWindow(1, (0, 1, 2), np.tile(b, (3, 1)))}
    assert reconcile(tracks) == [(0,), (1,)]


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_reconcile_groups_fragmented_identity(seed):
    rng = np.random.default_rng(seed)
    u = normed(rng.standard_normal(D))
    v = normed(rng.standard_normal(D))
    tracks = {2: base_track(rng, u, 40, 2), 7: base_track(rng, u, 25, 7),
              16: base_track(rng, u, 12, 16), 17: base_track(rng, u, 18, 17),
              1: base_track(rng, v, 30, 1)}
    assert reconcile(tracks) == [(1,), (2, 7, 16, 17)]


def test_reconcile_is_order_invariant():
    rng = np.random.default_rng(12)
    u = normed(rng.standard_normal(D))
    v = normed(rng.standard_normal(D))
    tracks = {5: base_track(rng, u, 15, 5), 3: base_track(rng, u, 15, 3),
              9: base_track(rng, v, 15, 9)}
    reversed_tracks = dict(sorted(tracks.items(), reverse=True))
    assert reconcile(tracks) == reconcile(reversed_tracks)


def test_reconcile_excludes_short_tracks_with_warning():
    rng = np.random.default_rng(13)
    u = normed(rng.standard_normal(D))
    tracks = {0: base_track(rng, u, 10, 0), 1: base_track(rng, u, 10, 1),
              2: FeatureWindow(2, (0,), u[None, :])}
    with pytest.warns(UserWarning, match="track 2"):
        groups = reconcile(tracks)
    assert (2,) in groups


def test_reconcile_needs_two_tracks():
    rng = np.random.default_rng(14)
    with pytest.raises(InputError):
        reconcile({0: base_track(rng, normed(rng.standard_normal(D)), 5, 0)})
