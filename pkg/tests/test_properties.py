import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import singular_values_oracle
from pesokit.linalg import qr_thin, svd_full, svd_top_r
from pesokit.optim import Beta2Warmup, beta2_at
from pesokit.runners import gate
from pesokit.subspace import project_svd_subspace
from pesokit.trace import RunTrace, TraceRecord

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
dims = st.integers(1, 7)


@st.composite
def matrices(draw, min_dim=1):
    m = draw(st.integers(min_dim, 7))
    n = draw(st.integers(min_dim, 7))
    return draw(arrays(np.float64, (m, n), elements=finite))


@settings(max_examples=150, deadline=None)
@given(matrices())
def test_svd_reconstructs_with_orthonormal_factors(a):
    f = svd_full(a)
    scale = max(np.linalg.norm(a), 1e-300)
    assert np.linalg.norm(f.reconstruct() - a) <= 1e-10 * scale
    k = min(a.shape)
    assert np.abs(f.u.T @ f.u - np.eye(k)).max() < 1e-10
    assert np.abs(f.vt @ f.vt.T - np.eye(k)).max() < 1e-10
    assert np.all(np.diff(f.sigma) <= 0) and np.all(f.sigma >= 0)


@settings(max_examples=150, deadline=None)
@given(matrices(), st.data())
def test_truncation_residual_is_tail_and_obeys_bound(a, data):
    k = min(a.shape)
    r = data.draw(st.integers(1, k))
    resid = float(np.sum((a - svd_top_r(a, r).reconstruct()) ** 2))
    total = float(np.sum(a * a))
    tail = float(np.sum(singular_values_oracle(a)[r:] ** 2))
    assert abs(resid - tail) <= 1e-8 * max(total, 1e-300)
    assert resid <= (1.0 - r / k) * total + 1e-12 * total


@settings(max_examples=100, deadline=None)
@given(matrices())
def test_qr_thin(a):
    tall = a if a.shape[0] >= a.shape[1] else a.T
    q = qr_thin(tall)
    assert np.linalg.norm(q.q @ q.r - tall) <= 1e-10 * max(np.linalg.norm(tall), 1.0)
    assert np.abs(q.q.T @ q.q - np.eye(tall.shape[1])).max() < 1e-10
    assert np.allclose(q.r, np.triu(q.r))


@settings(max_examples=100, deadline=None)
@given(matrices(min_dim=2), st.data())
def test_projection_is_idempotent(g, data):
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    r = data.draw(st.integers(1, min(g.shape)))
    f = svd_top_r(rng.standard_normal(g.shape), r)
    once = project_svd_subspace(g, f.u, f.vt)
    twice = project_svd_subspace(once, f.u, f.vt)
    assert np.linalg.norm(twice - once) <= 1e-10 * max(np.linalg.norm(g), 1.0)
    assert np.sum(once**2) <= np.sum(g**2) * (1 + 1e-12) + 1e-300


@given(st.integers(1, 10**6), st.integers(1, 500))
def test_gate_fires_on_residue_one(k, K):
    assert gate(k, K) == ((k - 1) % K == 0)
    assert gate(1, K)


@given(st.floats(0.5, 0.99), st.floats(0.0, 0.009), st.integers(1, 200), st.integers(1, 10**4))
def test_beta2_warmup_monotone(lo, gap, window, start):
    hi = min(lo + gap + 0.001, 0.9999)
    s = Beta2Warmup(lo, hi, window, start)
    vals = [beta2_at(s, start + t) for t in range(window + 3)]
    assert vals[0] == lo and vals[window] == hi
    assert all(a <= b for a, b in zip(vals, vals[1:]))


record = st.builds(
    lambda loss, g, d, rs, dv, inc, wall: (loss, g, d, rs, dv, inc, wall),
    st.floats(allow_nan=False, allow_infinity=False),
    st.floats(0, 1e300),
    st.none() | st.floats(0, 1e300),
    st.booleans(),
    st.booleans(),
    st.floats(0, 1e300),
    st.none() | st.floats(0, 1e6),
)


@given(st.lists(record, min_size=1, max_size=20))
def test_trace_round_trip(rows):
    t = RunTrace([TraceRecord(k + 1, *row) for k, row in enumerate(rows)])
    text = t.dumps()
    assert RunTrace.loads(text) == t
    assert RunTrace.loads(text).dumps() == text
