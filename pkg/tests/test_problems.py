import numpy as np
import pytest

from pesokit.errors import ParameterError
from pesokit.problems import (
    MLPObjective,
    NoiseModel,
    QuadraticObjective,
    central_difference,
    dump_problem,
    lora_grads,
    mlp_objective,
    noisy_grad,
    quadratic_objective,
    relative_error,
    spectral_grads,
)
from pesokit.linalg import read_matrix_csv
from pesokit.subspace import AdapterPair, SpectralAdapter


def test_quadratic_values():
    q = quadratic_objective(10.0, 16, 3)
    assert q.lipschitz == 2.0
    assert q.lora_floor == 100.0
    assert q.loss(np.zeros((16, 16))) == 400.0
    assert q.loss(q.target) == 0.0
    assert not np.any(q.full_grad(q.target))
    np.testing.assert_array_equal(np.diag(q.target)[:5], [10, 10, 10, 10, 0])


def test_quadratic_gradient_is_exact(rng):
    q = quadratic_objective()
    w = rng.standard_normal(q.shape)
    np.testing.assert_array_equal(q.full_grad(w), 2.0 * (w - q.target))


def test_quadratic_rank_one_truncation_leaves_floor():
    # best rank-3 approximation of M misses one a-sized direction
    q = quadratic_objective()
    approx = np.diag([10.0, 10.0, 10.0] + [0.0] * 13)
    assert q.loss(approx) == 100.0


def test_quadratic_validation():
    with pytest.raises(ParameterError):
        quadratic_objective(10.0, 3, 3)
    with pytest.raises(ParameterError):
        quadratic_objective(0.0, 8, 3)
    with pytest.raises(ParameterError):
        quadratic_objective().loss(np.zeros((3, 3)))


@pytest.mark.parametrize("make", [lambda: quadratic_objective(3.0, 5, 1), lambda: mlp_objective((5, 4, 2), 20, seed=3)])
def test_full_grad_matches_finite_differences(rng, make):
    obj = make()
    for _ in range(20):
        w = rng.standard_normal(obj.shape)
        assert relative_error(obj.full_grad(w), central_difference(obj.loss, w)) < 1e-6


def test_mlp_zero_data_gives_zero_gradient():
    obj = MLPObjective(np.zeros((4, 3)), np.zeros((4, 2)), np.ones((2, 5)))
    assert not np.any(obj.full_grad(np.zeros((5, 3))))
    assert obj.loss(np.zeros((5, 3))) == 0.0


def test_mlp_is_deterministic_and_non_negative(rng):
    a, b = mlp_objective(seed=7), mlp_objective(seed=7)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.initial_point(), b.initial_point())
    for _ in range(5):
        assert a.loss(rng.standard_normal(a.shape) * 3) >= 0.0


def test_mlp_degenerate_sizes():
    with pytest.raises(ParameterError):
        mlp_objective((0, 3, 2))
    with pytest.raises(ParameterError):
        mlp_objective((3, 2))


def test_lora_grads_trivial_cases(rng):
    g = rng.standard_normal((4, 5))
    ga, gb = lora_grads(g, AdapterPair(rng.standard_normal((4, 2)), np.zeros((2, 5))))
    assert not np.any(ga)
    ga, gb = lora_grads(g, AdapterPair(np.eye(4), rng.standard_normal((4, 5))))
    np.testing.assert_array_equal(gb, g)


def test_lora_grads_finite_differences(rng):
    obj = mlp_objective((4, 6, 2), 12, seed=1)
    w_t = rng.standard_normal(obj.shape)
    a, b = rng.standard_normal((6, 2)), rng.standard_normal((2, 4))
    ga, gb = lora_grads(obj.full_grad(w_t + a @ b), AdapterPair(a, b))
    assert relative_error(ga, central_difference(lambda x: obj.loss(w_t + x @ b), a)) < 1e-6
    assert relative_error(gb, central_difference(lambda x: obj.loss(w_t + a @ x), b)) < 1e-6


def test_lora_grads_shape_mismatch():
    with pytest.raises(ParameterError):
        lora_grads(np.ones((4, 5)), AdapterPair(np.ones((3, 2)), np.ones((2, 5))))


def test_spectral_grads_trivial_cases(rng):
    g = rng.standard_normal((4, 5))
    u, v = rng.standard_normal((4, 2)), rng.standard_normal((2, 5))
    gu, gxi, gv = spectral_grads(g, SpectralAdapter(u, np.zeros(2), v))
    assert not np.any(gu) and not np.any(gv)
    e_u = np.eye(4)[:, [1, 3]]
    e_v = np.eye(5)[[0, 2]]
    _, gxi, _ = spectral_grads(g, SpectralAdapter(e_u, np.ones(2), e_v))
    np.testing.assert_array_equal(gxi, [g[1, 0], g[3, 2]])


def test_spectral_grads_finite_differences(rng):
    obj = mlp_objective((5, 4, 3), 16, seed=2)
    w0 = rng.standard_normal(obj.shape)
    u, xi, v = rng.standard_normal((4, 2)), rng.standard_normal(2), rng.standard_normal((2, 5))
    gu, gxi, gv = spectral_grads(obj.full_grad(w0 + (u * xi) @ v), SpectralAdapter(u, xi, v))
    assert relative_error(gu, central_difference(lambda x: obj.loss(w0 + (x * xi) @ v), u)) < 1e-6
    assert relative_error(gxi, central_difference(lambda x: obj.loss(w0 + (u * x) @ v), xi)) < 1e-6
    assert relative_error(gv, central_difference(lambda x: obj.loss(w0 + (u * xi) @ x), v)) < 1e-6


def test_adapter_grads_linear_in_g(rng):
    ad = AdapterPair(rng.standard_normal((4, 2)), rng.standard_normal((2, 3)))
    g1, g2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    lhs = lora_grads(2.0 * g1 - g2, ad)
    rhs = [2.0 * x - y for x, y in zip(lora_grads(g1, ad), lora_grads(g2, ad))]
    for x, y in zip(lhs, rhs):
        np.testing.assert_allclose(x, y, atol=1e-13)


def test_noise_off_is_exact(rng):
    g = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(noisy_grad(g, NoiseModel(0.0, 1), 5), g)
    np.testing.assert_array_equal(noisy_grad(g, None, 5), g)


def test_noise_is_keyed_by_seed_and_step():
    g = np.zeros((3, 4))
    n = NoiseModel(1.0, 42)
    np.testing.assert_array_equal(noisy_grad(g, n, 7), noisy_grad(g, n, 7))
    assert not np.array_equal(noisy_grad(g, n, 7), noisy_grad(g, n, 8))
    assert not np.array_equal(noisy_grad(g, n, 7, 0), noisy_grad(g, n, 7, 1))


def test_noise_statistics():
    g = np.arange(12, dtype=float).reshape(3, 4)
    c = 1.0
    n = NoiseModel(c, 9)
    draws = np.stack([noisy_grad(g, n, k) for k in range(10000)])
    sigma = np.sqrt(c / g.size)
    assert np.all(np.abs(draws.mean(axis=0) - g) <= 3 * sigma / np.sqrt(10000) * 1.5)
    total_var = np.sum(draws.var(axis=0))
    assert total_var <= c * 1.1
    zero = np.stack([noisy_grad(np.zeros((3, 4)), n, k) for k in range(10000)])
    assert abs(np.sqrt(np.mean(zero**2)) - sigma) < 0.02 * sigma


def test_negative_variance_rejected():
    with pytest.raises(ParameterError):
        NoiseModel(-1.0)


def test_dump_problem(tmp_path):
    q = quadratic_objective()
    dump_problem(q, tmp_path / "q")
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "q" / "m.csv"), q.target)
    m = mlp_objective(seed=4)
    paths = dump_problem(m, tmp_path / "m")
    assert sorted(p.name for p in paths) == ["v.csv", "w0.csv", "x.csv", "y.csv"]
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m" / "x.csv"), m.x)


def test_objective_types():
    assert isinstance(quadratic_objective(), QuadraticObjective)
    assert mlp_objective().lipschitz is None
