"""Transport solver tests: cost matrices, dual solves, debiasing, gradients."""

import itertools

import numpy as np
import pytest

from lvinfer.sinkhorn import (
    DualPotentials,
    SinkhornConfig,
    cost_matrix,
    exact_ot_assignment,
    log_plan,
    ot_rho,
    sinkhorn_divergence,
    sinkhorn_grad,
    sinkhorn_potentials,
)

UNIFORM = lambda n: np.full(n, 1.0 / n)


def test_cost_matrix_single_pair_l2():
    C = cost_matrix(np.array([[0.0]]), np.array([[3.0]]), "l2")
    assert C == pytest.approx(np.array([[3.0]]))


def test_cost_matrix_zero_diagonal():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 3))
    for kind in ("l1", "l2", "half_sq_l2"):
        C = cost_matrix(X, X, kind)
        assert np.allclose(np.diag(C), 0.0)
        assert np.allclose(C, C.T)
        assert np.all(C >= 0.0)


def test_cost_matrix_half_sq_l2_value():
    C = cost_matrix(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), "half_sq_l2")
    assert C[0, 0] == pytest.approx(12.5)


def test_cost_matrix_dim_mismatch_rejected():
    with pytest.raises(ValueError, match="feature dims"):
        cost_matrix(np.zeros((2, 2)), np.zeros((2, 3)))


def test_single_atom_problem():
    cfg = SinkhornConfig(rho=0.7)
    pot = sinkhorn_potentials(np.ones(1), np.ones(1), np.array([[0.0]]), cfg)
    assert pot.converged
    assert pot.alpha[0] + pot.beta[0] == pytest.approx(0.0, abs=1e-12)
    P = np.exp(log_plan(np.ones(1), np.ones(1), np.array([[0.0]]), pot))
    assert P[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_identical_cost_rows_give_product_coupling():
    # cost indifference across rows: transport cost is constant, entropy wins
    rng = np.random.default_rng(1)
    a = rng.random(4)
    a /= a.sum()
    b = rng.random(5)
    b /= b.sum()
    row = rng.random(5)
    C = np.tile(row, (4, 1))
    cfg = SinkhornConfig(rho=0.3, stop_tol=1e-12, max_iters=5000)
    pot = sinkhorn_potentials(a, b, C, cfg)
    P = np.exp(log_plan(a, b, C, pot))
    assert np.allclose(P, np.outer(a, b), atol=1e-10)


def test_plan_marginals_match_weights():
    rng = np.random.default_rng(2)
    for _ in range(5):
        X = rng.normal(size=(7, 2))
        Y = rng.normal(size=(5, 2))
        C = cost_matrix(X, Y, "half_sq_l2")
        cfg = SinkhornConfig(rho=0.2 * float(C.mean()), stop_tol=1e-8, max_iters=20000)
        a, b = UNIFORM(7), UNIFORM(5)
        pot = sinkhorn_potentials(a, b, C, cfg)
        assert pot.converged
        P = np.exp(log_plan(a, b, C, pot))
        assert np.max(np.abs(P.sum(axis=1) - a)) < 10 * cfg.stop_tol
        assert np.max(np.abs(P.sum(axis=0) - b)) < 10 * cfg.stop_tol


def test_zero_weight_atoms_dropped():
    X = np.array([[0.0], [1.0], [50.0]])
    Y = np.array([[0.0], [1.0]])
    a = np.array([0.5, 0.5, 0.0])  # third atom carries no mass
    b = np.array([0.5, 0.5])
    cfg = SinkhornConfig(rho=0.05, stop_tol=1e-10, max_iters=10000)
    with_zero = ot_rho(X, Y, a, b, cfg)
    without = ot_rho(X[:2], Y, b, b, cfg)
    assert with_zero.value == pytest.approx(without.value, abs=1e-12)
    assert with_zero.potentials.alpha[2] == 0.0


def test_small_rho_matches_assignment_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 2))
    Y = rng.normal(size=(4, 2))
    C = cost_matrix(X, Y, "half_sq_l2")
    rho = 1e-3 * float(C.mean())
    cfg = SinkhornConfig(rho=rho, stop_tol=1e-7, max_iters=5000)
    res = ot_rho(X, Y, UNIFORM(4), UNIFORM(4), cfg)
    exact = exact_ot_assignment(X, Y, "half_sq_l2")
    assert abs(res.value - exact) <= 0.02 * exact


def test_ot_identical_diracs_zero():
    X = np.array([[1.5, -2.0]])
    cfg = SinkhornConfig(rho=0.4, cost="l2")
    res = ot_rho(X, X, np.ones(1), np.ones(1), cfg)
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_ot_two_diracs_distance():
    X = np.array([[0.0]])
    Y = np.array([[3.0]])
    for rho in (0.01, 0.5, 2.0):
        res = ot_rho(X, Y, np.ones(1), np.ones(1), SinkhornConfig(rho=rho, cost="l2"))
        assert res.value == pytest.approx(3.0, abs=1e-9)


def test_ot_five_point_clouds_match_oracle():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(5, 2))
    Y = rng.normal(size=(5, 2)) + 0.5
    C = cost_matrix(X, Y, "l2")
    cfg = SinkhornConfig(
        rho=1e-3 * float(C.mean()), stop_tol=1e-7, max_iters=5000, cost="l2"
    )
    res = ot_rho(X, Y, UNIFORM(5), UNIFORM(5), cfg)
    exact = exact_ot_assignment(X, Y, "l2")
    assert abs(res.value - exact) <= 0.02 * exact


def test_ot_rho_monotone_in_rho():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 2))
    Y = rng.normal(size=(6, 2))
    C = cost_matrix(X, Y, "half_sq_l2")
    scale = float(C.mean())
    rhos = scale * np.geomspace(1.0, 1e-3, 7)
    values = []
    for rho in rhos:
        cfg = SinkhornConfig(rho=float(rho), stop_tol=1e-7, max_iters=5000)
        values.append(ot_rho(X, Y, UNIFORM(6), UNIFORM(6), cfg).value)
    exact = exact_ot_assignment(X, Y, "half_sq_l2")
    for hi, lo in zip(values, values[1:]):
        assert lo <= hi + 1e-8
    assert values[-1] >= exact - 1e-8
    assert abs(values[-1] - exact) <= 0.02 * exact


def test_divergence_self_is_zero():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(10, 3))
    cfg = SinkhornConfig(rho=0.5, stop_tol=1e-12, max_iters=20000)
    res = sinkhorn_divergence(X, X, UNIFORM(10), UNIFORM(10), cfg)
    assert abs(res.value) <= 1e-9


def test_divergence_symmetry():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(8, 2))
    Y = rng.normal(size=(6, 2)) + 1.0
    cfg = SinkhornConfig(rho=0.3, stop_tol=1e-12, max_iters=20000)
    ab = sinkhorn_divergence(X, Y, UNIFORM(8), UNIFORM(6), cfg)
    ba = sinkhorn_divergence(Y, X, UNIFORM(6), UNIFORM(8), cfg)
    assert abs(ab.value - ba.value) <= 1e-9


def test_divergence_separated_clouds_near_exact():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(4, 2))
    Y = rng.normal(size=(4, 2)) + 12.0
    C = cost_matrix(X, Y, "half_sq_l2")
    cfg = SinkhornConfig(rho=1e-3 * float(C.mean()), stop_tol=1e-7, max_iters=5000)
    res = sinkhorn_divergence(X, Y, UNIFORM(4), UNIFORM(4), cfg)
    cross = exact_ot_assignment(X, Y, "half_sq_l2")
    self_x = exact_ot_assignment(X, X, "half_sq_l2")
    self_y = exact_ot_assignment(Y, Y, "half_sq_l2")
    assert self_x == 0.0 and self_y == 0.0
    assert abs(res.value - cross) <= 0.02 * cross


def test_divergence_positive_for_distinct_clouds():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(12, 2))
    Y = rng.normal(size=(12, 2)) + 2.0
    cfg = SinkhornConfig(rho=0.5, stop_tol=1e-10, max_iters=20000)
    assert sinkhorn_divergence(X, Y, UNIFORM(12), UNIFORM(12), cfg).value > 0.1


def test_grad_zero_at_coincident_clouds():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(6, 2))
    cfg = SinkhornConfig(rho=0.3, stop_tol=1e-12, max_iters=20000)
    res = sinkhorn_grad(X, X.copy(), UNIFORM(6), UNIFORM(6), cfg)
    assert np.max(np.abs(res.grad)) < 1e-9


def test_grad_single_atom_pair():
    # d/dxhat S_rho for one atom each under half squared l2 is (xhat - x)
    cfg = SinkhornConfig(rho=0.2, stop_tol=1e-12, max_iters=10000)
    for xhat in (-1.3, 0.4, 2.2):
        res = sinkhorn_grad(
            np.array([[0.5]]), np.array([[xhat]]), np.ones(1), np.ones(1), cfg
        )
        assert res.grad[0, 0] == pytest.approx(xhat - 0.5, abs=1e-3)


def _fd_grad(X, Xhat, a, b, cfg, h=1e-6):
    g = np.zeros_like(Xhat)
    for idx in itertools.product(*(range(s) for s in Xhat.shape)):
        Zp = Xhat.copy()
        Zp[idx] += h
        Zm = Xhat.copy()
        Zm[idx] -= h
        fp = sinkhorn_divergence(X, Zp, a, b, cfg).value
        fm = sinkhorn_divergence(X, Zm, a, b, cfg).value
        g[idx] = (fp - fm) / (2 * h)
    return g


@pytest.mark.parametrize("cost", ["half_sq_l2", "l2"])
def test_grad_matches_finite_differences(cost):
    rng = np.random.default_rng(11)
    X = rng.normal(size=(6, 2))
    Xhat = rng.normal(size=(6, 2)) + 0.7
    a, b = UNIFORM(6), UNIFORM(6)
    cfg = SinkhornConfig(rho=0.1, stop_tol=1e-13, max_iters=50000, cost=cost)
    res = sinkhorn_grad(X, Xhat, a, b, cfg)
    fd = _fd_grad(X, Xhat, a, b, cfg)
    rel = np.abs(res.grad - fd) / (np.abs(res.grad) + np.abs(fd) + 1e-12)
    assert np.max(rel) < 1e-3


def test_exact_assignment_identity_zero():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(5, 2))
    assert exact_ot_assignment(X, X) == 0.0


def test_exact_assignment_monotone_1d():
    # sorted matching is optimal in 1-D for convex costs
    X = np.array([[0.0], [1.0], [2.5]])
    Y = np.array([[2.0], [0.3], [1.1]])
    val = exact_ot_assignment(X, Y, "half_sq_l2")
    xs = np.sort(X.ravel())
    ys = np.sort(Y.ravel())
    assert val == pytest.approx(float(np.mean(0.5 * (xs - ys) ** 2)), abs=1e-14)


def test_exact_assignment_is_brute_force():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(5, 2))
    Y = rng.normal(size=(5, 2))
    C = cost_matrix(X, Y, "half_sq_l2")
    best = min(
        C[np.arange(5), list(p)].sum() / 5 for p in itertools.permutations(range(5))
    )
    assert exact_ot_assignment(X, Y) == pytest.approx(best, abs=1e-14)


def test_exact_assignment_size_limits():
    with pytest.raises(ValueError, match="n <= 8"):
        exact_ot_assignment(np.zeros((9, 1)), np.zeros((9, 1)))
    with pytest.raises(ValueError, match="equal sizes"):
        exact_ot_assignment(np.zeros((3, 1)), np.zeros((4, 1)))


def test_config_validation():
    with pytest.raises(ValueError, match="rho"):
        SinkhornConfig(rho=0.0)
    with pytest.raises(ValueError, match="cost"):
        SinkhornConfig(rho=1.0, cost="chebyshev")


def test_non_convergence_flagged():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(8, 2))
    Y = rng.normal(size=(8, 2)) + 5.0
    C = cost_matrix(X, Y, "half_sq_l2")
    cfg = SinkhornConfig(rho=1e-4 * float(C.mean()), stop_tol=1e-14, max_iters=3)
    pot = sinkhorn_potentials(UNIFORM(8), UNIFORM(8), C, cfg)
    assert not pot.converged
    assert pot.iterations == 3
