import numpy as np
import pytest

from oracles import gaussian_target_loops, ot_cvxpy, ot_objective, ot_slsqp
from ssdcount.loss import (
    GenLossConfig,
    TransportProblem,
    cell_centers,
    cost_matrix,
    generalized_loss,
    initial_plan,
    loss_gradient,
    mse_loss,
    objective,
    render_gaussian,
    solve,
)
from ssdcount.tensor import Tensor

F64 = np.float64


def random_problem(rng, eps, tau, n=None, m=None):
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 4))
    a = rng.uniform(0, 1, n) * rng.uniform(0.2, 2)
    return TransportProblem.from_coords(a, rng.uniform(0, 1, (n, 2)), rng.uniform(0, 1, (m, 2)),
                                        eps=eps, tau=tau)


def test_cost_matrix_hand_case():
    c = cost_matrix([[0.0, 0.0]], [[0.0, 0.0], [3.0, 4.0]])
    np.testing.assert_array_equal(c, [[0.0, 25.0]])
    np.testing.assert_allclose(cost_matrix([[0.0, 0.0]], [[3.0, 4.0]], scale=5.0), [[1.0]])


def test_no_points_gives_tau_a_squared():
    a = np.array([0.3, 0.5, 0.2])
    prob = TransportProblem(a=a, b=np.zeros(0), cost=np.zeros((3, 0)), eps=0.01, tau=0.1)
    res = solve(prob)
    assert res.loss == 0.1 * float((a ** 2).sum())
    np.testing.assert_allclose(loss_gradient(prob, res.plan), 0.2 * a)


def test_objective_matches_reference_formula():
    rng = np.random.default_rng(0)
    prob = random_problem(rng, 0.1, 1.0, 4, 3)
    D = rng.uniform(0, 0.5, size=(4, 3))
    D[0, 0] = 0.0
    assert objective(prob, D) == pytest.approx(
        ot_objective(prob.cost, D, prob.a, prob.b, prob.eps, prob.tau), abs=1e-14)


def test_scalar_problem_matches_grid_search():
    eps, tau = 0.01, 1.0
    for a0, c0 in [(0.4, 0.2), (1.5, 0.05), (0.9, 0.6)]:
        prob = TransportProblem(a=np.array([a0]), b=np.ones(1), cost=np.array([[c0]]),
                                eps=eps, tau=tau)
        grid = np.arange(0.0, 2.0 + 1e-12, 1e-5)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(grid > 0, grid * np.log(grid), 0.0)
        vals = c0 * grid + eps * ent + tau * (grid - a0) ** 2 + tau * np.abs(grid - 1.0)
        assert abs(solve(prob).loss - vals.min()) < 1e-6


def test_matches_slack_reformulation_oracle():
    rng = np.random.default_rng(4)
    prob = random_problem(rng, 0.1, 1.0, 4, 2)
    ref = ot_slsqp(prob.cost, prob.a, prob.b, prob.eps, prob.tau)
    res = solve(prob)
    assert res.loss <= ref + 1e-3
    assert res.loss >= ref - 1e-3


@pytest.mark.parametrize("eps,tau", [(0.1, 0.1), (0.01, 1.0)])
def test_matches_conic_solver(eps, tau):
    rng = np.random.default_rng(int(eps * 1000 + tau))
    for _ in range(5):
        prob = random_problem(rng, eps, tau)
        ref, _ = ot_cvxpy(prob.cost, prob.a, prob.b, eps, tau)
        assert abs(solve(prob).loss - ref) < 1e-3


def test_result_never_worse_than_initial_plan():
    rng = np.random.default_rng(7)
    for method in ("scaling", "mirror"):
        for _ in range(10):
            prob = random_problem(rng, 0.01, 0.1)
            res = solve(prob, method=method)
            assert res.loss <= objective(prob, initial_plan(prob)) + 1e-15
            assert all(x >= y for x, y in zip(res.history, res.history[1:]))


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        solve(random_problem(np.random.default_rng(0), 0.1, 0.1), method="newton")


def test_envelope_gradient_matches_finite_difference():
    rng = np.random.default_rng(11)
    prob = random_problem(rng, 0.1, 1.0, 5, 2)
    g = loss_gradient(prob, solve(prob, tol=1e-12, max_iter=5000).plan)
    h = 1e-5
    for i in range(prob.n):
        ap, am = prob.a.copy(), prob.a.copy()
        ap[i] += h
        am[i] -= h
        fp = solve(TransportProblem(ap, prob.b, prob.cost, prob.eps, prob.tau), 5000, 1e-12).loss
        fm = solve(TransportProblem(am, prob.b, prob.cost, prob.eps, prob.tau), 5000, 1e-12).loss
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g[i]) <= 1e-2 * max(abs(fd), abs(g[i]), 1e-6)


def test_invalid_problem_rejected():
    with pytest.raises(ValueError):
        TransportProblem(a=np.array([-0.1]), b=np.ones(1), cost=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        TransportProblem(a=np.ones(1), b=np.ones(1), cost=np.zeros((1, 1)), eps=0.0)


def test_cell_centers():
    c = cell_centers(16, 8, 8)
    np.testing.assert_array_equal(c, [[4, 4], [4, 12]])


def test_generalized_loss_backward_spreads_pooled_gradient():
    rng = np.random.default_rng(3)
    dens = Tensor(rng.uniform(0, 0.05, size=(1, 16, 24)), requires_grad=True, dtype=F64)
    pts = np.array([[5.0, 5.0], [18.0, 9.0], [10.0, 12.0]])
    cfg = GenLossConfig(eps=0.01, tau=0.1, pool=8)
    loss, res = generalized_loss(dens, pts, cfg)
    loss.backward()
    a = dens.data[0].reshape(2, 8, 3, 8).sum(axis=(1, 3)).ravel()
    prob = TransportProblem.from_coords(a, cell_centers(16, 24, 8), pts, scale=np.hypot(16, 24),
                                        eps=0.01, tau=0.1)
    ga = loss_gradient(prob, res.plan).reshape(2, 3)
    np.testing.assert_allclose(dens.grad[0], np.kron(ga, np.ones((8, 8))), atol=1e-12)
    assert res.diagnostics()["ot_iterations"] == res.iterations


def test_generalized_loss_prefers_correct_mass():
    """On a dot-like density the loss is lower at the true count than at zero or double."""
    pts = np.array([[12.0, 12.0], [40.0, 20.0], [60.0, 44.0]])
    target = render_gaussian(pts, 64, 96, 2.0)
    vals = {}
    for k in (0.0, 1.0, 2.0):
        vals[k] = generalized_loss(Tensor(k * target + 1e-9, dtype=F64), pts)[0].item()
    assert vals[1.0] < vals[0.0] and vals[1.0] < vals[2.0]


def test_gaussian_target_matches_loops():
    pts = np.array([[3.2, 4.7], [0.4, 0.1], [9.9, 7.5]])
    np.testing.assert_allclose(render_gaussian(pts, 8, 10, 1.3)[0],
                               gaussian_target_loops(pts, 8, 10, 1.3), atol=1e-12)


def test_gaussian_target_interior_mass_is_one_per_point():
    pts = np.array([[20.0, 20.0], [50, 30]])
    assert render_gaussian(pts, 64, 80, 2.0).sum() == pytest.approx(2.0)


def test_mse_hand_case():
    pred = Tensor(np.zeros((1, 2, 2)), requires_grad=True, dtype=F64)
    target = np.array([[[1.0, 0.0], [0.0, 2.0]]])
    loss = mse_loss(pred, np.zeros((0, 2)), target=target)
    assert loss.item() == 5.0
    loss.backward()
    np.testing.assert_allclose(pred.grad, -2 * target)
