import numpy as np
import pytest

from ddmhe import mhe, qp
from ddmhe.behavioral import build_stack
from helpers import random_offset_system, simulate_affine


def _system(seed=0, n=3, p=3, steps=200):
    rng = np.random.default_rng(seed)
    a, e, c, r = random_offset_system(rng, n, p)
    hist = simulate_affine(a, e, c, r, rng.standard_normal(n), steps)
    return (a, e, c, r), hist, rng


class TestMheParams:
    def test_accepts_reference_weightings(self):
        for rho, m in ((0.9, 20), (0.8, 10)):
            params = mhe.MheParams(rho=rho, mu=1e5, horizon=m, prior=np.zeros(3))
            assert params.kappa == pytest.approx(4.0 * rho**m)
            assert params.kappa < 1.0

    def test_rejects_non_contractive_weightings(self):
        # 4 * rho^M >= 1
        for rho, m in ((0.9, 13), (0.99, 100), (0.8, 6)):
            assert 4.0 * rho**m >= 1.0
            with pytest.raises(ValueError, match="contraction gate"):
                mhe.MheParams(rho=rho, mu=1e5, horizon=m, prior=np.zeros(3))

    def test_rejects_out_of_range_scalars(self):
        with pytest.raises(ValueError, match="rho"):
            mhe.MheParams(rho=1.0, mu=1e5, horizon=10, prior=np.zeros(3))
        with pytest.raises(ValueError, match="mu"):
            mhe.MheParams(rho=0.8, mu=0.0, horizon=10, prior=np.zeros(3))
        with pytest.raises(ValueError, match="horizon"):
            mhe.MheParams(rho=0.8, mu=1e5, horizon=0, prior=np.zeros(3))

    def test_rejects_unknown_constraints(self):
        with pytest.raises(ValueError, match="state constraint"):
            mhe.MheParams(
                rho=0.8, mu=1e5, horizon=10, prior=np.zeros(3),
                state_constraint=("ball", 1.0),
            )
        with pytest.raises(ValueError, match="noise constraint"):
            mhe.MheParams(
                rho=0.8, mu=1e5, horizon=10, prior=np.zeros(3),
                noise_constraint=("ellipse", 1.0),
            )


def test_noise_free_consistency_short_run():
    (a, e, c, r), hist, rng = _system(seed=1)
    online = simulate_affine(a, e, c, r, hist.states[-1], 60)
    params = mhe.MheParams(
        rho=0.9, mu=1e8, horizon=14,
        prior=online.states[0] + 0.3 * rng.standard_normal(3),
    )
    estimates, results = mhe.run(hist, online.outputs, params)
    err = np.linalg.norm(estimates[1:] - online.states[1:61], axis=1)
    assert err.max() < 1e-6
    assert all(res.qp_status == "optimal" for res in results)


def test_assemble_matches_estimator_step():
    # the reduced-coordinate step must agree with the direct assembly
    _, hist, rng = _system(seed=2, steps=60)
    params = mhe.MheParams(
        rho=0.6, mu=1e4, horizon=4, prior=rng.standard_normal(3)
    )
    y_stream = rng.standard_normal((3, 3))
    est = mhe.Estimator(hist, params)
    for t, y in enumerate(y_stream, start=1):
        res = est.step(y)
        m_t = min(t, params.horizon)
        stack = build_stack(hist, m_t)
        y_window = y_stream[t - m_t : t].ravel()
        anchor = params.prior
        prob = mhe.assemble(stack, y_window, anchor, params, t)
        direct = qp.solve(prob)
        width = stack.width
        x_direct = direct.x[width : width + (m_t + 1) * 3]
        np.testing.assert_allclose(
            res.x_window.ravel(), x_direct, atol=1e-6
        )


def test_assemble_validates_window():
    _, hist, rng = _system(seed=3, steps=40)
    params = mhe.MheParams(rho=0.6, mu=1e4, horizon=4, prior=np.zeros(3))
    stack = build_stack(hist, 2)
    with pytest.raises(ValueError, match="does not match"):
        mhe.assemble(stack, np.zeros(6), np.zeros(3), params, t=4)
    with pytest.raises(ValueError, match="y_window"):
        mhe.assemble(stack, np.zeros(5), np.zeros(3), params, t=2)


def test_prior_anchor_switches_after_horizon():
    (a, e, c, r), hist, rng = _system(seed=4, steps=80)
    online = simulate_affine(a, e, c, r, hist.states[-1], 12)
    params = mhe.MheParams(
        rho=0.6, mu=1e6, horizon=5, prior=online.states[0] + 0.1
    )
    est = mhe.Estimator(hist, params)
    for k in range(12):
        est.step(online.outputs[k])
        t = est.t
        m_t = min(t, params.horizon)
        anchor = est.prior_anchor(m_t)
        if t <= params.horizon:
            np.testing.assert_array_equal(anchor, params.prior)
        else:
            # the anchor is the estimate published a full window ago,
            # which differs from the initial prior once estimates move
            np.testing.assert_array_equal(anchor, est.published[t - m_t])
            assert not np.array_equal(anchor, params.prior)


def test_infeasible_state_box_raises():
    (a, e, c, r), hist, rng = _system(seed=5, steps=80)
    online = simulate_affine(a, e, c, r, hist.states[-1], 5)
    span = np.abs(hist.states).max()
    params = mhe.MheParams(
        rho=0.6, mu=1e5, horizon=3, prior=np.zeros(3),
        state_constraint=(
            "fixed-box",
            np.full(3, 100.0 * span),
            np.full(3, 101.0 * span),
        ),
    )
    est = mhe.Estimator(hist, params)
    with pytest.raises(mhe.MheInfeasibleError, match="infeasible"):
        for k in range(5):
            est.step(online.outputs[k])


def test_run_final_time_gate():
    _, hist, rng = _system(seed=6, steps=60)
    params = mhe.MheParams(
        rho=0.6, mu=1e5, horizon=3, prior=np.zeros(3), final_time=10
    )
    with pytest.raises(ValueError, match="final_time"):
        mhe.run(hist, np.zeros((5, 3)), params)


def test_rges_bound_recursion_identity():
    rng = np.random.default_rng(7)
    kappa, mu = 0.4, 1e3
    w = rng.standard_normal((12, 3)) * 1e-3
    v = rng.standard_normal((12, 2)) * 1e-3
    e0 = 0.7
    root = np.sqrt(kappa)
    running = e0
    for t in range(1, 13):
        running = root * running + np.sqrt(mu) * (
            np.linalg.norm(w[t - 1]) + np.sqrt(2.0) * np.linalg.norm(v[t - 1])
        )
        direct = mhe.rges_bound(t, [e0, 0.0, 0.0], w[:t], v[:t], kappa, mu)
        assert direct == pytest.approx(running, rel=1e-12)
    with pytest.raises(ValueError, match="kappa"):
        mhe.rges_bound(1, 1.0, w, v, 1.5, mu)


def test_lyapunov_check_formula():
    params = mhe.MheParams(rho=0.6, mu=100.0, horizon=3, prior=np.zeros(2))
    truth = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])  # m_t = 2
    x_hat = np.array([1.0, 0.5])
    anchor = np.array([0.5, 0.0])
    w = np.array([[0.1, 0.0], [0.0, 0.2]])
    v = np.array([[0.05], [0.01]])
    lhs, rhs, holds = mhe.lyapunov_check(truth, x_hat, anchor, w, v, params)
    assert lhs == pytest.approx(0.25)
    expected = 4.0 * 0.6**2 * 0.25
    # j = 1 -> slot 1, j = 2 -> slot 0
    expected += 100.0 * (0.2**2 + 2 * 0.01**2)
    expected += 0.6 * 100.0 * (0.1**2 + 2 * 0.05**2)
    assert rhs == pytest.approx(expected)
    assert holds


def test_lyapunov_check_absolute_slack():
    # identically-zero bound with round-off-level error still passes
    params = mhe.MheParams(rho=0.6, mu=100.0, horizon=3, prior=np.zeros(2))
    truth = np.array([[1.0, 0.0], [1.0, 1.0]])
    x_hat = truth[-1] + 1e-12
    lhs, rhs, holds = mhe.lyapunov_check(
        truth, x_hat, truth[0], np.zeros((1, 2)), np.zeros((1, 1)), params
    )
    assert rhs == 0.0
    assert holds
