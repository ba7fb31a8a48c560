import numpy as np
import pytest

import rmfgp.pipeline as pipeline
from rmfgp.benchmarks import advection_problem, linear_problem, nonlinear_problem, relative_error
from rmfgp.data import Dataset, Fidelity, make_nested, sample_uniform
from rmfgp.errors import DimensionOrder, NotNested, NotOrthogonal
from rmfgp.gp import GPConfig, fit_gp, predict
from rmfgp.pipeline import (
    RmfgpConfig,
    build_final_surrogate,
    finalize,
    rotate_inputs,
    run_loop,
    run_rmfgp,
)


def _data(prob, n_low, n_start, n_test, seed=0):
    XL = sample_uniform(n_low, prob.p, [seed, 0])
    low = Dataset(XL, prob.low_eval(XL), Fidelity.LOW)
    high = make_nested(low, n_start, prob.high_eval, [seed, 1])
    XT = sample_uniform(n_test, prob.p, [seed, 2])
    return low, high, Dataset(XT, prob.high_eval(XT), Fidelity.TEST)


SMALL = dict(batch_sizes=(3, 2), n_mc=20, low_restarts=2, high_restarts=2, surrogate_restarts=2)


@pytest.fixture(scope="module")
def linear_outcome():
    prob = linear_problem()
    low, high, test = _data(prob, 80, 15, 150)
    cfg = RmfgpConfig(**SMALL)
    return prob, test, cfg, run_loop(low, high, test, cfg, prob.high_eval)


def test_rotate_inputs_identities(rng):
    X = rng.random((7, 4))
    R1, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    R2, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    assert np.array_equal(rotate_inputs(X, np.eye(4)), X)
    assert np.allclose(rotate_inputs(rotate_inputs(X, R1), R1.T), X, atol=1e-10)
    assert np.allclose(rotate_inputs(rotate_inputs(X, R1), R2), rotate_inputs(X, R1 @ R2), atol=1e-10)
    with pytest.raises(NotOrthogonal):
        rotate_inputs(X, 2 * np.eye(4))


def test_rotation_bookkeeping(linear_outcome):
    _, _, cfg, out = linear_outcome
    assert len(out.A_hats) == cfg.iterations + 1
    assert out.final_high.n == 15 + 5
    eye = np.eye(6)
    for R in (out.A_T, *out.A_hats, out.M1):
        assert np.linalg.norm(R.T @ R - eye) < 1e-8
    prod = out.A_T
    for A in out.A_hats:
        prod = prod @ A
    assert np.allclose(prod, out.M1, atol=1e-12)
    errs = [h["test_relative_error"] for h in out.history]
    assert len(errs) == cfg.iterations + 1 and all(e >= 0 for e in errs)
    chosen = [c for h in out.history for c in h["chosen"]]
    assert len(set(chosen)) == 5


def test_flag1_dimension_bookkeeping(linear_outcome):
    prob, test, cfg, out = linear_outcome
    res = finalize(out, flag=1, d=2)
    assert res.M1_hat.shape == (6, 3) and res.M2.shape == (3, 2) and res.M.shape == (6, 2)
    assert np.linalg.norm(res.M.T @ res.M - np.eye(2)) < 1e-8
    assert res.projected.extra_parameters == 6
    # prediction is the reduced GP applied to the projected query
    mu, var = res.predict(test.X)
    mu2, var2 = predict(res.surrogate.model, test.X @ res.M)
    assert np.array_equal(mu, mu2) and np.array_equal(var, var2)


def test_dimension_order_enforced(linear_outcome):
    _, _, cfg, out = linear_outcome
    with pytest.raises(DimensionOrder):
        finalize(out, flag=1, d=3)
    bad = pipeline.LoopOutcome(out.A_T, out.A_hats, out.M1, out.final_sdr, out.final_high,
                               out.final_model, out.history, out.n_test,
                               RmfgpConfig(s=6, **SMALL))
    with pytest.raises(DimensionOrder):
        finalize(bad, flag=1, d=2)


def test_final_surrogate_interpolates_through_transform(linear_outcome):
    _, _, cfg, out = linear_outcome
    pinned = RmfgpConfig(surrogate_noise=0.0, **SMALL)
    sur = build_final_surrogate(out.M1, out.final_high, pinned)
    mu, _ = sur.predict(out.final_high.X)
    assert np.max(np.abs(mu - out.final_high.y)) < 1e-6


def test_identity_rotations_reduce_to_plain_gp():
    prob = linear_problem()
    low, high, test = _data(prob, 60, 12, 80, seed=3)
    cfg = RmfgpConfig(flag=0, identity_rotations=True, **SMALL)
    res = run_rmfgp(low, high, test, cfg, prob.high_eval)
    assert np.array_equal(res.M1, np.eye(6))
    plain = fit_gp(res.final_high.X, res.final_high.y, cfg.surrogate_gp())
    mu, var = res.predict(test.X)
    mu2, var2 = predict(plain, test.X)
    assert np.max(np.abs(mu - mu2)) < 1e-8 and np.max(np.abs(var - var2)) < 1e-8


def test_sign_of_rotation_does_not_matter(monkeypatch):
    prob = advection_problem()
    low, high, test = _data(prob, 80, 10, 150, seed=2)
    cfg = RmfgpConfig(flag=0, **SMALL)
    ref = run_loop(low, high, test, cfg, prob.high_eval)

    original = pipeline.ESTIMATORS["save"]

    def flipped(X, y, H):
        res = original(X, y, H)
        signs = np.where(np.arange(res.p) % 2 == 0, -1.0, 1.0)
        return pipeline.replace(res, rotation=res.rotation * signs)

    monkeypatch.setitem(pipeline.ESTIMATORS, "save", flipped)
    alt = run_loop(low, high, test, cfg, prob.high_eval)
    from rmfgp.sdr import subspace_distance
    for k in range(1, 5):
        assert subspace_distance(ref.M1[:, :k], alt.M1[:, :k]) < 1e-8
    e_ref = ref.history[-1]["test_relative_error"]
    e_alt = alt.history[-1]["test_relative_error"]
    assert abs(e_ref - e_alt) < 0.5 * max(e_ref, e_alt) + 1e-3


def test_input_checks():
    prob = linear_problem()
    low, high, test = _data(prob, 40, 10, 30)
    shifted = Dataset(high.X + 1e-3, high.y, Fidelity.HIGH)
    with pytest.raises(NotNested):
        run_loop(low, shifted, test, RmfgpConfig(**SMALL), prob.high_eval)
    two = Dataset(high.X[:2], high.y[:2], Fidelity.HIGH)
    with pytest.raises(ValueError):
        run_loop(low, two, test, RmfgpConfig(**SMALL), prob.high_eval)
    with pytest.raises(ValueError):
        RmfgpConfig(flag=2)


def test_nonlinear_example_selects_one_direction():
    prob = nonlinear_problem()
    low, high, test = _data(prob, 200, 15, 500)
    res = run_rmfgp(low, high, test, RmfgpConfig(batch_sizes=(2, 3)), prob.high_eval)
    assert res.d_hat == 1
    assert relative_error(test.y, res.predict(test.X)[0]) <= 0.03


def test_advection_example_error():
    prob = advection_problem()
    low, high, test = _data(prob, 200, 20, 500)
    res = run_rmfgp(low, high, test, RmfgpConfig(batch_sizes=(5, 5)), prob.high_eval)
    assert res.final_high.n == 30
    assert relative_error(test.y, res.predict(test.X)[0]) <= 0.35
