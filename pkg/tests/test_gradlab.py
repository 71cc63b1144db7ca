import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchnet.gradlab import (
    ToyModel,
    analytic_grad_wS,
    analytic_grad_wT,
    baseline_forward,
    baseline_grad_wT,
    coupling_report,
    engine_grads,
    fd_grad,
    grad_wT_terms,
    rel_err,
    run_suite,
    toy_forward,
)


def instance(seed, K=None):
    rng = np.random.default_rng(seed)
    return ToyModel.random(rng, K or int(rng.integers(2, 11)))


def with_(m, **kw):
    fields = dict(x=m.x, y=m.y, wT=m.wT, wS=m.wS)
    fields.update(kw)
    return ToyModel(**fields)


def naive_loss(m):
    """Scalar loops, written independently of the vectorized forward."""
    s = 0.0
    for k in range(m.K):
        s += m.wS[k] * m.wT[k]
    z = [m.wT[i] * m.x * s for i in range(m.K)]
    denom = sum(np.exp(v) for v in z)
    return -np.log(np.exp(z[m.label]) / denom)


class TestForward:
    def test_zero_switcher(self):
        m = with_(instance(0, 5), wS=np.zeros(5))
        s, h, loss = toy_forward(m)
        assert s == 0.0
        np.testing.assert_array_equal(h, np.full(5, 0.2))
        assert loss == pytest.approx(np.log(5), rel=1e-15)

    def test_zero_input(self):
        _, h, _ = toy_forward(with_(instance(1, 4), x=0.0))
        np.testing.assert_array_equal(h, np.full(4, 0.25))

    def test_matches_engine_and_naive(self):
        for seed in range(20):
            m = instance(seed)
            loss = toy_forward(m)[2]
            assert abs(loss - engine_grads(m)[0]) / max(abs(loss), 1e-300) <= 1e-12
            assert loss == pytest.approx(naive_loss(m), rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            ToyModel(0.5, np.array([1.0]), np.ones(1), np.ones(1))
        with pytest.raises(ValueError):
            ToyModel(0.5, np.array([1.0, 1.0]), np.ones(2), np.ones(2))
        with pytest.raises(ValueError):
            ToyModel(0.5, np.array([0.0, 1.0]), np.ones(3), np.ones(2))


class TestClosedForms:
    def test_wS_zero_cases(self):
        m = instance(2, 6)
        np.testing.assert_array_equal(analytic_grad_wS(with_(m, x=0.0)), np.zeros(6))
        np.testing.assert_array_equal(analytic_grad_wS(with_(m, wT=np.zeros(6))), np.zeros(6))

    def test_wT_zero_switcher(self):
        m = with_(instance(3, 6), wS=np.zeros(6))
        np.testing.assert_array_equal(analytic_grad_wT(m), np.zeros(6))
        np.testing.assert_array_equal(coupling_report(m)["coupling"], np.zeros(6))

    def test_baseline_cases(self):
        m = instance(4, 4)
        np.testing.assert_array_equal(baseline_grad_wT(with_(m, x=0.0)), np.zeros(4))
        even = with_(m, x=0.7, wT=np.full(4, 0.3))
        np.testing.assert_allclose(baseline_grad_wT(even), (0.25 - even.y) * 0.7, rtol=1e-15)

    def test_report_terms_sum(self):
        m = instance(5)
        rep = coupling_report(m)
        assert np.array_equal(np.array(rep["own"]) + np.array(rep["coupling"]), analytic_grad_wT(m))
        assert np.array_equal(rep["total"], analytic_grad_wT(m))

    def test_constant_switcher_reduces_to_baseline(self):
        # with s held fixed, the own-class term is the baseline gradient at logits wT*(x*s), times s
        m = instance(6, 7)
        s, _, _ = toy_forward(m)
        own, _ = grad_wT_terms(m)
        scaled = with_(m, x=m.x * s)
        np.testing.assert_allclose(own, baseline_grad_wT(scaled), rtol=1e-13, atol=1e-16)

    def test_rel_err_floor(self):
        assert rel_err(np.array([1e-12]), np.array([0.0])) == 1e-12
        assert rel_err(np.array([200.0]), np.array([201.0])) == pytest.approx(1 / 201)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_closed_forms_against_oracles(seed):
    m = instance(seed)
    gS, gT = analytic_grad_wS(m), analytic_grad_wT(m)
    _, eS, eT = engine_grads(m)
    assert rel_err(gS, fd_grad(m, "wS")) <= 1e-8
    assert rel_err(gT, fd_grad(m, "wT")) <= 1e-8
    assert rel_err(gS, eS) <= 1e-10 and rel_err(gT, eT) <= 1e-10
    assert abs(toy_forward(m)[1].sum() - 1.0) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_baseline_against_fd(seed):
    m = instance(seed)
    fd = fd_grad(m, "wT", loss_fn=lambda mm: baseline_forward(mm)[1])
    assert rel_err(baseline_grad_wT(m), fd) <= 1e-8


def test_suite_summary():
    res = run_suite(n=200, seed=3)
    assert res.ok and res.instances == 200
    assert res.zero_coupling == 0
    assert res.as_dict()["ok"] is True
