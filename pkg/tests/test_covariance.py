import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trialspline.covariance import (CovKind, CovParams, CovSpec, init_params, subject_cov,
                                    transform, untransform)
from trialspline.errors import VisitOutOfRange
from trialspline.padsim import GeneratorModel, LAG_CORR, VISIT_SD

from conftest import small_trial

K = 5
SPECS = [CovSpec("un", K=K), CovSpec("har1", K=K), CovSpec("car1cp"), CovSpec("car1exp"),
         CovSpec("ri"), CovSpec("rs"), CovSpec("iid")]
VISITS = [(j, 6.0 * (j - 1) + (0.3 * j if j > 1 else 0.0)) for j in range(1, K + 1)]


def test_parameter_counts():
    assert CovSpec("un", K=10).n_params == 55
    assert CovSpec("har1", K=10).n_params == 11
    assert [CovSpec(k).n_params for k in ("car1cp", "car1exp", "ri", "rs")] == [3, 3, 2, 4]


def test_unstructured_reproduces_generator_matrix():
    sd = np.asarray(VISIT_SD)
    lag = np.abs(np.subtract.outer(np.arange(10), np.arange(10)))
    target = np.asarray(LAG_CORR)[lag] * np.outer(sd, sd)
    spec = CovSpec("un", K=10)
    raw = untransform(spec, {"cov": target})
    S = subject_cov(CovParams(spec, raw), [(j, 6.0 * (j - 1)) for j in range(1, 11)])
    np.testing.assert_allclose(S, target, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(S, GeneratorModel().residual_cov, rtol=1e-12)
    assert S[0, 1] == pytest.approx(0.791 * 2.934 * 3.68)


def test_car1exp_at_time_zero_is_sigma_squared():
    spec = CovSpec("car1exp")
    raw = untransform(spec, {"rho": 0.8, "sigma": 1.7, "delta": 0.05})
    S = subject_cov(CovParams(spec, raw), [(1, 0.0), (2, 6.0)])
    assert S[0, 0] == pytest.approx(1.7 ** 2, rel=1e-14)
    assert S[1, 1] == pytest.approx(1.7 ** 2 * np.exp(2 * 0.05 * 6), rel=1e-12)
    assert S[0, 1] == pytest.approx(1.7 ** 2 * np.exp(0.05 * 6) * 0.8 ** 6, rel=1e-12)


def test_random_intercept_compound_symmetry():
    S = subject_cov(CovParams(CovSpec("ri"), np.zeros(2)), [(1, 0), (2, 6), (3, 12)])
    np.testing.assert_array_equal(S, np.ones((3, 3)) + np.eye(3))
    assert transform(CovSpec("ri"), np.zeros(2)) == {"sd_intercept": 1.0, "sigma": 1.0}


def test_closed_forms():
    v = {"rho": 0.7, "a": 1.5, "b": 0.2}
    S = subject_cov(CovParams(CovSpec("car1cp"), untransform(CovSpec("car1cp"), v)), [(1, 0.0), (2, 5.0)])
    sd = np.sqrt(1.5 ** 2 + 0.2 ** 2 * np.array([0.0, 25.0]))
    np.testing.assert_allclose(S, np.outer(sd, sd) * 0.7 ** np.array([[0, 5], [5, 0]]), rtol=1e-12)

    v = {"sd_intercept": 2.0, "sd_slope": 0.1, "corr": -0.4, "sigma": 0.9}
    S = subject_cov(CovParams(CovSpec("rs"), untransform(CovSpec("rs"), v)), [(1, 0.0), (2, 6.0), (3, 13.0)])
    Z = np.column_stack([np.ones(3), [0.0, 6.0, 13.0]])
    G = np.array([[4.0, -0.4 * 0.2], [-0.4 * 0.2, 0.01]])
    np.testing.assert_allclose(S, Z @ G @ Z.T + 0.81 * np.eye(3), rtol=1e-12)

    v = {"sd": np.array([1.0, 2.0, 3.0]), "rho": -0.5}
    S = subject_cov(CovParams(CovSpec("har1", K=3), untransform(CovSpec("har1", K=3), v)),
                    [(1, 0.0), (3, 12.0)])
    np.testing.assert_allclose(S, [[1.0, 0.25 * 3], [0.75, 9.0]], rtol=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value)
def test_round_trip(spec):
    rng = np.random.default_rng(1)
    for _ in range(50):
        raw = rng.normal(0, 1, spec.n_params)
        np.testing.assert_allclose(untransform(spec, transform(spec, raw)), raw, atol=1e-12)


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=10, max_size=10))
def test_unstructured_always_pd(raw):
    S = transform(CovSpec("un", K=4), np.asarray(raw))["cov"]
    assert np.all(np.linalg.eigvalsh(S) > 0)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value)
def test_pd_and_restriction_consistency(spec):
    rng = np.random.default_rng(2)
    for _ in range(20):
        params = CovParams(spec, rng.normal(0, 0.7, spec.n_params))
        full = subject_cov(params, VISITS)
        assert np.allclose(full, full.T)
        # judged on the correlation scale so extreme variance functions stay well conditioned
        d = 1 / np.sqrt(np.diag(full))
        assert np.linalg.eigvalsh(full * np.outer(d, d)).min() > 0
        keep = [0, 2, 3]
        sub = subject_cov(params, [VISITS[i] for i in keep])
        np.testing.assert_allclose(sub, full[np.ix_(keep, keep)], rtol=1e-12, atol=1e-14)
        assert subject_cov(params, VISITS[:1]).shape == (1, 1)


@pytest.mark.parametrize("kind", ["car1cp", "car1exp"])
def test_car1_depends_only_on_months(kind):
    spec = CovSpec(kind)
    params = CovParams(spec, np.array([0.5, 0.2, -1.0]))
    a = subject_cov(params, [(1, 0.0), (2, 6.5), (3, 11.0)])
    b = subject_cov(params, [(4, 0.0), (1, 6.5), (9, 11.0)])
    np.testing.assert_array_equal(a, b)


def test_har1_equals_car1exp_on_equal_spacing():
    rho = 0.6
    har = CovSpec("har1", K=4)
    S1 = subject_cov(CovParams(har, untransform(har, {"sd": np.full(4, 1.3), "rho": rho})),
                     [(j, 6.0 * (j - 1)) for j in range(1, 5)])
    car = CovSpec("car1exp")
    S2 = subject_cov(CovParams(car, untransform(car, {"rho": rho ** (1 / 6), "sigma": 1.3, "delta": 0.0})),
                     [(j, 6.0 * (j - 1)) for j in range(1, 5)])
    np.testing.assert_allclose(S1, S2, atol=1e-10)


def test_visit_out_of_range():
    with pytest.raises(VisitOutOfRange):
        subject_cov(CovParams(CovSpec("un", K=3), np.zeros(6)), [(1, 0), (4, 18)])


def test_init_random_intercept_splits_variance():
    rng = np.random.default_rng(3)
    d = small_trial(rng, n_subjects=200, K=4)
    r = rng.normal(0, 2, d.n_obs)
    v = init_params(CovSpec("ri"), d, residuals=r).values
    total = v["sd_intercept"] ** 2 + v["sigma"] ** 2
    assert total == pytest.approx(np.var(r, ddof=1), rel=1e-12)


def test_init_unstructured_diagonal_is_per_visit_variance():
    rng = np.random.default_rng(4)
    d = small_trial(rng, n_subjects=50, K=4)
    r = rng.normal(0, 1, d.n_obs) * d.visit
    S = init_params(CovSpec("un", K=4), d, residuals=r).values["cov"]
    expected = [np.var(r[d.visit == j], ddof=1) for j in range(1, 5)]
    np.testing.assert_allclose(np.diag(S), expected, rtol=1e-10)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value)
def test_init_is_pd(spec):
    d = small_trial(np.random.default_rng(5), n_subjects=8, K=K)
    params = init_params(spec, d)
    assert np.linalg.eigvalsh(subject_cov(params, VISITS)).min() > 0
