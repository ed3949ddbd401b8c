"""Family checks, score formulas, response quantiles, dataset generation."""

import numpy as np
import pytest
from scipy import stats

from lhs_zest import (
    DesignMatrix,
    DomainError,
    StreamKey,
    gaussian_identity_family,
    generate,
    generate_dataset,
    get_model,
    make_generative_psi,
    make_psi,
    poisson_log_family,
    poisson_quantile,
    poisson_quantile_batch,
    psi_bar,
    uniform_stream,
)

KEY = StreamKey(master_seed=8675309)


def test_family_invariants_hold():
    poisson_log_family().validate(-12.0, 12.0)
    gaussian_identity_family().validate(-20.0, 20.0)


def test_poisson_score_direct_substitution():
    # x = 1, theta = 0, z = 3: score is (3 - exp(0)) * 1 = 2
    model = get_model("poisson-log-d1")
    prob = make_psi(model.family(), 1, model.theta_box)
    val = prob.psi(np.array([[1.0]]), np.array([3.0]), np.array([0.0]))
    assert val[0, 0] == pytest.approx(2.0)


def test_poisson_score_derivative_formula():
    # derivative entry (j,k) is -exp(x.theta) x_j x_k
    model = get_model("poisson-log-d9")
    prob = make_psi(model.family(), 9, model.theta_box)
    rng = np.random.default_rng(10)
    x = rng.random((5, 9))
    theta = rng.normal(size=9) * 0.5
    J = prob.psi_dot(x, np.zeros(5), theta)
    lam = np.exp(x @ theta)
    expected = -lam[:, None, None] * x[:, :, None] * x[:, None, :]
    assert np.allclose(J, expected, rtol=1e-12)


def test_gaussian_identity_constant_derivative_and_zero_bound():
    model = get_model("gaussian-identity-d2")
    prob = make_psi(model.family(), 2, model.theta_box)
    rng = np.random.default_rng(11)
    x = rng.random((4, 2))
    for theta in (np.zeros(2), np.array([1.0, -2.0])):
        J = prob.psi_dot(x, np.zeros(4), theta)
        expected = -x[:, :, None] * x[:, None, :]
        assert np.allclose(J, expected)
    assert np.allclose(prob.psi_ddot_bound(x, np.zeros(4)), 0.0)


def test_poisson_quantile_examples():
    assert poisson_quantile(0.0, 1.0) == 0
    assert poisson_quantile(0.5, 1.0) == 1
    # verify by summing pmf terms directly
    cdf0 = np.exp(-1.0)
    cdf1 = cdf0 + np.exp(-1.0)
    assert cdf0 < 0.5 <= cdf1


def test_poisson_quantile_against_batch_and_scipy():
    rng = np.random.default_rng(12)
    u = rng.random(300)
    lam = np.exp(rng.uniform(-8, 8, size=300))
    batch = poisson_quantile_batch(u, lam)
    scalar = np.array([poisson_quantile(ui, li) for ui, li in zip(u, lam)])
    assert np.array_equal(batch, scalar)
    # independent oracle: scipy's ppf uses the weak-inequality convention,
    # identical off the measure-zero CDF atoms
    assert np.array_equal(batch, stats.poisson.ppf(u, lam))


def test_poisson_quantile_large_rate():
    out = poisson_quantile_batch(np.array([0.5, 0.999]), np.array([70000.0, 70000.0]))
    assert abs(out[0] - 70000) < 3
    assert np.array_equal(out, stats.poisson.ppf([0.5, 0.999], 70000.0))


def test_poisson_quantile_mean_lambda4():
    u = uniform_stream(KEY, 1_000_000)
    vals = poisson_quantile_batch(u, np.full_like(u, 4.0))
    assert abs(vals.mean() - 4.0) < 0.008


def test_poisson_quantile_domain():
    with pytest.raises(DomainError):
        poisson_quantile(1.0, 2.0)
    with pytest.raises(DomainError):
        poisson_quantile(0.5, 0.0)
    with pytest.raises(DomainError):
        poisson_quantile_batch(np.array([0.5]), np.array([-1.0]))


def test_generate_dataset_unit_rate():
    model = get_model("poisson-log-d9")
    fam = model.family()
    des = generate("lhs", 100_000, 9, KEY)
    ds = generate_dataset(fam, np.zeros(9), des, KEY)
    assert abs(ds.responses.mean() - 1.0) < 0.013
    assert np.all(ds.responses >= 0)
    assert np.array_equal(ds.responses, np.floor(ds.responses))


def test_generate_dataset_d9_rate_mean():
    model = get_model("poisson-log-d9")
    fam = model.family()
    des = generate("iid", 1_000_000, 9, KEY)
    lam = np.exp(des.points @ model.theta0)
    # MC oracle for E[exp(x.theta0)] from an independent stream
    oracle_pts = np.random.default_rng(2).random((1_000_000, 9))
    oracle = np.exp(oracle_pts @ model.theta0).mean()
    assert abs(lam.mean() / oracle - 1) < 0.01


def test_generate_dataset_empty():
    model = get_model("poisson-log-d1")
    des = DesignMatrix(
        points=np.empty((0, 1)), method="iid", n=0, d=1, seed=KEY
    )
    ds = generate_dataset(model.family(), model.theta0, des, KEY)
    assert ds.responses.shape == (0,)


def test_score_zero_mean_at_truth():
    model = get_model("poisson-log-d9")
    fam = model.family()
    prob = make_generative_psi(fam, 9, model.theta_box, model.theta0)
    des = generate("iid", 1_000_000, 9, KEY)
    aux = uniform_stream(KEY.with_fields(purpose="response"), 1_000_000)
    score = psi_bar(prob, des, aux, model.theta0)
    # 4 sigma componentwise using the empirical score covariance
    vals = prob.psi(des.points, aux, model.theta0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(des.n)
    assert np.all(np.abs(score) < 4 * se)


def test_bartlett_identity_at_truth():
    # canonical family: -E[score derivative] equals phi * E[score score^T];
    # checked entrywise against the MC standard error of the difference
    model = get_model("poisson-log-d9")
    fam = model.family()
    prob = make_generative_psi(fam, 9, model.theta_box, model.theta0)
    des = generate("iid", 400_000, 9, KEY)
    aux = uniform_stream(KEY.with_fields(purpose="response"), 400_000)
    vals = prob.psi(des.points, aux, model.theta0)
    dots = prob.psi_dot(des.points, aux, model.theta0)
    diff = -dots - fam.phi * vals[:, :, None] * vals[:, None, :]
    mean = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / np.sqrt(des.n)
    assert np.all(np.abs(mean) < 5 * se + 1e-12)


def test_moment_certificate_finite():
    model = get_model("poisson-log-d9")
    fam = model.family()
    prob = make_generative_psi(fam, 9, model.theta_box, model.theta0)
    des = generate("iid", 200_000, 9, KEY)
    aux = uniform_stream(KEY.with_fields(purpose="response"), 200_000)
    vals = prob.psi(des.points, aux, model.theta0)
    dots = prob.psi_dot(des.points, aux, model.theta0)
    bound = prob.psi_ddot_bound(des.points, aux)
    norms3 = np.mean(np.linalg.norm(vals, axis=1) ** 3)
    dots2 = np.mean(np.sum(dots**2, axis=(1, 2)))
    bound2 = np.mean(bound**2)
    assert np.isfinite(norms3) and np.isfinite(dots2) and np.isfinite(bound2)


def test_stratified_aux_column_is_stratified():
    model = get_model("poisson-log-d1")
    des = generate("lhs", 64, 1, KEY)
    ds = generate_dataset(model.family(), model.theta0, des, KEY, stratify_aux=True)
    assert sorted(np.floor(ds.aux * 64).astype(int).tolist()) == list(range(64))


def test_make_psi_requires_consistent_shapes():
    model = get_model("poisson-log-d9")
    prob = make_psi(model.family(), 9, model.theta_box)
    des = generate("lhs", 10, 3, KEY)
    with pytest.raises(Exception):
        psi_bar(prob, des, np.zeros(10), model.theta0)
