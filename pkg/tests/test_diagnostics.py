import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from powerpost.asymptotics import estimate_curvature, fit_mle, limiting_gaussian
from powerpost.diagnostics import (DiagnosticsConfig, DiagnosticsReport, concentration_tail_mass,
                                   fn_ratio_suprema, lan_grid, lan_remainder, lan_remainder_values,
                                   lemma1_bound_check, lemma2_tail_bound, markov_tail_bound, tensor_norm_1,
                                   tv_distance, weighted_l1_distance)
from powerpost.errors import ConfigError, DomainError, NumericalError, PropertyViolation
from powerpost.model import make_model, make_prior, make_process, sample_data
from powerpost.posterior import AlphaConfig, grid_moment, normalize_on_grid, tabulate, tabulate_gaussian, to_lan_frame

AXIS = np.linspace(-12.0, 12.0, 4001)
ZERO = np.zeros(1)


def gauss1(mean, var, axis=AXIS):
    return tabulate_gaussian((axis,), [mean], [[var]], "h", ZERO, 1)


def gauss2(mean, cov, axis=np.linspace(-8, 8, 161)):
    return tabulate_gaussian((axis, axis), mean, cov, "h", np.zeros(2), 1)


def test_tensor_norm_examples():
    assert tensor_norm_1([1.0, 2.0], 2) == 9.0
    h = np.array([0.3, -1.2, 2.0])
    assert tensor_norm_1(h, 1) == pytest.approx(np.abs(h).sum())
    for p in (1, 2, 5):
        for k in (1, 2, 3):
            ones = np.ones(p)
            assert tensor_norm_1(ones, k) == pytest.approx(p ** k)
            assert tensor_norm_1(ones, k) == pytest.approx(p ** (k / 2) * np.linalg.norm(ones) ** k)


@settings(max_examples=60, deadline=None)
@given(h=st.lists(st.floats(-5, 5), min_size=1, max_size=3), k=st.integers(1, 3))
def test_tensor_norm_matches_brute_force(h, k):
    brute = sum(abs(np.prod([h[i] for i in idx])) for idx in itertools.product(range(len(h)), repeat=k))
    assert tensor_norm_1(h, k) == pytest.approx(brute, rel=1e-9, abs=1e-12)
    assert tensor_norm_1(h, k) <= len(h) ** (k / 2) * np.linalg.norm(h) ** k * (1 + 1e-12) + 1e-12


def test_weighted_l1_identical_and_one_dimensional():
    a = gauss1(0.0, 1.0)
    assert weighted_l1_distance(a, a, 1) == (0.0, 0.0)
    b = gauss1(0.4, 1.3)
    for k in (1, 2):
        z0, z = weighted_l1_distance(a, b, k)
        assert z0 == pytest.approx(z, rel=1e-14)


def test_weighted_l1_against_adaptive_quadrature():
    a, b = gauss1(0.0, 1.0), gauss1(0.1, 1.0)
    z0, _ = weighted_l1_distance(a, b, 1)
    f = lambda x: abs(x) * abs(stats.norm.pdf(x) - stats.norm.pdf(x, 0.1))
    oracle = sum(integrate.quad(f, lo, hi, epsabs=1e-13, limit=200)[0]
                 for lo, hi in [(-12, 0), (0, 0.05), (0.05, 12)])
    assert z0 == pytest.approx(oracle, abs=1e-4)


def test_weighted_l1_rejects_mismatched_axes():
    with pytest.raises(ValueError):
        weighted_l1_distance(gauss1(0, 1), gauss1(0, 1, np.linspace(-10, 10, 4001)), 1)


def test_tv_examples():
    a = gauss1(0.0, 1.0)
    assert tv_distance(a, a) == 0.0
    wide = np.linspace(-20, 30, 10001)
    assert tv_distance(gauss1(0, 1, wide), gauss1(10, 1, wide)) >= 0.999
    assert tv_distance(a, gauss1(0.5, 1.0)) == pytest.approx(2 * stats.norm.cdf(0.25) - 1, abs=1e-4)
    with pytest.raises(ValueError):
        tv_distance(a, gauss1(0, 1, np.linspace(-12, 12, 401)))


@settings(max_examples=30, deadline=None)
@given(m1=st.floats(-2, 2), m2=st.floats(-2, 2), v1=st.floats(0.2, 3), v2=st.floats(0.2, 3))
def test_tv_is_half_unweighted_l1_and_z0_below_z(m1, m2, v1, v2):
    axis = np.linspace(-8, 8, 81)
    a = gauss2([m1, m2], [[v1, 0.1], [0.1, v2]], axis)
    b = gauss2([m2, m1], [[v2, 0.0], [0.0, v1]], axis)
    l1, _ = weighted_l1_distance(a, b, 0)
    assert 2 * tv_distance(a, b) == pytest.approx(l1, rel=1e-12, abs=1e-15)
    for k in (1, 2):
        z0, z = weighted_l1_distance(a, b, k)
        assert z0 <= z * (1 + 1e-12) + 1e-15


def test_lan_remainder_vanishes_for_gaussian_model():
    m = make_model("gaussian_location")
    for n in (10, 1000, 100_000):
        x = sample_data(make_process("laplace"), n, 3)
        curv = estimate_curvature(m, x, [0.0])
        assert lan_remainder(m, x, [0.0], curv.V, lan_grid(3.0, 61, 1)) < 1e-10


def test_lan_remainder_zero_at_origin_and_domain_error():
    m = make_model("logistic_regression")
    x = sample_data(make_process("logistic"), 200, 1)
    curv = estimate_curvature(m, x, [1.0])
    fit = fit_mle(m, x)
    vals = lan_remainder_values(m, x, [1.0], curv.V, np.zeros((1, 1)), fit.theta_hat)
    assert vals[0] == 0.0
    with pytest.raises(DomainError, match="h="):
        lan_remainder(m, x, [19.9], curv.V, np.array([[30.0]]), fit.theta_hat)


def test_lan_remainder_matches_direct_definition():
    m = make_model("logistic_regression")
    n = 500
    x = sample_data(make_process("logistic"), n, 2)
    V = estimate_curvature(m, x, [1.0]).V
    fit = fit_mle(m, x)
    h = np.array([[-2.0], [0.5], [2.5]])
    vals = lan_remainder_values(m, x, [1.0], V, h, fit.theta_hat)
    ll = lambda t: float(np.sum(m.log_density_one(x, np.array([[t]]))))
    delta = math.sqrt(n) * (fit.theta_hat[0] - 1.0)
    for hv, got in zip(h[:, 0], vals):
        direct = ll(1.0 + hv / math.sqrt(n)) - ll(1.0) - hv * V[0, 0] * delta + 0.5 * V[0, 0] * hv * hv
        assert got == pytest.approx(direct, abs=1e-8)


def test_lan_grid_shape():
    g = lan_grid(3.0, 61, 2)
    assert g.shape == (61 * 61, 2)
    assert g.min() == -3.0 and g.max() == 3.0


def test_tail_mass_examples():
    a = gauss1(0.0, 1.0)
    assert concentration_tail_mass(a, 20.0) <= 1e-8
    assert concentration_tail_mass(a, 1.959964) == pytest.approx(0.05, abs=1e-4)
    b = gauss2([0, 0], np.eye(2))
    # chi-square with two degrees of freedom
    assert concentration_tail_mass(b, 2.0) == pytest.approx(math.exp(-2.0), abs=1e-3)
    with pytest.raises(ValueError):
        concentration_tail_mass(a, 0.0)


@settings(max_examples=40, deadline=None)
@given(mean=st.floats(-2, 2), var=st.floats(0.1, 4), r=st.floats(0.05, 8), k0=st.sampled_from([1, 2, 4]))
def test_markov_bound_holds_on_grids(mean, var, r, k0):
    g = gauss1(mean, var, np.linspace(-15, 15, 1201))
    assert concentration_tail_mass(g, r) <= markov_tail_bound(g, r, k0) * (1 + 1e-12) + 1e-15


def test_fn_suprema_identical_densities():
    a = gauss1(0.0, 1.0)
    res = fn_ratio_suprema(a, a, 3.0)
    assert res.sup_plus == 0.0 and res.sup_minus == 0.0


def test_fn_suprema_conjugate_large_n():
    n = 10_000
    m = make_model("gaussian_location")
    x = sample_data(make_process("gaussian"), n, 4)
    prior = make_prior("normal", 1)
    post = to_lan_frame(normalize_on_grid(m, prior, x, AlphaConfig(1.0)), [0.0], n)
    fit = fit_mle(m, x)
    phi = limiting_gaussian(fit, estimate_curvature(m, x, [0.0]), 1.0, n, "h", [0.0]).tabulate(post.axes)
    res = fn_ratio_suprema(post, phi, 3.0)
    assert res.sup_plus < 0.05 and res.sup_minus < 0.05
    # oracle: both densities are Gaussian, so the log ratio is a quadratic on [-3, 3]
    L = (post.log_values - phi.log_values)[np.abs(post.axes[0]) <= 3.0]
    assert res.sup_plus == pytest.approx(1 - math.exp(L.min() - L.max()), rel=1e-12)


def test_fn_suprema_reduction_matches_full_table():
    a = gauss2([0.2, -0.1], [[1.0, 0.3], [0.3, 0.8]])
    b = gauss2([0.0, 0.0], np.eye(2))
    full = fn_ratio_suprema(a, b, 1.5)
    reduced = fn_ratio_suprema(a, b, 1.5, max_pairs=100)
    assert not full.reduced and reduced.reduced
    assert reduced.sup_plus == pytest.approx(full.sup_plus, abs=1e-15)
    assert reduced.sup_minus == pytest.approx(full.sup_minus, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.floats(0.3, 4.0))
def test_fn_symmetry_identity(seed, r):
    rng = np.random.default_rng(seed)
    axis = np.linspace(-5, 5, 201)
    a = tabulate((axis,), lambda x: -0.5 * x[:, 0] ** 2 + 0.3 * np.sin(rng.uniform(1, 3) * x[:, 0]), "h", ZERO, 1)
    b = gauss1(rng.uniform(-1, 1), rng.uniform(0.5, 2), axis)
    ab = fn_ratio_suprema(a, b, r)
    ba = fn_ratio_suprema(b, a, r)
    assert ab.sup_minus == pytest.approx(ba.sup_plus, abs=1e-12)


def test_lemma1_examples():
    phi = gauss1(0.0, 1.0)
    same = lemma1_bound_check(phi, phi, 1, 4.0)
    assert same.lhs == 0.0
    outside = np.abs(AXIS) > 4.0
    tail = 2 * float(np.sum((phi.weights * np.abs(AXIS) * phi.density)[outside]))
    assert same.rhs == pytest.approx(tail, rel=1e-12)
    chk = lemma1_bound_check(phi, gauss1(0.3, 1.2), 1, 4.0)
    assert chk.holds
    assert chk.margin > 0


@settings(max_examples=30, deadline=None)
@given(m1=st.floats(-1.5, 1.5), m2=st.floats(-1.5, 1.5), v1=st.floats(0.1, 4), v2=st.floats(0.1, 4),
       k=st.integers(1, 3), K=st.floats(0.5, 4.0))
def test_lemma1_holds_on_random_pairs(m1, m2, v1, v2, k, K):
    axis = np.linspace(-12, 12, 801)
    assert lemma1_bound_check(gauss1(m1, v1, axis), gauss1(m2, v2, axis), k, K).holds


def test_lemma2_standard_normal_example():
    chk = lemma2_tail_bound(gauss1(0.0, 1.0, np.linspace(-12, 12, 8001)), 1, 1.0, 2.0)
    assert chk.lhs == pytest.approx(2 * stats.norm.pdf(2.0), abs=1e-4)
    assert chk.lhs == pytest.approx(0.1080, abs=1e-4)
    assert chk.rhs == pytest.approx(1.0, abs=1e-6)
    assert chk.holds


def test_lemma2_large_r_and_sample_input():
    g = gauss1(0.0, 1.0)
    far = lemma2_tail_bound(g, 1, 1.0, 11.0)
    assert far.lhs < 1e-20 and far.rhs < 0.2
    z = np.random.default_rng(0).standard_normal((100_000, 2))
    chk = lemma2_tail_bound(z, 2, 0.5, 2.0)
    assert chk.holds
    assert lemma2_tail_bound(np.linalg.norm(z, axis=1), 2, 0.5, 2.0).lhs == pytest.approx(chk.lhs)


def test_lemma2_rejects_unresolved_moment():
    axis = 5.0 * np.sinh(np.linspace(-np.arcsinh(80), np.arcsinh(80), 4001))
    t2 = tabulate((axis,), lambda x: stats.t.logpdf(x[:, 0], 2.0), "h", ZERO, 1)
    with pytest.raises(NumericalError):
        lemma2_tail_bound(t2, 1, 2.0, 2.0)


def test_lemma2_bound_can_fail_below_unit_radius():
    # documents why the random sweep draws r >= 1
    chk = lemma2_tail_bound(gauss1(0.0, 0.05 ** 2, np.linspace(-1, 1, 4001)), 2, 1.0, 0.03)
    assert not chk.holds


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 2), gamma=st.floats(0.1, 2.0), r=st.floats(1.0, 6.0), sd=st.floats(0.3, 2.0))
def test_lemma2_holds_for_gaussians(k, gamma, r, sd):
    g = gauss1(0.0, sd * sd, np.linspace(-40, 40, 8001))
    assert lemma2_tail_bound(g, k, gamma, r).holds


def test_diagnostics_config_validation():
    assert DiagnosticsConfig().radius(256) == pytest.approx(2.0)
    assert DiagnosticsConfig(r=1.5).radius(10 ** 6) == 1.5
    with pytest.raises(ConfigError):
        DiagnosticsConfig(k=3, k0=2)
    with pytest.raises(ConfigError):
        DiagnosticsConfig(gamma=0.0)
    with pytest.raises(ConfigError):
        DiagnosticsConfig(r=-1.0)


def _report(**over):
    base = dict(model="m", process="p", prior="q", n=10, alpha=1.0, seed=0, k=1, r=1.0, z0=0.1,
                z_upper=0.2, tv=0.05, sup_Rn=0.0, tail_mass=0.1, sup_fn_plus=0.0, sup_fn_minus=0.0)
    base.update(over)
    return DiagnosticsReport(**base)


def test_report_invariants():
    assert _report().as_row()["z0"] == 0.1
    with pytest.raises(PropertyViolation):
        _report(z0=0.3)
    with pytest.raises(PropertyViolation):
        _report(tv=-0.1)
    with pytest.raises(PropertyViolation):
        _report(tail_mass=float("nan"))


def test_grid_moment_k0_for_markov():
    g = gauss1(0.0, 1.0)
    assert markov_tail_bound(g, 2.0, 2) == pytest.approx(grid_moment(g, 2) / 4.0)
