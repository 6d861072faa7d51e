"""Tests for the core stable-law numerics.

Each numerical claim is checked against an independent route: closed gamma
forms for the symbol constant, Cauchy-family densities at alpha = 1, a
chirp-substitution quadrature at alpha = 1/2, brute-force nested quadrature
for the resolvent, and exact mass identities.
"""

import json
import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import erfc, gamma as gamma_fn

from stablelike import stable_core as sc
from stablelike.errors import NumericalError, ParameterError

SEED = 20240817

# Monte Carlo comparisons run at 2e5..4e5 draws; the CF/LT error bar below is
# ~4 standard deviations plus slack.
N_MC = 200_000
CF_TOL = 4.0 / math.sqrt(N_MC) + 1e-3
KS_PVAL_MIN = 0.01


def _gamma_form_constant(d, alpha):
    # closed form of the symbol constant, independent of any quadrature
    return (
        math.pi ** (d / 2.0)
        * abs(gamma_fn(-alpha / 2.0))
        / (2.0 ** alpha * gamma_fn((d + alpha) / 2.0))
    )


def _cauchy_family(d, a_const, u, j=0):
    # isotropic Cauchy density (alpha = 1): c_d A (A^2 + u^2)^(-(d+1)/2)
    c = math.gamma((d + 1) / 2.0) / math.pi ** ((d + 1) / 2.0)
    q = (d + 1) / 2.0
    A = a_const
    if j == 0:
        return c * A * (A * A + u * u) ** (-q)
    if j == 1:
        return c * A * (-q) * (A * A + u * u) ** (-q - 1) * 2 * u
    return c * A * (
        (-q) * (-q - 1) * (A * A + u * u) ** (-q - 2) * 4 * u * u
        + (-q) * (A * A + u * u) ** (-q - 1) * 2
    )


# ---------------------------------------------------------------------------
# symbol constant
# ---------------------------------------------------------------------------

def test_symbol_constant_matches_gamma_form():
    for d in (1, 2, 3):
        for alpha in (0.3, 0.5, 0.8, 1.0, 1.2, 1.5, 1.7, 1.9):
            got = sc.symbol_constant(d, alpha)
            want = _gamma_form_constant(d, alpha)
            assert got == pytest.approx(want, rel=1e-6), (d, alpha)


def test_symbol_constant_d1_reflection_form():
    # second closed form in d = 1: pi / (Gamma(1+alpha) sin(pi alpha / 2))
    for alpha in (0.5, 1.0, 1.5):
        want = math.pi / (math.gamma(1.0 + alpha) * math.sin(math.pi * alpha / 2.0))
        assert sc.symbol_constant(1, alpha) == pytest.approx(want, rel=1e-9)
    assert sc.symbol_constant(1, 1.0) == pytest.approx(math.pi, rel=1e-12)


def test_symbol_constant_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        sc.symbol_constant(4, 1.0)
    with pytest.raises(ParameterError):
        sc.symbol_constant(1, 0.0)
    with pytest.raises(ParameterError):
        sc.symbol_constant(1, 2.0)


def test_params_validation_and_roundtrip():
    p = sc.StableParams(1, 1.5, lam=2.0)
    assert p.spatial_scale == pytest.approx(p.symbol_constant ** (1.0 / 1.5))
    q = sc.StableParams.from_dict(p.to_dict())
    assert q == p
    with pytest.raises(ParameterError):
        sc.StableParams(1, 1.5, symbol_constant=p.symbol_constant * 1.01)
    with pytest.raises(ParameterError):
        sc.StableParams(5, 1.5)
    with pytest.raises(ParameterError):
        sc.StableParams(1, 2.0)
    with pytest.raises(ParameterError):
        sc.StableParams(1, 1.5, lam=0.0)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def test_subordinator_levy_half_ks():
    # at index 1/2 the law is Levy with scale 1/2: CDF(s) = erfc(1/(2 sqrt(s)))
    rng = np.random.default_rng(SEED)
    s = sc.sample_subordinator_increment(0.5, 1.0, rng, size=N_MC)
    res = stats.kstest(s, lambda x: erfc(1.0 / (2.0 * np.sqrt(x))))
    assert res.pvalue > KS_PVAL_MIN, res


def test_subordinator_laplace_transform():
    rng = np.random.default_rng(SEED + 1)
    for index, t in ((0.75, 1.0), (0.3, 2.0)):
        s = sc.sample_subordinator_increment(index, t, rng, size=2 * N_MC)
        for u in (0.5, 1.0, 3.0):
            emp = float(np.mean(np.exp(-u * s)))
            assert emp == pytest.approx(math.exp(-t * u ** index), abs=CF_TOL)


def test_subordinator_self_similarity():
    rng = np.random.default_rng(SEED + 2)
    index = 0.6
    s1 = sc.sample_subordinator_increment(index, 1.0, rng, size=N_MC)
    s2 = sc.sample_subordinator_increment(index, 2.0, rng, size=N_MC)
    res = stats.ks_2samp(s2, 2.0 ** (1.0 / index) * s1)
    assert res.pvalue > KS_PVAL_MIN, res


def test_subordinator_rejects_bad_parameters():
    rng = np.random.default_rng(SEED)
    with pytest.raises(ParameterError):
        sc.sample_subordinator_increment(1.0, 1.0, rng)
    with pytest.raises(ParameterError):
        sc.sample_subordinator_increment(0.5, 0.0, rng)


def test_stable_increment_characteristic_function():
    rng = np.random.default_rng(SEED + 3)
    for d, alpha in ((1, 1.5), (2, 1.0), (3, 0.8)):
        p = sc.StableParams(d, alpha)
        x = sc.sample_stable_increment(p, 0.01, rng, size=2 * N_MC)
        assert x.shape == (2 * N_MC, d)
        for xi_mag in (1.0, 4.0):
            xi = np.zeros(d)
            xi[0] = xi_mag
            emp = float(np.mean(np.cos(x @ xi)))
            want = math.exp(-0.01 * p.symbol_constant * xi_mag ** alpha)
            assert emp == pytest.approx(want, abs=CF_TOL), (d, alpha, xi_mag)


def test_stable_increment_cauchy_ks():
    rng = np.random.default_rng(SEED + 4)
    p = sc.StableParams(1, 1.0)
    x = sc.sample_stable_increment(p, 1.0, rng, size=N_MC)[:, 0]
    res = stats.kstest(x, lambda q: stats.cauchy.cdf(q, scale=math.pi))
    assert res.pvalue > KS_PVAL_MIN, res


def test_stable_increment_shapes():
    rng = np.random.default_rng(SEED)
    p = sc.StableParams(2, 1.5)
    one = sc.sample_stable_increment(p, 0.1, rng)
    assert one.shape == (2,)
    batch = sc.sample_stable_increment(p, 0.1, rng, size=7)
    assert batch.shape == (7, 2)
    with pytest.raises(ParameterError):
        sc.sample_stable_increment(p, 0.0, rng)


# ---------------------------------------------------------------------------
# transition density
# ---------------------------------------------------------------------------

def test_density_cauchy_all_dimensions():
    for d in (1, 2, 3):
        p = sc.StableParams(d, 1.0)
        prof = sc.density_profile(p)
        for u in (0.0, 0.05, 0.7, 2.0, 9.0, 60.0, 900.0):
            for j in range(3):
                want = _cauchy_family(d, p.symbol_constant, u, j)
                got = prof.point(u, j)
                assert got == pytest.approx(want, rel=1e-8, abs=1e-13), (d, u, j)


def test_density_vectorized_eval_matches_point():
    p = sc.StableParams(1, 1.5)
    prof = sc.density_profile(p)
    us = np.geomspace(1e-3, 500.0, 60)
    for j in range(3):
        vec = prof.eval(us, j)
        pts = np.array([prof.point(u, j) for u in us])
        assert np.allclose(vec, pts, rtol=1e-7, atol=1e-12)


def test_density_alpha_half_chirp_oracle():
    # xi = v^2 turns the d=1, alpha=1/2 inversion into a smooth chirp with an
    # exponential envelope; fixed Gauss panels at half-period spacing resolve
    # it to near machine precision for moderate u.
    p = sc.StableParams(1, 0.5)
    prof = sc.density_profile(p)
    A = p.symbol_constant
    gx, gw = np.polynomial.legendre.leggauss(16)

    def chirp(u):
        vmax = 100.0 / A + 3.0
        edges = [0.0]
        while edges[-1] < vmax:
            v = edges[-1]
            step = min(
                max(math.pi / (2.0 * max(u * v, 1e-9)), 1e-3),
                0.5 * math.sqrt(math.pi / max(u, 1e-9)),
                0.5,
            )
            edges.append(v + step)
        tot = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            vv = mid + half * gx
            tot += float(
                np.sum(half * gw * (2.0 / math.pi) * vv * np.cos(u * vv * vv) * np.exp(-A * vv))
            )
        return tot

    for u in (0.5, 2.0, 10.0, 25.0):
        assert prof.point(u, 0) == pytest.approx(chirp(u), rel=1e-10), u


def test_density_mass_normalization():
    for d, alpha in ((1, 0.5), (1, 1.5), (2, 1.0), (3, 1.5)):
        p = sc.StableParams(d, alpha)
        mass, tail = sc.density_mass(p)
        assert abs(mass + tail - 1.0) < 1e-3, (d, alpha, mass, tail)


def test_transition_density_self_similarity_and_shapes():
    p = sc.StableParams(2, 1.5)
    rng = np.random.default_rng(SEED)
    pts = rng.normal(size=(5, 2)) * 2.0
    t = 0.37
    direct = sc.transition_density(p, t, pts)
    scaled = sc.transition_density(p, 1.0, t ** (-1.0 / 1.5) * pts) * t ** (-2.0 / 1.5)
    assert np.allclose(direct, scaled, rtol=1e-9)
    assert direct.shape == (5,)
    single = sc.transition_density(p, t, pts[0])
    assert isinstance(single, float)
    assert single == pytest.approx(direct[0])
    # scalar argument in d = 1
    p1 = sc.StableParams(1, 1.0)
    val = sc.transition_density(p1, 1.0, 0.0)
    assert val == pytest.approx(1.0 / math.pi ** 2, rel=1e-10)
    with pytest.raises(ParameterError):
        sc.transition_density(p1, 0.0, 0.0)


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------

def _brute_resolvent_d1(alpha, lam, a_const, x):
    """Independent nested-quadrature route: Laplace transform in time of the
    raw cosine-transform density.  Reliable for alpha >= 1."""

    def p_t(t, u):
        hi = (50.0 / (t * a_const)) ** (1.0 / alpha)
        v, _ = integrate.quad(
            lambda xi: math.exp(-t * a_const * xi ** alpha),
            0.0, hi, weight="cos", wvar=u, epsabs=1e-15, epsrel=1e-13, limit=800,
        )
        return v / math.pi

    out = 0.0
    edges = (0.0, 1e-4, 1e-2, 1.0, 60.0 / lam)
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, _ = integrate.quad(
            lambda t: math.exp(-lam * t) * p_t(t, x),
            lo, hi, epsabs=1e-13, epsrel=1e-10, limit=400,
        )
        out += v
    return out


@pytest.mark.filterwarnings("ignore::UserWarning", "ignore:.*roundoff.*")
def test_resolvent_brute_force_oracle():
    for alpha, lam in ((1.5, 1.0), (1.0, 1.0), (1.5, 0.25)):
        p = sc.StableParams(1, alpha, lam)
        for u in (0.05, 1.0, 20.0):
            mine = sc.resolvent(p, u)
            ref = _brute_resolvent_d1(alpha, lam, p.symbol_constant, u)
            assert mine == pytest.approx(ref, rel=1e-7), (alpha, lam, u)


def test_resolvent_floor_and_symmetry():
    p = sc.StableParams(2, 1.5)
    with pytest.raises(ParameterError):
        sc.resolvent(p, np.array([1e-6, 0.0]))
    a = sc.resolvent(p, np.array([0.3, -0.4]))
    b = sc.resolvent(p, np.array([-0.4, 0.3]))
    assert a == pytest.approx(b, rel=1e-9)


def test_resolvent_derivatives_finite_difference():
    p = sc.StableParams(1, 1.5)
    for u in (0.05, 0.7, 3.0, 20.0):
        h = 1e-5 * max(u, 1.0)
        f = lambda v: sc._resolvent_radial(p, v, 0)
        fd1 = (f(u + h) - f(u - h)) / (2 * h)
        fd2 = (f(u + h) - 2 * f(u) + f(u - h)) / h ** 2
        assert sc._resolvent_radial(p, u, 1) == pytest.approx(fd1, rel=1e-6), u
        assert sc._resolvent_radial(p, u, 2) == pytest.approx(fd2, rel=1e-4), u


def test_resolvent_gradient_hessian_structure():
    p = sc.StableParams(2, 1.5)
    x = np.array([0.6, -0.9])
    g, H = sc.resolvent_derivatives(p, x)
    assert g.shape == (2,) and H.shape == (2, 2)
    assert H[0, 1] == pytest.approx(H[1, 0], abs=1e-12)
    u = float(np.linalg.norm(x))
    r1 = sc._resolvent_radial(p, u, 1)
    assert np.allclose(g, r1 * x / u, rtol=1e-9)
    # kernel decreases radially: x . grad < 0
    for uu in (0.05, 0.5, 2.0, 10.0):
        assert sc._resolvent_radial(p, uu, 1) < 0.0


def test_resolvent_mass_identity():
    for d, alpha, lam in ((1, 1.5, 1.0), (1, 0.5, 1.0), (1, 1.0, 2.0), (2, 1.5, 1.0)):
        p = sc.StableParams(d, alpha, lam)
        head, tail = sc.resolvent_mass(p)
        assert abs(head + tail - 1.0 / lam) < 1e-3, (d, alpha, lam, head, tail)


def test_check_resolvent_bounds_report():
    p = sc.StableParams(1, 1.5)
    rep = sc.check_resolvent_bounds(p)
    assert rep["check_name"] == "resolvent_decay_envelopes"
    assert rep["pass"] is True
    assert len(rep["fitted_constant"]) == 3
    assert all(np.isfinite(rep["fitted_constant"]))
    assert all(delta < 0.05 for delta in rep["refinement_delta"])
    assert rep["worst_ratio"] == pytest.approx(max(rep["fitted_constant"]))


# ---------------------------------------------------------------------------
# resolvent table
# ---------------------------------------------------------------------------

def test_resolvent_table_matches_direct_route():
    p = sc.StableParams(1, 1.5)
    tab = sc.get_resolvent_table(p)
    for u in (5e-7, 1e-3, 0.3, 7.0, 500.0):
        for j in range(3):
            direct = sc._resolvent_radial(p, u, j)
            assert tab.eval(u, j) == pytest.approx(direct, rel=2e-6, abs=1e-14), (u, j)


def test_resolvent_table_json_roundtrip(tmp_path):
    p = sc.StableParams(1, 1.5)
    tab = sc.get_resolvent_table(p)
    text = tab.to_json()
    tab2 = sc.ResolventTable.from_json(text)
    assert np.array_equal(tab.radii, tab2.radii)
    assert np.array_equal(tab.values, tab2.values)
    assert tab2.to_json() == text
    path = tmp_path / "table.json"
    tab.save(path)
    tab3 = sc.ResolventTable.load(path)
    assert tab3.eval(0.37, 2) == tab.eval(0.37, 2)
    bad = json.loads(text)
    bad["schema_version"] = 99
    with pytest.raises(ParameterError):
        sc.ResolventTable.from_json(json.dumps(bad))


def test_resolvent_table_disk_cache(tmp_path):
    p = sc.StableParams(1, 1.2)
    sc._TABLE_REGISTRY.clear()
    tab = sc.get_resolvent_table(p, cache_dir=str(tmp_path))
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    sc._TABLE_REGISTRY.clear()
    tab2 = sc.get_resolvent_table(p, cache_dir=str(tmp_path))
    assert np.array_equal(tab.values, tab2.values)
    sc._TABLE_REGISTRY.clear()
