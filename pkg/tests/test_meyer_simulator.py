"""Tests for the insertion-based path simulator.

Independent routes used as oracles: closed-form excess rates and their direct
quadrature, the exact second moment and the characteristic function of the
small-jump step law, the inverse-power law of the insertion radius, the
subordinated-Gaussian sampler for the full stable increment, Poisson counts
for the insertion stream, and the unit-exponential law of the clock consumed
between insertions.  Distributional checks run at the 1% level with frozen
seeds.
"""

import math
import os

import numpy as np
import pytest
from scipy import integrate, stats

from stablelike import meyer_simulator as ms
from stablelike import nonlocal_operator as op
from stablelike.errors import NumericalError, ParameterError, SamplerError
from stablelike.seeding import replica_rng
from stablelike.stable_core import StableParams, sample_stable_increment

SEED = 20240817

PARAMS = StableParams(d=1, alpha=1.5, lam=1.0)
ALPHA = 1.5

# significance floor for KS / chi-square checks (frozen seeds)
GOF_LEVEL = 0.01
CLOSED_FORM_RTOL = 1e-10


def _holder():
    return op.kernel_preset("holder_bump", amplitude=0.5, beta=0.5)


def _stable():
    return op.kernel_preset("stable")


def _smooth_cos():
    """Smooth x-dependent kernel without a pattern/shape decomposition, so the
    excess rate must go through direct quadrature."""
    return op.JumpKernel(
        n=lambda x, h: 1.0 + 0.4 * np.cos(x) * np.minimum(1.0, np.abs(h) ** 0.5),
        kappa=0.6, K=0.4, beta=0.5, label="smooth_cos")


# ---------------------------------------------------------------------------
# configuration contracts
# ---------------------------------------------------------------------------

def test_config_validation_and_step_count():
    cfg = ms.SimConfig(horizon=1.0, k=4, seed=SEED, dt=1e-3)
    assert cfg.n_steps == 1000
    assert cfg.x0 == 0.0
    with pytest.raises(ParameterError):
        ms.SimConfig(horizon=1.0, k=4, seed=SEED, dt=0.0)
    with pytest.raises(ParameterError):
        ms.SimConfig(horizon=-1.0, k=4, seed=SEED)
    with pytest.raises(ParameterError):
        ms.SimConfig(horizon=1e-4, k=4, seed=SEED, dt=1e-3)
    with pytest.raises(ParameterError):
        ms.SimConfig(horizon=1.0, k=0, seed=SEED)


def test_clock_resolution_guard():
    # sup N dt = (1 + K) 2 k^alpha / alpha * dt = 682.7 * 1e-3 * (1 + 1e-6)
    cfg = ms.SimConfig(horizon=1.0, k=64, seed=SEED, dt=1e-3)
    with pytest.raises(ParameterError):
        ms.simulate_path(_stable(), PARAMS, cfg)


# ---------------------------------------------------------------------------
# excess rate of insertions
# ---------------------------------------------------------------------------

def test_excess_rate_unit_kernel_closed_form():
    # n == 1: N = 2 k^alpha / alpha; the alpha = 1, k = 1 case equals 2
    params_a1 = StableParams(d=1, alpha=1.0, lam=1.0)
    assert ms.excess_rate(_stable(), params_a1, 1, 0.0) == pytest.approx(
        2.0, rel=CLOSED_FORM_RTOL)
    assert ms.excess_rate(_stable(), PARAMS, 4, 1.7) == pytest.approx(
        2.0 * 4.0 ** ALPHA / ALPHA, rel=CLOSED_FORM_RTOL)


def test_excess_rate_decomposition_matches_quadrature():
    ker = _holder()
    # opaque twin of the same weight: no decomposition, forcing the
    # quadrature route
    opaque = op.JumpKernel(n=ker.n, kappa=1.0, K=0.5, beta=0.5, label="opaque")
    for k in (2, 4, 8):
        closed = ms.excess_rate(ker, PARAMS, k, 0.3)
        quad = ms.excess_rate(opaque, PARAMS, k, 0.3)
        assert quad == pytest.approx(closed, rel=1e-9)


def test_excess_rate_bound_envelope():
    for ker in (_stable(), _holder(), _smooth_cos()):
        bound = ms.excess_rate_bound(ker, PARAMS, 4)
        for x in (-2.1, 0.0, 0.4, 3.3):
            assert ms.excess_rate(ker, PARAMS, 4, x) <= bound * (1.0 + 1e-12)


def test_excess_rate_rejects_bad_arguments():
    with pytest.raises(ParameterError):
        ms.excess_rate(_stable(), PARAMS, 0, 0.0)
    with pytest.raises(ParameterError):
        ms.excess_rate(_stable(), StableParams(d=2, alpha=1.5, lam=1.0), 4, 0.0)


def test_excess_rate_cache_validates_and_refines():
    ker = _smooth_cos()
    coarse = ms.cache_excess_rate(ker, PARAMS, 4, np.linspace(-3.0, 3.0, 25))
    fine = ms.cache_excess_rate(ker, PARAMS, 4, np.linspace(-3.0, 3.0, 49))
    # linear interpolation of a smooth rate: halving the spacing should cut
    # the held-out error by at least 2 (quadratically in exact arithmetic)
    assert fine.worst_validation_error < 0.5 * coarse.worst_validation_error
    for x in (-1.7, 0.3, 2.2):
        direct = ms.excess_rate(ker, PARAMS, 4, x)
        assert abs(fine.eval(x) - direct) <= ms.CACHE_REL_TOL * direct


def test_excess_rate_cache_refuses_discontinuous_kernel():
    ker = op.kernel_preset("discontinuous_in_x", amplitude=0.5, beta=0.5)
    with pytest.raises(NumericalError):
        ms.cache_excess_rate(ker, PARAMS, 4, np.linspace(-3.0, 3.0, 401))


# ---------------------------------------------------------------------------
# insertion jump sampler
# ---------------------------------------------------------------------------

def test_insertion_radius_law():
    """Unit kernel: |h| = (1/k) U^(-1/alpha), so 1 - (k |h|)^(-alpha) is
    uniform; the sign is symmetric and independent."""
    k = 4
    rng = replica_rng(SEED, "sampler", cell=0, replica=0)
    draws = np.array([ms.sample_insertion_jump(_stable(), PARAMS, k, 0.0, rng)
                      for _ in range(10 ** 5)])
    radii = np.abs(draws)
    assert radii.min() >= 1.0 / k
    u = 1.0 - (k * radii) ** (-ALPHA)
    ks = stats.kstest(u, "uniform")
    assert ks.pvalue >= GOF_LEVEL
    frac_pos = np.mean(draws > 0)
    assert abs(frac_pos - 0.5) <= 4.0 / (2.0 * math.sqrt(draws.size))


def test_insertion_jump_reweighting():
    """holder_bump at x = 0: the fraction of insertions beyond radius 1 must
    match the ratio of kernel-weighted tail masses."""
    k, ker = 4, _holder()
    rate_all = ms.excess_rate(ker, PARAMS, k, 0.0)
    # mass of |h| > 1 under n = 1.5 there: 1.5 * 2 / alpha
    frac_exact = (1.5 * 2.0 / ALPHA) / rate_all
    rng = replica_rng(SEED, "sampler", cell=1, replica=0)
    draws = np.array([ms.sample_insertion_jump(ker, PARAMS, k, 0.0, rng)
                      for _ in range(10 ** 5)])
    frac = np.mean(np.abs(draws) > 1.0)
    stderr = math.sqrt(frac_exact * (1.0 - frac_exact) / draws.size)
    assert abs(frac - frac_exact) <= 4.0 * stderr


def test_insertion_sampler_gives_up():
    ker = op.JumpKernel(n=lambda x, h: 0.0, kappa=0.5, K=0.5, beta=0.5,
                        label="never_accepts")
    rng = np.random.default_rng(SEED)
    cap = ms.REJECTION_CAP
    ms.REJECTION_CAP = 300
    try:
        with pytest.raises(SamplerError):
            ms.sample_insertion_jump(ker, PARAMS, 4, 0.0, rng)
    finally:
        ms.REJECTION_CAP = cap


# ---------------------------------------------------------------------------
# small-jump step law
# ---------------------------------------------------------------------------

def test_truncated_exponent_against_quadrature():
    """psi_k(xi) = 2 int_0^{1/k} (1 - cos xi h) h^(-1-alpha) dh: series head
    below eps = 0.5 / xi (fast-converging Taylor of 1 - cos), plain adaptive
    quadrature on the smooth remainder."""
    k = 4
    for xi in (3.0, 30.0):
        eps = min(0.5 / xi, 1.0 / k)
        head = sum((-1.0) ** (j + 1) * xi ** (2 * j)
                   * eps ** (2 * j - ALPHA) / (2 * j - ALPHA)
                   / math.factorial(2 * j) for j in range(1, 9))
        tail, _ = integrate.quad(
            lambda h: (1.0 - math.cos(xi * h)) * h ** (-1.0 - ALPHA),
            eps, 1.0 / k, epsabs=1e-14, epsrel=1e-12, limit=200)
        direct = 2.0 * (head + tail)
        mine = ms.truncated_exponent(np.array([0.0, xi]), ALPHA, k)[1]
        assert mine == pytest.approx(direct, rel=1e-8)
    # quadratic origin: psi_k(xi) ~ xi^2 k^(alpha-2) / (2 - alpha)
    xi0 = 1e-3
    small = ms.truncated_exponent(np.array([0.0, xi0]), ALPHA, k)[1]
    assert small == pytest.approx(xi0 ** 2 * k ** (ALPHA - 2.0) / (2.0 - ALPHA),
                                  rel=1e-5)


def test_base_law_variance_identity_and_scaling():
    dt = 1e-3
    for k in (4, 16, 64):
        law = ms.base_step_law(PARAMS, k, dt)
        exact = dt * 2.0 * k ** (ALPHA - 2.0) / (2.0 - ALPHA)
        assert law.var_exact == pytest.approx(exact, rel=1e-14)
        assert law.var_grid == pytest.approx(exact, rel=ms.BASE_LAW_VAR_RTOL)
    v4 = ms.base_step_law(PARAMS, 4, dt).var_exact
    v16 = ms.base_step_law(PARAMS, 16, dt).var_exact
    v64 = ms.base_step_law(PARAMS, 64, dt).var_exact
    assert v16 / v4 == pytest.approx(4.0 ** (ALPHA - 2.0), rel=1e-12)
    assert v64 / v16 == pytest.approx(4.0 ** (ALPHA - 2.0), rel=1e-12)


def test_base_law_empirical_characteristic_function():
    k, dt, n = 4, 1e-3, 4 * 10 ** 4
    law = ms.base_step_law(PARAMS, k, dt)
    rng = replica_rng(SEED, "sampler", cell=2, replica=0)
    x = ms.simulate_base_step(PARAMS, k, dt, rng, size=n)
    for xi in (5.0, 20.0, 60.0):
        target = math.exp(-dt * float(law.exponent(xi)[0]))
        emp = float(np.mean(np.cos(xi * x)))
        assert abs(emp - target) <= 4.5 / math.sqrt(n)


def test_base_law_empirical_variance():
    k, dt, n = 16, 1e-3, 2 * 10 ** 5
    rng = replica_rng(SEED, "sampler", cell=3, replica=0)
    x = ms.simulate_base_step(PARAMS, k, dt, rng, size=n)
    exact = dt * 2.0 * k ** (ALPHA - 2.0) / (2.0 - ALPHA)
    # sample variance of a distribution with kurtosis ~ 1 / (dt psi''): wide
    # tolerance, the identity itself is checked on the grid above
    assert np.var(x) == pytest.approx(exact, rel=0.05)


def test_simulate_base_step_shapes_and_determinism():
    k, dt = 4, 1e-3
    one = ms.simulate_base_step(PARAMS, k, dt, np.random.default_rng(7))
    assert isinstance(one, float)
    block = ms.simulate_base_step(PARAMS, k, dt, np.random.default_rng(7), size=5)
    assert block.shape == (5,)
    assert block[0] == one
    again = ms.simulate_base_step(PARAMS, k, dt, np.random.default_rng(7), size=5)
    assert np.array_equal(block, again)


# ---------------------------------------------------------------------------
# path drivers
# ---------------------------------------------------------------------------

def test_path_bit_determinism():
    cfg = ms.SimConfig(horizon=1.0, k=4, seed=SEED, dt=1e-3, replica_id=11)
    a = ms.simulate_path(_holder(), PARAMS, cfg)
    b = ms.simulate_path(_holder(), PARAMS, cfg)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.marks, b.marks)
    assert np.array_equal(a.consumed, b.consumed)
    assert a.clock == b.clock
    assert [(e.step, e.h) for e in a.insertions] == \
        [(e.step, e.h) for e in b.insertions]


def test_drivers_agree_stream_for_stream():
    cfg = ms.SimConfig(horizon=1.0, k=4, seed=SEED, dt=1e-3, replica_id=3)
    fast = ms.simulate_path(_holder(), PARAMS, cfg, force_driver="fast")
    step = ms.simulate_path(_holder(), PARAMS, cfg, force_driver="stepwise")
    assert len(fast.insertions) == len(step.insertions) > 0
    for ef, es in zip(fast.insertions, step.insertions):
        assert ef.step == es.step
        assert ef.h == es.h
    assert np.allclose(fast.states, step.states, rtol=0.0, atol=1e-9)
    assert np.allclose(fast.consumed, step.consumed, rtol=1e-9)
    with pytest.raises(ParameterError):
        ms.simulate_path(_holder(), PARAMS, cfg, force_driver="bogus")


def test_event_stream_decouples_base_motion():
    """With the unit kernel the insertion schedule depends only on the event
    stream: re-seeding the base stream moves the diffusion-like part but not
    the inserted jumps."""
    ker = _stable()
    cfg_a = ms.SimConfig(horizon=1.0, k=4, seed=1, dt=1e-3)
    cfg_b = ms.SimConfig(horizon=1.0, k=4, seed=2, dt=1e-3)
    pa = ms.simulate_path(ker, PARAMS, cfg_a,
                          rng=np.random.default_rng(100),
                          event_rng=np.random.default_rng(900))
    pb = ms.simulate_path(ker, PARAMS, cfg_b,
                          rng=np.random.default_rng(200),
                          event_rng=np.random.default_rng(900))
    assert len(pa.insertions) == len(pb.insertions) > 0
    for ea, eb in zip(pa.insertions, pb.insertions):
        assert ea.step == eb.step
        assert ea.h == eb.h
    assert not np.array_equal(pa.states, pb.states)


def test_path_endpoint_matches_stable_law():
    """k = 1 with the unit kernel reproduces the full stable law at the
    horizon: two-sample KS against the subordinated-Gaussian sampler."""
    ker, n = _stable(), 10 ** 4
    ends = np.empty(n)
    for r in range(n):
        cfg = ms.SimConfig(horizon=1.0, k=1, seed=SEED, dt=1e-3, replica_id=r)
        ends[r] = ms.simulate_path(ker, PARAMS, cfg).states[-1, 0]
    rng = replica_rng(SEED, "gof", cell=1, replica=0)
    direct = np.asarray(sample_stable_increment(PARAMS, 1.0, rng, size=n)).ravel()
    ks = stats.ks_2samp(ends, direct)
    assert ks.statistic <= 1.628 * math.sqrt(2.0 / n)
    assert ks.pvalue >= GOF_LEVEL


def test_insertion_counts_poisson():
    """Unit kernel: insertion counts over the horizon are Poisson with mean
    N * horizon (chi-square, cells pooled to expectation >= 5)."""
    ker, k, n_rep = _stable(), 4, 2000
    nu = ms.excess_rate(ker, PARAMS, k, 0.0)
    counts = np.empty(n_rep, dtype=int)
    for r in range(n_rep):
        cfg = ms.SimConfig(horizon=1.0, k=k, seed=SEED, dt=1e-3, replica_id=r)
        counts[r] = len(ms.simulate_path(ker, PARAMS, cfg).insertions)
    lam = nu * 1.0
    assert abs(counts.mean() - lam) <= 4.0 * math.sqrt(lam / n_rep)
    hi = int(stats.poisson.ppf(1.0 - 1e-6, lam))
    probs = stats.poisson.pmf(np.arange(hi + 1), lam)
    obs = np.bincount(counts, minlength=hi + 1)[:hi + 1]
    obs[-1] += np.sum(counts > hi)
    probs[-1] = 1.0 - probs[:-1].sum()
    # pool cells until every expected count is at least 5
    exp_pooled, obs_pooled, acc_e, acc_o = [], [], 0.0, 0
    for e, o in zip(n_rep * probs, obs):
        acc_e += e
        acc_o += o
        if acc_e >= 5.0:
            exp_pooled.append(acc_e)
            obs_pooled.append(acc_o)
            acc_e, acc_o = 0.0, 0
    exp_pooled[-1] += acc_e
    obs_pooled[-1] += acc_o
    chi2 = float(np.sum((np.array(obs_pooled) - exp_pooled) ** 2
                        / np.array(exp_pooled)))
    pval = stats.chi2.sf(chi2, len(exp_pooled) - 1)
    assert pval >= GOF_LEVEL


def test_consumed_clock_unit_exponential():
    """Clock consumed between insertions is Exp(1).  Only the first five
    intervals of each replica enter the pool: the interval straddling the
    horizon is length-biased and always censored, so pooling everything
    understates the mean by about 1/(N * horizon).  dt = 5e-4 keeps the grid
    quantum N dt well below the KS resolution of the pool."""
    ker, k, m = _holder(), 4, 5
    vals = []
    for r in range(2200):
        cfg = ms.SimConfig(horizon=1.0, k=k, seed=SEED, dt=5e-4, replica_id=r)
        c = ms.simulate_path(ker, PARAMS, cfg).consumed
        if len(c) >= m:
            vals.extend(c[:m])
    v = np.asarray(vals)
    assert v.size >= 10 ** 4
    ks = stats.kstest(v, "expon")
    assert ks.pvalue >= GOF_LEVEL
    assert abs(v.mean() - 1.0) <= 4.0 / math.sqrt(v.size)


# ---------------------------------------------------------------------------
# containers and persistence
# ---------------------------------------------------------------------------

def test_path_validate_marks_and_clock():
    cfg = ms.SimConfig(horizon=1.0, k=4, seed=SEED, dt=1e-3, replica_id=5)
    p = ms.simulate_path(_holder(), PARAMS, cfg)
    assert p.validate() is p
    assert p.states.shape == (cfg.n_steps + 1, 1)
    assert p.marks[0] == ms.MARK_BASE_MOTION
    tagged = np.flatnonzero(p.marks == ms.MARK_MEYER_INSERTION)
    assert set(tagged.tolist()) == {e.step for e in p.insertions}
    assert p.clock.insertions == len(p.insertions)
    assert p.clock.S >= 0.0
    nu = ms.excess_rate(_holder(), PARAMS, 4, 0.0)
    assert p.clock.C == pytest.approx(nu * cfg.horizon, rel=1e-9)
    # tampering with the marks must be caught
    p.marks[7] = ms.MARK_MEYER_INSERTION if p.marks[7] == 0 else 0
    with pytest.raises(NumericalError):
        p.validate()


def test_path_save_load_roundtrip(tmp_path):
    cfg = ms.SimConfig(horizon=1.0, k=4, seed=SEED, dt=1e-3, replica_id=2)
    p = ms.simulate_path(_holder(), PARAMS, cfg)
    fn = os.path.join(tmp_path, "path.bin")
    p.save(fn)
    times, states, marks = ms.load_path(fn)
    assert np.array_equal(times, p.times)
    assert np.array_equal(states, p.states)
    assert np.array_equal(marks, p.marks)
    # corrupt the schema tag
    raw = bytearray(open(fn, "rb").read())
    raw[0] ^= 0xFF
    bad = os.path.join(tmp_path, "bad.bin")
    open(bad, "wb").write(bytes(raw))
    with pytest.raises(NumericalError):
        ms.load_path(bad)
    # truncate the body
    trunc = os.path.join(tmp_path, "trunc.bin")
    open(trunc, "wb").write(bytes(raw[:len(raw) - 5]))
    with pytest.raises(NumericalError):
        ms.load_path(trunc)


def test_first_exit_time():
    times = np.linspace(0.0, 1.0, 11)
    states = np.linspace(0.0, 1.0, 11)[:, None]
    cfg = ms.SimConfig(horizon=1.0, k=4, seed=0, dt=0.1)
    p = ms.PathSkeleton(times=times, states=states,
                        marks=np.zeros(11, dtype=np.uint8), config=cfg)
    t, exited = ms.first_exit_time(p, 0.0, 0.45)
    assert exited and t == pytest.approx(0.5)
    t, exited = ms.first_exit_time(p, 0.0, 5.0)
    assert not exited and t == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        ms.first_exit_time(p, 0.0, 0.0)


# ---------------------------------------------------------------------------
# shared-jump-measure driver for coupled truncation levels
# ---------------------------------------------------------------------------

def test_coupled_levels_nested_jumps():
    """Each level keeps exactly the shared jumps above its own radius, so the
    coarse insertion sets are subsets of the finer ones; the full path of each
    level is replayed from the shared uniform block plus its kept jumps."""
    cfg = ms.SimConfig(horizon=0.5, k=4, seed=SEED, dt=5e-4)
    rng = replica_rng(SEED, "path", cell=11, replica=0)
    erng = replica_rng(SEED, "path", cell=12, replica=0)
    paths = ms.simulate_coupled_levels(_holder(), PARAMS, cfg, (4, 8, 16),
                                       rng=rng, event_rng=erng)
    assert [p.config.k for p in paths] == [4, 8, 16]
    evs = [{(e.step, e.h) for e in p.insertions} for p in paths]
    assert evs[0] <= evs[1] <= evs[2]
    assert len(evs[2]) > len(evs[0])  # the finer band did add jumps
    for p, k in zip(paths, (4, 8, 16)):
        p.validate()
        assert all(abs(e.h) > 1.0 / k for e in p.insertions)
        assert p.clock.insertions == len(p.insertions)
        assert p.consumed.size == 0
    # replay oracle: one shared uniform block through each level's inverse
    # step law, plus that level's kept jumps, rebuilds the states exactly
    u = replica_rng(SEED, "path", cell=11, replica=0).random(cfg.n_steps)
    for p, k in zip(paths, (4, 8, 16)):
        incs = ms.base_step_law(PARAMS, k, cfg.dt).sample(u)
        rebuilt = np.concatenate([[0.0], np.cumsum(incs)])
        for e in p.insertions:
            rebuilt[e.step:] += e.h
        assert np.allclose(p.states[:, 0], rebuilt, atol=1e-12)


def test_coupled_levels_match_clock_driver_law():
    """Endpoints from the shared-measure driver agree in law with the
    insertion-clock driver (two-sample KS at the 1% level, frozen seeds)."""
    from dataclasses import replace

    n = 3000
    cfg = ms.SimConfig(horizon=0.3, k=8, seed=31, dt=5e-4)
    ends_c = np.empty(n)
    for r in range(n):
        rng = replica_rng(31, "path", cell=5, replica=r)
        erng = replica_rng(31, "path", cell=6, replica=r)
        paths = ms.simulate_coupled_levels(
            _holder(), PARAMS, replace(cfg, replica_id=r), (8,),
            rng=rng, event_rng=erng)
        ends_c[r] = paths[0].states[-1, 0]
    ends_d = np.empty(n)
    for r in range(n):
        rng = replica_rng(32, "path", cell=5, replica=r)
        path = ms.simulate_path(_holder(), PARAMS,
                                replace(cfg, seed=32, replica_id=r), rng=rng)
        ends_d[r] = path.states[-1, 0]
    _, p_val = stats.ks_2samp(ends_c, ends_d)
    assert p_val >= GOF_LEVEL


def test_coupled_levels_refusals():
    cfg = ms.SimConfig(horizon=0.5, k=4, seed=SEED, dt=1e-3)
    with pytest.raises(ParameterError):
        ms.simulate_coupled_levels(op.kernel_preset("discontinuous_in_x"),
                                   PARAMS, cfg, (4, 8))
    with pytest.raises(ParameterError):
        ms.simulate_coupled_levels(_holder(), PARAMS, cfg, (4, 64))
    with pytest.raises(ParameterError):
        ms.simulate_coupled_levels(_holder(), PARAMS, cfg, ())
