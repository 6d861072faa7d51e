"""Path simulation for jump-kernel generators by thinning-free insertion.

The process is built in two layers.  The base layer is the exact small-jump
component of the driving stable law: all jumps of magnitude at most 1/k, whose
increment law over one step is recovered by numerical inversion of its
characteristic function (the literal route "full increment minus an
independent big-jump draw" has the wrong law, since the subtracted jumps must
be the increment's own).  The insertion layer adds every jump larger than 1/k
at the kernel-weighted excess rate N(x) through an additive clock: C grows by
N(X) dt per step, and each time C crosses an accumulating sum of independent
unit-exponential thresholds a jump drawn from the kernel-weighted tail law is
inserted at the end of the crossing step.

Two drivers produce identical output stream-for-stream: a vectorized one for
x-independent kernels and a stepwise one for general kernels.  Both consume
randomness in the same order (base uniforms as one block, then the initial
threshold, then per insertion event the jump draws followed by a fresh
threshold), so driver choice never changes a path.
"""

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .errors import NumericalError, ParameterError, SamplerError
from .seeding import replica_rng
from .stable_core import _quiet_quad

# Resolution guard for the insertion clock: sup_x N(x) dt must stay below
# this, keeping the per-step crossing probability small.
CLOCK_GUARD = 0.1

# Excess-rate cache: interpolation must stay within this fraction of min N.
CACHE_REL_TOL = 0.01

# Rejection sampling gives up after this many proposals.
REJECTION_CAP = 10 ** 6

# Base-step law construction tolerances.
BASE_LAW_MASS_TOL = 1e-4
BASE_LAW_VAR_RTOL = 1e-3

# Step marks.
MARK_BASE_MOTION = 0
MARK_STABLE_BIG_JUMP = 1   # reserved: the base layer never emits big jumps
MARK_MEYER_INSERTION = 2

PATH_SCHEMA_TAG = 0x50534B31  # "PSK1"


# ---------------------------------------------------------------------------
# configuration and path containers
# ---------------------------------------------------------------------------

@dataclass
class SimConfig:
    """Time stepping and truncation-level parameters of one path replica."""

    horizon: float
    k: int
    seed: int
    dt: float = 1e-3
    replica_id: int = 0
    x0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ParameterError(f"dt={self.dt} must be positive")
        if not self.horizon > 0.0:
            raise ParameterError(f"horizon={self.horizon} must be positive")
        if self.dt > self.horizon + 1e-15:
            raise ParameterError("dt must not exceed the horizon")
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"truncation level k={self.k} must be a positive integer")
        self.k = int(self.k)

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))


@dataclass
class MeyerClock:
    """Final clock state of a path: accumulated functional, residual threshold,
    and insertion count."""

    C: float = 0.0
    S: float = 0.0
    insertions: int = 0


@dataclass
class InsertionEvent:
    """One inserted jump: the step index it lands on, its grid time, the jump
    size, and the left-point state the draw was conditioned on."""

    step: int
    time: float
    h: float
    x_before: float


@dataclass
class PathSkeleton:
    """Simulated path on the step grid.

    ``states`` has shape (n_steps + 1, d); ``marks[j]`` tags the transition
    into row j (row 0 is always base_motion).  ``insertions`` lists the
    inserted jumps in time order and ``consumed`` holds the clock increments
    between consecutive insertions, which should look unit-exponential across
    replicas.
    """

    times: np.ndarray
    states: np.ndarray
    marks: np.ndarray
    config: SimConfig
    insertions: list = field(default_factory=list)
    consumed: np.ndarray = field(default_factory=lambda: np.empty(0))
    clock: MeyerClock = field(default_factory=MeyerClock)

    def validate(self):
        if not np.all(np.diff(self.times) > 0.0):
            raise NumericalError("path times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise NumericalError("path states must be finite")
        marked = {ev.step for ev in self.insertions}
        tagged = set(np.flatnonzero(self.marks == MARK_MEYER_INSERTION).tolist())
        if marked != tagged:
            raise NumericalError("insertion marks disagree with the event list")
        return self

    def save(self, path):
        """Binary dump: u32 schema tag, u64 step count, then per step the
        f64 time, d f64 state coordinates and the u8 mark (little endian)."""
        times = np.asarray(self.times, dtype="<f8")
        states = np.atleast_2d(np.asarray(self.states, dtype="<f8"))
        if states.shape[0] != times.size:
            states = states.T
        marks = np.asarray(self.marks, dtype=np.uint8)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<IQ", PATH_SCHEMA_TAG, times.size))
            for j in range(times.size):
                fh.write(struct.pack("<d", times[j]))
                fh.write(states[j].tobytes())
                fh.write(struct.pack("<B", int(marks[j])))
        return path


def load_path(path):
    """Read a PathSkeleton dump; the state dimension is inferred from the
    record size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tag, count = struct.unpack_from("<IQ", raw, 0)
    if tag != PATH_SCHEMA_TAG:
        raise NumericalError(f"unrecognized path file tag {tag:#x}")
    body = len(raw) - 12
    if count == 0 or body % count:
        raise NumericalError("path file length inconsistent with step count")
    rec = body // count
    d = (rec - 9) // 8
    if rec != 9 + 8 * d or d < 1:
        raise NumericalError("path file record size inconsistent")
    times = np.empty(count)
    states = np.empty((count, d))
    marks = np.empty(count, dtype=np.uint8)
    off = 12
    for j in range(count):
        times[j] = struct.unpack_from("<d", raw, off)[0]
        states[j] = np.frombuffer(raw, dtype="<f8", count=d, offset=off + 8)
        marks[j] = raw[off + 8 + 8 * d]
        off += rec
    return times, states, marks


# ---------------------------------------------------------------------------
# excess rate of insertions
# ---------------------------------------------------------------------------

def excess_rate(kernel, params, k, x):
    """Kernel mass beyond the truncation radius: N(x) = int_{|h|>1/k}
    n(x, h) |h|^(-1-alpha) dh, the insertion intensity at state x."""
    if params.d != 1:
        raise ParameterError("path simulation supports d = 1 only")
    if int(k) != k or k < 1:
        raise ParameterError(f"truncation level k={k} must be a positive integer")
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    alpha = params.alpha
    lo = 1.0 / k
    if kernel.has_decomposition:
        # n = 1 + pattern(x) shape(|h|): both halves integrate in closed form
        return 2.0 * k ** alpha / alpha + 2.0 * float(kernel.pattern(x)) \
            * kernel.shape_tail_integral(lo, alpha)

    def integrand(h):
        return (float(kernel.n(x, h)) + float(kernel.n(x, -h))) / h ** (1.0 + alpha)

    total, err = 0.0, 0.0
    cuts = [c for c in (1.0,) if c > lo]
    edges = [lo] + cuts
    with _quiet_quad():
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(integrand, a, b, epsabs=1e-12, epsrel=1e-9,
                                    limit=200)
            total += val
            err += e
        val, e = integrate.quad(integrand, edges[-1], np.inf, epsabs=1e-12,
                                epsrel=1e-9, limit=200)
    total += val
    err += e
    if err > max(1e-6 * abs(total), 1e-10):
        raise NumericalError(f"excess-rate quadrature error {err:g} too large")
    return total


def excess_rate_bound(kernel, params, k):
    """Envelope bound sup_x N(x) <= (1 + K) 2 k^alpha / alpha used by the
    clock-resolution guard."""
    return (1.0 + kernel.K) * 2.0 * k ** params.alpha / params.alpha


@dataclass
class ExcessRateTable:
    """Piecewise-linear cache of N over a grid, validated on construction."""

    x_grid: np.ndarray
    values: np.ndarray
    worst_validation_error: float

    def eval(self, x):
        return np.interp(x, self.x_grid, self.values)


def cache_excess_rate(kernel, params, k, x_grid, n_check=100, seed=20240817):
    """Tabulate N on x_grid with linear interpolation between nodes.

    Held-out validation: at ``n_check`` uniform random points inside the grid
    the interpolant must agree with direct quadrature within 1% of the minimum
    rate, otherwise the cache is refused.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.ndim != 1 or x_grid.size < 2 or not np.all(np.diff(x_grid) > 0):
        raise ParameterError("x_grid must be a strictly increasing 1-D grid")
    values = np.array([excess_rate(kernel, params, k, xi) for xi in x_grid])
    rng = np.random.default_rng(seed)
    probes = rng.uniform(x_grid[0], x_grid[-1], size=n_check)
    direct = np.array([excess_rate(kernel, params, k, xi) for xi in probes])
    interp = np.interp(probes, x_grid, values)
    worst = float(np.max(np.abs(interp - direct)))
    tol = CACHE_REL_TOL * float(np.min(direct))
    if worst > tol:
        raise NumericalError(
            f"excess-rate cache refused: interpolation error {worst:g} exceeds {tol:g}")
    return ExcessRateTable(x_grid=x_grid, values=values, worst_validation_error=worst)


def _excess_rate_callable(kernel, params, k):
    """Fast per-step N(x): closed form via the kernel decomposition when
    available, constant for x-independent kernels, direct quadrature otherwise."""
    if kernel.x_independent:
        const = excess_rate(kernel, params, k, 0.0)
        return lambda x: const
    if kernel.has_decomposition:
        alpha = params.alpha
        base = 2.0 * k ** alpha / alpha
        tail = kernel.shape_tail_integral(1.0 / k, alpha)
        return lambda x: base + 2.0 * float(kernel.pattern(x)) * tail
    return lambda x: excess_rate(kernel, params, k, x)


# ---------------------------------------------------------------------------
# insertion jump sampler
# ---------------------------------------------------------------------------

def sample_insertion_jump(kernel, params, k, x, rng):
    """One jump of magnitude > 1/k from the kernel-weighted tail law.

    Proposal: the truncated stable tail, |h| = (1/k) U^(-1/alpha) with a
    symmetric sign; acceptance n(x, h) / (1 + K).  The acceptance probability
    is at least kappa / (1 + K) per proposal, so the loop terminates fast for
    admissible kernels; a pathological kernel trips the cap.
    """
    alpha = params.alpha
    x = float(np.asarray(x, dtype=float).reshape(-1)[0])
    bound = 1.0 + kernel.K
    for _ in range(REJECTION_CAP):
        radius = (1.0 / k) * rng.random() ** (-1.0 / alpha)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        h = sign * radius
        if rng.random() * bound <= float(kernel.n(x, h)):
            return h
    raise SamplerError(
        "insertion sampler exceeded %d proposals (kappa/(1+K) too small)" % REJECTION_CAP)


# ---------------------------------------------------------------------------
# base step law (small jumps only), by characteristic-function inversion
# ---------------------------------------------------------------------------

def _sine_tail_cumulative(v_grid, alpha):
    """Cumulative S(v) = int_0^v sin(w) w^(-alpha) dw on an increasing grid
    starting at 0: an alternating series head near the origin, Gauss panels
    after.  Wide cells are subdivided internally, so accuracy does not depend
    on the caller's grid resolution."""
    gl_x, gl_w = np.polynomial.legendre.leggauss(7)
    v = np.asarray(v_grid, dtype=float)
    out = np.zeros_like(v)
    v1 = v[1]
    vh = min(v1, 0.3)
    head = 0.0
    for j in range(1, 9):
        p = 2 * j - 1
        head += (-1.0) ** (j + 1) * vh ** (p + 1.0 - alpha) \
            / ((p + 1.0 - alpha) * math.factorial(p))
    # remainder of the first cell plus all later cells, each split into q
    # sub-panels sized for Gauss-7 accuracy on sin(w) w^(-alpha)
    lo = np.concatenate([[vh], v[1:-1]])
    hi_ = v[1:]
    keep = hi_ > lo
    lo, hi_ = lo[keep], hi_[keep]
    segs_at = np.flatnonzero(keep)
    if lo.size:
        q = int(min(64, max(1, math.ceil(float(np.max(hi_ - lo)) / 0.2))))
        frac = np.arange(q + 1) / q
        edges = lo[:, None] + (hi_ - lo)[:, None] * frac[None, :]
        mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
        half = 0.5 * (edges[:, 1:] - edges[:, :-1])
        nodes = mid[..., None] + half[..., None] * gl_x
        vals = np.sin(nodes) * nodes ** (-alpha)
        segs = np.sum(vals * gl_w, axis=-1) * half
        cell = np.zeros(v.size - 1)
        cell[segs_at] = segs.sum(axis=1)
    else:
        cell = np.zeros(v.size - 1)
    out[1:] = head + np.cumsum(cell)
    return out


def truncated_exponent(xi_grid, alpha, k):
    """Symbol of the small-jump component: psi_k(xi) = 2 int_0^{1/k}
    (1 - cos xi h) h^(-1-alpha) dh, evaluated on a grid through the
    integration-by-parts form (2/alpha)(v^alpha S(v) - (1 - cos v)) k^alpha
    with v = xi / k."""
    xi = np.asarray(xi_grid, dtype=float)
    v = xi / k
    s_cum = _sine_tail_cumulative(v, alpha)
    g = (2.0 / alpha) * (v ** alpha * s_cum - (1.0 - np.cos(v)))
    g[0] = 0.0
    return k ** alpha * g


class TruncatedStableLaw:
    """Increment law of the small-jump component over one step.

    The density is recovered by cosine-transform inversion of
    exp(-dt psi_k(xi)) on a self-scaled grid; sampling is inverse-CDF through
    a dense tabulation, consuming exactly one uniform per draw.  The grid
    variance is checked against the exact second moment
    dt * 2 k^(alpha-2) / (2 - alpha) at build time.
    """

    def __init__(self, alpha, k, dt, n_xi=8192, n_y=4097):
        self.alpha = float(alpha)
        self.k = int(k)
        self.dt = float(dt)
        self.var_exact = dt * 2.0 * k ** (alpha - 2.0) / (2.0 - alpha)
        sigma = math.sqrt(self.var_exact)

        # frequency cutoff: extend until the characteristic function is dead
        L = 8.0 / sigma
        for _ in range(200):
            probe = np.linspace(0.0, L, 257)
            if self.dt * truncated_exponent(probe, alpha, k)[-1] > 35.0:
                break
            L *= 1.4
        else:
            raise NumericalError("could not locate a frequency cutoff for the base law")

        xi = np.linspace(0.0, L, n_xi)
        cf = np.exp(-dt * truncated_exponent(xi, alpha, k))
        dxi = xi[1] - xi[0]
        y_max = max(16.0 * sigma, 4.0 / k)
        y = np.linspace(-y_max, y_max, n_y)
        half = (n_y - 1) // 2
        weights = np.full(n_xi, dxi)
        weights[0] *= 0.5
        weights[-1] *= 0.5
        dens_pos = np.empty(half + 1)
        pos = y[half:]
        chunk = 512
        wcf = weights * cf
        for a in range(0, half + 1, chunk):
            block = pos[a:a + chunk]
            dens_pos[a:a + chunk] = np.cos(np.outer(block, xi)) @ wcf
        dens_pos /= math.pi
        dens = np.concatenate([dens_pos[:0:-1], dens_pos])
        dens = np.maximum(dens, 0.0)

        mass = float(np.trapezoid(dens, y))
        if abs(mass - 1.0) > BASE_LAW_MASS_TOL:
            raise NumericalError(f"base-law density mass {mass:.6f} not within "
                                 f"{BASE_LAW_MASS_TOL:g} of 1")
        var_grid = float(np.trapezoid(dens * y * y, y)) / mass
        if abs(var_grid - self.var_exact) > BASE_LAW_VAR_RTOL * self.var_exact:
            raise NumericalError(
                f"base-law grid variance {var_grid:g} disagrees with the exact "
                f"moment {self.var_exact:g}")

        cdf = integrate.cumulative_trapezoid(dens, y, initial=0.0)
        cdf /= cdf[-1]
        cdf = np.maximum.accumulate(cdf)
        # strictly increasing version for stable inverse interpolation
        ramp = np.linspace(0.0, 1e-12, cdf.size)
        cdf = (cdf + ramp) / (1.0 + 1e-12)
        self.y_grid = y
        self.density = dens
        self.cdf = cdf
        self.var_grid = var_grid

    def exponent(self, xi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        grid = np.linspace(0.0, float(np.max(np.abs(xi))) + 1e-9, 4097)
        psi = truncated_exponent(grid, self.alpha, self.k)
        return np.interp(np.abs(xi), grid, psi)

    def sample(self, uniforms):
        return np.interp(uniforms, self.cdf, self.y_grid)


_BASE_LAW_CACHE = {}


def base_step_law(params, k, dt):
    """Cached TruncatedStableLaw for (alpha, k, dt)."""
    if params.d != 1:
        raise ParameterError("path simulation supports d = 1 only")
    key = (round(float(params.alpha), 12), int(k), round(float(dt), 15))
    law = _BASE_LAW_CACHE.get(key)
    if law is None:
        law = TruncatedStableLaw(params.alpha, int(k), float(dt))
        _BASE_LAW_CACHE[key] = law
    return law


def simulate_base_step(params, k, dt, rng, size=None):
    """Increments of the small-jump component over time dt (one uniform per
    draw).  ``size=None`` returns a single float."""
    law = base_step_law(params, k, dt)
    if size is None:
        return float(law.sample(rng.random()))
    return law.sample(rng.random(int(size)))


# ---------------------------------------------------------------------------
# path drivers
# ---------------------------------------------------------------------------

def simulate_path(kernel, params, config, rng=None, event_rng=None, force_driver=None):
    """Simulate one replica path of the kernel-weighted process.

    Randomness order (identical in both drivers): one block of base-step
    uniforms, the initial unit-exponential threshold, then for each insertion
    event in time order the jump draws followed by a fresh threshold.  With
    ``event_rng`` given, thresholds and jump draws come from that stream
    instead, so the base block can be shared across truncation levels.
    """
    if params.d != 1:
        raise ParameterError("path simulation supports d = 1 only")
    k = config.k
    sup_rate = excess_rate_bound(kernel, params, k)
    if sup_rate * config.dt > CLOCK_GUARD + 1e-12:
        raise ParameterError(
            f"clock resolution guard violated: sup N dt = {sup_rate * config.dt:.3g} "
            f"> {CLOCK_GUARD}")
    if rng is None:
        rng = replica_rng(config.seed, "path", cell=0, replica=config.replica_id)
    ev = event_rng if event_rng is not None else rng

    n_steps = config.n_steps
    dt = config.dt
    law = base_step_law(params, k, dt)
    base_incs = law.sample(rng.random(n_steps))
    times = np.arange(n_steps + 1) * dt

    if force_driver is None:
        driver = "fast" if kernel.x_independent else "stepwise"
    else:
        driver = force_driver
    if driver not in ("fast", "stepwise"):
        raise ParameterError(f"unknown driver {driver!r}")

    marks = np.zeros(n_steps + 1, dtype=np.uint8)
    events = []
    consumed = []

    if driver == "fast":
        if not kernel.x_independent:
            raise ParameterError("fast driver requires an x-independent kernel")
        nu = excess_rate(kernel, params, k, 0.0)
        base_path = config.x0 + np.concatenate([[0.0], np.cumsum(base_incs)])
        states = base_path.copy()
        threshold = ev.standard_exponential()
        c_step = nu * dt
        c_last = 0.0
        while True:
            j_cross = int(math.ceil(threshold / c_step - 1e-12))
            if j_cross > n_steps:
                break
            c_now = j_cross * c_step
            # left-point state: before this step's base increment and jump,
            # after everything earlier
            x_before = float(states[j_cross - 1])
            h = sample_insertion_jump(kernel, params, k, x_before, ev)
            states[j_cross:] += h
            marks[j_cross] = MARK_MEYER_INSERTION
            events.append(InsertionEvent(step=j_cross, time=float(times[j_cross]),
                                         h=float(h), x_before=x_before))
            consumed.append(c_now - c_last)
            c_last = c_now
            threshold += ev.standard_exponential()
        c_total = n_steps * c_step
        clock = MeyerClock(C=c_total, S=threshold - c_total,
                           insertions=len(events))
        states = states[:, None]
    else:
        rate = _excess_rate_callable(kernel, params, k)
        states = np.empty(n_steps + 1)
        states[0] = config.x0
        threshold = ev.standard_exponential()
        c_total = 0.0
        c_last = 0.0
        x_curr = config.x0
        for j in range(n_steps):
            x_left = x_curr
            c_total += rate(x_left) * dt
            x_curr = x_left + base_incs[j]
            while c_total >= threshold - 1e-12 * threshold:
                h = sample_insertion_jump(kernel, params, k, x_left, ev)
                x_curr += h
                marks[j + 1] = MARK_MEYER_INSERTION
                events.append(InsertionEvent(step=j + 1, time=float(times[j + 1]),
                                             h=float(h), x_before=x_left))
                consumed.append(c_total - c_last)
                c_last = c_total
                threshold += ev.standard_exponential()
            states[j + 1] = x_curr
        clock = MeyerClock(C=c_total, S=threshold - c_total,
                           insertions=len(events))
        states = states[:, None]

    return PathSkeleton(times=times, states=states, marks=marks, config=config,
                        insertions=events, consumed=np.asarray(consumed),
                        clock=clock)


def simulate_coupled_levels(kernel, params, config, k_list, rng=None,
                            event_rng=None):
    """One path per truncation level, driven by a single shared jump measure.

    For x-independent kernels the insertion stream is a Poisson point process
    on time and jump size, independent of the path, so all levels can share
    one realization drawn at the finest radius: every level keeps exactly the
    jumps larger than its own 1/k and the finer levels add the extra band.
    Base increments reuse one block of uniforms through each level's own
    inverse distribution (comonotone).  Marginally each path has the same law
    as the clock driver's; jointly the levels are maximally coupled, which
    collapses the noise of paired level differences in refinement studies.
    The Meyer clock is not simulated here: consumed is empty and the clock
    records only the deterministic total and the insertion count.
    """
    if params.d != 1:
        raise ParameterError("path simulation supports d = 1 only")
    if not kernel.x_independent:
        raise ParameterError("coupled levels require an x-independent kernel")
    k_list = [int(k) for k in k_list]
    if not k_list or any(k < 1 for k in k_list):
        raise ParameterError("k_list must hold positive integers")
    k_max = max(k_list)
    sup_rate = excess_rate_bound(kernel, params, k_max)
    if sup_rate * config.dt > CLOCK_GUARD + 1e-12:
        raise ParameterError(
            f"clock resolution guard violated at k={k_max}: sup N dt = "
            f"{sup_rate * config.dt:.3g} > {CLOCK_GUARD}")
    if rng is None:
        rng = replica_rng(config.seed, "path", cell=0, replica=config.replica_id)
    ev = event_rng if event_rng is not None else rng

    n_steps = config.n_steps
    dt = config.dt
    times = np.arange(n_steps + 1) * dt
    base_u = rng.random(n_steps)

    nu_max = excess_rate(kernel, params, k_max, 0.0)
    n_events = int(ev.poisson(nu_max * n_steps * dt))
    ev_times = np.sort(ev.random(n_events)) * n_steps * dt
    ev_steps = np.minimum(np.ceil(ev_times / dt - 1e-12).astype(int), n_steps)
    ev_steps = np.maximum(ev_steps, 1)
    ev_jumps = np.array([sample_insertion_jump(kernel, params, k_max, 0.0, ev)
                         for _ in range(n_events)])

    out = []
    for k in k_list:
        law = base_step_law(params, k, dt)
        incs = law.sample(base_u)
        states = config.x0 + np.concatenate([[0.0], np.cumsum(incs)])
        marks = np.zeros(n_steps + 1, dtype=np.uint8)
        events = []
        keep = np.abs(ev_jumps) > 1.0 / k
        for j, h in zip(ev_steps[keep], ev_jumps[keep]):
            states[j:] += h
            marks[j] = MARK_MEYER_INSERTION
            events.append(InsertionEvent(step=int(j), time=float(times[j]),
                                         h=float(h),
                                         x_before=float(states[j - 1])))
        nu_k = excess_rate(kernel, params, k, 0.0)
        clock = MeyerClock(C=nu_k * n_steps * dt, S=0.0,
                           insertions=len(events))
        cfg_k = replace(config, k=k)
        out.append(PathSkeleton(times=times, states=states[:, None],
                                marks=marks, config=cfg_k, insertions=events,
                                consumed=np.empty(0), clock=clock))
    return out


def first_exit_time(path, center, R):
    """First grid time at which the state leaves the closed ball of radius R
    around center; (horizon, False) when the path never leaves (censoring —
    callers must not treat it as an exit)."""
    if not R > 0.0:
        raise ParameterError(f"exit radius R={R} must be positive")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dist = np.linalg.norm(np.atleast_2d(path.states) - center[None, :], axis=1)
    outside = np.flatnonzero(dist[1:] >= R)
    if outside.size == 0:
        return float(path.times[-1]), False
    idx = int(outside[0]) + 1
    return float(path.times[idx]), True
