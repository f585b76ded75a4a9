"""Weighted-flux diagnostics for a reduced linear wave in a black-hole interior toy model.

The field obeys ::

    phi_vv = phi_xx - V(v, x) phi,        x in [0, 2 pi) periodic,

with ``v`` the advanced (evolution) coordinate and ``e^{kappa v}`` the
blue-shift weight.  Two independent pipelines evolve it:

``leapfrog``
    second-order central differences in ``v`` and ``x`` at CFL 1/2.
``characteristic``
    the null variables ``w+- = phi_v +- phi_x`` are shifted exactly by one
    cell per step (CFL 1) with trapezoidal source terms; ``phi`` is
    integrated from ``phi_v`` by the trapezoid rule, and the implicit
    coupling is solved node by node in closed form.

Both store ``phi`` and ``phi_v`` at every step, so slices at arbitrary ``v``
come from cubic Hermite interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .exceptions import EvolutionBlowup, InadmissibleDatum, InvalidArgument, NoTameContinuation
from .grid import PERIODIC, Field, PolicyFamily, RefinementPolicy, make_grid

SCHEMES = ("leapfrog", "characteristic")
DEFAULT_CFL = {"leapfrog": 0.5, "characteristic": 1.0}
FLUX_CAP_FACTOR = 1e6
TWO_PI = 2.0 * np.pi


# -- model and data ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InteriorModel:
    """Surface gravity, potential and ``v``-domain.

    ``potential(v, x)`` must broadcast over an array ``x``; ``sup_v`` is the
    declared bound on ``|V|``.  ``dv_potential`` defaults to a centred
    difference of ``potential``.
    """

    kappa: float
    potential: object
    v0: float = 0.0
    v_max: float = 10.0
    sup_v: float = 0.0
    dv_potential: object = None
    name: str = "custom"

    def __post_init__(self):
        if not self.kappa >= 0:
            raise InvalidArgument("kappa must be >= 0")
        if not self.v_max > self.v0:
            raise InvalidArgument("v_max must exceed v0")
        if not np.isfinite(self.sup_v):
            raise InvalidArgument("potential bound must be finite")

    def V(self, v, x):
        return np.broadcast_to(np.asarray(self.potential(v, x), dtype=float), np.shape(x))

    def V_v(self, v, x):
        if self.dv_potential is not None:
            return np.broadcast_to(np.asarray(self.dv_potential(v, x), dtype=float), np.shape(x))
        eps = 1e-5 * max(1.0, abs(v))
        return (self.V(v + eps, x) - self.V(v - eps, x)) / (2 * eps)

    def weight(self, v):
        return np.exp(self.kappa * np.asarray(v, dtype=float))


def potential_preset(name, strength=1.0):
    """``(potential, dv_potential, sup)`` for a named potential.

    ``zero``; ``mass`` (constant ``m^2 = strength``); ``unstable`` (constant
    ``-strength``); ``decaying`` (``strength (1 + cos(x) / 2) e^{-v}``).
    """
    s = float(strength)
    if name == "zero":
        return (lambda v, x: 0.0), (lambda v, x: 0.0), 0.0
    if name == "mass":
        return (lambda v, x: s), (lambda v, x: 0.0), abs(s)
    if name == "unstable":
        return (lambda v, x: -s), (lambda v, x: 0.0), abs(s)
    if name == "decaying":
        return (
            (lambda v, x: s * (1.0 + 0.5 * np.cos(x)) * np.exp(-v)),
            (lambda v, x: -s * (1.0 + 0.5 * np.cos(x)) * np.exp(-v)),
            1.5 * abs(s),
        )
    raise InvalidArgument(f"unknown potential preset {name!r}")


def make_model(kappa=0.5, potential="decaying", strength=1.0, v0=0.0, v_max=10.0):
    V, dV, sup = potential_preset(potential, strength)
    return InteriorModel(kappa, V, v0, v_max, sup * (np.exp(-v0) if potential == "decaying" else 1.0), dV, potential)


def x_nodes(resolution):
    return make_grid((int(resolution),), spacing=TWO_PI / resolution, topology=PERIODIC).centers(0)


def _fourier_resample(values, n):
    """Evaluate the trigonometric interpolant of cell-centred periodic samples at ``n`` centres."""
    values = np.asarray(values, dtype=float)
    m = values.size
    if m == n:
        return values.copy()
    c = np.fft.fft(values) / m
    k = np.fft.fftfreq(m, 1.0 / m)
    if m % 2 == 0:
        # split the Nyquist term symmetrically so the interpolant stays real
        c = np.append(c, 0.5 * c[m // 2])
        c[m // 2] *= 0.5
        k = np.append(k, m // 2)
        k[m // 2] = -(m // 2)
    shift = np.exp(-1j * k * (np.pi / m))  # phases relative to the first centre
    x = x_nodes(n)
    return np.real(np.exp(1j * np.outer(x, k)) @ (c * shift))


@dataclass(frozen=True, eq=False)
class CauchyDatum:
    """Initial slice ``(phi0, phi1)``; either sampled functions or stored fields."""

    phi0: object
    phi1: object
    name: str = "datum"

    def at_resolution(self, n):
        x = x_nodes(n)
        return self._sample(self.phi0, x, n), self._sample(self.phi1, x, n)

    @staticmethod
    def _sample(src, x, n):
        if isinstance(src, Field):
            return _fourier_resample(src.values.ravel(), n)
        return np.broadcast_to(np.asarray(src(x), dtype=float), x.shape).copy()

    def norm(self, n=256):
        """``H^1 x L^2`` norm at sampling resolution ``n``."""
        p0, p1 = self.at_resolution(n)
        h = TWO_PI / n
        dx = (np.roll(p0, -1) - np.roll(p0, 1)) / (2 * h)
        return float(np.sqrt(h * np.sum(p0 ** 2 + dx ** 2 + p1 ** 2)))

    def scaled(self, alpha):
        return linear_combination([(alpha, self)])


def linear_combination(terms, name="combination"):
    """Datum ``sum a_i d_i``; sampled lazily at each resolution."""
    terms = list(terms)

    def mk(attr):
        def f(x):
            n = x.size
            acc = np.zeros(n)
            for a, d in terms:
                acc += a * CauchyDatum._sample(getattr(d, attr), x, n)
            return acc

        return f

    return CauchyDatum(mk("phi0"), mk("phi1"), name)


def pulse(center=np.pi, width=0.5, amplitude=1.0, direction="right"):
    """Smooth periodic bump ``A exp((cos(x - c) - 1) / w^2)``.

    ``direction`` ``"right"`` / ``"left"`` gives a travelling profile
    ``f(x -+ v)``; ``"still"`` starts at rest.
    """
    w2 = width ** 2

    def f(x):
        return amplitude * np.exp((np.cos(x - center) - 1.0) / w2)

    def fx(x):
        return -np.sin(x - center) / w2 * f(x)

    sign = {"right": -1.0, "left": 1.0, "still": 0.0}
    if direction not in sign:
        raise InvalidArgument(f"unknown direction {direction!r}")
    return CauchyDatum(f, lambda x: sign[direction] * fx(x), f"pulse-{direction}")


def fourier_mode(k=1, amplitude=1.0, omega=None):
    """``A cos(k x)`` with velocity ``omega A sin(k x)``, i.e. the mode ``A cos(k x - omega v)``."""
    om = float(k) if omega is None else float(omega)
    return CauchyDatum(lambda x: amplitude * np.cos(k * x), lambda x: om * amplitude * np.sin(k * x), f"mode{k}")


def zero_datum():
    return CauchyDatum(lambda x: np.zeros_like(x), lambda x: np.zeros_like(x), "zero")


# -- evolution ----------------------------------------------------------------------------------


@dataclass(eq=False)
class Solution:
    model: InteriorModel
    scheme: str
    resolution: int
    v: np.ndarray
    phi: np.ndarray
    phi_v: np.ndarray

    @property
    def dx(self):
        return TWO_PI / self.resolution

    @property
    def x(self):
        return x_nodes(self.resolution)

    def slice(self, v):
        """Cubic Hermite interpolation of ``phi`` at ``v``."""
        v = float(v)
        if v < self.v[0] - 1e-12 or v > self.v[-1] + 1e-12:
            raise InvalidArgument(f"v = {v} outside the evolved range [{self.v[0]}, {self.v[-1]}]")
        i = int(np.clip(np.searchsorted(self.v, v, side="right") - 1, 0, len(self.v) - 2))
        v0, v1 = self.v[i], self.v[i + 1]
        h = v1 - v0
        s = (v - v0) / h
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return h00 * self.phi[i] + h10 * h * self.phi_v[i] + h01 * self.phi[i + 1] + h11 * h * self.phi_v[i + 1]

    def slice_field(self, v):
        g = make_grid((self.resolution,), spacing=self.dx, topology=PERIODIC)
        return Field(g, self.slice(v))

    def phi_x(self):
        return (np.roll(self.phi, -1, axis=1) - np.roll(self.phi, 1, axis=1)) / (2 * self.dx)

    def energy(self):
        """``E(v) = 1/2 int (phi_v^2 + phi_x^2 + V phi^2) dx`` at every stored ``v``."""
        x = self.x
        V = np.array([self.model.V(v, x) for v in self.v])
        dens = self.phi_v ** 2 + self.phi_x() ** 2 + V * self.phi ** 2
        return 0.5 * self.dx * dens.sum(axis=1)


def _dxx(u, h):
    return (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / (h * h)


def _dx(u, h):
    return (np.roll(u, -1) - np.roll(u, 1)) / (2 * h)


def evolve_interior(model, datum, scheme="leapfrog", resolution=128, cfl=None, check_every=16):
    """Evolve ``datum`` over ``[v0, v_max]`` at ``resolution`` points per period."""
    if scheme not in SCHEMES:
        raise InvalidArgument(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    n = int(resolution)
    if n < 8:
        raise InvalidArgument("resolution must be at least 8")
    cfl = DEFAULT_CFL[scheme] if cfl is None else float(cfl)
    if scheme == "leapfrog" and not 0 < cfl <= 1:
        raise InvalidArgument(f"leapfrog needs 0 < CFL <= 1, got {cfl}")
    if scheme == "characteristic" and cfl != 1.0:
        raise InvalidArgument("the characteristic scheme shifts exactly one cell per step (CFL = 1)")
    h = TWO_PI / n
    span = model.v_max - model.v0
    if scheme == "leapfrog":
        steps = int(np.ceil(span / (cfl * h) - 1e-9))
        dv = span / steps
    else:
        steps = int(np.ceil(span / h - 1e-9))
        dv = h
    x = x_nodes(n)
    p0, p1 = datum.at_resolution(n)
    v = model.v0 + dv * np.arange(steps + 1)
    run = _leapfrog if scheme == "leapfrog" else _characteristic
    phi, phi_v = run(model, p0, p1, x, h, dv, v, check_every)
    return Solution(model, scheme, n, v, phi, phi_v)


def _blowup_check(arr, k):
    if not np.all(np.isfinite(arr)):
        raise EvolutionBlowup(f"non-finite values at step {k}", k)


def _leapfrog(model, p0, p1, x, h, dv, v, check_every):
    steps = len(v) - 1
    phi = np.empty((steps + 2, x.size))
    phi[0] = p0
    phi[1] = p0 + dv * p1 + 0.5 * dv * dv * (_dxx(p0, h) - model.V(v[0], x) * p0)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            vk = model.v0 + k * dv
            phi[k + 1] = 2 * phi[k] - phi[k - 1] + dv * dv * (_dxx(phi[k], h) - model.V(vk, x) * phi[k])
            if k % check_every == 0:
                _blowup_check(phi[k + 1], k)
    _blowup_check(phi[-1], steps)
    phi_v = np.empty((steps + 1, x.size))
    phi_v[0] = p1
    phi_v[1:] = (phi[2:] - phi[:-2]) / (2 * dv)
    return phi[: steps + 1], phi_v


def _characteristic(model, p0, p1, x, h, dv, v, check_every):
    steps = len(v) - 1
    phi = np.empty((steps + 1, x.size))
    a = np.empty_like(phi)
    phi[0] = p0
    a[0] = p1
    px = _dx(p0, h)
    wp = p1 + px  # moves toward -x
    wm = p1 - px  # moves toward +x
    half = 0.5 * dv
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            Vn = model.V(v[k], x)
            V1 = model.V(v[k + 1], x)
            src = Vn * phi[k]
            wp_in = np.roll(wp, -1) - half * np.roll(src, -1)
            wm_in = np.roll(wm, 1) - half * np.roll(src, 1)
            # a' = (wp' + wm')/2 with wp' = wp_in - half V1 phi', phi' = phi + half (a + a')
            base = phi[k] + half * a[k]
            a_new = (0.5 * (wp_in + wm_in) - half * V1 * base) / (1.0 + half * half * V1)
            phi[k + 1] = base + half * a_new
            a[k + 1] = a_new
            corr = half * V1 * phi[k + 1]
            wp = wp_in - corr
            wm = wm_in - corr
            if (k + 1) % check_every == 0:
                _blowup_check(phi[k + 1], k + 1)
    _blowup_check(phi[-1], steps)
    return phi, a


# -- flux functionals ------------------------------------------------------------------------


def _pl_integral(v, g, a, b):
    """Integral over ``[a, b]`` of the piecewise-linear interpolant of ``g`` on nodes ``v``."""
    if b < a:
        raise InvalidArgument("interval end before start")
    if a < v[0] - 1e-12 or b > v[-1] + 1e-12:
        raise InvalidArgument(f"interval [{a}, {b}] outside the evolved range")
    inner = (v > a) & (v < b)
    vv = np.concatenate([[a], v[inner], [b]])
    gg = np.concatenate([[np.interp(a, v, g)], g[inner], [np.interp(b, v, g)]])
    return float(np.sum(0.5 * (gg[1:] + gg[:-1]) * np.diff(vv)))


def flux_density(sol, with_x=False):
    """``e^{kappa v} ||phi_v||^2`` (plus ``||phi_x||^2`` when ``with_x``) at each stored ``v``."""
    d = np.sum(sol.phi_v ** 2, axis=1)
    if with_x:
        d = d + np.sum(sol.phi_x() ** 2, axis=1)
    return sol.model.weight(sol.v) * d * sol.dx


def weighted_flux(sol, v0, v1, with_x=False):
    """Weighted flux ``int_{v0}^{v1} e^{kappa v} ||phi_v||^2 dv``; exactly additive in the interval."""
    return _pl_integral(sol.v, flux_density(sol, with_x), v0, v1)


def initial_energy(sol):
    return float(sol.energy()[0])


def tail_schedule(model, windows=4, tail_fraction=0.25):
    """Window ends ``v1`` spread over the final ``tail_fraction`` of the domain."""
    span = model.v_max - model.v0
    start = model.v_max - tail_fraction * span
    return tuple(start + (model.v_max - start) * (j + 1) / windows for j in range(windows))


@dataclass
class FluxTail:
    value: float
    admissible: bool
    cap: float
    windows: list


def flux_tail(sol, v0=None, schedule=None, cap=None):
    """Finite surrogate of the liminf flux: min over scheduled tail ends ``v1``."""
    model = sol.model
    v0 = model.v0 if v0 is None else v0
    schedule = tail_schedule(model) if schedule is None else tuple(schedule)
    schedule = tuple(min(s, sol.v[-1]) for s in schedule)
    if cap is None:
        cap = FLUX_CAP_FACTOR * max(initial_energy(sol), 0.0)
    windows = [(float(v1), weighted_flux(sol, v0, v1)) for v1 in schedule]
    value = min(f for _, f in windows)
    admissible = value == 0.0 or value < cap
    return FluxTail(value, bool(admissible), float(cap), windows)


def energy_identity_residual(sol, v1, v2):
    """Defect of the weighted energy identity on the slab ``[v1, v2]``.

    ``D(v) = [e^{kv} E]_{v1}^{v} - int_{v1}^{v} (k e^{kv} E + e^{kv} (1/2) int V_v phi^2 dx) dv``
    with piecewise-linear quadrature on stored slices.  Returns ``sup |D|`` over
    the slab nodes, which cannot vanish by an accidental sign change of ``D(v2)``.
    """
    if not sol.v[0] - 1e-12 <= v1 < v2 <= sol.v[-1] + 1e-12:
        raise InvalidArgument(f"slab [{v1}, {v2}] outside the evolved range")
    m = sol.model
    x = sol.x
    wE = m.weight(sol.v) * sol.energy()
    Vv = np.array([m.V_v(v, x) for v in sol.v])
    rate = m.kappa * wE + m.weight(sol.v) * 0.5 * sol.dx * np.sum(Vv * sol.phi ** 2, axis=1)
    inner = (sol.v > v1) & (sol.v < v2)
    vv = np.concatenate([[v1], sol.v[inner], [v2]])
    ww = np.interp(vv, sol.v, wE)
    rr = np.interp(vv, sol.v, rate)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (rr[1:] + rr[:-1]) * np.diff(vv))])
    return float(np.max(np.abs(ww - ww[0] - integral)))


def energy_drift(sol):
    """``max_v |E(v) - E(v0)|``."""
    E = sol.energy()
    return float(np.max(np.abs(E - E[0])))


# -- traces and selection ------------------------------------------------------------------------


def horizon_family(max_level=3, base_samples=8):
    """Extraction schedules over ``[v0, v_max]``: aligned, half-offset and triadic sample grids."""
    pols = (
        RefinementPolicy("aligned", "nearest", (1,), base_samples=base_samples, max_level=max_level),
        RefinementPolicy("offset", "nearest", (1,), base_samples=base_samples, phase=0.5, max_level=max_level),
        RefinementPolicy("triadic", "nearest", (1,), growth=3, base_samples=base_samples // 2 + 1,
                         phase=0.25, max_level=max_level),
    )
    return PolicyFamily(pols, max_level)


@dataclass(frozen=True)
class UTConfig:
    """Finite-truncation tameness: late relative deviations stay below some ``q``."""

    q_grid: tuple = (0.25, 0.5, 1.0, 2.0)
    density_tol: float = 0.0
    late_fraction: float = 0.25


@dataclass(eq=False)
class TraceCandidate:
    trace: Field
    policy_id: str
    v_extract: float
    flux_at_extraction: float
    e0: float = 0.0
    phi1: float = 0.0
    late_deviation: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not np.isfinite(self.flux_at_extraction):
            raise InvalidArgument("extraction flux must be finite")


@dataclass
class SelectionOutcome:
    chosen: TraceCandidate
    E0: float
    Phi1: float
    ut_passed: bool
    tie_set_size: int
    ranking: list = dc_field(default_factory=list)


def policy_samples(model, pol, level):
    return model.v0 + (model.v_max - model.v0) * pol.samples_at(level)


def extract_traces(sol, fam, flux_schedule=None, tail_fraction=0.125, phi1_fraction=0.25,
                   e0_with_x=True, ut=UTConfig()):
    """One trace per policy: the slice at the policy's last sample time.

    Raises
    ------
    InadmissibleDatum
        When the tail flux is not below the cap.
    """
    tail = flux_tail(sol, schedule=flux_schedule)
    if not tail.admissible:
        raise InadmissibleDatum(f"tail flux {tail.value:.3e} exceeds cap {tail.cap:.3e}")
    m = sol.model
    span = m.v_max - m.v0
    E = sol.energy()
    out = []
    for pol in fam:
        samples = policy_samples(m, pol, fam.max_level)
        ve = float(samples[-1])
        trace = sol.slice_field(ve)
        e0 = weighted_flux(sol, max(ve - tail_fraction * span, m.v0), ve, with_x=e0_with_x)
        lo = max(ve - phi1_fraction * span, m.v0)
        phi1 = _pl_integral(sol.v, E, lo, ve) / max(ve - lo, 1e-300)
        late = samples[samples >= m.v_max - ut.late_fraction * span]
        tn = trace.norm()
        dev = np.array([
            np.sqrt(np.sum((sol.slice(s) - trace.values) ** 2) * sol.dx) / (1.0 + tn) for s in late
        ]) if late.size else np.zeros(0)
        out.append(TraceCandidate(trace, pol.id, ve, weighted_flux(sol, m.v0, ve), e0, phi1, dev))
    return out


def ut_passes(cand, ut=UTConfig()):
    d = cand.late_deviation
    if d.size == 0:
        return True
    return any(float(np.mean(d > q)) <= ut.density_tol + 1e-12 for q in sorted(ut.q_grid))


def _banded_min(items, key, rtol, atol):
    vals = [key(c) for c in items]
    best = min(vals)
    return [c for c, v in zip(items, vals) if v <= best + atol + rtol * abs(best)]


def select_continuation(candidates, E0=None, Phi1=None, ut=UTConfig(), rtol=1e-9, atol=1e-12):
    """Lexicographic ``(E0, Phi1)`` minimum among tame candidates, ties to the earlier policy."""
    candidates = list(candidates)
    if not candidates:
        raise InvalidArgument("no candidates to select from")
    E0 = E0 or (lambda c: c.e0)
    Phi1 = Phi1 or (lambda c: c.phi1)
    tame = [c for c in candidates if ut_passes(c, ut)]
    if not tame:
        raise NoTameContinuation("every candidate fails the tameness check")
    stage0 = _banded_min(tame, E0, rtol, atol)
    stage1 = _banded_min(stage0, Phi1, rtol, atol)
    chosen = stage1[0]
    ranking = sorted(tame, key=lambda c: (E0(c), Phi1(c)))
    return SelectionOutcome(chosen, float(E0(chosen)), float(Phi1(chosen)), True, len(stage1),
                            [c.policy_id for c in ranking])


def run_pipeline(model, datum, scheme, resolution, fam=None, **kw):
    """Evolve, extract and select; returns ``(outcome, solution)``."""
    fam = fam or horizon_family()
    sol = evolve_interior(model, datum, scheme, resolution)
    return select_continuation(extract_traces(sol, fam, **kw)), sol


def cross_pipeline_divergence(model, datum, scheme_a="leapfrog", scheme_b="characteristic",
                              resolutions=(64, 128, 256), fam=None):
    """``||chosen_A - chosen_B|| / (1 + ||chosen_A||)`` per resolution."""
    out = []
    for n in resolutions:
        a, _ = run_pipeline(model, datum, scheme_a, n, fam)
        b, _ = run_pipeline(model, datum, scheme_b, n, fam)
        ta, tb = a.chosen.trace, b.chosen.trace
        diff = Field(ta.grid, ta.values - tb.values).norm()
        out.append(diff / (1.0 + ta.norm()))
    return np.array(out)
