"""Zero-temperature synchronous Ising dynamics.

Every site reads the local field ``l_i = sum_j J_ij s_j + h`` of the
previous configuration and takes its sign; ties (``l_i == 0``) are resolved
by a local rule.  Sites are addressed in a global integer frame: a box of
shape ``dims`` occupies coordinates ``k - dims // 2`` on each axis, so boxes
of different shapes overlap in a common centred core and position-dependent
rules (parity, seeded-random) agree on shared sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .exceptions import InvalidArgument
from .grid import FREE, PERIODIC, Grid, make_grid

TIE_RULES = ("plus", "minus", "keep", "flip", "parity", "seeded-random")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def site_hash(seed, *keys):
    """Counter-based 64-bit hash of ``seed`` and integer arrays ``keys`` (broadcast)."""
    with np.errstate(over="ignore"):
        h = _splitmix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        for k in keys:
            k = np.asarray(k, dtype=np.int64).astype(np.uint64)
            h = _splitmix(h ^ (k + _GOLDEN))
    return h


def hash_spins(seed, *keys):
    """Deterministic +-1 values from :func:`site_hash` (top bit)."""
    bit = site_hash(seed, *keys) >> np.uint64(63)
    return np.where(bit == 1, 1, -1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class SpinConfig:
    box: Grid
    spins: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.spins)
        if s.shape != self.box.shape:
            raise InvalidArgument(f"spins shape {s.shape} does not match box {self.box.shape}")
        if not np.all((s == 1) | (s == -1)):
            raise InvalidArgument("spins must be +1 or -1")
        s = s.astype(np.int8)
        s.setflags(write=False)
        object.__setattr__(self, "spins", s)

    @classmethod
    def from_array(cls, spins, topology=FREE):
        spins = np.asarray(spins)
        if spins.ndim not in (2, 3):
            raise InvalidArgument("spin configurations are 2D or 3D")
        return cls(make_grid(spins.shape, topology=topology), spins)

    @classmethod
    def constant(cls, dims, value=1, topology=FREE):
        return cls.from_array(np.full(tuple(dims), value, dtype=np.int8), topology)

    def with_spins(self, spins):
        return SpinConfig(self.box, spins)

    def __neg__(self):
        return SpinConfig(self.box, -self.spins)

    def __eq__(self, other):
        if not isinstance(other, SpinConfig):
            return NotImplemented
        return self.box == other.box and np.array_equal(self.spins, other.spins)

    __hash__ = None

    @property
    def magnetization(self):
        return float(self.spins.mean())

    def origin(self):
        return tuple(-(n // 2) for n in self.box.dims)

    def global_coords(self):
        """Per-axis global coordinate arrays, broadcastable against ``spins``."""
        o = self.origin()
        nd = self.box.ndim
        out = []
        for ax, (n, off) in enumerate(zip(self.box.dims, o)):
            shape = [1] * nd
            shape[ax] = n
            out.append((np.arange(n) + off).reshape(shape))
        return out


@dataclass(frozen=True)
class CouplingSpec:
    """Finite-range ferromagnetic couplings: ``((offset, J), ...)`` and field ``h``."""

    terms: tuple
    field: float = 0.0

    def __post_init__(self):
        terms = []
        for off, J in self.terms:
            off = tuple(int(o) for o in off)
            if not any(off):
                raise InvalidArgument("coupling offsets must be nonzero")
            if J < 0:
                raise InvalidArgument("couplings must be ferromagnetic (J >= 0)")
            terms.append((off, float(J)))
        if not terms:
            raise InvalidArgument("at least one coupling term is required")
        if len({len(o) for o, _ in terms}) != 1:
            raise InvalidArgument("coupling offsets must share one dimension")
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "field", float(self.field))

    @property
    def ndim(self):
        return len(self.terms[0][0])

    @property
    def radius(self):
        return max(max(abs(o) for o in off) for off, _ in self.terms)

    @classmethod
    def nearest_neighbor(cls, ndim=2, J=1.0, h=0.0):
        terms = []
        for ax in range(ndim):
            for sgn in (1, -1):
                off = [0] * ndim
                off[ax] = sgn
                terms.append((tuple(off), J))
        return cls(tuple(terms), h)


@dataclass(frozen=True)
class TieBreakRule:
    kind: str = "plus"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TIE_RULES:
            raise InvalidArgument(f"unknown tie-break rule {self.kind!r}; choose from {TIE_RULES}")

    @property
    def autonomous(self):
        """True when the rule ignores the step counter."""
        return self.kind != "seeded-random"

    def resolve(self, config, t=0):
        """Spin each site would take on a tie, as an int8 array."""
        s = config.spins
        if self.kind == "plus":
            return np.ones_like(s)
        if self.kind == "minus":
            return -np.ones_like(s)
        if self.kind == "keep":
            return s.copy()
        if self.kind == "flip":
            return -s
        coords = config.global_coords()
        if self.kind == "parity":
            total = sum(coords)
            return np.broadcast_to(np.where(total % 2 == 0, 1, -1), s.shape).astype(np.int8)
        grids = np.broadcast_arrays(*coords)
        return hash_spins(self.seed, t, *grids)


def _shifted(values, offset, topology):
    """``out[i] = values[i + offset]``; free axes read 0 outside the box."""
    out = values
    for ax, (o, topo) in enumerate(zip(offset, topology)):
        if o == 0:
            continue
        if topo == PERIODIC:
            out = np.roll(out, -o, axis=ax)
            continue
        n = out.shape[ax]
        res = np.zeros_like(out)
        if abs(o) < n:
            src = [slice(None)] * out.ndim
            dst = [slice(None)] * out.ndim
            if o > 0:
                src[ax], dst[ax] = slice(o, None), slice(0, n - o)
            else:
                src[ax], dst[ax] = slice(0, n + o), slice(-o, None)
            res[tuple(dst)] = out[tuple(src)]
        out = res
    return out


def _check_dims(config, coupling):
    if coupling.ndim != config.box.ndim:
        raise InvalidArgument(f"coupling is {coupling.ndim}D but the box is {config.box.ndim}D")


def local_fields(config, coupling):
    _check_dims(config, coupling)
    s = config.spins.astype(float)
    total = np.full(s.shape, coupling.field)
    for off, J in coupling.terms:
        total += J * _shifted(s, off, config.box.topology)
    return total


def local_field(config, coupling, site):
    """Field at one ``site`` (array index tuple), summed term by term."""
    _check_dims(config, coupling)
    site = tuple(int(i) for i in site)
    dims = config.box.dims
    if len(site) != len(dims) or any(not 0 <= i < n for i, n in zip(site, dims)):
        raise InvalidArgument(f"site {site} outside box {dims}")
    total = coupling.field
    for off, J in coupling.terms:
        j = []
        for i, o, n, topo in zip(site, off, dims, config.box.topology):
            k = i + o
            if topo == PERIODIC:
                k %= n
            elif not 0 <= k < n:
                break
            j.append(k)
        else:
            total += J * float(config.spins[tuple(j)])
    return total


def step(config, coupling, rule=TieBreakRule(), t=0):
    """One synchronous update; ``t`` is the step counter seen by the tie rule."""
    l = local_fields(config, coupling)
    new = np.where(l > 0, 1, -1).astype(np.int8)
    tie = l == 0
    if tie.any():
        new = np.where(tie, rule.resolve(config, t), new)
    return config.with_spins(new)


def step_bruteforce(config, coupling, rule=TieBreakRule(), t=0):
    """Per-site reference implementation of :func:`step`."""
    ties = rule.resolve(config, t)
    out = np.empty_like(config.spins)
    for site in product(*(range(n) for n in config.box.dims)):
        l = local_field(config, coupling, site)
        out[site] = 1 if l > 0 else (-1 if l < 0 else ties[site])
    return config.with_spins(out)


@dataclass
class Evolution:
    final: SpinConfig
    steps: int
    magnetization: list
    cycle: str | None = None  # "fixed" or "2-cycle" (or "k-cycle")
    period: int | None = None
    detected_at: int | None = None


def evolve(config, coupling, rule=TieBreakRule(), steps=100):
    """Iterate :func:`step` and detect fixed points and short cycles.

    For autonomous rules a repeated configuration (by hash, then exact
    comparison) fixes the orbit; the remaining steps are filled in from the
    cycle.  For the seeded-random rule only tie-free fixed points are
    flagged, since its updates depend on the step counter.
    """
    if steps < 0:
        raise InvalidArgument("steps must be >= 0")
    seen = {}
    history = [config]
    mags = [config.magnetization]
    cur = config
    for t in range(steps):
        key = cur.spins.tobytes()
        if rule.autonomous:
            hit = seen.get(key)
            if hit is not None and np.array_equal(history[hit].spins, cur.spins):
                period = t - hit
                final = history[hit + (steps - hit) % period]
                mags += [history[hit + (k - hit) % period].magnetization for k in range(t + 1, steps + 1)]
                return Evolution(final, steps, mags, _cycle_name(period), period, hit)
            seen[key] = t
        nxt = step(cur, coupling, rule, t)
        if not rule.autonomous and nxt == cur and not np.any(local_fields(cur, coupling) == 0):
            mags += [cur.magnetization] * (steps - t)
            return Evolution(cur, steps, mags, "fixed", 1, t)
        cur = nxt
        history.append(cur)
        mags.append(cur.magnetization)
    cycle = period = at = None
    if rule.autonomous:
        key = cur.spins.tobytes()
        hit = seen.get(key)
        if hit is not None and np.array_equal(history[hit].spins, cur.spins):
            period, at = steps - hit, hit
            cycle = _cycle_name(period)
    return Evolution(cur, steps, mags, cycle, period, at)


def _cycle_name(period):
    return "fixed" if period == 1 else f"{period}-cycle"


# -- shape agreement -----------------------------------------------------------------------


@dataclass(frozen=True)
class BoxShape:
    dims: tuple
    topology: tuple | str = FREE

    def grid(self):
        return make_grid(tuple(int(n) for n in self.dims), topology=self.topology)


def seeded_initial(seed):
    """Initial condition as a function of global coordinates (shape independent)."""

    def gen(coords):
        grids = np.broadcast_arrays(*coords)
        return hash_spins(seed, -1, *grids)

    return gen


def constant_initial(value=1):
    def gen(coords):
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.full(shape, value, dtype=np.int8)

    return gen


def config_on(shape, generator):
    g = shape.grid() if isinstance(shape, BoxShape) else shape
    tmp = SpinConfig(g, np.ones(g.shape, dtype=np.int8))
    return SpinConfig(g, generator(tmp.global_coords()))


def common_core(shapes, core_fraction):
    """Global-coordinate half-open bounds ``[(lo, hi), ...]`` of the shared core."""
    if not shapes:
        raise InvalidArgument("at least one shape is required")
    if not 0 < core_fraction <= 1:
        raise InvalidArgument("core fraction must lie in (0, 1]")
    ndim = len(shapes[0].dims)
    if any(len(s.dims) != ndim for s in shapes):
        raise InvalidArgument("shapes must share a dimension")
    smallest = min(shapes, key=lambda s: int(np.prod(s.dims)))
    bounds = []
    for ax in range(ndim):
        size = int(round(core_fraction * smallest.dims[ax]))
        lo = -(size // 2)
        hi = lo + size
        for s in shapes:
            blo = -(s.dims[ax] // 2)
            lo, hi = max(lo, blo), min(hi, blo + s.dims[ax])
        if hi <= lo:
            raise InvalidArgument("shapes have an empty common core")
        bounds.append((lo, hi))
    return bounds


def validity_window(shapes, core, radius=1):
    """Steps during which boundary effects cannot reach the core.

    A site whose neighbourhood is cut by a box edge (or wrapped by a
    periodic seam) first differs across shapes at step 1; the difference
    spreads ``radius`` sites per step.  Only axes on which the shapes differ
    contribute.
    """
    ndim = len(core)
    grids = [s.grid() for s in shapes]
    window = None
    for ax in range(ndim):
        sig = {(g.dims[ax], g.topology[ax]) for g in grids}
        if len(sig) == 1:
            continue
        lo, hi = core[ax]
        for g in grids:
            blo = -(g.dims[ax] // 2)
            bhi = blo + g.dims[ax] - 1
            # sites within `radius` of the edge are affected at step 1
            dist = min(lo - blo, bhi - (hi - 1)) - radius
            w = max(dist, -1) // radius + 1
            window = w if window is None else min(window, w)
    return window if window is not None else np.inf


def shape_agreement(generator, shapes, coupling, rule=TieBreakRule(), steps=20, core_fraction=0.5):
    """Per-step fraction of core sites on which some pair of shapes disagrees.

    Returns ``(density, window)`` where ``density[t]`` covers steps
    ``0..steps`` and ``window`` is the number of steps for which the
    propagation bound guarantees zero disagreement.
    """
    shapes = [s if isinstance(s, BoxShape) else BoxShape(tuple(s)) for s in shapes]
    core = common_core(shapes, core_fraction)
    configs = [config_on(s, generator) for s in shapes]
    density = np.zeros(steps + 1)
    for t in range(steps + 1):
        cores = []
        for c in configs:
            idx = tuple(slice(lo + n // 2, hi + n // 2) for (lo, hi), n in zip(core, c.box.dims))
            cores.append(c.spins[idx])
        ref = cores[0]
        disagree = np.zeros(ref.shape, dtype=bool)
        for other in cores[1:]:
            disagree |= other != ref
        density[t] = float(disagree.mean())
        if t < steps:
            configs = [step(c, coupling, rule, t) for c in configs]
    return density, validity_window(shapes, core, coupling.radius)
