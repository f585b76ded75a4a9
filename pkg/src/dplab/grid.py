"""Rectangular grids, scalar fields, exact recodings and refinement policies.

Every protocol in the package works on the same carrier: a :class:`Field`
holding one finite real per cell of a :class:`Grid`.  Values are stored
cell-centred on the box ``[0, extent)`` per axis, so a grid of ``n`` cells
with spacing ``h`` has centres at ``(i + 1/2) h``.

Two kinds of maps act on fields:

* a :class:`Recoding` is an exactly invertible change of representation
  (array permutations, reflections, rotations, integer-factor block
  upsampling, affine value rescaling);
* a :class:`RefinementPolicy` is a deterministic schedule that resamples a
  field to a stage-dependent resolution.  Resampling is lossy and is never
  expressed as a recoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .exceptions import InvalidArgument
from .utils.validation import check_finite_array

PERIODIC = "periodic"
FREE = "free"
TOPOLOGIES = (PERIODIC, FREE)

SCHEMES = ("nearest", "bilinear", "conservative")

# field equality when an operation does not promise bit-exactness
FIELD_ATOL = 1e-12


@dataclass(frozen=True)
class Grid:
    dims: tuple
    spacing: tuple
    topology: tuple

    def __post_init__(self):
        if not 1 <= len(self.dims) <= 3:
            raise InvalidArgument(f"grids have 1-3 axes, got {len(self.dims)}")
        if not (len(self.dims) == len(self.spacing) == len(self.topology)):
            raise InvalidArgument("dims, spacing and topology must have equal length")
        for n in self.dims:
            if int(n) != n or n < 1:
                raise InvalidArgument(f"every dimension must be a positive integer, got {self.dims}")
        for h in self.spacing:
            if not (math.isfinite(h) and h > 0):
                raise InvalidArgument(f"spacing must be finite and > 0, got {self.spacing}")
        for t in self.topology:
            if t not in TOPOLOGIES:
                raise InvalidArgument(f"unknown topology {t!r}")

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def shape(self):
        return tuple(int(n) for n in self.dims)

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def extent(self):
        return tuple(n * h for n, h in zip(self.dims, self.spacing))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def centers(self, axis):
        return (np.arange(self.dims[axis]) + 0.5) * self.spacing[axis]

    def with_dims(self, dims):
        """Same physical box, new cell counts."""
        dims = tuple(int(n) for n in dims)
        if len(dims) != self.ndim:
            raise InvalidArgument("dimension count mismatch")
        spacing = tuple(e / n for e, n in zip(self.extent, dims))
        return Grid(dims, spacing, self.topology)


def make_grid(dims, spacing=None, topology=FREE):
    """Build a :class:`Grid`.

    ``spacing`` defaults to ``1/dims`` per axis (a unit box); ``topology`` may
    be one string applied to every axis or one entry per axis.
    """
    if np.isscalar(dims):
        dims = (dims,)
    try:
        dims = tuple(int(n) if int(n) == n else n for n in dims)
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"bad dims {dims!r}") from exc
    if any((not isinstance(n, int)) or n < 1 for n in dims):
        raise InvalidArgument(f"every dimension must be a positive integer, got {dims}")
    if spacing is None:
        spacing = tuple(1.0 / n for n in dims)
    elif np.isscalar(spacing):
        spacing = (float(spacing),) * len(dims)
    spacing = tuple(float(h) for h in spacing)
    if isinstance(topology, str):
        topology = (topology,) * len(dims)
    return Grid(dims, spacing, tuple(topology))


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable real values on a grid (C order, shape ``grid.shape``)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = check_finite_array(self.values, "field values")
        if vals.size != self.grid.size:
            raise InvalidArgument(
                f"value count {vals.size} does not match grid size {self.grid.size}"
            )
        vals = vals.reshape(self.grid.shape).copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, values, spacing=None, topology=FREE):
        arr = np.asarray(values, dtype=float)
        return cls(make_grid(arr.shape, spacing, topology), arr)

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    def with_values(self, values):
        return Field(self.grid, values)

    def mean(self):
        return float(self.values.mean())

    def norm(self):
        """Grid L2 norm, weighted by the cell volume."""
        return float(np.sqrt(np.sum(self.values ** 2) * self.grid.cell_volume))

    def allclose(self, other, atol=FIELD_ATOL):
        return (
            self.grid.shape == other.grid.shape
            and float(np.max(np.abs(self.values - other.values), initial=0.0)) <= atol
        )

    def __repr__(self):
        return f"Field(dims={self.grid.dims}, topology={self.grid.topology}, mean={self.mean():.6g})"


def field_distance(a, b):
    """Cell-volume weighted L2 distance between fields on the same grid."""
    if a.grid.shape != b.grid.shape:
        raise InvalidArgument(f"shape mismatch: {a.grid.shape} vs {b.grid.shape}")
    return float(np.sqrt(np.sum((a.values - b.values) ** 2) * a.grid.cell_volume))


# -- recodings -----------------------------------------------------------------

RECODING_KINDS = ("identity", "permutation", "reflection", "rotation", "resample", "rescale")


@dataclass(frozen=True)
class Recoding:
    """An exactly invertible pair of maps on data and on solutions.

    ``forward``/``inverse`` act on data fields, ``state_map``/``state_inverse``
    on the solution space.  For the geometric recodings both coincide.
    ``accepts`` is a predicate on the input grid.
    """

    name: str
    kind: str
    forward: Callable[[Field], Field]
    inverse: Callable[[Field], Field]
    state_map: Optional[Callable[[Field], Field]] = None
    state_inverse: Optional[Callable[[Field], Field]] = None
    accepts: Callable[[Grid], bool] = dc_field(default=lambda g: True, repr=False)

    def __post_init__(self):
        if self.kind not in RECODING_KINDS:
            raise InvalidArgument(f"unknown recoding kind {self.kind!r}")
        if self.state_map is None:
            object.__setattr__(self, "state_map", self.forward)
        if self.state_inverse is None:
            object.__setattr__(self, "state_inverse", self.inverse)

    def __call__(self, f):
        return apply_recoding(self, f)

    def inverted(self):
        return Recoding(
            name=f"inv({self.name})",
            kind=self.kind,
            forward=self.inverse,
            inverse=self.forward,
            state_map=self.state_inverse,
            state_inverse=self.state_map,
        )

    @property
    def is_identity(self):
        return self.kind == "identity"


def apply_recoding(r, f):
    if not isinstance(f, Field):
        raise InvalidArgument("apply_recoding expects a Field")
    if not r.accepts(f.grid):
        raise InvalidArgument(f"recoding {r.name} does not accept grid dims {f.grid.dims}")
    return r.forward(f)


def _permuted_grid(grid, order):
    return Grid(
        tuple(grid.dims[i] for i in order),
        tuple(grid.spacing[i] for i in order),
        tuple(grid.topology[i] for i in order),
    )


def identity_recoding():
    same = lambda f: f  # noqa: E731
    return Recoding("identity", "identity", same, same)


def rotation(k=1, axes=(0, 1)):
    """Quarter-turn rotation by ``k`` steps in the plane ``axes``."""
    k = int(k) % 4
    a0, a1 = axes

    def rot(f, kk):
        order = list(range(f.grid.ndim))
        if kk % 2:
            order[a0], order[a1] = order[a1], order[a0]
        return Field(_permuted_grid(f.grid, order), np.rot90(f.values, kk, axes=axes))

    def accepts(g):
        return g.ndim >= 2 and max(a0, a1) < g.ndim

    return Recoding(
        f"rot{90 * k}", "rotation", lambda f: rot(f, k), lambda f: rot(f, -k), accepts=accepts
    )


def reflection(axis=0):
    def refl(f):
        return Field(f.grid, np.flip(f.values, axis=axis))

    return Recoding(f"reflect{axis}", "reflection", refl, refl, accepts=lambda g: axis < g.ndim)


def transpose(order=None):
    """Axis permutation; the default reverses the axes."""

    def fwd(f):
        o = tuple(reversed(range(f.grid.ndim))) if order is None else tuple(order)
        return Field(_permuted_grid(f.grid, o), np.transpose(f.values, o))

    def inv(f):
        o = tuple(reversed(range(f.grid.ndim))) if order is None else tuple(order)
        back = tuple(np.argsort(o))
        return Field(_permuted_grid(f.grid, back), np.transpose(f.values, back))

    return Recoding("transpose", "permutation", fwd, inv)


def cyclic_shift(shift, axis=0):
    def fwd(f):
        return Field(f.grid, np.roll(f.values, shift, axis=axis))

    def inv(f):
        return Field(f.grid, np.roll(f.values, -shift, axis=axis))

    return Recoding(f"shift{shift}@{axis}", "permutation", fwd, inv, accepts=lambda g: axis < g.ndim)


def integer_resample(factor=2):
    """Block upsampling by an integer factor; the inverse picks block corners.

    ``inverse(forward(f)) == f`` bit for bit.
    """
    factor = int(factor)
    if factor < 1:
        raise InvalidArgument("resample factor must be >= 1")

    def up(f):
        vals = f.values
        for ax in range(f.grid.ndim):
            vals = np.repeat(vals, factor, axis=ax)
        grid = Grid(
            tuple(n * factor for n in f.grid.dims),
            tuple(h / factor for h in f.grid.spacing),
            f.grid.topology,
        )
        return Field(grid, vals)

    def down(f):
        if any(n % factor for n in f.grid.dims):
            raise InvalidArgument(f"dims {f.grid.dims} not divisible by {factor}")
        sl = tuple(slice(0, None, factor) for _ in range(f.grid.ndim))
        grid = Grid(
            tuple(n // factor for n in f.grid.dims),
            tuple(h * factor for h in f.grid.spacing),
            f.grid.topology,
        )
        return Field(grid, f.values[sl])

    return Recoding(f"resample{factor}", "resample", up, down)


def value_rescale(a, b=0.0):
    """Affine map ``x -> a x + b`` on values (``a != 0``)."""
    a, b = float(a), float(b)
    if a == 0 or not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidArgument("rescale needs finite a != 0 and finite b")

    def fwd(f):
        return Field(f.grid, a * f.values + b)

    def inv(f):
        return Field(f.grid, (f.values - b) / a)

    return Recoding(f"rescale({a:g},{b:g})", "rescale", fwd, inv)


def symmetry_recodings(ndim=2):
    """Grid-symmetry recodings of a square box (used as the default catalog)."""
    if ndim == 1:
        return [identity_recoding(), reflection(0)]
    return [identity_recoding(), rotation(1), rotation(2), reflection(0), reflection(1), transpose()]


RECODING_FACTORIES = {
    "identity": identity_recoding,
    "rot90": lambda: rotation(1),
    "rot180": lambda: rotation(2),
    "rot270": lambda: rotation(3),
    "reflect0": lambda: reflection(0),
    "reflect1": lambda: reflection(1),
    "transpose": transpose,
    "resample2": lambda: integer_resample(2),
    "rescale": lambda: value_rescale(2.0, 1.0),
}


def recoding_by_name(name):
    try:
        return RECODING_FACTORIES[name]()
    except KeyError:
        raise InvalidArgument(f"unknown recoding {name!r}; known: {sorted(RECODING_FACTORIES)}") from None


# -- resampling ------------------------------------------------------------------


def _axis_matrix(m, M, scheme, periodic):
    """Linear map from ``m`` cell values to ``M`` cell values along one axis."""
    W = np.zeros((M, m))
    rows = np.arange(M)
    if scheme == "nearest":
        idx = np.minimum(((rows + 0.5) * m / M).astype(int), m - 1)
        W[rows, idx] = 1.0
    elif scheme == "bilinear":
        if m == 1:
            W[:, 0] = 1.0
            return W
        s = (rows + 0.5) * m / M - 0.5
        i0 = np.floor(s).astype(int)
        if periodic:
            w = s - i0
            W[rows, i0 % m] += 1.0 - w
            W[rows, (i0 + 1) % m] += w
        else:
            # linear extrapolation in the half cells next to a free boundary
            i0 = np.clip(i0, 0, m - 2)
            w = s - i0
            W[rows, i0] += 1.0 - w
            W[rows, i0 + 1] += w
    elif scheme == "conservative":
        old = np.arange(m + 1) / m
        new = np.arange(M + 1) / M
        for J in range(M):
            lo, hi = new[J], new[J + 1]
            i_lo = int(np.floor(lo * m))
            i_hi = min(int(np.ceil(hi * m)), m)
            for i in range(i_lo, i_hi):
                overlap = min(hi, old[i + 1]) - max(lo, old[i])
                if overlap > 0:
                    W[J, i] = overlap * M
    else:
        raise InvalidArgument(f"unknown scheme {scheme!r}; known: {SCHEMES}")
    return W


def resample(f, dims, scheme="bilinear"):
    """Resample ``f`` onto the same box with ``dims`` cells per axis."""
    grid = f.grid.with_dims(dims)
    vals = f.values
    for ax in range(f.grid.ndim):
        m, M = f.grid.dims[ax], grid.dims[ax]
        if m == M:
            continue
        W = _axis_matrix(m, M, scheme, f.grid.topology[ax] == PERIODIC)
        vals = np.moveaxis(np.tensordot(W, np.moveaxis(vals, ax, 0), axes=(1, 0)), 0, ax)
    return Field(grid, vals)


@dataclass(frozen=True)
class Stage:
    level: int
    dims: tuple
    samples: tuple
    tolerance: float
    seed: int


@dataclass(frozen=True)
class RefinementPolicy:
    """Deterministic level -> stage schedule.

    At level ``n`` the policy resolves ``base_dims * growth**n`` cells, draws
    ``base_samples * growth**n`` sample fractions ``(k + phase) / N`` in
    ``[0, 1)`` and works to tolerance ``2**-(tol_base + tol_step * n)``.
    ``seed`` fixes any iteration-schedule randomness (solver start points).
    """

    id: str
    scheme: str = "bilinear"
    base_dims: tuple = (4, 4)
    growth: int = 2
    base_samples: int = 8
    phase: float = 0.0
    tol_base: int = 4
    tol_step: int = 1
    max_level: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"unknown scheme {self.scheme!r}")
        if int(self.growth) < 2:
            raise InvalidArgument("growth must be an integer >= 2")
        if self.tol_step < 1:
            raise InvalidArgument("tolerance ladder must strictly decrease")
        if not 0.0 <= self.phase < 1.0:
            raise InvalidArgument("phase must lie in [0, 1)")
        if self.max_level < 0:
            raise InvalidArgument("max_level must be >= 0")
        object.__setattr__(self, "base_dims", tuple(int(n) for n in self.base_dims))

    def _check_level(self, n):
        if int(n) != n or not 0 <= n <= self.max_level:
            raise InvalidArgument(f"level {n} outside 0..{self.max_level} for policy {self.id}")

    def dims_at(self, n):
        self._check_level(n)
        return tuple(d * self.growth ** int(n) for d in self.base_dims)

    def tolerance_at(self, n):
        self._check_level(n)
        return 2.0 ** -(self.tol_base + self.tol_step * int(n))

    def samples_at(self, n):
        self._check_level(n)
        count = self.base_samples * self.growth ** int(n)
        return (np.arange(count) + self.phase) / count

    def stage(self, n):
        return Stage(
            level=int(n),
            dims=self.dims_at(n),
            samples=tuple(self.samples_at(n)),
            tolerance=self.tolerance_at(n),
            seed=self.seed * 1000003 + int(n),
        )


@dataclass(frozen=True)
class PolicyFamily:
    policies: tuple
    max_level: int

    def __post_init__(self):
        pols = tuple(self.policies)
        if not pols:
            raise InvalidArgument("a policy family needs at least one policy")
        for p in pols:
            if p.max_level != self.max_level:
                raise InvalidArgument(
                    f"policy {p.id} has max_level {p.max_level}, family has {self.max_level}"
                )
        if len({p.id for p in pols}) != len(pols):
            raise InvalidArgument("policy ids must be unique")
        object.__setattr__(self, "policies", pols)

    def __iter__(self):
        return iter(self.policies)

    def __len__(self):
        return len(self.policies)


def default_family(base_dims=(4, 4), max_level=5, schemes=("bilinear", "conservative", "nearest"), **kw):
    return PolicyFamily(
        tuple(
            RefinementPolicy(id=s, scheme=s, base_dims=tuple(base_dims), max_level=max_level, seed=i, **kw)
            for i, s in enumerate(schemes)
        ),
        max_level,
    )


def refine(f, policy, n):
    """Resample ``f`` onto the policy's stage-``n`` grid."""
    dims = policy.dims_at(n)
    if len(dims) != f.grid.ndim:
        raise InvalidArgument(
            f"policy {policy.id} works on {len(dims)} axes, field has {f.grid.ndim}"
        )
    return resample(f, dims, policy.scheme)


def checkerboard(dims, low=-1.0, high=1.0):
    idx = np.indices(tuple(dims)).sum(axis=0)
    return np.where(idx % 2 == 0, high, low).astype(float)


def as_field(obj, topology=FREE):
    """Accept a Field or an array-like and return a Field on the unit box."""
    if isinstance(obj, Field):
        return obj
    return Field.from_array(obj, topology=topology)
