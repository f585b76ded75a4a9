"""Thin barriers, capacity certificates and weak-form coercivity.

A barrier comes from an environment field by thresholding: the cells with
``env >= theta`` are marked, and the barrier set ``S`` is their skeleton,
i.e. the marked cell centres plus the straight segments joining 4-adjacent
marked centres.  An isolated marked cell is therefore a point, a row of
marked cells a segment.  The skeleton is independent of the resolution at
which capacity is later probed.

Capacity is probed on a ladder of nested node grids over the unit box.  At
resolution ``M`` the constraint set is the 1-cell dilation of ``S`` (nodes
within Chebyshev distance ``dilation / M``) and the certificate energy is
the minimum of the discrete Dirichlet energy ::

    E(u) = sum over grid edges of a_e (u_i - u_j)^2

subject to ``u >= 1`` on the dilated barrier and ``u = 0`` on the outer
boundary.  For nested grids these are P1 finite-element energies, so the
sequence is nonincreasing when the constraint sets shrink.  Zero capacity
shows up as decay of the energies, positive capacity as a plateau.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, spsolve

from .exceptions import CalibrationFailure, InconclusiveVerdict, InvalidArgument, SolverFailure
from .grid import Field, PolicyFamily, Recoding, identity_recoding, refine, resample
from .utils.validation import check_random_state

DEFAULT_LADDER = (16, 64, 512)
DEFAULT_GAMMA = 1.5
DEFAULT_BAND = 0.2
ENERGY_FLOOR = 1e-9
DEFAULT_MARGIN = 0.25
_ACTIVE_TOL = 1e-12  # roundoff guard on degenerate multipliers


@dataclass(frozen=True, eq=False)
class BarrierSpec:
    env: Field
    theta: float

    def __post_init__(self):
        if self.env.grid.ndim != 2:
            raise InvalidArgument("barriers are built on 2D environment fields")
        if not np.isfinite(self.theta):
            raise InvalidArgument("theta must be finite")

    @property
    def mask(self):
        return self.env.values >= self.theta

    def skeleton(self):
        """``(points, hsegs, vsegs)`` in unit-box coordinates.

        ``hsegs`` rows are ``(x0, x1, y)``; ``vsegs`` rows are ``(y0, y1, x)``.
        """
        return mask_skeleton(self.mask)


def mask_skeleton(mask):
    """Skeleton of a cell mask on the unit box.

    Marked cells touching the domain edge extend their skeleton to the wall,
    so a marked row spanning the grid is a wall-to-wall segment.
    """
    mask = np.asarray(mask, dtype=bool)
    n0, n1 = mask.shape
    c0 = (np.arange(n0) + 0.5) / n0
    c1 = (np.arange(n1) + 0.5) / n1
    ii, jj = np.nonzero(mask)
    points = np.column_stack([c0[ii], c1[jj]]) if ii.size else np.zeros((0, 2))
    seg0, seg1 = [], []
    # axis-0 runs at fixed axis-1 coordinate, and vice versa
    a, b = np.nonzero(mask[:-1, :] & mask[1:, :])
    seg0 += [(c0[i], c0[i + 1], c1[j]) for i, j in zip(a, b)]
    a, b = np.nonzero(mask[:, :-1] & mask[:, 1:])
    seg1 += [(c1[j], c1[j + 1], c0[i]) for i, j in zip(a, b)]
    seg0 += [(0.0, c0[0], c1[j]) for j in np.nonzero(mask[0, :])[0]]
    seg0 += [(c0[-1], 1.0, c1[j]) for j in np.nonzero(mask[-1, :])[0]]
    seg1 += [(0.0, c1[0], c0[i]) for i in np.nonzero(mask[:, 0])[0]]
    seg1 += [(c1[-1], 1.0, c0[i]) for i in np.nonzero(mask[:, -1])[0]]
    return points, np.array(seg0).reshape(-1, 3), np.array(seg1).reshape(-1, 3)


def node_lattice(env_dims, M, margin=DEFAULT_MARGIN):
    """Per-axis node coordinates at resolution ``M``.

    The lattice has spacing ``1 / M`` and is shifted so the first
    environment cell centre is a node; whenever ``M`` is a multiple of the
    environment resolution every cell centre is then a node, and a point
    barrier always dilates to the same node block.  The lattice covers the
    unit box padded by ``margin``; its end nodes carry the Dirichlet
    condition.
    """
    axes = []
    for E in env_dims:
        c = 0.5 / E
        lo = int(np.ceil((c + margin) * M - 1e-9))
        hi = int(np.ceil((1.0 + margin - c) * M - 1e-9))
        axes.append(c + np.arange(-lo, hi + 1) / M)
    return tuple(axes)


def rasterize(spec, M, dilation=1.0, margin=DEFAULT_MARGIN):
    """Boolean node mask: nodes within Chebyshev distance ``dilation / M`` of the skeleton."""
    points, seg0, seg1 = spec.skeleton()
    x, y = node_lattice(spec.env.grid.dims, M, margin)
    out = np.zeros((x.size, y.size), dtype=bool)
    r = (dilation + 1e-9) / M

    def span(ax, lo, hi):
        return slice(int(np.searchsorted(ax, lo - r, "left")), int(np.searchsorted(ax, hi + r, "right")))

    for px, py in points:
        out[span(x, px, px), span(y, py, py)] = True
    for x0, x1, py in seg0:
        out[span(x, x0, x1), span(y, py, py)] = True
    for y0, y1, px in seg1:
        out[span(x, px, px), span(y, y0, y1)] = True
    return out


def _edge_operator(shape):
    """Difference operator over all edges of a node grid of the given shape."""
    n0, n1 = shape

    def d(n):
        e = np.ones(n - 1)
        return sp.diags([-e, e], [0, 1], shape=(n - 1, n))

    return sp.vstack([sp.kron(d(n0), sp.identity(n1)), sp.kron(sp.identity(n0), d(n1))]).tocsr()


def dirichlet_energy(u, coef=None):
    u = np.asarray(u)
    du = _edge_operator(u.shape) @ u.ravel()
    a = np.ones_like(du) if coef is None else coef
    return float(np.sum(a * du ** 2))


def solve_obstacle(obstacle_mask, coef=None, tol=1e-10, max_iter=50):
    """Minimise the edge energy with ``u >= 1`` on ``obstacle_mask``, ``u = 0`` on the boundary.

    Primal-dual active set: the active set is updated from the multiplier
    and the constraint violation until it repeats.  Returns ``(u, energy)``.
    """
    obstacle_mask = np.asarray(obstacle_mask, dtype=bool)
    if obstacle_mask.ndim != 2 or min(obstacle_mask.shape) < 3:
        raise InvalidArgument("obstacle mask must be a 2D node array with at least 3 nodes per axis")
    shape = obstacle_mask.shape
    size = obstacle_mask.size
    D = _edge_operator(shape)
    a = np.ones(D.shape[0]) if coef is None else np.asarray(coef, dtype=float)
    L = (D.T @ sp.diags(a) @ D).tocsr()
    boundary = np.zeros(shape, dtype=bool)
    boundary[0, :] = boundary[-1, :] = boundary[:, 0] = boundary[:, -1] = True
    boundary = boundary.ravel()
    constrained = obstacle_mask.ravel() & ~boundary
    if not constrained.any():
        return np.zeros(shape), 0.0
    psi = np.where(constrained, 1.0, -np.inf)
    active = constrained.copy()
    for _ in range(max_iter):
        fixed = boundary | active
        free = ~fixed
        u = np.zeros(size)
        u[active] = 1.0
        if free.any():
            rhs = -(L[free][:, fixed] @ u[fixed])
            u[free] = spsolve(L[free][:, free].tocsc(), rhs, permc_spec="MMD_AT_PLUS_A")
        lam = L @ u  # multiplier on active nodes
        new_active = constrained & ((lam + (psi - u)) > -_ACTIVE_TOL)
        if np.array_equal(new_active, active):
            break
        active = new_active
    else:
        raise SolverFailure("obstacle active set did not settle")
    viol = max(
        float(np.max(np.where(constrained, 1.0 - u, -np.inf), initial=0.0)),
        float(np.max(np.where(active, -lam, -np.inf), initial=0.0)),
        float(np.max(np.abs(np.where(free, lam, 0.0)), initial=0.0)),
    )
    if viol > tol:
        raise SolverFailure(f"obstacle KKT residual {viol:.3e} above {tol:.1e}", residual=viol)
    return u.reshape(shape), dirichlet_energy(u.reshape(shape), a)


@dataclass
class CapacityEstimate:
    levels: list
    verdict: str
    ratios: list = dc_field(default_factory=list)

    @property
    def energies(self):
        return [e for _, e in self.levels]


def capacity_verdict(energies, gamma=DEFAULT_GAMMA, band=DEFAULT_BAND, floor=ENERGY_FLOOR):
    """``"zero"``, ``"positive"`` or ``"inconclusive"`` for an energy ladder.

    Zero: every energy below ``floor``, or each level at least ``gamma``
    times the next.  Positive: all energies above ``floor`` and inside one
    band ``[c (1 - band), c (1 + band)]``, i.e. ``max / min <= (1 + band) / (1 - band)``.
    """
    e = np.asarray(energies, dtype=float)
    if np.all(e < floor):
        return "zero"
    if e.size >= 2 and np.all(e[:-1] >= gamma * e[1:]):
        return "zero"
    if np.all(e >= floor) and e.max() <= e.min() * (1.0 + band) / (1.0 - band):
        return "positive"
    return "inconclusive"


def capacity(spec, ladder=DEFAULT_LADDER, k_max=None, dilation=1.0, margin=DEFAULT_MARGIN, gamma=DEFAULT_GAMMA, band=DEFAULT_BAND):
    """Certificate energies of ``spec`` on the first ``k_max`` ladder resolutions."""
    ladder = tuple(int(m) for m in ladder)
    k_max = len(ladder) if k_max is None else int(k_max)
    if k_max < 1 or k_max > len(ladder):
        raise InvalidArgument(f"k_max must be in 1..{len(ladder)}")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise InvalidArgument("capacity ladder must be strictly increasing")
    levels = []
    for M in ladder[:k_max]:
        _, energy = solve_obstacle(rasterize(spec, M, dilation, margin))
        levels.append((M, energy))
    energies = [e for _, e in levels]
    ratios = [a / b if b > 0 else float("inf") for a, b in zip(energies, energies[1:])]
    return CapacityEstimate(levels, capacity_verdict(energies, gamma, band), ratios)


def markov_unique(spec, ladder=DEFAULT_LADDER, k_max=None, **kw):
    """``(True, est)`` for zero capacity, ``(False, est)`` for positive capacity."""
    est = capacity(spec, ladder, k_max, **kw)
    if est.verdict == "inconclusive":
        raise InconclusiveVerdict(f"capacity trend inconclusive: {est.energies}", est)
    return est.verdict == "zero", est


# -- threshold calibration -------------------------------------------------------------


def default_theta_ladder(env, denominator=16):
    lo, hi = float(env.values.min()), float(env.values.max())
    k0 = int(np.floor(lo * denominator))
    k1 = int(np.ceil(hi * denominator))
    return tuple(Fraction(k, denominator) for k in range(k0, k1 + 1))


def coverage(env, theta, policy, n):
    return float(np.mean(refine(env, policy, n).values >= theta))


def calibrate_theta(env, target, fam, theta_ladder=None, min_tail=2, full_output=False):
    """Least ladder threshold whose coverage settles within tolerance of ``target``.

    A threshold qualifies when, for every policy in ``fam``, the coverage at
    each of the last ``min_tail`` stages (and so from some stabilization
    index onward) is within the policy's stage tolerance ``2**-m`` of
    ``target``.  ``full_output`` also returns the stabilization index per
    policy.

    Raises
    ------
    CalibrationFailure
        For a constant field or when no ladder entry qualifies.
    """
    if not 0.0 < target < 1.0:
        raise InvalidArgument("coverage target must lie strictly between 0 and 1")
    if not isinstance(fam, PolicyFamily):
        raise InvalidArgument("calibrate_theta needs a PolicyFamily")
    if float(np.ptp(env.values)) == 0.0:
        raise CalibrationFailure("constant environment field: coverage jumps from 1 to 0")
    ladder = sorted(theta_ladder) if theta_ladder is not None else default_theta_ladder(env)
    top = fam.max_level
    first_probe = max(top - min_tail + 1, 0)
    for theta in ladder:
        th = float(theta)
        stab = {}
        for pol in fam:
            ok = [abs(coverage(env, th, pol, n) - target) <= pol.tolerance_at(n) for n in range(top + 1)]
            if not all(ok[first_probe:]):
                break
            m = top
            while m > 0 and ok[m - 1]:
                m -= 1
            stab[pol.id] = m
        else:
            return (theta, stab) if full_output else theta
    raise CalibrationFailure(f"no threshold on the ladder reaches coverage {target} for every policy")


# -- ensembles ---------------------------------------------------------------------------


def thin_barrier_field(kind, size=16, rng=None, background=0.25):
    """Seeded environment field holding one thin structure.

    Background cells are uniform in ``[0, background)`` and barrier cells
    hold 1.  ``kind`` is ``"point"`` (one cell at least two cells from the
    edge), ``"segment"`` (one full row or column, wall to wall) or
    ``"empty"``.
    """
    rng = check_random_state(rng)
    if size < 6:
        raise InvalidArgument("size must be at least 6")
    vals = rng.uniform(0.0, background, size=(size, size))
    if kind == "point":
        i, j = rng.integers(2, size - 2, size=2)
        vals[i, j] = 1.0
    elif kind == "segment":
        k = rng.integers(2, size - 2)
        if rng.integers(2):
            vals[k, :] = 1.0
        else:
            vals[:, k] = 1.0
    elif kind != "empty":
        raise InvalidArgument(f"unknown barrier kind {kind!r}")
    return Field.from_array(vals)


def mixed_ensemble(size, seed=0, kinds=("point", "segment"), grid_size=16):
    """Balanced seeded ensemble; returns ``(fields, kinds)`` in shuffled order."""
    rng = np.random.default_rng(seed)
    labels = [kinds[i % len(kinds)] for i in range(size)]
    rng.shuffle(labels)
    fields = [thin_barrier_field(k, grid_size, rng) for k in labels]
    return fields, labels


def uniqueness_frequency(ensemble, target, fam, ladder=DEFAULT_LADDER, theta_ladder=None, k_max=None, **cap_kw):
    """Fraction of Markov-unique members under each coarse-graining of ``fam``.

    Each member's threshold is calibrated once, jointly over ``fam``; each
    policy then coarse-grains the member to its stage-0 grid before the
    barrier is built and classified.  Returns a dict with ``fractions``
    (policy id -> fraction over decided members), ``drift`` (max pairwise
    difference), per-member ``labels`` and the ``inconclusive`` and
    ``calibration_failures`` counts.
    """
    if not ensemble:
        raise InvalidArgument("ensemble must be non-empty")
    labels = {pol.id: [] for pol in fam}
    inconclusive = {pol.id: 0 for pol in fam}
    failures = 0
    thetas = []
    for env in ensemble:
        try:
            theta = calibrate_theta(env, target, fam, theta_ladder)
        except CalibrationFailure:
            failures += 1
            thetas.append(None)
            for pol in fam:
                labels[pol.id].append(None)
            continue
        thetas.append(float(theta))
        seen = {}  # schemes often agree on the mask; capacity depends on nothing else
        for pol in fam:
            spec = BarrierSpec(refine(env, pol, 0), float(theta))
            key = (spec.mask.shape, spec.mask.tobytes())
            if key not in seen:
                try:
                    seen[key] = markov_unique(spec, ladder, k_max, **cap_kw)[0]
                except InconclusiveVerdict:
                    seen[key] = None
            unique = seen[key]
            if unique is None:
                inconclusive[pol.id] += 1
            labels[pol.id].append(unique)
    fractions = {}
    for pid, labs in labels.items():
        decided = [x for x in labs if x is not None]
        fractions[pid] = float(np.mean(decided)) if decided else float("nan")
    vals = [v for v in fractions.values() if np.isfinite(v)]
    drift = float(max(vals) - min(vals)) if vals else float("nan")
    return {
        "fractions": fractions,
        "drift": drift,
        "labels": labels,
        "inconclusive": inconclusive,
        "calibration_failures": failures,
        "thetas": thetas,
    }


def barrier_family(env_size=16, max_level=2, tol_base=2):
    """Coarse-graining schemes used by the barrier protocol.

    Stage 0 of each policy is the coarse-graining applied before the
    barrier is built: native resolution, or 2x block coarsening by cell
    averaging or by linear interpolation.
    """
    from .grid import RefinementPolicy

    half = env_size // 2
    pols = (
        RefinementPolicy("native", "conservative", (env_size, env_size), max_level=max_level, tol_base=tol_base),
        RefinementPolicy("coarse-average", "conservative", (half, half), max_level=max_level, tol_base=tol_base),
        RefinementPolicy("coarse-linear", "bilinear", (half, half), max_level=max_level, tol_base=tol_base),
    )
    return PolicyFamily(pols, max_level)


# -- weak-form coercivity ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoefficientField:
    base: float
    contrast: float
    indicator: Field

    def __post_init__(self):
        if self.base + min(self.contrast, 0.0) <= 0:
            raise InvalidArgument(
                f"coefficient not uniformly elliptic: v0 + min(alpha, 0) = {self.base + min(self.contrast, 0.0)}"
            )
        ind = self.indicator.values
        if not np.all((ind == 0) | (ind == 1)):
            raise InvalidArgument("indicator must be 0/1 valued")

    def values(self):
        return self.base + self.contrast * self.indicator.values


def stiffness_matrix(coef_values, spacing):
    """Cell-centred stiffness ``sum_e v_e (u_i - u_j)^2 h^{d-2}`` with zero Dirichlet ghosts.

    Interior edges use the arithmetic mean of the two cell coefficients,
    boundary half-edges the cell coefficient.  Returned together with the
    mass scale ``h^d`` so ``a(u,u) / (h^d |u|^2)`` is the Rayleigh quotient.
    """
    v = np.asarray(coef_values, dtype=float)
    shape = v.shape
    n = v.size
    idx = np.arange(n).reshape(shape)
    h = float(spacing)
    d = v.ndim
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for ax in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        i = idx[tuple(lo)].ravel()
        j = idx[tuple(hi)].ravel()
        ve = 0.5 * (v[tuple(lo)] + v[tuple(hi)]).ravel()
        rows += [i, j]
        cols += [j, i]
        vals += [-ve, -ve]
        np.add.at(diag, i, ve)
        np.add.at(diag, j, ve)
        # boundary: distance h/2 to the wall, so the half-edge carries 2 v
        for sl in (0, -1):
            b = [slice(None)] * d
            b[ax] = sl
            bi = idx[tuple(b)].ravel()
            np.add.at(diag, bi, 2.0 * v[tuple(b)].ravel())
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    scale = h ** (d - 2)
    return K * scale, h ** d


def rayleigh_extremes(coef_values, spacing):
    K, mass = stiffness_matrix(coef_values, spacing)
    n = K.shape[0]
    if n <= 1024:
        ev = np.linalg.eigvalsh(K.toarray())
        lo, hi = ev[0], ev[-1]
    else:
        lo = eigsh(K, k=1, sigma=0, which="LM", return_eigenvectors=False)[0]
        hi = eigsh(K, k=1, which="LA", return_eigenvectors=False)[0]
    return float(lo / mass), float(hi / mass)


def coercivity_check(coef, recodings=None, levels=(0,), policy=None, rtol=1e-9):
    """Coercivity floor and continuity ceiling per recoding and level.

    The indicator is recoded, then (if ``policy`` is given) refined by
    nearest-neighbour sampling to each level, and the extreme Rayleigh
    quotients of ``a(u,u) = sum v |grad u|^2`` are computed exactly.  The
    report flags ``unstable`` when the floor varies across recodings by more
    than ``rtol`` relative at any level.
    """
    recodings = recodings or [identity_recoding()]
    report = {"levels": {}, "unstable": False}
    for lev in levels:
        rows = {}
        for r in recodings:
            if not isinstance(r, Recoding):
                raise InvalidArgument("recodings must be Recoding objects")
            ind = r(coef.indicator)
            if policy is not None:
                ind = resample(ind, policy.dims_at(lev), "nearest")
            g = ind.grid
            if len(set(np.round(g.spacing, 15))) != 1:
                raise InvalidArgument("coercivity check needs equal spacing on all axes")
            v = coef.base + coef.contrast * ind.values
            lo, hi = rayleigh_extremes(v, g.spacing[0])
            rows[r.name] = {"floor": lo, "ceiling": hi}
        floors = np.array([x["floor"] for x in rows.values()])
        spread = float((floors.max() - floors.min()) / floors.max())
        unstable = spread > rtol
        report["levels"][int(lev)] = {"recodings": rows, "floor_spread": spread, "unstable": unstable}
        report["unstable"] = report["unstable"] or unstable
    return report
