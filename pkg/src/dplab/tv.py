"""TV-Tikhonov reconstruction with discrepancy-principle weight selection.

The objective is ::

    J(u) = ||A u - d||^2 + lam * TV(u) + mu * ||u||^2

with anisotropic forward-difference TV.  It is solved through its dual, a
box-constrained quadratic program in the edge variables ``p`` (one per
forward difference, ``|p| <= 1``), by accelerated projected gradient with
adaptive restart.  For a dual point ``p`` the primal point is the exact
minimiser of the Lagrangian, ``u(p) = G^{-1}(A^T d - (lam/2) K^T p)`` with
``G = A^T A + mu I``, so stationarity holds by construction and the duality
gap is ::

    gap = lam * sum_j ( |(K u)_j| - p_j (K u)_j )

The objective is strongly convex with modulus ``lambda_min(G)``, so
``sqrt(gap / lambda_min(G))`` bounds the distance to the unique minimiser.
That bound is the optimality residual the solver drives below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, cg

from .exceptions import InvalidArgument, NoAdmissibleLambda, SolverFailure
from .grid import PERIODIC, Field, Recoding, RefinementPolicy, field_distance, refine
from .utils.validation import check_positive, check_random_state

DEFAULT_TAU = 1.1
DEFAULT_MU = 1e-8
DEFAULT_TOL = 1e-6


# -- forward operators -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Linear forward model: identity, convolution with an odd kernel, or masking.

    Convolution uses zero padding on free grids and wrap-around on periodic
    ones (the topology must be uniform across axes).  Masking multiplies by a
    0/1 array of the data shape.
    """

    kind: str = "identity"
    kernel: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("identity", "convolution", "subsampling"):
            raise InvalidArgument(f"unknown operator kind {self.kind!r}")
        if self.kind == "convolution":
            k = np.asarray(self.kernel, dtype=float)
            if k.size == 0 or any(n % 2 == 0 for n in k.shape):
                raise InvalidArgument("convolution kernels need odd size on every axis")
            if not np.all(np.isfinite(k)):
                raise InvalidArgument("kernel has non-finite entries")
            object.__setattr__(self, "kernel", k)
        if self.kind == "subsampling":
            m = np.asarray(self.mask, dtype=float)
            if not np.all((m == 0) | (m == 1)):
                raise InvalidArgument("subsampling mask must be 0/1")
            object.__setattr__(self, "mask", m)

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def convolution(cls, kernel):
        return cls("convolution", kernel=kernel)

    @classmethod
    def subsampling(cls, mask):
        return cls("subsampling", mask=mask)

    @staticmethod
    def _mode(topology):
        if all(t == PERIODIC for t in topology):
            return "wrap"
        if all(t != PERIODIC for t in topology):
            return "constant"
        raise InvalidArgument("convolution needs the same topology on every axis")

    def _check_shape(self, shape):
        if self.kind == "convolution" and self.kernel.ndim != len(shape):
            raise InvalidArgument("kernel dimensionality does not match the field")
        if self.kind == "subsampling" and self.mask.shape != tuple(shape):
            raise InvalidArgument(f"mask shape {self.mask.shape} does not match field {tuple(shape)}")

    def apply(self, u, topology):
        self._check_shape(u.shape)
        if self.kind == "identity":
            return u.copy()
        if self.kind == "convolution":
            return ndimage.convolve(u, self.kernel, mode=self._mode(topology), cval=0.0)
        return u * self.mask

    def adjoint(self, w, topology):
        self._check_shape(w.shape)
        if self.kind == "identity":
            return w.copy()
        if self.kind == "convolution":
            return ndimage.correlate(w, self.kernel, mode=self._mode(topology), cval=0.0)
        return w * self.mask

    def gram_solver(self, shape, topology, mu):
        """Return ``(solve, lam_min)``: ``solve(b) = (A^T A + mu I)^{-1} b``."""
        self._check_shape(shape)
        if self.kind == "identity":
            return (lambda b: b / (1.0 + mu)), 1.0 + mu
        if self.kind == "subsampling":
            diag = self.mask + mu
            return (lambda b: b / diag), float(diag.min())
        mode = self._mode(topology)
        if mode == "wrap":
            # circulant: diagonal in Fourier space
            ker = np.zeros(shape)
            k = self.kernel
            for idx in np.ndindex(k.shape):
                pos = tuple((i - c // 2) % n for i, c, n in zip(idx, k.shape, shape))
                ker[pos] += k[idx]
            spec = np.abs(np.fft.fftn(ker)) ** 2 + mu
            return (lambda b: np.real(np.fft.ifftn(np.fft.fftn(b) / spec))), float(spec.min())
        n = int(np.prod(shape))

        def matvec(x):
            x = x.reshape(shape)
            return (self.adjoint(self.apply(x, topology), topology) + mu * x).ravel()

        op = LinearOperator((n, n), matvec=matvec)

        def solve(b):
            x, info = cg(op, b.ravel(), rtol=1e-13, atol=0.0, maxiter=20 * n)
            if info != 0:
                raise SolverFailure("inner CG solve did not converge")
            return x.reshape(shape)

        # lower bound only; the dual step uses it for its Lipschitz estimate
        return solve, mu


@dataclass(frozen=True, eq=False)
class InverseProblem:
    op: ForwardOperator
    data: Field
    noise_level: float = 0.0
    tau: float = DEFAULT_TAU
    mu: float = DEFAULT_MU
    tv_weights: Optional[tuple] = None

    def __post_init__(self):
        check_positive(self.noise_level, "noise_level", strict=False)
        check_positive(self.mu, "mu", strict=False)
        if not (np.isfinite(self.tau) and self.tau > 1):
            raise InvalidArgument(f"tau must be > 1, got {self.tau}")
        if self.tv_weights is not None:
            w = tuple(float(x) for x in self.tv_weights)
            if len(w) != self.data.grid.ndim or any(x <= 0 for x in w):
                raise InvalidArgument("tv_weights need one positive entry per axis")
            object.__setattr__(self, "tv_weights", w)

    @property
    def bound(self):
        return self.tau * self.noise_level

    def residual_norm(self, u):
        g = self.data.grid
        vals = u.values if isinstance(u, Field) else u
        return float(np.linalg.norm((self.op.apply(vals, g.topology) - self.data.values).ravel()))

    def with_data(self, data):
        return InverseProblem(self.op, data, self.noise_level, self.tau, self.mu, self.tv_weights)


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise InvalidArgument("lambda grid must be non-empty")
        if any(not (np.isfinite(v) and v > 0) for v in vals):
            raise InvalidArgument("lambda values must be positive and finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidArgument("lambda values must be strictly ascending")
        object.__setattr__(self, "values", vals)

    @classmethod
    def geometric(cls, lam0=Fraction(1, 1024), count=20, ratio=2):
        lam0, ratio = Fraction(lam0), Fraction(ratio)
        return cls(tuple(float(lam0 * ratio ** k) for k in range(count)))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


# -- total variation -------------------------------------------------------------


def _diff(u, axis, periodic):
    if periodic:
        return np.roll(u, -1, axis=axis) - u
    return np.diff(u, axis=axis)


def _diff_adjoint(p, axis, periodic):
    if periodic:
        return np.roll(p, 1, axis=axis) - p
    pad = [(0, 0)] * p.ndim
    pad[axis] = (1, 1)
    return -np.diff(np.pad(p, pad), axis=axis)


def _active_axes(shape, topology):
    # a periodic axis of length 1 has only the zero self-difference
    return [a for a, n in enumerate(shape) if n > 1]


def tv(u):
    """Anisotropic TV: sum of |forward differences| over every axis."""
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    topo = u.grid.topology if isinstance(u, Field) else ("free",) * vals.ndim
    return float(
        sum(np.abs(_diff(vals, a, topo[a] == PERIODIC)).sum() for a in _active_axes(vals.shape, topo))
    )


def weighted_tv(vals, topology, weights=None):
    axes = _active_axes(vals.shape, topology)
    w = weights or (1.0,) * vals.ndim
    return float(sum(w[a] * np.abs(_diff(vals, a, topology[a] == PERIODIC)).sum() for a in axes))


# -- solver --------------------------------------------------------------------


@dataclass
class TVSolution:
    u: Field
    dual: list
    residual: float
    gap: float
    objective: float
    iterations: int
    history: list = dc_field(default_factory=list)
    converged: bool = True


def tv_objective(p, lam, u):
    vals = u.values if isinstance(u, Field) else u
    g = p.data.grid
    r = p.op.apply(vals, g.topology) - p.data.values
    return float(
        np.sum(r ** 2) + lam * weighted_tv(vals, g.topology, p.tv_weights) + p.mu * np.sum(vals ** 2)
    )


def solve_tv(
    p,
    lam,
    tol=DEFAULT_TOL,
    max_iter=100_000,
    init=None,
    random_state=None,
    check_every=10,
    full_output=False,
):
    """Minimise ``||Au - d||^2 + lam TV(u) + mu ||u||^2``.

    Parameters
    ----------
    p : InverseProblem
    lam : float
        Regularization weight, > 0.
    tol : float
        Bound on the optimality residual (complementarity violation of the
        primal/dual pair, see module docstring).
    init : None, "random" or list of arrays
        Dual starting point; ``"random"`` draws it uniformly in the box from
        ``random_state``.
    full_output : bool
        Return a :class:`TVSolution` instead of the reconstructed field.

    Raises
    ------
    SolverFailure
        If the residual is still above ``tol`` after ``max_iter`` iterations.
    """
    lam = check_positive(lam, "lambda")
    g = p.data.grid
    shape, topo = g.shape, g.topology
    periodic = [t == PERIODIC for t in topo]
    axes = _active_axes(shape, topo)
    w = p.tv_weights or (1.0,) * g.ndim
    d = p.data.values
    mu = p.mu

    gram_solve, gram_min = p.op.gram_solver(shape, topo, mu)
    if gram_min <= 0:
        raise InvalidArgument("A^T A + mu I is singular; use mu > 0")
    c = p.op.adjoint(d, topo)  # half of the linear term

    def primal(pd):
        z = c.copy()
        for a, pa in zip(axes, pd):
            z -= 0.5 * lam * w[a] * _diff_adjoint(pa, a, periodic[a])
        return gram_solve(z)

    def edge_values(u):
        return [w[a] * _diff(u, a, periodic[a]) for a in axes]

    def residual_of(u, pd):
        # P(u) - P* <= gap and P is (lambda_min(G))-strongly convex, so
        # ||u - u*|| <= sqrt(gap / lambda_min(G)).  Edge differences at
        # roundoff level count as zero, else the square root turns ~1e-16
        # noise on flat regions into a floor near 1e-6 at large lam.
        floor = 16.0 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(u))))
        gap = 0.0
        for a, k, pa in zip(axes, edge_values(u), pd):
            k = np.where(np.abs(k) <= floor * w[a], 0.0, k)
            gap += lam * float(np.sum(np.abs(k) - pa * k))
        gap = max(gap, 0.0)
        return float(np.sqrt(gap / gram_min)), gap

    if init is None:
        pd = [np.zeros(_diff(np.zeros(shape), a, periodic[a]).shape) for a in axes]
    elif isinstance(init, str) and init == "random":
        rng = check_random_state(random_state)
        pd = [rng.uniform(-1.0, 1.0, size=_diff(np.zeros(shape), a, periodic[a]).shape) for a in axes]
    else:
        pd = [np.clip(np.asarray(x, dtype=float), -1.0, 1.0) for x in init]

    if not axes:
        u = gram_solve(c)
        sol = TVSolution(Field(g, u), [], 0.0, 0.0, tv_objective(p, lam, u), 0, [tv_objective(p, lam, u)])
        return sol if full_output else sol.u

    # dual: minimise z^T G^{-1} z, z = A^T d - (lam/2) K^T p, G = A^T A + mu I;
    # gradient -lam K u(p), Lipschitz (lam^2 / 2) ||K||^2 / lambda_min(G)
    knorm2 = sum(4.0 * w[a] ** 2 for a in axes)
    ascent = 2.0 * gram_min / (lam * knorm2)

    best_u, best_pd, best_J = None, None, np.inf
    history = []
    slack = 1e-10
    y = [x.copy() for x in pd]
    t = 1.0
    residual = np.inf
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        uy = primal(y)
        ky = edge_values(uy)
        new = [np.clip(ya + ascent * k, -1.0, 1.0) for ya, k in zip(y, ky)]
        # gradient-based restart keeps the dual sequence from oscillating
        restart = sum(float(np.sum((ya - na) * (na - pa))) for ya, na, pa in zip(y, new, pd)) > 0
        if restart:
            t = 1.0
            y = [x.copy() for x in new]
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            y = [na + beta * (na - pa) for na, pa in zip(new, pd)]
            t = t_next
        pd = new
        if it % check_every == 0 or it == max_iter:
            u = primal(pd)
            J = tv_objective(p, lam, u)
            if J <= best_J + slack * max(1.0, abs(best_J) if np.isfinite(best_J) else 1.0):
                best_u, best_pd, best_J = u, [x.copy() for x in pd], min(J, best_J)
                residual, gap = residual_of(best_u, best_pd)
                history.append(best_J)
                if residual <= tol:
                    break
    converged = residual <= tol
    if best_u is None:
        best_u = primal(pd)
        best_pd = pd
        residual, gap = residual_of(best_u, best_pd)
    if not converged:
        raise SolverFailure(
            f"TV solver stopped after {it} iterations with residual {residual:.3e} > {tol:.1e}",
            residual=residual,
        )
    sol = TVSolution(
        u=Field(g, best_u),
        dual=best_pd,
        residual=residual,
        gap=gap,
        objective=best_J,
        iterations=it,
        history=history,
        converged=converged,
    )
    return sol if full_output else sol.u


# -- discrepancy principle ---------------------------------------------------------


def discrepancy_lambda(p, grid=None, method="scan", rule="least", full_output=False, **solver_kw):
    """Pick ``lam`` on ``grid`` by the discrepancy bound ``||A u_lam - d|| <= tau eps``.

    ``rule="least"`` returns the smallest admissible ladder entry;
    ``rule="morozov"`` returns the largest one, the classical choice that
    puts the residual as close to ``tau eps`` as the ladder allows.

    ``method="scan"`` solves every ladder entry and picks by index (the brute
    force).  ``method="bisect"`` relies on the residual being nondecreasing
    in ``lam``, so the admissible entries form a prefix of the ladder; it
    needs one solve for ``"least"`` and ``O(log n)`` for ``"morozov"``.

    Raises
    ------
    NoAdmissibleLambda
        If no ladder entry meets the bound.
    """
    grid = grid or LambdaGrid.geometric()
    if rule not in ("least", "morozov"):
        raise InvalidArgument(f"unknown rule {rule!r}")
    bound = p.bound
    residuals = {}
    solutions = {}

    def admissible(i):
        if i not in solutions:
            u = solve_tv(p, grid.values[i], **solver_kw)
            solutions[i] = u
            residuals[i] = p.residual_norm(u)
        return residuals[i] <= bound

    n = len(grid)
    if method == "scan":
        ok = [i for i in range(n) if admissible(i)]
        chosen = (ok[0] if rule == "least" else ok[-1]) if ok else None
    elif method == "bisect":
        if not admissible(0):
            chosen = None
        elif rule == "least":
            chosen = 0
        else:
            lo, hi = 0, n  # lo admissible, hi not (or sentinel)
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if admissible(mid):
                    lo = mid
                else:
                    hi = mid
            chosen = lo
    else:
        raise InvalidArgument(f"unknown search method {method!r}")
    if chosen is None:
        raise NoAdmissibleLambda(
            f"no lambda on the ladder reaches residual <= {bound:.3e} "
            f"(smallest residual seen {min(residuals.values()):.3e})"
        )
    lam = grid.values[chosen]
    if full_output:
        return lam, solutions[chosen], dict(sorted(residuals.items()))
    return lam, solutions[chosen]


def residual_curve(p, grid, **solver_kw):
    """Residual ``||A u_lam - d||`` for every ladder entry (ascending lam)."""
    return [p.residual_norm(solve_tv(p, lam, **solver_kw)) for lam in grid]


# -- refinement pipeline and the commutation test ---------------------------------------


def level_problem(p, policy, n):
    """Refine ``p`` to stage ``n`` of ``policy`` as a discretized continuum problem.

    The data are resampled; TV is weighted by ``1/h`` per axis and the noise
    level is converted from the grid L2 norm to the plain Euclidean one, so
    the functional and the discrepancy bound approximate the same continuum
    quantities at every level.
    """
    data = refine(p.data, policy, n)
    g = data.grid
    op = p.op
    if op.kind == "subsampling":
        mask = refine(Field(p.data.grid, op.mask), RefinementPolicy(
            "mask", "nearest", policy.base_dims, policy.growth, max_level=policy.max_level
        ), n).values
        op = ForwardOperator.subsampling(np.round(mask))
    eps = p.noise_level / np.sqrt(g.cell_volume)
    weights = tuple(1.0 / h for h in g.spacing)
    return InverseProblem(op, data, eps, p.tau, p.mu, weights)


def reconstruct(p, policy, n, grid=None, method="bisect", rule="least", **solver_kw):
    """Full pipeline at stage ``n``: refine, pick ``lam`` by discrepancy, solve.

    The solver starts from a dual point drawn with the stage seed, so the
    result depends on the policy's iteration schedule only through solver
    inexactness, which the stage tolerance bounds.
    """
    stage = policy.stage(n)
    lp = level_problem(p, policy, n)
    kw = dict(tol=stage.tolerance, init="random", random_state=stage.seed)
    kw.update(solver_kw)
    lam, u = discrepancy_lambda(lp, grid, method=method, rule=rule, **kw)
    return lam, u


def commutation_gap(p, r, policy, n, grid=None, **solver_kw):
    """Normalized recode/reconstruct gap ``||U s(d) - s(T d)|| / (1 + ||s(d)||)``.

    ``s`` is :func:`reconstruct`; norms are grid L2 norms.
    """
    if not isinstance(r, Recoding):
        raise InvalidArgument("commutation_gap expects a Recoding")
    _, sd = reconstruct(p, policy, n, grid, **solver_kw)
    if r.is_identity:
        return 0.0
    pt = p.with_data(r(p.data))
    _, std = reconstruct(pt, policy, n, grid, **solver_kw)
    usd = r.state_map(sd)
    if usd.grid.shape != std.grid.shape:
        raise InvalidArgument(
            f"recoding {r.name} changes the stage grid ({usd.grid.shape} vs {std.grid.shape})"
        )
    return field_distance(usd, std) / (1.0 + sd.norm())
