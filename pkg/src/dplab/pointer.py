"""Decoherence functional and preferred-basis selection on small Hilbert spaces.

A system of dimension ``dS`` couples to an environment of dimension ``dE``
through a Hermitian ``H`` on the product space (system index first).  For a
basis ``B`` of the system (columns are the vectors) the functional is ::

    Phi(B) = int_0^T || offdiag_B( Tr_E[ U_t (rho_S0 x rho_E) U_t^dag ] ) ||_1 dt

with ``U_t = exp(-iHt)`` and the trace norm taken after zeroing the diagonal
of ``B^dag rho_S B``.  Everything is exact linear algebra except the time
integral, which uses a declared quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .exceptions import InvalidArgument
from .grid import PolicyFamily, RefinementPolicy
from .utils.validation import check_hermitian, check_random_state, check_unitary

DIM_CAP = 64
STATE_ATOL = 1e-10
TIE_TOL = 1e-9
DENSITY_SLACK = 1e-12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class HilbertSpec:
    dim_s: int
    dim_e: int
    cap: int = DIM_CAP

    def __post_init__(self):
        if self.dim_s < 1 or self.dim_e < 1:
            raise InvalidArgument("dimensions must be positive")
        if self.dim_s * self.dim_e > self.cap:
            raise InvalidArgument(f"dimS * dimE = {self.dim_s * self.dim_e} exceeds the cap {self.cap}")

    @property
    def dim(self):
        return self.dim_s * self.dim_e


def check_density(rho, name="density matrix", atol=STATE_ATOL):
    """Validate Hermiticity, unit trace and positivity; return a complex array."""
    m = check_hermitian(rho, name, atol)
    tr = np.trace(m)
    if abs(tr - 1.0) > atol:
        raise InvalidArgument(f"{name} has trace {tr.real:.12g}, expected 1")
    if np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0] < -atol:
        raise InvalidArgument(f"{name} is not positive semidefinite")
    return m


def pure_state(vec):
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def bloch_state(r):
    """Qubit density matrix ``(I + r . sigma) / 2`` with ``|r| <= 1``."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3,) or np.linalg.norm(r) > 1 + 1e-12:
        raise InvalidArgument("Bloch vector must have 3 components and norm <= 1")
    return 0.5 * (np.eye(2) + r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z)


def thermal_state(h_env, beta):
    """Gibbs state ``exp(-beta H) / Z`` computed through the spectrum."""
    h = check_hermitian(h_env, "environment Hamiltonian")
    w, v = np.linalg.eigh(h)
    p = np.exp(-beta * (w - w.min()))
    p /= p.sum()
    return (v * p) @ v.conj().T


def partial_trace_env(rho, dim_s, dim_e):
    """Trace out the environment; works on a trailing ``(d, d)`` matrix or a stack of them."""
    r = np.asarray(rho)
    lead = r.shape[:-2]
    r = r.reshape(lead + (dim_s, dim_e, dim_s, dim_e))
    return np.einsum("...iaja->...ij", r)


# -- evolution --------------------------------------------------------------------------------


class Propagator:
    """Cached spectral decomposition of ``H`` for repeated evolutions."""

    def __init__(self, H):
        self.H = check_hermitian(H, "Hamiltonian")
        self.w, self.v = np.linalg.eigh(0.5 * (self.H + self.H.conj().T))

    def evolve(self, rho, times):
        """``U_t rho U_t^dag`` for each time; returns shape ``(len(times), d, d)``."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(t < 0):
            raise InvalidArgument("times must be >= 0")
        r = self.v.conj().T @ rho @ self.v
        phase = np.exp(-1j * np.outer(t, self.w))  # (nt, d)
        rt = phase[:, :, None] * r[None] * phase.conj()[:, None, :]
        out = self.v[None] @ rt @ self.v.conj().T[None]
        return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


def evolve_state(H, rho, t):
    """``exp(-iHt) rho exp(iHt)`` via the eigendecomposition of ``H``."""
    if t < 0:
        raise InvalidArgument("t must be >= 0")
    rho = np.asarray(rho, dtype=complex)
    H = np.asarray(H, dtype=complex)
    if rho.shape != H.shape:
        raise InvalidArgument(f"state shape {rho.shape} does not match H {H.shape}")
    return Propagator(H).evolve(rho, [t])[0]


def offdiag_norm(rho_s, B):
    """Trace norm of the off-diagonal part of ``B^dag rho B`` (stacks allowed)."""
    B = check_unitary(B)
    r = np.asarray(rho_s, dtype=complex)
    if r.shape[-2:] != B.shape:
        raise InvalidArgument(f"state dimension {r.shape[-2:]} does not match basis {B.shape}")
    m = B.conj().T @ r @ B
    d = B.shape[0]
    m = m * (1 - np.eye(d))
    s = np.linalg.svd(m, compute_uv=False)
    out = s.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# -- quadrature ---------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeGridQuadrature:
    horizon: float
    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "custom"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if self.horizon <= 0:
            raise InvalidArgument("horizon must be > 0")
        if nodes.shape != weights.shape or nodes.ndim != 1 or nodes.size == 0:
            raise InvalidArgument("nodes and weights must be matching non-empty 1D arrays")
        if np.any(weights <= 0):
            raise InvalidArgument("quadrature weights must be positive")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > self.horizon:
            raise InvalidArgument("nodes must ascend inside [0, T]")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    @classmethod
    def trapezoid(cls, horizon, intervals):
        if intervals < 1:
            raise InvalidArgument("need at least one interval")
        nodes = np.linspace(0.0, horizon, intervals + 1)
        w = np.full(intervals + 1, horizon / intervals)
        w[0] = w[-1] = 0.5 * horizon / intervals
        return cls(horizon, nodes, w, "trapezoid")

    @classmethod
    def gauss(cls, horizon, points):
        x, w = np.polynomial.legendre.leggauss(int(points))
        return cls(horizon, 0.5 * horizon * (x + 1), 0.5 * horizon * w, "gauss")


def observed_order(values, ratio=2.0):
    """Self-convergence orders ``log(|v1 - v0| / |v2 - v1|) / log(ratio)`` from successive refinements."""
    v = np.asarray(values, dtype=float)
    d = np.abs(np.diff(v))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(d[:-1] / d[1:]) / np.log(ratio)


# -- functional and selection ----------------------------------------------------------------


def composite_state(rho_s0, rho_e):
    return np.kron(rho_s0, rho_e)


def coherence_trace(B, rho_e, H, rho_s0, times, prop=None):
    """Off-diagonal norm of the reduced state at each time."""
    rho_s0 = check_density(rho_s0, "system state")
    rho_e = check_density(rho_e, "environment state")
    ds, de = rho_s0.shape[0], rho_e.shape[0]
    HilbertSpec(ds, de)
    prop = prop or Propagator(H)
    if prop.H.shape != (ds * de, ds * de):
        raise InvalidArgument(f"H has shape {prop.H.shape}, expected {(ds * de, ds * de)}")
    states = prop.evolve(composite_state(rho_s0, rho_e), times)
    return offdiag_norm(partial_trace_env(states, ds, de), B)


def decoherence_functional(B, rho_e, H, rho_s0, quad, prop=None):
    vals = coherence_trace(B, rho_e, H, rho_s0, quad.nodes, prop)
    return max(quad.integrate(vals), 0.0)


def terminal_coherence(B, rho_e, H, rho_s0, quad, prop=None):
    """Default secondary cost: off-diagonal norm at the horizon."""
    return float(coherence_trace(B, rho_e, H, rho_s0, [quad.horizon], prop)[0])


@dataclass(frozen=True, eq=False)
class BasisMenu:
    bases: tuple
    labels: tuple

    def __post_init__(self):
        bases = tuple(check_unitary(b, f"basis {lab}") for b, lab in zip(self.bases, self.labels))
        labels = tuple(str(x) for x in self.labels)
        if not bases:
            raise InvalidArgument("menu must be non-empty")
        if len(bases) != len(labels):
            raise InvalidArgument("one label per basis")
        if len(set(labels)) != len(labels):
            raise InvalidArgument("menu labels must be unique")
        if len({b.shape for b in bases}) != 1:
            raise InvalidArgument("menu bases must share a dimension")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.bases)

    def __iter__(self):
        return iter(zip(self.labels, self.bases))

    def conjugated(self, V):
        """Menu ``{V B}`` with the same labels."""
        V = check_unitary(V)
        return BasisMenu(tuple(V @ b for b in self.bases), self.labels)


def qubit_basis(axis):
    """Eigenbasis of the Pauli matrix along ``axis`` (``"x"``, ``"y"``, ``"z"``)."""
    pauli = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}[axis]
    _, v = np.linalg.eigh(pauli)
    return v[:, ::-1]


def qubit_menu(extra_angles=()):
    """Z, X and Y eigenbases plus bases tilted from Z by each angle about y."""
    bases = [qubit_basis("z"), qubit_basis("x"), qubit_basis("y")]
    labels = ["Z", "X", "Y"]
    for a in extra_angles:
        c, s = np.cos(a / 2), np.sin(a / 2)
        bases.append(np.array([[c, -s], [s, c]], dtype=complex))
        labels.append(f"tilt{a:.4g}")
    return BasisMenu(tuple(bases), tuple(labels))


@dataclass
class Selection:
    gamma0: list
    values: dict
    secondary: dict
    selected: str
    tie_set_size: int
    secondary_name: str = "terminal_coherence"


def preferred_basis(menu, rho_e, H, rho_s0, quad, tie_tol=TIE_TOL, secondary=terminal_coherence):
    """Arg-min set of the functional over ``menu`` and a deterministic pick.

    ``gamma0`` holds every label within ``tie_tol`` of the minimum, ordered by
    label.  Among those the secondary cost (within ``tie_tol``) and then label
    order decide ``selected``.
    """
    prop = Propagator(H)
    values = {lab: decoherence_functional(B, rho_e, H, rho_s0, quad, prop) for lab, B in menu}
    best = min(values.values())
    gamma0 = sorted(lab for lab, v in values.items() if v <= best + tie_tol)
    bases = dict(menu)
    sec = {lab: float(secondary(bases[lab], rho_e, H, rho_s0, quad, prop)) for lab in gamma0}
    s_best = min(sec.values())
    finalists = [lab for lab in gamma0 if sec[lab] <= s_best + tie_tol]
    name = getattr(secondary, "__name__", "custom")
    return Selection(gamma0, values, sec, finalists[0], len(finalists), name)


# -- universal stability ----------------------------------------------------------------------


def pointer_family(max_level=3, base_samples=16):
    """Time-sampling schedules: uniform grid, half-step offset, and a coarser-growth grid."""
    pols = (
        RefinementPolicy("uniform", "nearest", (1,), base_samples=base_samples, max_level=max_level),
        RefinementPolicy("offset", "nearest", (1,), base_samples=base_samples, phase=0.5, max_level=max_level),
        RefinementPolicy("triadic", "nearest", (1,), growth=3, base_samples=base_samples // 2 + 1, phase=0.25, max_level=max_level),
    )
    return PolicyFamily(pols, max_level)


def upper_density(times, values, q, horizon):
    """Exceedance fraction ``#{t >= T/2 : value > q} / #{t >= T/2}``."""
    times = np.asarray(times)
    tail = times >= 0.5 * horizon
    if not tail.any():
        raise InvalidArgument("no samples in the tail half of the horizon")
    return float(np.mean(np.asarray(values)[tail] > q))


def universally_stable(B, rho_e, H, rho_s0, horizon, fam, q_grid, density_tol=0.0, full_output=False):
    """Finite-truncation universal stability of ``B``.

    Each policy samples ``[0, T)`` at its finest stage; ``B`` passes when
    every policy admits some ``q`` in ``q_grid`` whose tail exceedance
    density is at most ``density_tol`` (plus a 1e-12 slack).
    """
    if not isinstance(fam, PolicyFamily):
        raise InvalidArgument("fam must be a PolicyFamily")
    q_grid = sorted(float(q) for q in q_grid)
    if not q_grid:
        raise InvalidArgument("q_grid must be non-empty")
    prop = Propagator(H)
    witness = {}
    for pol in fam:
        times = horizon * pol.samples_at(fam.max_level)
        vals = coherence_trace(B, rho_e, H, rho_s0, times, prop)
        witness[pol.id] = next(
            (q for q in q_grid if upper_density(times, vals, q, horizon) <= density_tol + DENSITY_SLACK), None
        )
    ok = all(q is not None for q in witness.values())
    return (ok, witness) if full_output else ok


# -- environment encodings and ensembles -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Encoding:
    """Declared re-description of the environment: maps ``(rho_E, H)`` to an equivalent pair."""

    name: str
    apply: object

    def __call__(self, rho_e, H, dim_s):
        return self.apply(rho_e, H, dim_s)


def identity_encoding():
    return Encoding("identity", lambda rho_e, H, ds: (rho_e, H))


def env_unitary_encoding(V, name="env-unitary"):
    """Change of environment basis ``V`` applied to both state and Hamiltonian."""
    V = check_unitary(V)

    def apply(rho_e, H, ds):
        if V.shape[0] != rho_e.shape[0]:
            raise InvalidArgument("encoding dimension does not match the environment")
        W = np.kron(np.eye(ds), V)
        return V @ rho_e @ V.conj().T, W @ H @ W.conj().T

    return Encoding(name, apply)


def env_permutation_encoding(perm, name="env-permutation"):
    perm = np.asarray(perm)
    P = np.eye(perm.size)[perm]
    return env_unitary_encoding(P.astype(complex), name)


def random_env_unitary_encoding(dim_e, seed=0, name="env-random-unitary"):
    rng = np.random.default_rng(seed)
    z = (rng.normal(size=(dim_e, dim_e)) + 1j * rng.normal(size=(dim_e, dim_e))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return env_unitary_encoding(q, name)


def thermal_ensemble(h_env, size, seed=0, beta_range=(0.1, 3.0)):
    """Seeded Gibbs states with inverse temperatures drawn uniformly from ``beta_range``."""
    rng = check_random_state(seed)
    betas = rng.uniform(*beta_range, size=size)
    return [thermal_state(h_env, b) for b in betas], betas


def basis_frequency_map(ensemble, menu, H, rho_s0, quad, encodings=None, **select_kw):
    """Selection frequencies per label under each encoding and their max TV drift."""
    encodings = encodings or [identity_encoding()]
    ds = np.asarray(rho_s0).shape[0]
    tables = {}
    for enc in encodings:
        counts = dict.fromkeys(menu.labels, 0)
        for rho_e in ensemble:
            re, He = enc(np.asarray(rho_e, dtype=complex), np.asarray(H, dtype=complex), ds)
            counts[preferred_basis(menu, re, He, rho_s0, quad, **select_kw).selected] += 1
        tables[enc.name] = {k: v / len(ensemble) for k, v in counts.items()}
    names = list(tables)
    drift = 0.0
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            tv = 0.5 * sum(abs(tables[a][k] - tables[b][k]) for k in menu.labels)
            drift = max(drift, tv)
    return {"frequencies": tables, "drift": drift}


# -- model presets -----------------------------------------------------------------------------


@dataclass
class PointerModel:
    H: np.ndarray
    rho_s0: np.ndarray
    h_env: np.ndarray
    menu: BasisMenu
    horizon: float
    name: str = "custom"
    notes: dict = dc_field(default_factory=dict)

    @property
    def dim_s(self):
        return self.rho_s0.shape[0]

    @property
    def dim_e(self):
        return self.h_env.shape[0]


DEFAULT_BLOCH = (0.3, 0.0, 0.8)


def two_qubit_dephasing(coupling=1.0, field=1.0, bloch=DEFAULT_BLOCH, horizon=1.0):
    """``H = g sigma_z x sigma_z``; environment Gibbs states are taken for ``b sigma_z``."""
    H = coupling * np.kron(SIGMA_Z, SIGMA_Z)
    return PointerModel(H, bloch_state(bloch), field * SIGMA_Z, qubit_menu(), horizon, "two-qubit-dephasing")


def dephasing_bath(levels=32, coupling=1.0, spread=1.0, bloch=DEFAULT_BLOCH, horizon=None):
    """Qubit dephased by a ``levels``-state bath: ``H = sigma_z x diag(g w_k)``.

    Bath energies ``w_k`` are equally spaced over ``[-3 s, 3 s]`` so thermal
    weights make the coherence decay roughly like a Gaussian before the
    recurrence at ``t = pi / (g dw)``; the default horizon stops at half of it.
    """
    w = np.linspace(-3 * spread, 3 * spread, levels)
    dw = w[1] - w[0]
    H = np.kron(SIGMA_Z, np.diag(coupling * w)).astype(complex)
    h_env = np.diag(0.5 * w ** 2 / spread ** 2).astype(complex)
    if horizon is None:
        horizon = 0.5 * np.pi / (coupling * dw)
    return PointerModel(H, bloch_state(bloch), h_env, qubit_menu(), float(horizon), "dephasing",
                        {"levels": levels, "coupling": coupling, "spread": spread})


def spin_boson_truncated(levels=8, delta=0.2, epsilon=1.0, omega=1.0, coupling=0.5, bloch=DEFAULT_BLOCH, horizon=10.0):
    """Qubit coupled through ``sigma_z`` to an oscillator truncated at ``levels`` states."""
    a = np.diag(np.sqrt(np.arange(1, levels)), 1).astype(complex)
    n = a.conj().T @ a
    I_e = np.eye(levels)
    H = (0.5 * delta * np.kron(SIGMA_X, I_e) + 0.5 * epsilon * np.kron(SIGMA_Z, I_e)
         + omega * np.kron(np.eye(2), n) + coupling * np.kron(SIGMA_Z, a + a.conj().T))
    return PointerModel(H, bloch_state(bloch), omega * n, qubit_menu(), horizon, "spin-boson-truncated",
                        {"levels": levels, "delta": delta, "epsilon": epsilon, "omega": omega, "coupling": coupling})


PRESETS = {
    "two-qubit-dephasing": two_qubit_dephasing,
    "dephasing": dephasing_bath,
    "spin-boson-truncated": spin_boson_truncated,
}


def preset(name, **kw):
    try:
        return PRESETS[name](**kw)
    except KeyError:
        raise InvalidArgument(f"unknown pointer preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- matrix text format ------------------------------------------------------------------------
#
# One matrix row per line; entries separated by whitespace, each entry
# "re,im".  Blank lines and lines starting with '#' are ignored.


def format_matrix(m):
    m = np.asarray(m, dtype=complex)
    return "\n".join(" ".join(f"{z.real:.17g},{z.imag:.17g}" for z in row) for row in m) + "\n"


def parse_matrix(text):
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        row = []
        for tok in line.split():
            parts = tok.split(",")
            if len(parts) != 2:
                raise InvalidArgument(f"line {lineno}: entry {tok!r} is not 're,im'")
            try:
                row.append(complex(float(parts[0]), float(parts[1])))
            except ValueError:
                raise InvalidArgument(f"line {lineno}: bad number in {tok!r}") from None
        rows.append(row)
    if not rows or len({len(r) for r in rows}) != 1:
        raise InvalidArgument("matrix rows must be non-empty and of equal length")
    return np.array(rows, dtype=complex)


def read_matrix(path):
    with open(path, encoding="utf-8") as fh:
        return parse_matrix(fh.read())


def write_matrix(path, m):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix(m))
