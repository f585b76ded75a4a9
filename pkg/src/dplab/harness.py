"""Protocol orchestration: stability indices, verdicts and reports.

Every protocol produces, for each ensemble member, a *leveled output* per
refinement policy plus a *commutation gap* per recoding.  Two indices
summarise them:

``SSI(n)``
    ensemble mean of ``max_policy d(out_n, out_{n+1})``.
``SC(n)``
    ensemble mean of ``max_{policy, recoding}`` commutation gap at stage ``n``.

Distances are normalised as ``||a - b|| / (1 + ||b||)`` unless a protocol
states otherwise.  Reports are deterministic functions of the config: the
JSON body holds no timestamps, and run metadata goes to a separate file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import barrier as bar
from . import horizon as hz
from . import ising as isg
from . import pointer as ptr
from . import tv
from .exceptions import DPLabError, InvalidArgument, QuorumFailure
from .fieldio import read_field
from .grid import (
    Field,
    PolicyFamily,
    RefinementPolicy,
    default_family,
    field_distance,
    recoding_by_name,
    resample,
    value_rescale,
)

PROTOCOLS = ("imaging", "barrier", "ising", "pointer", "horizon")
VERDICTS = ("decaying", "plateau", "inconclusive")
REPORT_VERSION = 1


# -- indices and verdicts ---------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    """Trend-test constants.

    ``ratio``: decaying needs ``last <= ratio * first``.  ``slack``: allowed
    relative rise between consecutive levels.  ``floor``: values below it
    count as zero.  ``band``: relative width for the final-two plateau test.
    """

    ratio: float = 0.5
    slack: float = 0.1
    floor: float = 1e-9
    band: float = 0.1

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise InvalidArgument("ratio must lie in (0, 1)")
        for name in ("slack", "floor", "band"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidArgument(f"{name} must be a finite nonnegative number")


def verdict(seq, thresholds=Thresholds()):
    """Classify an index sequence as ``decaying``, ``plateau`` or ``inconclusive``.

    Decaying: nonincreasing up to ``slack`` (or the floor) and ``last <= ratio * first``.
    Plateau: the final two values lie above ``floor``, within ``band`` of each
    other, and the sequence has not already fallen to ``ratio * first``.
    """
    th = thresholds if isinstance(thresholds, Thresholds) else Thresholds(**thresholds)
    s = np.asarray(seq, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise InvalidArgument("a verdict needs an index sequence of at least two levels")
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        return "inconclusive"
    monotone = all(b <= a * (1 + th.slack) + th.floor for a, b in zip(s, s[1:]))
    fallen = s[-1] <= th.ratio * s[0] + th.floor
    if monotone and fallen:
        return "decaying"
    a, b = s[-2], s[-1]
    if min(a, b) > th.floor and abs(a - b) <= th.band * max(a, b) and not fallen:
        return "plateau"
    return "inconclusive"


def combine_verdicts(*vs):
    if all(v == "decaying" for v in vs):
        return "decaying"
    if any(v == "plateau" for v in vs):
        return "plateau"
    return "inconclusive"


def ssi(outputs, distance):
    """``SSI(n)`` from ``outputs[member][policy] = [out_level0, out_level1, ...]``.

    Members mapped to ``None`` are skipped.
    """
    rows = []
    for per_policy in outputs:
        if per_policy is None:
            continue
        curves = [[distance(a, b) for a, b in zip(outs, outs[1:])] for outs in per_policy.values()]
        rows.append(np.max(np.asarray(curves, dtype=float), axis=0))
    if not rows:
        raise InvalidArgument("no surviving members")
    return np.mean(rows, axis=0)


def sc(gaps):
    """``SC(n)`` from ``gaps[member] = array (policies x recodings x levels)``."""
    rows = [np.max(np.asarray(g, dtype=float).reshape(-1, np.shape(g)[-1]), axis=0) for g in gaps if g is not None]
    if not rows:
        raise InvalidArgument("no surviving members")
    return np.mean(rows, axis=0)


def normalized_distance(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm((a - b).ravel()) / np.sqrt(max(a.size, 1)) / (1.0 + np.linalg.norm(b.ravel()) / np.sqrt(max(b.size, 1))))


# -- invariant selection -------------------------------------------------------------------------


@dataclass
class EquivarianceReport:
    equivariant: bool
    violations: list
    tie_fibers: list
    selector: dict


def invariant_selection(fibers, cost, group):
    """Cost-minimal selector over labeled fibers and its equivariance under ``group``.

    ``fibers`` maps a point to its finite set of labels; ``cost`` maps labels
    to reals; each group element is a dict permuting labels.  Ties go to the
    smallest label.  Returns ``(selector, report)``: ``selector`` maps points
    to labels; ``report.violations`` lists ``(element index, point)`` with
    ``s(g x) != g s(x)`` and ``report.tie_fibers`` the points whose minimum is
    not unique.
    """
    fib = {}
    for x, labels in fibers.items():
        labels = sorted(set(labels))
        if not labels:
            raise InvalidArgument(f"fiber over {x!r} is empty")
        fib[x] = labels
    by_set = {frozenset(v): x for x, v in fib.items()}
    selector, ties = {}, []
    for x, labels in fib.items():
        best = min(cost[l] for l in labels)
        tied = [l for l in labels if cost[l] == best]
        selector[x] = tied[0]
        if len(tied) > 1:
            ties.append(x)
    violations = []
    for gi, g in enumerate(group):
        for x, labels in fib.items():
            image = frozenset(g.get(l, l) for l in labels)
            gx = by_set.get(image)
            if gx is None:
                raise InvalidArgument(f"group element {gi} does not map the fiber over {x!r} onto a fiber")
            if selector[gx] != g.get(selector[x], selector[x]):
                violations.append((gi, x))
    return selector, EquivarianceReport(not violations, violations, ties, selector)


# -- configuration ---------------------------------------------------------------------------------


PROTOCOL_DEFAULTS = {
    "imaging": {
        "levels": 4,
        "ensemble_size": 10,
        "recodings": ["rot90", "rot180", "reflect0", "reflect1", "transpose"],
        "family": {"base_dims": [4, 4], "schemes": ["bilinear", "conservative", "nearest"]},
        "params": {"noise": 0.05, "bumps": 3, "data_file": None, "rule": "least"},
    },
    "barrier": {
        "levels": 2,
        "ensemble_size": 4,
        "recodings": ["reflect0", "transpose"],
        "family": {"env_size": 16, "tol_base": 2},
        "params": {"ladder": [16, 64, 512], "target": 0.03125, "kinds": ["point", "segment"], "env_file": None},
    },
    "ising": {
        "levels": 3,
        "ensemble_size": 8,
        "recodings": ["flip", "rot180", "reflect0"],
        "family": {"base": 8, "shapes": ["square", "slab"]},
        "params": {"steps": 8, "rule": "keep", "J": 1.0, "h": 0.0, "topology": "free", "init": "seeded"},
    },
    "pointer": {
        "levels": 3,
        "ensemble_size": 10,
        "recodings": ["env-random-unitary", "env-reverse"],
        "family": {"base_samples": 16},
        "params": {"model": "two-qubit-dephasing", "beta_range": [0.1, 3.0]},
    },
    "horizon": {
        "levels": 3,
        "ensemble_size": 4,
        "recodings": ["characteristic"],
        "family": {"base_samples": 8},
        "params": {"kappa": 0.5, "potential": "decaying", "strength": 1.0, "v_max": 6.0,
                   "base_resolution": 32, "scheme": "leapfrog", "datum_file": None},
    },
}


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str
    seed: int = 0
    ensemble_size: int = None
    levels: int = None
    recodings: tuple = None
    family: dict = None
    thresholds: dict = None
    quorum: int = 1
    params: dict = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InvalidArgument(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        d = PROTOCOL_DEFAULTS[self.protocol]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.ensemble_size is None:
            set_("ensemble_size", d["ensemble_size"])
        if self.levels is None:
            set_("levels", d["levels"])
        set_("recodings", tuple(d["recodings"] if self.recodings is None else self.recodings))
        set_("family", {**d["family"], **(self.family or {})})
        set_("params", {**d["params"], **(self.params or {})})
        set_("thresholds", asdict(Thresholds(**(self.thresholds or {}))))
        for name in ("seed", "ensemble_size", "levels", "quorum"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InvalidArgument(f"{name} must be an integer, got {v!r}")
        if self.ensemble_size < 1:
            raise InvalidArgument("ensemble_size must be >= 1")
        if self.levels < 2:
            raise InvalidArgument("levels must be >= 2; the indices compare at least two levels")
        if not 1 <= self.quorum <= self.ensemble_size:
            raise InvalidArgument("quorum must lie in 1..ensemble_size")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise InvalidArgument("config must be a mapping")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise InvalidArgument(f"unknown config keys: {sorted(extra)}")
        if "protocol" not in data:
            raise InvalidArgument("config needs a 'protocol' key")
        return cls(**data)

    def to_dict(self):
        return _canonical({
            "protocol": self.protocol,
            "seed": int(self.seed),
            "ensemble_size": int(self.ensemble_size),
            "levels": int(self.levels),
            "recodings": list(self.recodings),
            "family": self.family,
            "thresholds": self.thresholds,
            "quorum": int(self.quorum),
            "params": self.params,
        })

    def config_hash(self):
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        return hashlib.sha256(blob.encode("ascii")).hexdigest()


def load_config(path, **overrides):
    """Read a YAML or JSON config file; ``overrides`` replace top-level keys."""
    import yaml

    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidArgument(f"cannot parse config {path}: {exc}") from exc
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ProtocolConfig.from_dict(data)


def _canonical(obj):
    """JSON-ready copy with tuples as lists, numpy scalars unwrapped and non-finite floats as None."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# -- report ------------------------------------------------------------------------------------


@dataclass
class StabilityReport:
    protocol: str
    levels: list
    ssi: list
    sc: list
    verdict: str
    verdicts: dict
    members: list
    provenance: dict
    metadata: dict = dc_field(default_factory=dict)

    def body(self):
        return _canonical({
            "version": REPORT_VERSION,
            "protocol": self.protocol,
            "levels": self.levels,
            "ssi": self.ssi,
            "sc": self.sc,
            "verdict": self.verdict,
            "verdicts": self.verdicts,
            "members": self.members,
            "provenance": self.provenance,
        })

    def to_json(self):
        """Deterministic JSON text; metadata is excluded."""
        return json.dumps(self.body(), sort_keys=True, indent=2, ensure_ascii=True) + "\n"

    def index_csv(self, name):
        vals = getattr(self, name)
        lv = self.levels[: len(vals)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", name])
        for n, v in zip(lv, vals):
            w.writerow([n, repr(float(v))])
        return buf.getvalue()

    def write(self, out_dir):
        """Write ``report.json``, ``ssi.csv``, ``sc.csv`` and ``metadata.json``; returns the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out / "report.json",
            "ssi": out / "ssi.csv",
            "sc": out / "sc.csv",
            "metadata": out / "metadata.json",
        }
        paths["report"].write_text(self.to_json())
        paths["ssi"].write_text(self.index_csv("ssi"))
        paths["sc"].write_text(self.index_csv("sc"))
        paths["metadata"].write_text(json.dumps(_canonical(self.metadata), sort_keys=True, indent=2) + "\n")
        return paths


# -- protocol runners -------------------------------------------------------------------------
#
# Each runner returns (levels, member_fn) where member_fn(i) gives a dict with
# "outputs" (policy -> list over levels, or None), "gaps" (array policies x
# recodings x levels) and "diagnostics".


def smooth_phantom(rng, size=64, bumps=3):
    """Sum of Gaussian bumps on the unit square."""
    x = (np.arange(size) + 0.5) / size
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = np.zeros((size, size))
    for _ in range(bumps):
        cx, cy = rng.uniform(0.25, 0.75, 2)
        s = rng.uniform(0.08, 0.2)
        a = rng.uniform(0.5, 1.5)
        f += a * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * s * s))
    return f


def _member_rng(cfg, i):
    return np.random.default_rng([int(cfg.seed), int(i)])


def _prolong_distance(scheme):
    def dist(a, b):
        up = resample(a, b.grid.dims, scheme) if a.grid.dims != b.grid.dims else a
        return field_distance(up, b) / (1.0 + b.norm())

    return dist


def _read_field_param(path, shape):
    if not path:
        return None
    try:
        f = read_field(path)
    except (OSError, ValueError) as exc:
        raise InvalidArgument(f"cannot read field file {path}: {exc}") from exc
    if f.grid.shape != tuple(shape):
        raise InvalidArgument(f"field in {path} has shape {f.grid.shape}, expected {tuple(shape)}")
    return f


def _imaging(cfg):
    fam_kw = cfg.family
    L = cfg.levels
    fam = default_family(tuple(fam_kw["base_dims"]), L, tuple(fam_kw["schemes"]))
    size = int(fam_kw["base_dims"][0]) * 2 ** L
    recs = [recoding_by_name(r) for r in cfg.recodings]
    levels = list(range(1, L + 1))
    noise = float(cfg.params["noise"])
    rule = cfg.params["rule"]
    if rule not in ("least", "morozov"):
        raise InvalidArgument(f"imaging rule must be 'least' or 'morozov', got {rule!r}")
    file_data = _read_field_param(cfg.params.get("data_file"), (size, size))

    def member(i):
        rng = _member_rng(cfg, i)
        if file_data is not None:
            # a single stored image; members differ only in the added noise draw
            clean = file_data.values
        else:
            clean = smooth_phantom(rng, size, int(cfg.params["bumps"]))
        eta = noise * rng.standard_normal(clean.shape)
        p = tv.InverseProblem(tv.ForwardOperator.identity(), Field.from_array(clean + eta),
                              float(np.sqrt(np.mean(eta ** 2))))
        outputs, gaps, lams = {}, [], {}
        for pol in fam:
            outs, prow, lrow = [], [], []
            for n in levels:
                lam, u = tv.reconstruct(p, pol, n, rule=rule)
                outs.append(u)
                lrow.append(lam)
            for r in recs:
                row = []
                for n, u in zip(levels, outs):
                    if r.is_identity:
                        row.append(0.0)
                        continue
                    _, ut = tv.reconstruct(p.with_data(r(p.data)), pol, n, rule=rule)
                    row.append(field_distance(r.state_map(u), ut) / (1.0 + u.norm()))
                prow.append(row)
            outputs[pol.id] = outs
            gaps.append(prow)
            lams[pol.id] = lrow
        return {"outputs": outputs, "gaps": gaps, "diagnostics": {"lambda": lams}}

    return levels, member, _prolong_distance("bilinear")


def _barrier(cfg):
    P = cfg.params
    L = cfg.levels
    ladder = tuple(int(m) for m in P["ladder"])
    if len(ladder) < L + 1:
        raise InvalidArgument(f"barrier ladder needs at least levels + 1 = {L + 1} entries")
    ladder = ladder[: L + 1]
    fam = bar.barrier_family(int(cfg.family["env_size"]), 2, int(cfg.family["tol_base"]))
    recs = [recoding_by_name(r) for r in cfg.recodings]
    target = float(P["target"])
    env_size = int(cfg.family["env_size"])
    env_file = _read_field_param(P.get("env_file"), (env_size, env_size))
    levels = list(range(L + 1))
    cache = {}

    def energies(spec):
        key = (spec.mask.shape, spec.mask.tobytes())
        if key not in cache:
            cache[key] = bar.capacity(spec, ladder)
        return cache[key]

    def member(i):
        rng = _member_rng(cfg, i)
        if env_file is not None:
            kind, env = "file", env_file
        else:
            kind = P["kinds"][int(rng.integers(len(P["kinds"])))]
            env = bar.thin_barrier_field(kind, int(cfg.family["env_size"]), rng)
        theta = float(bar.calibrate_theta(env, target, fam))
        outputs, gaps, diag = {}, [], {"kind": kind, "theta": theta, "verdicts": {}}
        for pol in fam:
            est = energies(bar.BarrierSpec(bar.refine(env, pol, 0), theta))
            outputs[pol.id] = est.energies
            diag["verdicts"][pol.id] = est.verdict
            prow = []
            for r in recs:
                if r.is_identity:
                    prow.append([0.0] * len(levels))
                    continue
                et = energies(bar.BarrierSpec(bar.refine(r(env), pol, 0), theta))
                prow.append([abs(a - b) / (1.0 + a) for a, b in zip(est.energies, et.energies)])
            gaps.append(prow)
        return {"outputs": outputs, "gaps": gaps, "diagnostics": diag}

    return levels, member, lambda a, b: abs(a - b) / (1.0 + abs(b))


_ISING_RECODINGS = {"flip": lambda: value_rescale(-1.0, 0.0)}


def ising_family(base=8, shapes=("square", "slab"), max_level=3):
    """Van Hove box sequences: squares and 1:2 slabs doubling per level."""
    aspect = {"square": (1, 1), "slab": (1, 2), "tall": (2, 1)}
    pols = []
    for s in shapes:
        if s not in aspect:
            raise InvalidArgument(f"unknown box shape {s!r}")
        pols.append(RefinementPolicy(s, "nearest", tuple(base * a for a in aspect[s]), max_level=max_level))
    return PolicyFamily(tuple(pols), max_level)


def _ising(cfg):
    P = cfg.params
    L = cfg.levels
    base = int(cfg.family["base"])
    fam = ising_family(base, tuple(cfg.family["shapes"]), L)
    coupling = isg.CouplingSpec.nearest_neighbor(2, float(P["J"]), float(P["h"]))
    recs = [_ISING_RECODINGS[r]() if r in _ISING_RECODINGS else recoding_by_name(r) for r in cfg.recodings]
    steps = int(P["steps"])
    topo = P["topology"]
    levels = list(range(L + 1))
    core = (slice(-(base // 2), base - base // 2),) * 2
    if P["init"] not in ("seeded", "up", "down"):
        raise InvalidArgument(f"unknown ising init {P['init']!r}")
    if P["rule"] not in isg.TIE_RULES:
        raise InvalidArgument(f"unknown tie rule {P['rule']!r}")

    def to_field(c):
        return Field(c.box, c.spins.astype(float))

    def from_field(f):
        return isg.SpinConfig(f.grid, np.rint(f.values).astype(np.int8))

    def core_of(c):
        idx = tuple(slice(s.start + n // 2, s.stop + n // 2) for s, n in zip(core, c.box.dims))
        return c.spins[idx].astype(float)

    def member(i):
        if P["init"] == "seeded":
            gen = isg.seeded_initial(int(np.random.default_rng([cfg.seed, i]).integers(2 ** 31)))
        else:
            gen = isg.constant_initial(1 if P["init"] == "up" else -1)
        rule = isg.TieBreakRule(P["rule"], seed=int(cfg.seed))
        outputs, gaps, diag = {}, [], {"cycles": {}}
        for pol in fam:
            outs, finals = [], []
            cyc = []
            for n in levels:
                c0 = isg.config_on(isg.BoxShape(pol.dims_at(n), topo), gen)
                ev = isg.evolve(c0, coupling, rule, steps)
                finals.append((c0, ev.final))
                outs.append(core_of(ev.final))
                cyc.append(ev.cycle)
            prow = []
            for r in recs:
                row = []
                for c0, fin in finals:
                    if r.is_identity:
                        row.append(0.0)
                        continue
                    moved = from_field(r(to_field(c0)))
                    lhs = isg.evolve(moved, coupling, rule, steps).final.spins
                    rhs = from_field(r(to_field(fin))).spins
                    row.append(float(np.mean(lhs != rhs)))
                prow.append(row)
            outputs[pol.id] = outs
            gaps.append(prow)
            diag["cycles"][pol.id] = cyc
        return {"outputs": outputs, "gaps": gaps, "diagnostics": diag}

    return levels, member, lambda a, b: float(np.mean(a != b))


def stage_quadrature(horizon, pol, n):
    """Trapezoid rule on ``{0, T} u`` the policy's stage-``n`` sample times."""
    t = np.unique(np.concatenate([[0.0], horizon * pol.samples_at(n), [horizon]]))
    dt = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return ptr.TimeGridQuadrature(horizon, t, w, f"trapezoid[{pol.id}:{n}]")


def _pointer_encoding(name, dim_e, seed):
    if name == "identity":
        return ptr.identity_encoding()
    if name == "env-random-unitary":
        return ptr.random_env_unitary_encoding(dim_e, seed, name)
    if name == "env-reverse":
        return ptr.env_permutation_encoding(np.arange(dim_e)[::-1], name)
    raise InvalidArgument(f"unknown environment encoding {name!r}")


def _custom_pointer_model(P):
    """Model from matrix files: ``H_file``, ``rho_s0_file``, ``h_env_file`` and a ``horizon``."""
    try:
        H = ptr.read_matrix(P["H_file"])
        rho_s0 = ptr.read_matrix(P["rho_s0_file"])
        h_env = ptr.read_matrix(P["h_env_file"])
    except KeyError as exc:
        raise InvalidArgument(f"custom pointer model needs {exc.args[0]}") from None
    except OSError as exc:
        raise InvalidArgument(f"cannot read matrix file: {exc}") from exc
    ds = rho_s0.shape[0]
    if ds != 2:
        raise InvalidArgument("custom models use the qubit menu; rho_s0 must be 2x2")
    if H.shape != (ds * h_env.shape[0],) * 2:
        raise InvalidArgument("H must act on system x environment")
    return ptr.PointerModel(ptr.check_hermitian(H, "H"), ptr.check_density(rho_s0), ptr.check_hermitian(h_env, "h_env"),
                            ptr.qubit_menu(), float(P.get("horizon", 1.0)), "custom")


def _pointer(cfg):
    P = cfg.params
    L = cfg.levels
    if P["model"] == "custom":
        model = _custom_pointer_model(P)
    else:
        model = ptr.preset(P["model"])
    fam = ptr.pointer_family(L, int(cfg.family["base_samples"]))
    encs = [_pointer_encoding(r, model.dim_e, cfg.seed) for r in cfg.recodings]
    levels = list(range(L + 1))
    T = model.horizon
    quads = {pol.id: [stage_quadrature(T, pol, n) for n in levels] for pol in fam}

    def phi_vector(rho_e, H, q):
        prop = ptr.Propagator(H)
        return np.array([ptr.decoherence_functional(B, rho_e, H, model.rho_s0, q, prop) for _, B in model.menu])

    def member(i):
        rng = _member_rng(cfg, i)
        beta = float(rng.uniform(*P["beta_range"]))
        rho_e = ptr.thermal_state(model.h_env, beta)
        outputs, gaps, diag = {}, [], {"beta": beta, "selected": {}}
        for pol in fam:
            outs = [phi_vector(rho_e, model.H, q) for q in quads[pol.id]]
            outputs[pol.id] = outs
            diag["selected"][pol.id] = model.menu.labels[int(np.argmin(outs[-1]))]
            prow = []
            for enc in encs:
                re, He = enc(rho_e, model.H, model.dim_s)
                prow.append([normalized_distance(phi_vector(re, He, q), o) for q, o in zip(quads[pol.id], outs)])
            gaps.append(prow)
        return {"outputs": outputs, "gaps": gaps, "diagnostics": diag}

    return levels, member, normalized_distance


def load_datum(path):
    """Cauchy datum from a text file: first row ``phi0``, second row ``phi1`` at cell centres."""
    try:
        arr = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidArgument(f"cannot read datum file {path}: {exc}") from exc
    if arr.shape[0] != 2 or arr.shape[1] < 4:
        raise InvalidArgument("datum file needs two rows of at least four samples")
    n = arr.shape[1]
    g = hz.make_grid((n,), spacing=hz.TWO_PI / n, topology=hz.PERIODIC)
    return hz.CauchyDatum(Field(g, arr[0]), Field(g, arr[1]), Path(path).stem)


def _horizon(cfg):
    P = cfg.params
    L = cfg.levels
    model = hz.make_model(float(P["kappa"]), P["potential"], float(P["strength"]), 0.0, float(P["v_max"]))
    fam = hz.horizon_family(2, int(cfg.family["base_samples"]))
    primary = P["scheme"]
    for s in (primary, *cfg.recodings):
        if s not in hz.SCHEMES:
            raise InvalidArgument(f"horizon recodings name schemes from {hz.SCHEMES}, got {s!r}")
    levels = list(range(1, L + 1))
    res = [int(P["base_resolution"]) * 2 ** n for n in levels]
    file_datum = load_datum(P["datum_file"]) if P.get("datum_file") else None

    def member(i):
        rng = _member_rng(cfg, i)
        d = hz.pulse(float(rng.uniform(0, hz.TWO_PI)), float(rng.uniform(0.4, 0.7)), 1.0,
                     ("right", "left")[int(rng.integers(2))])
        if P.get("datum_file"):
            d = file_datum
        outs, chosen = [], []
        for n in res:
            sel, _ = hz.run_pipeline(model, d, primary, n, fam)
            outs.append(sel.chosen.trace)
            chosen.append(sel.chosen.policy_id)
        prow = []
        for other in cfg.recodings:
            row = []
            for n, ta in zip(res, outs):
                sel, _ = hz.run_pipeline(model, d, other, n, fam)
                row.append(field_distance(ta, sel.chosen.trace) / (1.0 + ta.norm()))
            prow.append(row)
        return {"outputs": {primary: outs}, "gaps": [prow], "diagnostics": {"datum": d.name, "chosen": chosen}}

    def dist(a, b):
        up = Field(b.grid, hz._fourier_resample(a.values, b.grid.dims[0]))
        return field_distance(up, b) / (1.0 + b.norm())

    return levels, member, dist


RUNNERS = {"imaging": _imaging, "barrier": _barrier, "ising": _ising, "pointer": _pointer, "horizon": _horizon}


def run_protocol(cfg):
    """Run ``cfg`` and return its :class:`StabilityReport`.

    Member failures are recorded; :class:`QuorumFailure` is raised when fewer
    than ``cfg.quorum`` members survive.
    """
    if not isinstance(cfg, ProtocolConfig):
        cfg = ProtocolConfig.from_dict(cfg)
    started = time.time()
    levels, member_fn, dist = RUNNERS[cfg.protocol](cfg)
    outputs, gaps, members = [], [], []
    for i in range(cfg.ensemble_size):
        try:
            res = member_fn(i)
        except DPLabError as exc:
            outputs.append(None)
            gaps.append(None)
            members.append({"index": i, "ok": False, "error": f"{type(exc).__name__}: {exc}"})
            continue
        outputs.append(res["outputs"])
        gaps.append(res["gaps"])
        members.append({"index": i, "ok": True, **res["diagnostics"]})
    survivors = sum(m["ok"] for m in members)
    if survivors < cfg.quorum:
        raise QuorumFailure(f"{survivors} of {cfg.ensemble_size} members survived; quorum is {cfg.quorum}")
    ssi_seq = ssi(outputs, dist)
    sc_seq = sc(gaps)
    th = Thresholds(**cfg.thresholds)
    # a two-level run gives one SSI value, too short for a trend
    vs = {k: verdict(v, th) if len(v) >= 2 else "inconclusive" for k, v in (("ssi", ssi_seq), ("sc", sc_seq))}
    provenance = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "member_seeds": [[int(cfg.seed), i] for i in range(cfg.ensemble_size)],
        "survivors": survivors,
    }
    meta = {
        "started": started,
        "elapsed_s": time.time() - started,
        "python": platform.python_version(),
        "platform": platform.platform(),
    }
    return StabilityReport(cfg.protocol, levels, list(ssi_seq), list(sc_seq), combine_verdicts(*vs.values()),
                           vs, members, provenance, meta)
