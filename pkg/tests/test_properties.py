"""Randomized checks of the stated invariants."""

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dplab import horizon as hz
from dplab.grid import PERIODIC, Field, RefinementPolicy, refine, symmetry_recodings, value_rescale
from dplab.harness import ProtocolConfig, Thresholds, verdict
from dplab.ising import TIE_RULES, CouplingSpec, SpinConfig, TieBreakRule, step, step_bruteforce
from dplab.pointer import check_density, evolve_state
from dplab.prefix import EXISTS, FORALL, NAT, REAL, FormulaPrefix, classify_prefix
from dplab.tv import ForwardOperator, tv

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, allow_subnormal=False)
square = st.integers(2, 7).flatmap(lambda n: arrays(float, (n, n), elements=finite))
spins = st.integers(3, 9).flatmap(
    lambda n: arrays(np.int8, (n, n), elements=st.sampled_from([-1, 1]))
)


# -- grid ------------------------------------------------------------------------------------


@given(square)
def test_symmetry_recodings_round_trip_bit_exact(a):
    f = Field.from_array(a)
    for r in symmetry_recodings(2):
        assert np.array_equal(r.inverse(r(f)).values, a)


@given(square, st.floats(0.1, 10), st.floats(-5, 5))
def test_rescale_round_trip_within_an_ulp(a, s, b):
    r = value_rescale(s, b)
    mid = r(Field.from_array(a)).values
    back = r.inverse(Field.from_array(mid)).values
    # one ulp of the intermediate, carried back through 1/s
    assert np.all(np.abs(back - a) <= 2 * np.spacing(np.abs(mid) + abs(b)) / s + np.spacing(np.abs(a)))
    if b == 0.0:
        assert np.all(np.abs(back - a) <= np.spacing(np.abs(a)))


@given(arrays(float, (4, 4), elements=st.floats(-10, 10)), st.integers(0, 2))
def test_conservative_refinement_keeps_mean(a, n):
    f = Field.from_array(a)
    g = refine(f, RefinementPolicy("c", "conservative", (4, 4), max_level=2), n)
    assert abs(g.mean() - f.mean()) <= 1e-12 * (1 + np.abs(a).max())


# -- tv -----------------------------------------------------------------------------------------


@given(square, finite)
def test_tv_shift_invariant_and_homogeneous(a, c):
    f = Field.from_array(a)
    base = tv(f)
    assert np.isclose(tv(Field.from_array(a + c)), base, rtol=1e-9, atol=1e-6)
    assert np.isclose(tv(Field.from_array(-2.0 * a)), 2.0 * base, rtol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from(["free", PERIODIC]))
def test_convolution_adjoint_identity(seed, topology):
    r = np.random.default_rng(seed)
    op = ForwardOperator.convolution(r.standard_normal((3, 3)))
    u, w = r.standard_normal((2, 8, 8))
    lhs = np.vdot(op.apply(u, topology), w)
    rhs = np.vdot(u, op.adjoint(w, topology))
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


# -- ising --------------------------------------------------------------------------------------

NN = CouplingSpec.nearest_neighbor()


@given(spins)
def test_flip_symmetry(s):
    c = SpinConfig.from_array(s)
    assert step(-c, NN, TieBreakRule("minus")) == -step(c, NN, TieBreakRule("plus"))


@given(spins, st.integers(0, 8), st.integers(0, 8))
def test_translation_commutes_on_torus(s, dx, dy):
    c = SpinConfig.from_array(s, PERIODIC)
    moved = c.with_spins(np.roll(c.spins, (dx, dy), axis=(0, 1)))
    assert np.array_equal(step(moved, NN).spins, np.roll(step(c, NN).spins, (dx, dy), axis=(0, 1)))


@given(spins, st.sampled_from(TIE_RULES), st.integers(0, 99))
def test_step_matches_bruteforce(s, rule, seed):
    c = SpinConfig.from_array(s)
    r = TieBreakRule(rule, seed=seed) if rule == "seeded-random" else TieBreakRule(rule)
    assert step(c, NN, r) == step_bruteforce(c, NN, r)


# -- pointer ------------------------------------------------------------------------------------


def hermitian(r, d):
    m = r.standard_normal((d, d)) + 1j * r.standard_normal((d, d))
    return m + m.conj().T


@given(st.integers(0, 10_000), st.integers(2, 6), st.floats(0, 50))
def test_evolution_keeps_trace_and_hermiticity(seed, d, t):
    r = np.random.default_rng(seed)
    v = r.standard_normal(d) + 1j * r.standard_normal(d)
    rho = np.outer(v, v.conj()) / np.vdot(v, v).real
    out = evolve_state(hermitian(r, d), rho, t)
    assert abs(np.trace(out) - 1) <= 1e-10
    assert np.abs(out - out.conj().T).max() <= 1e-10
    check_density(out)


# -- horizon ------------------------------------------------------------------------------------

_SOL = hz.evolve_interior(hz.make_model(kappa=0.5), hz.pulse(), "leapfrog", 32)


@given(st.lists(st.floats(0, 10), min_size=3, max_size=3))
def test_flux_additive_over_any_split(cuts):
    a, b, c = sorted(cuts)
    whole = hz.weighted_flux(_SOL, a, c)
    parts = hz.weighted_flux(_SOL, a, b) + hz.weighted_flux(_SOL, b, c)
    assert np.isclose(parts, whole, rtol=1e-12, atol=1e-14)


# -- harness ------------------------------------------------------------------------------------

index_seq = st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=6)


@given(index_seq, st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_verdict_monotone(seq, shrink):
    smaller = [x * s for x, s in zip(seq, shrink)]
    if verdict(seq) == "decaying":
        assert verdict(smaller) != "plateau"


@given(index_seq, st.floats(1e-3, 1e3))
def test_verdict_scale_free_above_floor(seq, c):
    assume(min(seq) > 1e-6 and min(seq) * c > 1e-6)
    t = Thresholds(floor=1e-9)
    assert verdict(seq, t) == verdict([x * c for x in seq], t)


@given(
    st.sampled_from(["imaging", "barrier", "ising", "pointer", "horizon"]),
    st.integers(0, 2**31),
    st.integers(1, 8),
    st.integers(2, 6),
)
def test_config_dict_round_trip(proto, seed, size, levels):
    cfg = ProtocolConfig(proto, seed=seed, ensemble_size=size, levels=levels)
    again = ProtocolConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict() and again.config_hash() == cfg.config_hash()


# -- prefix -------------------------------------------------------------------------------------

kinds = st.lists(st.tuples(st.sampled_from([FORALL, EXISTS]), st.sampled_from([NAT, REAL])), max_size=8)


@given(kinds)
def test_strict_never_exceeds_as_written(seq):
    p = FormulaPrefix.from_kinds(seq)
    s, w = classify_prefix(p, "strict"), classify_prefix(p, "as-written")
    assert s.analytical == w.analytical
    assert s.level <= w.level


@given(kinds)
def test_dropping_trailing_numbers_keeps_strict_class(seq):
    p = FormulaPrefix.from_kinds(seq)
    assume(any(s == REAL for _, s in seq))
    extended = FormulaPrefix.from_kinds(list(seq) + [(FORALL, NAT), (EXISTS, NAT)])
    assert classify_prefix(p, "strict") == classify_prefix(extended, "strict")


@given(kinds)
def test_text_round_trip(seq):
    sym = {FORALL: "∀", EXISTS: "∃", NAT: "ℕ", REAL: "ℝ"}
    text = " ".join(f"{sym[p]}x{i}:{sym[s]}" for i, (p, s) in enumerate(seq)) + " [m]"
    for mode in ("strict", "as-written"):
        assert classify_prefix(text, mode) == classify_prefix(FormulaPrefix.from_kinds(seq), mode)
