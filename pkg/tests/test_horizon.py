import numpy as np
import pytest

from dplab.exceptions import EvolutionBlowup, InadmissibleDatum, InvalidArgument, NoTameContinuation
from dplab.grid import Field, make_grid, PERIODIC
from dplab import horizon as hz

FLAT = hz.make_model(kappa=0.0, potential="zero", v_max=2 * np.pi)
TOY = hz.make_model(kappa=0.5, potential="decaying", v_max=6.0)


def orders(errs):
    e = np.asarray(errs, float)
    return np.log2(e[:-1] / e[1:])


def synthetic(phi_of_v, n_v=4001, n_x=16, kappa=0.0, v_max=2 * np.pi):
    """Solution object holding an analytic x-uniform field."""
    model = hz.make_model(kappa=kappa, potential="zero", v_max=v_max)
    v = np.linspace(0.0, v_max, n_v)
    f, fv = phi_of_v
    phi = np.repeat(f(v)[:, None], n_x, axis=1)
    phi_v = np.repeat(fv(v)[:, None], n_x, axis=1)
    return hz.Solution(model, "leapfrog", n_x, v, phi, phi_v)


# -- model and data -------------------------------------------------------------------------


def test_model_invariants():
    with pytest.raises(InvalidArgument):
        hz.make_model(kappa=-0.1)
    with pytest.raises(InvalidArgument):
        hz.make_model(v0=2.0, v_max=1.0)
    with pytest.raises(InvalidArgument):
        hz.potential_preset("kerr")


def test_fourier_resample_reproduces_band_limited():
    x32 = hz.x_nodes(32)
    f = lambda x: np.cos(3 * x) + 0.2 * np.sin(7 * x)  # noqa: E731
    stored = Field(make_grid((32,), 2 * np.pi / 32, PERIODIC), f(x32))
    p0, _ = hz.CauchyDatum(stored, lambda x: 0 * x).at_resolution(96)
    assert np.allclose(p0, f(hz.x_nodes(96)), atol=1e-12)


def test_datum_norm_scales():
    d = hz.pulse()
    assert np.isclose(d.scaled(3.0).norm(), 3.0 * d.norm())
    assert hz.zero_datum().norm() == 0.0


def test_pulse_rejects_direction():
    with pytest.raises(InvalidArgument):
        hz.pulse(direction="up")


# -- evolution -------------------------------------------------------------------------------


@pytest.mark.parametrize("scheme", hz.SCHEMES)
def test_zero_datum_stays_zero(scheme):
    s = hz.evolve_interior(TOY, hz.zero_datum(), scheme, 32)
    assert not s.phi.any()


@pytest.mark.parametrize("scheme", hz.SCHEMES)
def test_dalembert_translation(scheme):
    errs = []
    for n in (64, 128, 256):
        s = hz.evolve_interior(FLAT, hz.pulse(direction="right"), scheme, n)
        exact = np.exp((np.cos(s.x - 2.0 - np.pi) - 1) / 0.25)
        errs.append(np.abs(s.slice(2.0) - exact).max())
    assert np.all(orders(errs) >= 1.8)


@pytest.mark.parametrize("scheme", hz.SCHEMES)
def test_mass_dispersion(scheme):
    mm = hz.make_model(kappa=0.0, potential="mass", strength=1.0, v_max=5.0)
    k, om = 2, np.sqrt(5.0)
    errs = []
    for n in (64, 128, 256):
        s = hz.evolve_interior(mm, hz.fourier_mode(k, omega=om), scheme, n)
        errs.append(np.abs(s.slice(4.0) - np.cos(k * s.x - om * 4.0)).max())
    assert np.all(orders(errs) >= 1.8)


@pytest.mark.parametrize("scheme", hz.SCHEMES)
def test_flat_energy_conservation_order(scheme):
    d = hz.pulse(direction="still")
    drift = [hz.energy_drift(hz.evolve_interior(FLAT, d, scheme, n)) for n in (64, 128, 256)]
    assert np.all(orders(drift) >= 1.9)


@pytest.mark.parametrize("scheme", hz.SCHEMES)
def test_linearity(scheme):
    a, b = hz.pulse(), hz.fourier_mode(3)
    s1 = hz.evolve_interior(TOY, a, scheme, 64)
    s2 = hz.evolve_interior(TOY, b, scheme, 64)
    s3 = hz.evolve_interior(TOY, hz.linear_combination([(2.5, a), (1.0, b)]), scheme, 64)
    assert np.abs(s3.phi - 2.5 * s1.phi - s2.phi).max() <= 1e-10


def test_energy_bounded_by_gronwall():
    s = hz.evolve_interior(hz.make_model(kappa=0.0, potential="decaying", strength=1.0, v_max=4.0),
                           hz.pulse(), "leapfrog", 64)
    E = s.energy()
    C = s.model.sup_v
    assert np.all(E <= E[0] * np.exp(2 * C * (s.v - s.v[0])) + 1e-12)


@pytest.mark.parametrize("kw", [dict(scheme="euler"), dict(resolution=4), dict(cfl=1.5),
                                dict(scheme="characteristic", cfl=0.5)])
def test_evolution_rejects_bad_setup(kw):
    args = dict(scheme="leapfrog", resolution=32)
    args.update(kw)
    with pytest.raises(InvalidArgument):
        hz.evolve_interior(FLAT, hz.pulse(), **args)


def test_blowup_reports_step():
    wild = hz.make_model(kappa=0.0, potential="unstable", strength=1e6, v_max=200.0)
    with pytest.raises(EvolutionBlowup) as exc:
        hz.evolve_interior(wild, hz.fourier_mode(1, omega=0.0), "leapfrog", 16)
    assert exc.value.step > 0


# -- flux -------------------------------------------------------------------------------------


def test_flux_zero_field():
    s = synthetic((lambda v: 0 * v, lambda v: 0 * v))
    assert hz.weighted_flux(s, 0.0, 2 * np.pi) == 0.0


def test_flux_static_field():
    s = hz.evolve_interior(FLAT, hz.CauchyDatum(lambda x: np.zeros_like(x) + 1.0, lambda x: 0 * x), "leapfrog", 32)
    assert hz.weighted_flux(s, 0.0, 2.0) == 0.0


def test_flux_of_sin_v():
    s = synthetic((np.sin, np.cos))
    assert np.isclose(hz.weighted_flux(s, 0.0, 2 * np.pi), np.pi * 2 * np.pi, rtol=1e-6)


def test_flux_additive(rng):
    s = hz.evolve_interior(TOY, hz.pulse(), "leapfrog", 64)
    a, b, c = np.sort(rng.uniform(0, 6, 3))
    whole = hz.weighted_flux(s, a, c)
    assert np.isclose(hz.weighted_flux(s, a, b) + hz.weighted_flux(s, b, c), whole, rtol=1e-13)


def test_flux_tail_zero_and_admissible():
    t = hz.flux_tail(hz.evolve_interior(TOY, hz.zero_datum(), "leapfrog", 32))
    assert t.value == 0.0 and t.admissible


def test_dispersing_pulse_admissible_at_two_resolutions():
    weak = hz.make_model(kappa=0.1, potential="zero", v_max=6.0)
    for n in (64, 128):
        assert hz.flux_tail(hz.evolve_interior(weak, hz.pulse(direction="still"), "leapfrog", n)).admissible


def test_unstable_mode_inadmissible():
    u = hz.make_model(kappa=0.5, potential="unstable", strength=4.0, v_max=10.0)
    s = hz.evolve_interior(u, hz.fourier_mode(1, omega=0.0), "leapfrog", 64)
    assert not hz.flux_tail(s).admissible
    with pytest.raises(InadmissibleDatum):
        hz.extract_traces(s, hz.horizon_family())


# -- weighted energy identity -----------------------------------------------------------------


def test_identity_residual_zero_field():
    assert hz.energy_identity_residual(hz.evolve_interior(TOY, hz.zero_datum(), "leapfrog", 32), 1.0, 5.0) == 0.0


def test_identity_residual_flat_is_energy_error():
    d = hz.pulse(direction="still")
    for n in (64, 128):
        s = hz.evolve_interior(FLAT, d, "leapfrog", n)
        assert np.isclose(hz.energy_identity_residual(s, 0.0, 6.0), hz.energy_drift(s), rtol=1e-12)


@pytest.mark.parametrize("scheme", hz.SCHEMES)
def test_identity_residual_converges(scheme):
    r = [hz.energy_identity_residual(hz.evolve_interior(TOY, hz.pulse(), scheme, n), 1.0, 5.0)
         for n in (64, 128, 256)]
    assert np.all(orders(r) >= 0.9)


def test_identity_residual_rejects_bad_slab():
    s = hz.evolve_interior(TOY, hz.pulse(), "leapfrog", 32)
    with pytest.raises(InvalidArgument):
        hz.energy_identity_residual(s, 5.0, 1.0)


# -- traces and selection --------------------------------------------------------------------------


def cand(pid, e0=1.0, phi1=1.0, values=None, dev=()):
    g = make_grid((8,), 2 * np.pi / 8, PERIODIC)
    v = np.zeros(8) if values is None else np.asarray(values, float)
    return hz.TraceCandidate(Field(g, v), pid, 6.0, 1.0, e0, phi1, np.asarray(dev, float))


def test_zero_datum_traces_are_zero():
    s = hz.evolve_interior(TOY, hz.zero_datum(), "leapfrog", 32)
    cands = hz.extract_traces(s, hz.horizon_family())
    assert len(cands) == 3 and all(not c.trace.values.any() for c in cands)


def test_static_solution_traces_agree():
    s = hz.evolve_interior(FLAT, hz.CauchyDatum(lambda x: 0 * x + 2.0, lambda x: 0 * x), "leapfrog", 32)
    cands = hz.extract_traces(s, hz.horizon_family())
    assert all(np.array_equal(c.trace.values, cands[0].trace.values) for c in cands)


def test_candidates_differ_within_flux_bound():
    s = hz.evolve_interior(TOY, hz.pulse(), "leapfrog", 64)
    cands = hz.extract_traces(s, hz.horizon_family())
    assert len({c.v_extract for c in cands}) > 1
    for a in cands:
        for b in cands:
            lo, hi = sorted((a.v_extract, b.v_extract))
            if hi == lo:
                continue
            # |phi(hi) - phi(lo)| <= sqrt((hi - lo) * int |phi_v|^2) by Cauchy-Schwarz
            flux = hz.weighted_flux(s, lo, hi) * np.exp(-s.model.kappa * lo)
            diff = np.sqrt(np.sum((a.trace.values - b.trace.values) ** 2) * s.dx)
            # slack covers Hermite slices against a trapezoid flux
            assert diff <= np.sqrt((hi - lo) * flux) * 1.01 + 1e-12


def test_single_candidate_chosen():
    out = hz.select_continuation([cand("a")])
    assert out.chosen.policy_id == "a" and out.tie_set_size == 1 and out.ut_passed


def test_lower_phi1_wins_on_equal_e0():
    out = hz.select_continuation([cand("a", phi1=2.0), cand("b", phi1=1.0)])
    assert out.chosen.policy_id == "b"


def test_lower_e0_dominates_phi1():
    out = hz.select_continuation([cand("a", e0=1.0, phi1=0.0), cand("b", e0=0.5, phi1=9.0)])
    assert out.chosen.policy_id == "b"


def test_identical_candidates_first_policy():
    out = hz.select_continuation([cand("first"), cand("second")])
    assert out.chosen.policy_id == "first" and out.tie_set_size == 2


def test_untame_candidates_filtered():
    wild = cand("wild", e0=0.0, dev=[5.0, 5.0])
    out = hz.select_continuation([wild, cand("calm", e0=1.0, dev=[0.1])])
    assert out.chosen.policy_id == "calm"
    with pytest.raises(NoTameContinuation):
        hz.select_continuation([wild])
    with pytest.raises(InvalidArgument):
        hz.select_continuation([])


def test_selection_idempotent():
    s = hz.evolve_interior(TOY, hz.pulse(), "leapfrog", 64)
    first = hz.select_continuation(hz.extract_traces(s, hz.horizon_family()))
    again = hz.select_continuation([first.chosen])
    assert again.chosen is first.chosen


def test_trace_candidate_needs_finite_flux():
    with pytest.raises(InvalidArgument):
        hz.TraceCandidate(cand("x").trace, "x", 1.0, np.inf)


# -- cross-pipeline divergence ----------------------------------------------------------------------


def test_same_scheme_divergence_zero():
    d = hz.cross_pipeline_divergence(TOY, hz.pulse(), "leapfrog", "leapfrog", (32, 64))
    assert np.all(d == 0)


def test_zero_datum_divergence_zero():
    assert np.all(hz.cross_pipeline_divergence(TOY, hz.zero_datum(), resolutions=(32, 64)) == 0)


def test_leapfrog_vs_characteristic_converge():
    d = hz.cross_pipeline_divergence(TOY, hz.pulse(), resolutions=(64, 128, 256))
    assert np.all(np.diff(d) < 0) and np.all(orders(d) >= 1.0)
