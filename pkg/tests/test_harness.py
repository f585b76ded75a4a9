import json
import random

import numpy as np
import pytest

from dplab.exceptions import InvalidArgument, QuorumFailure
from dplab.harness import (
    PROTOCOLS,
    ProtocolConfig,
    Thresholds,
    combine_verdicts,
    invariant_selection,
    load_config,
    normalized_distance,
    run_protocol,
    sc,
    ssi,
    verdict,
)

QUICK = {
    "imaging": dict(ensemble_size=2, levels=3),
    "barrier": dict(ensemble_size=2, params={"ladder": [8, 16, 32]}),
    "ising": dict(ensemble_size=2),
    "pointer": dict(ensemble_size=3),
    "horizon": dict(ensemble_size=2),
}


# -- verdicts -------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "seq,expected",
    [
        ([0.4, 0.2, 0.1, 0.05], "decaying"),
        ([0.3, 0.29, 0.30, 0.29], "plateau"),
        ([0.3, 0.5, 0.1], "inconclusive"),
        ([0.0, 0.0, 0.0], "decaying"),
        ([1.0, np.nan], "inconclusive"),
    ],
)
def test_verdict_examples(seq, expected):
    assert verdict(seq) == expected


def test_verdict_needs_two_levels():
    with pytest.raises(InvalidArgument):
        verdict([0.1])


def test_verdict_thresholds_are_configurable():
    assert verdict([1.0, 0.7], {"ratio": 0.8}) == "decaying"
    assert verdict([1.0, 0.7]) == "inconclusive"


@pytest.mark.parametrize("kw", [dict(ratio=1.0), dict(ratio=0.0), dict(slack=-0.1), dict(floor=np.inf)])
def test_thresholds_validated(kw):
    with pytest.raises(InvalidArgument):
        Thresholds(**kw)


def test_combine_verdicts():
    assert combine_verdicts("decaying", "decaying") == "decaying"
    assert combine_verdicts("decaying", "plateau") == "plateau"
    assert combine_verdicts("decaying", "inconclusive") == "inconclusive"


# -- indices --------------------------------------------------------------------------------


def test_ssi_single_policy_is_its_curve():
    outs = [{"p": [np.zeros(4), np.ones(4), np.ones(4)]}]
    s = ssi(outs, normalized_distance)
    assert s[0] == normalized_distance(np.zeros(4), np.ones(4)) and s[1] == 0.0


def test_ssi_max_over_policies_mean_over_members():
    d = lambda a, b: abs(a - b)  # noqa: E731
    outs = [{"p": [0.0, 1.0], "q": [0.0, 3.0]}, None, {"p": [0.0, 5.0]}]
    assert ssi(outs, d).tolist() == [4.0]


def test_ssi_level_independent_outputs():
    f = np.full((4, 4), 2.0)
    assert np.all(ssi([{"a": [f, f, f]}], normalized_distance) == 0)


def test_sc_identity_only_is_zero():
    assert np.all(sc([np.zeros((3, 1, 4))]) == 0)


def test_sc_max_then_mean():
    g1 = np.array([[[0.1, 0.2], [0.3, 0.0]]])
    g2 = np.array([[[0.5, 0.0], [0.1, 0.0]]])
    assert np.allclose(sc([g1, g2, None]), [0.4, 0.1])


def test_indices_need_survivors():
    with pytest.raises(InvalidArgument):
        ssi([None], normalized_distance)
    with pytest.raises(InvalidArgument):
        sc([None])


# -- invariant selection --------------------------------------------------------------------


def swap(a, b):
    return {a: b, b: a}


def test_singleton_fibers_equivariant():
    fibers = {"x": ["a"], "y": ["b"]}
    _, rep = invariant_selection(fibers, {"a": 0, "b": 0}, [swap("a", "b")])
    assert rep.equivariant and not rep.tie_fibers


def test_equal_cost_swap_breaks_equivariance():
    fibers = {"x": ["a", "b"]}
    sel, rep = invariant_selection(fibers, {"a": 1.0, "b": 1.0}, [swap("a", "b")])
    assert sel["x"] == "a"
    assert not rep.equivariant and rep.tie_fibers == ["x"]


def test_invariant_distinct_costs_equivariant():
    fibers = {"x": ["a", "b"], "y": ["c", "d"]}
    cost = {"a": 0.0, "b": 1.0, "c": 0.0, "d": 1.0}
    _, rep = invariant_selection(fibers, cost, [{"a": "c", "c": "a", "b": "d", "d": "b"}])
    assert rep.equivariant


def test_empty_fiber_rejected():
    with pytest.raises(InvalidArgument):
        invariant_selection({"x": []}, {}, [])


def test_group_must_map_fibers_to_fibers():
    with pytest.raises(InvalidArgument):
        invariant_selection({"x": ["a", "b"], "y": ["c"]}, {"a": 0, "b": 1, "c": 0}, [swap("a", "c")])


def brute_equivariant(fibers, cost, group):
    sel = {x: min(sorted(ls), key=lambda l: cost[l]) for x, ls in fibers.items()}
    where = {frozenset(ls): x for x, ls in fibers.items()}
    for g in group:
        for x, ls in fibers.items():
            gx = where[frozenset(g.get(l, l) for l in ls)]
            if sel[gx] != g.get(sel[x], sel[x]):
                return False
    return True


@pytest.mark.parametrize("seed", range(25))
def test_equivariance_flag_matches_orbit_scan(seed):
    r = random.Random(seed)
    labels = list(range(12))
    r.shuffle(labels)
    fibers, i = {}, 0
    while i < len(labels):
        k = r.randint(1, 3)
        fibers[f"x{len(fibers)}"] = labels[i:i + k]
        i += k
    cost = {l: r.choice([0, 1, 2]) for l in labels}
    # random permutations of fibers that preserve fiber sizes
    group = []
    for _ in range(2):
        by_size = {}
        for ls in fibers.values():
            by_size.setdefault(len(ls), []).append(ls)
        g = {}
        for same in by_size.values():
            targets = same[:]
            r.shuffle(targets)
            for src, dst in zip(same, targets):
                dst = dst[:]
                r.shuffle(dst)
                g.update(zip(src, dst))
        group.append(g)
    _, rep = invariant_selection(fibers, cost, group)
    assert rep.equivariant == brute_equivariant(fibers, cost, group)


# -- configuration --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "data",
    [
        {"protocol": "tv"},
        {"protocol": "ising", "levels": 1},
        {"protocol": "ising", "ensemble_size": 0},
        {"protocol": "ising", "seed": 1.5},
        {"protocol": "ising", "quorum": 9},
        {"protocol": "ising", "colour": "red"},
        {"levels": 3},
        ["ising"],
    ],
)
def test_config_rejects(data):
    with pytest.raises(InvalidArgument):
        ProtocolConfig.from_dict(data)


def test_config_defaults_fill_in():
    cfg = ProtocolConfig("pointer", params={"beta_range": [0.5, 1.0]})
    assert cfg.params["model"] == "two-qubit-dephasing" and cfg.params["beta_range"] == [0.5, 1.0]


def test_config_hash_ignores_spelling():
    a = ProtocolConfig("ising", recodings=("flip",), params={"h": 0.0, "J": 1.0})
    b = ProtocolConfig.from_dict({"protocol": "ising", "recodings": ["flip"], "params": {"J": 1.0, "h": 0.0}})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ProtocolConfig("ising", seed=1).config_hash()


def test_config_hash_pinned():
    # sha256 of the canonical JSON; changes only if defaults change
    cfg = ProtocolConfig("ising")
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    import hashlib

    assert cfg.config_hash() == hashlib.sha256(blob.encode()).hexdigest()


def test_load_config_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("protocol: ising\nseed: 4\nparams:\n  steps: 5\n")
    cfg = load_config(p, seed=9)
    assert cfg.seed == 9 and cfg.params["steps"] == 5


def test_load_config_bad_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("protocol: [ising\n")
    with pytest.raises(InvalidArgument):
        load_config(p)


# -- runs --------------------------------------------------------------------------------------


@pytest.mark.parametrize("proto", PROTOCOLS)
def test_run_protocol_report_shape(proto):
    cfg = ProtocolConfig(proto, **QUICK[proto])
    rep = run_protocol(cfg)
    assert rep.levels and len(rep.sc) == len(rep.levels)
    assert all(v >= 0 for v in rep.ssi + rep.sc)
    assert rep.verdict in ("decaying", "plateau", "inconclusive")
    assert rep.provenance["config_hash"] == cfg.config_hash()


@pytest.mark.parametrize("proto", PROTOCOLS)
def test_run_protocol_deterministic(proto):
    cfg = ProtocolConfig(proto, seed=3, **QUICK[proto])
    assert run_protocol(cfg).to_json() == run_protocol(cfg).to_json()


def test_all_up_ising_is_degenerate():
    rep = run_protocol(ProtocolConfig("ising", ensemble_size=2, params={"init": "up"}))
    assert all(v == 0 for v in rep.ssi + rep.sc) and rep.verdict == "decaying"


def test_report_files(tmp_path):
    rep = run_protocol(ProtocolConfig("ising", ensemble_size=2))
    paths = rep.write(tmp_path)
    assert json.loads(paths["report"].read_text())["protocol"] == "ising"
    assert paths["ssi"].read_text().splitlines()[0] == "level,ssi"
    assert "elapsed_s" in json.loads(paths["metadata"].read_text())
    assert "elapsed_s" not in paths["report"].read_text()


def test_quorum_failure():
    cfg = ProtocolConfig("horizon", ensemble_size=2, params={"potential": "unstable", "strength": 4.0, "v_max": 10.0})
    with pytest.raises(QuorumFailure):
        run_protocol(cfg)


@pytest.mark.parametrize(
    "proto,params",
    [("ising", {"rule": "coin"}), ("ising", {"init": "warm"}), ("imaging", {"rule": "largest"}),
     ("pointer", {"model": "lindblad"}), ("horizon", {"potential": "kerr"})],
)
def test_bad_runner_params_are_invalid(proto, params):
    with pytest.raises(InvalidArgument):
        run_protocol(ProtocolConfig(proto, ensemble_size=1, params=params))


def test_imaging_least_rule_sits_at_ladder_floor():
    rep = run_protocol(ProtocolConfig("imaging", ensemble_size=1, levels=2))
    lams = rep.members[0]["lambda"]
    assert all(v == 1 / 1024 for row in lams.values() for v in row)
