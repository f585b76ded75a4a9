from collections import deque
from itertools import product

import pytest

from dplab.exceptions import InvalidArgument, ParseError
from dplab.prefix import EXISTS, FORALL, NAT, REAL, FormulaPrefix, classify_prefix, parse_prefix

KINDS = [(p, s) for p in (FORALL, EXISTS) for s in (NAT, REAL)]


def _rewrites(seq):
    """One-step equivalences of a prefix written as ``((polarity, sort), ...)``."""
    out = []
    n = len(seq)
    for i in range(n):
        p, s = seq[i]
        if s != NAT:
            continue
        # a number quantifier beside a real one of the same polarity contracts into it
        for j in (i - 1, i + 1):
            if 0 <= j < n and seq[j] == (p, REAL):
                out.append(seq[:i] + seq[i + 1:])
        # countable choice moves it past a real quantifier of the other polarity
        if i + 1 < n and seq[i + 1][1] == REAL and seq[i + 1][0] != p:
            out.append(seq[:i] + (seq[i + 1], seq[i]) + seq[i + 2:])
        # after the last real quantifier it belongs to the matrix
        if all(q[1] == NAT for q in seq[i:]):
            out.append(seq[:i] + seq[i + 1:])
    return out


def _blocks(pols):
    b = []
    for p in pols:
        if not b or b[-1] != p:
            b.append(p)
    return b


def oracle(seq):
    """Least real-block count over every rewrite-reachable number-free form."""
    seq = tuple(seq)
    if all(s == NAT for _, s in seq):
        b = _blocks(p for p, _ in seq)
        return ("arith", len(b), b[0] if b else None)
    seen = {seq}
    queue = deque([seq])
    best = None
    while queue:
        cur = queue.popleft()
        if all(s == REAL for _, s in cur):
            b = _blocks(p for p, _ in cur)
            key = (len(b), b[0])
            best = key if best is None or key[0] < best[0] else best
        for nxt in _rewrites(cur):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return ("analytic",) + best


@pytest.mark.parametrize("length", range(5))
def test_strict_matches_rewrite_oracle(length):
    for seq in product(KINDS, repeat=length):
        c = classify_prefix(FormulaPrefix.from_kinds(seq), "strict")
        kind, level, lead = oracle(seq)
        assert c.analytical == (kind == "analytic"), seq
        assert c.level == level, seq
        if level:
            assert c.polarity == ("Σ" if lead == EXISTS else "Π"), seq
        else:
            assert c.polarity == "Δ"


def test_oracle_covers_256_length_four_prefixes():
    assert len(list(product(KINDS, repeat=4))) == 256


# -- anchored examples -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "text,strict,written",
    [
        ("∀ρ:ℝ ∃m:ℕ ∀n:ℕ [matrix]", "Π¹₁", "Π¹₂"),
        ("∃f:ℝ ∀n:ℕ ∃m:ℕ ∀k:ℕ [matrix]", "Σ¹₁", "Σ¹₂"),
        ("∀n:ℕ ∃m:ℕ [matrix]", "arithmetical (Π⁰₂)", "Π⁰₂"),
    ],
)
def test_anchored_examples(text, strict, written):
    assert str(classify_prefix(text, "strict")) == strict
    assert str(classify_prefix(text, "as-written")) == written


def test_empty_prefix_is_quantifier_free():
    c = classify_prefix("[x = 0]")
    assert c.level == 0 and c.label == "Δ⁰₀"


def test_number_quantifiers_between_reals_collapse():
    assert classify_prefix("∀f:ℝ ∃n:ℕ ∀g:ℝ [m]").label == "Π¹₁"
    assert classify_prefix("∀f:ℝ ∃h:ℝ ∀g:ℝ [m]").label == "Π¹₃"


def test_as_written_ignores_leading_numbers():
    assert classify_prefix("∃n:ℕ ∀f:ℝ [m]", "as-written").label == "Π¹₁"


# -- parsing ------------------------------------------------------------------------------------


def test_ascii_spellings():
    a = parse_prefix("A rho:R E m:N forall n:nat [m]")
    b = parse_prefix("∀ρ:ℝ ∃m:ℕ ∀n:ℕ [m]")
    assert [(q.polarity, q.sort) for q in a.tokens] == [(q.polarity, q.sort) for q in b.tokens]


def test_rationals_count_as_numbers():
    p = parse_prefix("∃q:ℚ⁺ ∀x:𝒫 [m]")
    assert [q.sort for q in p.tokens] == [NAT, REAL]


def test_matrix_text_kept():
    assert parse_prefix("∀n:ℕ [n + 1 > n]").matrix == "n + 1 > n"


@pytest.mark.parametrize(
    "text,pos",
    [("∀x ℝ [m]", 0), ("∀x:ℂ [m]", 3), ("∀x:ℝ [m", 5), ("∀x:ℝ [m] tail", 9), ("∀x:ℝ [∃y]", 6), ("?", 0)],
)
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(ParseError) as exc:
        parse_prefix(text)
    assert exc.value.position == pos


def test_bad_mode():
    with pytest.raises(InvalidArgument):
        classify_prefix("∀n:ℕ [m]", "loose")


def test_bad_quantifier_tokens():
    with pytest.raises(InvalidArgument):
        FormulaPrefix.from_kinds([("B", NAT)])
