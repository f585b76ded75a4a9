"""Quantifier-prefix classification in the analytical and arithmetical hierarchies.

A prefix is written as whitespace-separated quantifiers followed by an opaque
matrix in brackets, e.g. ``"∀ρ:ℝ ∃m:ℕ ∀n:ℕ [matrix]"``.  ASCII spellings are
accepted too: ``A``/``forall`` and ``E``/``exists`` for the quantifiers, ``N``
and ``R`` (also ``Q``, ``Z``, ``nat``, ``real``) for the sorts.  Rationals and
integers count as number sorts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .exceptions import InvalidArgument, ParseError

FORALL, EXISTS = "A", "E"
NAT, REAL = "N", "R"
MODES = ("strict", "as-written")

_QUANT = {"∀": FORALL, "A": FORALL, "forall": FORALL, "∃": EXISTS, "E": EXISTS, "exists": EXISTS}
_SORT = {"ℕ": NAT, "N": NAT, "nat": NAT, "ℚ": NAT, "Q": NAT, "ℤ": NAT, "Z": NAT, "ℚ⁺": NAT,
         "ℝ": REAL, "R": REAL, "real": REAL, "ℕ^ℕ": REAL, "N^N": REAL, "𝒫": REAL}
_SUB = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")
_TOKEN = re.compile(r"(∀|∃|forall\b|exists\b|A\b|E\b)\s*([^\s:]*)\s*:\s*([^\s\[]+)")


@dataclass(frozen=True)
class Quantifier:
    polarity: str  # FORALL or EXISTS
    sort: str  # NAT or REAL
    var: str = ""


@dataclass(frozen=True)
class FormulaPrefix:
    tokens: tuple
    matrix: str = "matrix"

    def __post_init__(self):
        for q in self.tokens:
            if q.polarity not in (FORALL, EXISTS) or q.sort not in (NAT, REAL):
                raise InvalidArgument(f"bad quantifier {q!r}")

    @classmethod
    def from_kinds(cls, kinds):
        """Build from ``(polarity, sort)`` pairs."""
        return cls(tuple(Quantifier(p, s) for p, s in kinds))


@dataclass(frozen=True)
class Classification:
    mode: str
    analytical: bool  # True for a superscript-1 class
    level: int
    polarity: str  # "Σ", "Π" or "Δ" (quantifier-free)

    @property
    def label(self):
        return f"{self.polarity}{'¹' if self.analytical else '⁰'}{str(self.level).translate(_SUB)}"

    @property
    def arithmetical(self):
        return not self.analytical

    def __str__(self):
        if self.arithmetical and self.mode == "strict":
            return f"arithmetical ({self.label})"
        return self.label


def parse_prefix(text):
    """Parse ``text`` into a :class:`FormulaPrefix`; :class:`ParseError` carries the offset."""
    if not isinstance(text, str):
        raise InvalidArgument("prefix must be a string")
    pos, tokens = 0, []
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n or text[pos] == "[":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError("expected a quantifier such as '∀x:ℝ' or a bracketed matrix", pos)
        sort = _SORT.get(m.group(3))
        if sort is None:
            raise ParseError(f"unknown sort {m.group(3)!r}", m.start(3))
        tokens.append(Quantifier(_QUANT[m.group(1)], sort, m.group(2)))
        pos = m.end()
    matrix = "matrix"
    if pos < n:
        close = text.find("]", pos)
        if close < 0:
            raise ParseError("unterminated matrix bracket", pos)
        rest = text[close + 1:]
        if rest.strip():
            raise ParseError("trailing text after the matrix", close + 1 + len(rest) - len(rest.lstrip()))
        matrix = text[pos + 1:close]
        if any(c in matrix for c in "∀∃"):
            raise ParseError("the matrix must be quantifier-free", pos + 1)
    return FormulaPrefix(tuple(tokens), matrix)


def _blocks(pols):
    out = []
    for p in pols:
        if not out or out[-1] != p:
            out.append(p)
    return out


def _result(mode, analytical, blocks):
    if not blocks:
        return Classification(mode, analytical, 0, "Δ")
    return Classification(mode, analytical, len(blocks), "Σ" if blocks[0] == EXISTS else "Π")


def classify_prefix(prefix, mode="strict"):
    """Classify a prefix.

    ``strict``
        number quantifiers are absorbed; the level is the number of
        polarity blocks among real quantifiers.  Prefixes with no real
        quantifier are arithmetical, with level equal to their block count.
    ``as-written``
        from the first real quantifier onward, polarity blocks are counted
        over real quantifiers and over the first number block after the last
        real quantifier.  Later number quantifiers, and any before the first
        real one, stay in the matrix.
    """
    if isinstance(prefix, str):
        prefix = parse_prefix(prefix)
    if mode not in MODES:
        raise InvalidArgument(f"mode must be one of {MODES}")
    toks = prefix.tokens
    real_idx = [i for i, q in enumerate(toks) if q.sort == REAL]
    if not real_idx:
        return _result(mode, False, _blocks(q.polarity for q in toks))
    if mode == "strict":
        return _result(mode, True, _blocks(toks[i].polarity for i in real_idx))
    first, last = real_idx[0], real_idx[-1]
    seq = list(toks[first:last + 1])
    tail = toks[last + 1:]
    if tail:
        head = tail[0].polarity
        for q in tail:
            if q.polarity != head:
                break
            seq.append(q)
    return _result(mode, True, _blocks(q.polarity for q in seq))
