"""Levenshtein distance and the 0-10 edit-distance similarity used by E: fields."""

from __future__ import annotations


def levenshtein(a: str, b: str) -> int:
    """Unit-cost Levenshtein distance.

    Bit-parallel (Myers 1999 / Hyyro 2001) over Python ints: one pass of a
    handful of integer operations per character of the longer string, so
    whole-score comparisons stay cheap without a C extension.
    """
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return len(a)
    peq = {}
    for i, ch in enumerate(b):
        peq[ch] = peq.get(ch, 0) | (1 << i)
    full = (1 << m) - 1
    top = 1 << (m - 1)
    pv, mv, score = full, 0, m
    for ch in a:
        eq = peq.get(ch, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = (mv | ~(xh | pv)) & full
        mh = pv & xh
        if ph & top:
            score += 1
        elif mh & top:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = (mh | ~(xv | ph)) & full
        mv = ph & xv
    return score


def similarity_e(a: str, b: str) -> int:
    """round(10 * (1 - lev/maxlen)) with half-up rounding; 10 for two empty strings."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 10
    same = longest - levenshtein(a, b)
    # floor(10*same/longest + 1/2) in integer arithmetic
    return (20 * same + longest) // (2 * longest)


def similarity_ratio(a: str, b: str) -> float:
    """1 - lev/maxlen as a float in [0, 1]; 1.0 for two empty strings."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest
