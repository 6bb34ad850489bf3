"""Independent reference implementations used as test oracles.

Everything here is deliberately naive and transparent: words are tuples of
letters, tensors are dicts mapping words to floats, and enumeration is
brute force. None of it imports the package under test.
"""

import itertools
import math
from fractions import Fraction

import numpy as np


def words_up_to(d, m):
    """All words over {1..d} of length 0..m (length-0 word is ())."""
    out = [()]
    for k in range(1, m + 1):
        out.extend(itertools.product(range(1, d + 1), repeat=k))
    return out


def dict_mul(a, b, m):
    """Concatenation (tensor) product of word->coeff dicts, truncated at m."""
    out = {}
    for wa, ca in a.items():
        for wb, cb in b.items():
            w = wa + wb
            if len(w) <= m:
                out[w] = out.get(w, 0.0) + ca * cb
    return out


def dict_add(a, b, scale=1.0):
    out = dict(a)
    for w, c in b.items():
        out[w] = out.get(w, 0.0) + scale * c
    return out


def dict_exp(a, m):
    """exp of a dict with no empty-word term, truncated at level m."""
    assert a.get((), 0.0) == 0.0
    out = {(): 1.0}
    power = {(): 1.0}
    for n in range(1, m + 1):
        power = dict_mul(power, a, m)
        out = dict_add(out, power, 1.0 / math.factorial(n))
    return out


def dict_log(g, m):
    """log of a dict with empty-word coefficient 1, truncated at level m."""
    u = dict(g)
    u[()] = u.get((), 0.0) - 1.0
    out = {}
    power = {(): 1.0}
    for n in range(1, m + 1):
        power = dict_mul(power, u, m)
        out = dict_add(out, power, (-1.0) ** (n - 1) / n)
    return out


def dict_signature(values, m):
    """Signature of the piecewise-linear path through `values` (ell, d)."""
    values = np.asarray(values, dtype=float)
    d = values.shape[1]
    sig = {(): 1.0}
    for i in range(len(values) - 1):
        delta = values[i + 1] - values[i]
        seg = {(k + 1,): delta[k] for k in range(d)}
        sig = dict_mul(sig, dict_exp(seg, m), m)
    return sig


def dict_inner(a, b):
    return sum(c * b.get(w, 0.0) for w, c in a.items())


def dict_to_array(a, d, m):
    """Flatten a word dict into the dense per-level rank order."""
    sizes = [d**k for k in range(m + 1)]
    out = np.zeros(sum(sizes))
    offs = np.cumsum([0] + sizes)
    for w, c in a.items():
        k = len(w)
        if k > m:
            continue
        rank = 0
        for letter in w:
            rank = rank * d + (letter - 1)
        out[offs[k] + rank] = c
    return out


def brute_lyndon(d, m):
    """Lyndon words of length <= m by rotation-minimality, (length, lex) order."""
    found = []
    for k in range(1, m + 1):
        for w in itertools.product(range(1, d + 1), repeat=k):
            rots = [w[i:] + w[:i] for i in range(1, k)]
            if all(w < r for r in rots):
                found.append(w)
    found.sort(key=lambda w: (len(w), w))
    return found


# Mobius function values needed for Witt counts at m <= 6.
MOBIUS = {1: 1, 2: -1, 3: -1, 4: 0, 5: -1, 6: 1}


def witt_count(d, k):
    """Number of Lyndon words of length k over d letters."""
    total = 0
    for e in range(1, k + 1):
        if k % e == 0:
            total += MOBIUS[e] * d ** (k // e)
    return total // k


def series_linear_kernel(c, terms=31):
    """Signature kernel of two linear segments with <dx, dy> = c.

    Exact rational partial sum of sum_k c^k / (k!)^2, returned as float.
    """
    s = sum(Fraction(c) ** k / Fraction(math.factorial(k)) ** 2 for k in range(terms))
    return float(s)
