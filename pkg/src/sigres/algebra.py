"""Truncated tensor algebra, Lyndon bases, and path signatures.

Tensors truncated at level m over R^d use dense per-level storage: one flat
float64 block per level k holding the d^k word coefficients in base-d rank
order (word (i_1..i_k) sits at rank sum (i_j - 1) d^(k-j)). Levels fill in
completely under Chen products, so dense blocks beat sparse maps at the
small m (<= 5) used throughout.

Paths are always piecewise linear through their sample points; a signature
is the Chen product of the segment exponentials, so it depends on the value
increments only (reparameterization invariance is structural).

The Lyndon basis of the free Lie algebra is fixed once per (d, m) and
cached: Lyndon words in (length, lex) order, bracketed by the standard
factorization (longest proper Lyndon suffix), expanded into tensor
coordinates, with the resulting unitriangular change of basis inverted for
log-signature projection.
"""

import functools
import threading
from dataclasses import dataclass, field

import numpy as np

from . import backend

if backend.HAS_NUMBA:
    from numba import njit

_MAX_COORDS = 50_000_000  # refuse tensor allocations past this many coefficients


class DimensionMismatchError(ValueError):
    """Operands live in different truncated algebras."""


@functools.lru_cache(maxsize=None)
def level_offsets(d: int, m: int) -> np.ndarray:
    """Start offset of each level's block in the flat vector; length m+2."""
    if d < 1 or m < 0:
        raise ValueError(f"need d >= 1 and m >= 0, got d={d}, m={m}")
    sizes = [d**k for k in range(m + 1)]
    total = sum(sizes)
    if total > _MAX_COORDS:
        raise ValueError(
            f"truncated algebra with d={d}, m={m} needs {total} coefficients"
        )
    offs = np.zeros(m + 2, dtype=np.int64)
    np.cumsum(sizes, out=offs[1:])
    offs.setflags(write=False)
    return offs


@dataclass(frozen=True, order=True)
class Word:
    """A word over the alphabet {1..d}; compares lexicographically."""

    letters: tuple

    def __post_init__(self):
        if any(not isinstance(l, int) or l < 1 for l in self.letters):
            raise ValueError(f"letters must be positive integers: {self.letters}")

    def __len__(self):
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __str__(self):
        if all(l <= 9 for l in self.letters):
            return "".join(str(l) for l in self.letters)
        return ".".join(str(l) for l in self.letters)

    def rank(self, d: int) -> int:
        """Base-d rank of the word within its level."""
        r = 0
        for l in self.letters:
            if l > d:
                raise ValueError(f"letter {l} outside alphabet of size {d}")
            r = r * d + (l - 1)
        return r


class TruncatedTensor:
    """An element of T^m(R^d) with dense per-level float64 coefficients.

    Immutable: the flat coefficient vector is write-protected after
    construction. Arithmetic returns new instances.
    """

    __slots__ = ("dim", "level", "coeffs")

    def __init__(self, dim, level, coeffs=None):
        offs = level_offsets(dim, level)
        total = int(offs[-1])
        if coeffs is None:
            flat = np.zeros(total)
        else:
            flat = np.array(coeffs, dtype=np.float64).reshape(total)
        flat.setflags(write=False)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "coeffs", flat)

    def __setattr__(self, name, value):
        raise AttributeError("TruncatedTensor is immutable")

    @classmethod
    def zero(cls, dim, level):
        return cls(dim, level)

    @classmethod
    def unit(cls, dim, level):
        t = np.zeros(int(level_offsets(dim, level)[-1]))
        t[0] = 1.0
        return cls(dim, level, t)

    @classmethod
    def from_word(cls, dim, level, word, coeff=1.0):
        word = word if isinstance(word, Word) else Word(tuple(word))
        if len(word) > level:
            raise ValueError(f"word {word} longer than truncation level {level}")
        offs = level_offsets(dim, level)
        t = np.zeros(int(offs[-1]))
        t[int(offs[len(word)]) + word.rank(dim)] = coeff
        return cls(dim, level, t)

    @classmethod
    def from_levels(cls, dim, level, blocks):
        """Build from a list of per-level arrays (block k has d^k entries)."""
        offs = level_offsets(dim, level)
        t = np.zeros(int(offs[-1]))
        for k, blk in enumerate(blocks):
            blk = np.asarray(blk, dtype=np.float64).ravel()
            if blk.size != offs[k + 1] - offs[k]:
                raise ValueError(f"level {k} block has size {blk.size}")
            t[offs[k] : offs[k + 1]] = blk
        return cls(dim, level, t)

    def level_block(self, k):
        """Read-only view of level k's coefficients (d^k entries)."""
        if not 0 <= k <= self.level:
            raise ValueError(f"level {k} outside 0..{self.level}")
        offs = level_offsets(self.dim, self.level)
        return self.coeffs[offs[k] : offs[k + 1]]

    def get(self, word):
        word = word if isinstance(word, Word) else Word(tuple(word))
        return float(self.level_block(len(word))[word.rank(self.dim)])

    def level_norm(self, k):
        return float(np.linalg.norm(self.level_block(k)))

    def _check_match(self, other):
        if self.dim != other.dim or self.level != other.level:
            raise DimensionMismatchError(
                f"(d={self.dim}, m={self.level}) vs (d={other.dim}, m={other.level})"
            )

    def __add__(self, other):
        self._check_match(other)
        return TruncatedTensor(self.dim, self.level, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_match(other)
        return TruncatedTensor(self.dim, self.level, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return TruncatedTensor(self.dim, self.level, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"TruncatedTensor(d={self.dim}, m={self.level})"


# ---------------------------------------------------------------------------
# Hot kernels: numba versions and pure-numpy fallbacks.

if backend.HAS_NUMBA:

    @njit(cache=True)
    def _chen_nb(a, b, out, m, offs):
        for k in range(m + 1):
            ok = offs[k]
            for i in range(k + 1):
                j = k - i
                oa = offs[i]
                ob = offs[j]
                na = offs[i + 1] - oa
                nb = offs[j + 1] - ob
                for p in range(na):
                    ap = a[oa + p]
                    if ap != 0.0:
                        base = ok + p * nb
                        for q in range(nb):
                            out[base + q] += ap * b[ob + q]

    @njit(cache=True)
    def _segment_exp_nb(delta, m, offs, seg):
        d = delta.shape[0]
        seg[:] = 0.0
        seg[0] = 1.0
        if m >= 1:
            for q in range(d):
                seg[offs[1] + q] = delta[q]
            for k in range(2, m + 1):
                po = offs[k - 1]
                co = offs[k]
                pn = offs[k] - offs[k - 1]
                inv = 1.0 / k
                for p in range(pn):
                    vp = seg[po + p] * inv
                    base = co + p * d
                    for q in range(d):
                        seg[base + q] = vp * delta[q]

    @njit(cache=True)
    def _signature_nb(incs, m, offs):
        total = offs[m + 1]
        acc = np.zeros(total)
        acc[0] = 1.0
        seg = np.empty(total)
        tmp = np.empty(total)
        for s in range(incs.shape[0]):
            _segment_exp_nb(incs[s], m, offs, seg)
            tmp[:] = 0.0
            _chen_nb(acc, seg, tmp, m, offs)
            acc[:] = tmp
        return acc


def _chen_np(a, b, out, m, offs):
    for k in range(m + 1):
        for i in range(k + 1):
            j = k - i
            ai = a[offs[i] : offs[i + 1]]
            bj = b[offs[j] : offs[j + 1]]
            out[offs[k] : offs[k + 1]] += np.multiply.outer(ai, bj).ravel()


def _segment_exp_np(delta, m, offs, seg):
    d = delta.shape[0]
    seg[:] = 0.0
    seg[0] = 1.0
    if m >= 1:
        seg[offs[1] : offs[2]] = delta
        for k in range(2, m + 1):
            prev = seg[offs[k - 1] : offs[k]]
            seg[offs[k] : offs[k + 1]] = np.multiply.outer(prev, delta / k).ravel()


def _signature_np(incs, m, offs):
    total = int(offs[m + 1])
    acc = np.zeros(total)
    acc[0] = 1.0
    seg = np.empty(total)
    for s in range(incs.shape[0]):
        _segment_exp_np(incs[s], m, offs, seg)
        tmp = np.zeros(total)
        _chen_np(acc, seg, tmp, m, offs)
        acc = tmp
    return acc


def _chen_flat(a, b, m, offs):
    out = np.zeros(a.shape[0])
    if backend.use_numba():
        _chen_nb(a, b, out, m, offs)
    else:
        _chen_np(a, b, out, m, offs)
    return out


def _signature_flat(incs, m, offs):
    if backend.use_numba():
        return _signature_nb(incs, m, offs)
    return _signature_np(incs, m, offs)


# ---------------------------------------------------------------------------
# Public operations.


def chen_product(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Truncated tensor-concatenation product (Chen product)."""
    a._check_match(b)
    offs = level_offsets(a.dim, a.level)
    return TruncatedTensor(a.dim, a.level, _chen_flat(a.coeffs, b.coeffs, a.level, offs))


def tensor_exp(a: TruncatedTensor) -> TruncatedTensor:
    """Tensor exponential sum_{n<=m} a^n / n!.

    Requires a zero empty-word coefficient (the series is then finite on
    the truncation). Horner form: 1 + a(1 + a/2(1 + ... (1 + a/m))).
    """
    if a.coeffs[0] != 0.0:
        raise ValueError(f"tensor_exp needs zero empty-word coefficient, got {a.coeffs[0]}")
    offs = level_offsets(a.dim, a.level)
    res = TruncatedTensor.unit(a.dim, a.level).coeffs.copy()
    for n in range(a.level, 0, -1):
        res = _chen_flat(a.coeffs / n, res, a.level, offs)
        res[0] += 1.0
    return TruncatedTensor(a.dim, a.level, res)


def tensor_log(g: TruncatedTensor) -> TruncatedTensor:
    """Tensor logarithm sum_{n<=m} (-1)^(n-1) (g - 1)^n / n.

    Requires an empty-word coefficient of 1 (group-like normalization).
    """
    if abs(g.coeffs[0] - 1.0) > 1e-9:
        raise ValueError(f"tensor_log needs empty-word coefficient 1, got {g.coeffs[0]}")
    offs = level_offsets(g.dim, g.level)
    u = g.coeffs.copy()
    u[0] -= 1.0
    acc = u.copy()
    power = u
    for n in range(2, g.level + 1):
        power = _chen_flat(power, u, g.level, offs)
        acc += ((-1.0) ** (n - 1) / n) * power
    return TruncatedTensor(g.dim, g.level, acc)


def inner_product(a: TruncatedTensor, b: TruncatedTensor) -> float:
    """Sum over all words (through level m) of coefficient products."""
    a._check_match(b)
    return float(np.dot(a.coeffs, b.coeffs))


def _path_values(path) -> np.ndarray:
    """Accept a Path-like object (has .values) or a plain (ell, d) array."""
    values = getattr(path, "values", path)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError(f"need an (ell, d) sample array, got shape {values.shape}")
    return values


def signature(path, m: int) -> TruncatedTensor:
    """Level-m signature of the piecewise-linear path through the samples.

    Chen product of segment exponentials; uses value increments only, so
    sample times never enter (reparameterization invariance).
    """
    values = _path_values(path)
    d = values.shape[1]
    offs = level_offsets(d, m)
    incs = np.ascontiguousarray(np.diff(values, axis=0))
    return TruncatedTensor(d, m, _signature_flat(incs, m, offs))


# ---------------------------------------------------------------------------
# Lyndon words, bracketing, and the Lie/tensor change of basis.


def _is_lyndon(w):
    return all(w < (w[i:] + w[:i]) for i in range(1, len(w)))


def _duval(d, m):
    """All Lyndon words of length <= m over {1..d} (Duval's algorithm)."""
    out = []
    w = [1]
    while True:
        out.append(tuple(w))
        # extend periodically to length m, strip maximal letters, increment
        w = [w[i % len(w)] for i in range(m)]
        while w and w[-1] == d:
            w.pop()
        if not w:
            return out
        w[-1] += 1


def _standard_factorization(w):
    """Split a Lyndon word (len >= 2) as u·v, v the longest proper Lyndon suffix."""
    for i in range(1, len(w)):
        if _is_lyndon(w[i:]):
            return w[:i], w[i:]
    raise ValueError(f"{w} has no Lyndon factorization; not a Lyndon word?")


def _bracketing(w):
    """Nested-tuple bracket structure of a Lyndon word via standard factorization."""
    if len(w) == 1:
        return w[0]
    u, v = _standard_factorization(w)
    return (_bracketing(u), _bracketing(v))


def _expand_bracket(node, m):
    """Word-dict expansion of a bracket tree: letters to unit words, nodes to commutators."""
    if isinstance(node, int):
        return {(node,): 1.0}
    left = _expand_bracket(node[0], m)
    right = _expand_bracket(node[1], m)
    out = {}
    for wa, ca in left.items():
        for wb, cb in right.items():
            out[wa + wb] = out.get(wa + wb, 0.0) + ca * cb
            out[wb + wa] = out.get(wb + wa, 0.0) - ca * cb
    return {w: c for w, c in out.items() if c != 0.0}


@dataclass(frozen=True)
class LieElement:
    """Coefficients in a LyndonBasis; represents an element of the free Lie algebra."""

    basis: "LyndonBasis"
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (len(self.basis.words),):
            raise ValueError(
                f"expected {len(self.basis.words)} coefficients, got shape {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def get(self, word) -> float:
        word = word if isinstance(word, Word) else Word(tuple(word))
        return float(self.coeffs[self.basis.index(word)])

    def items(self):
        return list(zip(self.basis.words, self.coeffs))

    def as_tensor(self) -> TruncatedTensor:
        return self.basis.expand(self.coeffs)


class LyndonBasis:
    """Lyndon-word basis of the free Lie algebra over {1..d}, lengths 1..m.

    Words are held in (length, lex) order. For each length k the bracketed
    words expand (in tensor coordinates restricted to Lyndon-word ranks)
    into a lower-unitriangular matrix; its inverse projects tensor logs
    onto Lie coordinates. Construction is cached per (d, m) and the table
    is immutable afterwards, so concurrent readers are safe.
    """

    _cache = {}
    _lock = threading.Lock()

    def __init__(self, d, m):
        if d < 1 or m < 1:
            raise ValueError(f"need d >= 1, m >= 1, got d={d}, m={m}")
        self.d = d
        self.m = m
        words = sorted(_duval(d, m), key=lambda w: (len(w), w))
        self.words = tuple(Word(w) for w in words)
        self._index = {w.letters: i for i, w in enumerate(self.words)}
        self._by_level = [[] for _ in range(m + 1)]
        for w in self.words:
            self._by_level[len(w)].append(w.letters)
        self._brackets = {w.letters: _bracketing(w.letters) for w in self.words}
        # Per level: Lyndon ranks, dense expansion matrix E (d^k x n_k),
        # and the inverse of the unitriangular Lyndon-row restriction.
        self._ranks = [None]
        self._expandmats = [None]
        self._minv = [None]
        for k in range(1, m + 1):
            lw = self._by_level[k]
            n_k = len(lw)
            ranks = np.array([Word(w).rank(d) for w in lw], dtype=np.int64)
            E = np.zeros((d**k, n_k))
            for j, w in enumerate(lw):
                for word, c in _expand_bracket(self._brackets[w], m).items():
                    E[Word(word).rank(d), j] = c
            M = E[ranks, :]
            # standard-factorization brackets expand to their own word plus
            # lexicographically larger words only -> lower unitriangular
            if not np.allclose(np.triu(M, 1), 0.0) or not np.allclose(np.diag(M), 1.0):
                raise AssertionError(f"Lyndon change of basis not unitriangular at level {k}")
            self._ranks.append(ranks)
            self._expandmats.append(E)
            self._minv.append(np.linalg.inv(M))
        self.counts = tuple(len(self._by_level[k]) for k in range(m + 1))

    @classmethod
    def get(cls, d, m) -> "LyndonBasis":
        key = (d, m)
        basis = cls._cache.get(key)
        if basis is None:
            with cls._lock:
                basis = cls._cache.get(key)
                if basis is None:
                    basis = cls(d, m)
                    cls._cache[key] = basis
        return basis

    def __len__(self):
        return len(self.words)

    def index(self, word) -> int:
        letters = word.letters if isinstance(word, Word) else tuple(word)
        try:
            return self._index[letters]
        except KeyError:
            raise KeyError(f"{letters} is not a Lyndon word of (d={self.d}, m={self.m})")

    def bracketing(self, word):
        letters = word.letters if isinstance(word, Word) else tuple(word)
        return self._brackets[letters]

    def level_slice(self, k):
        """(start, stop) positions of the length-k words in the basis order."""
        start = sum(self.counts[:k])
        return start, start + self.counts[k]

    def project(self, t: TruncatedTensor) -> LieElement:
        """Lie coordinates of a tensor that lies in the free Lie algebra.

        Only Lyndon-word tensor coordinates are consulted; for genuine Lie
        elements (e.g. tensor logs of group-likes) expand(project(t)) == t.
        """
        if t.dim != self.d or t.level != self.m:
            raise DimensionMismatchError(
                f"tensor (d={t.dim}, m={t.level}) vs basis (d={self.d}, m={self.m})"
            )
        out = np.empty(len(self.words))
        pos = 0
        for k in range(1, self.m + 1):
            n_k = self.counts[k]
            blk = t.level_block(k)[self._ranks[k]]
            out[pos : pos + n_k] = self._minv[k] @ blk
            pos += n_k
        return LieElement(self, out)

    def expand(self, coeffs) -> TruncatedTensor:
        """Tensor-coordinate expansion of Lie coefficients (basis order)."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (len(self.words),):
            raise ValueError(f"expected {len(self.words)} coefficients")
        offs = level_offsets(self.d, self.m)
        flat = np.zeros(int(offs[-1]))
        pos = 0
        for k in range(1, self.m + 1):
            n_k = self.counts[k]
            flat[offs[k] : offs[k + 1]] = self._expandmats[k] @ coeffs[pos : pos + n_k]
            pos += n_k
        return TruncatedTensor(self.d, self.m, flat)


def enumerate_lyndon(d: int, m: int) -> LyndonBasis:
    """The cached Lyndon basis for alphabet size d, word lengths 1..m."""
    return LyndonBasis.get(d, m)


def log_signature(path, m: int, basis: LyndonBasis = None) -> LieElement:
    """Log-signature of a piecewise-linear path in Lyndon coordinates."""
    values = _path_values(path)
    if basis is None:
        basis = LyndonBasis.get(values.shape[1], m)
    elif basis.d != values.shape[1] or basis.m != m:
        raise DimensionMismatchError(
            f"basis (d={basis.d}, m={basis.m}) vs path d={values.shape[1]}, m={m}"
        )
    return basis.project(tensor_log(signature(values, m)))
