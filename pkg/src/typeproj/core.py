"""Alphabets, pmfs, empirical types, samples and the divergences between them.

All logarithms are natural. Divergences return ``math.inf`` on support
violations; ``0 log 0`` is taken as 0 by masking, never by floating-point
limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AlphabetMismatchError, ValidationError

PMF_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Alphabet:
    """Ordered finite support ``x_1 < ... < x_m``."""

    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(x) for x in self.points)
        if len(pts) < 2:
            raise ValidationError("alphabet needs at least 2 points", field="alphabet")
        if any(not math.isfinite(x) for x in pts):
            raise ValidationError("alphabet points must be finite", field="alphabet")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError("alphabet points must be strictly increasing", field="alphabet")
        object.__setattr__(self, "points", pts)

    @classmethod
    def range(cls, m: int) -> "Alphabet":
        return cls(tuple(range(m)))

    @property
    def m(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def index(self, x: float) -> int:
        try:
            return self.points.index(float(x))
        except ValueError:
            raise ValidationError(f"{x!r} is not a point of the alphabet") from None

    def __len__(self):
        return len(self.points)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pmf:
    alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.shape[0] != self.alphabet.m:
            raise ValidationError(
                f"pmf has {p.size} entries, alphabet has {self.alphabet.m}", field="probs")
        if not np.all(np.isfinite(p)):
            raise ValidationError("pmf entries must be finite", field="probs")
        neg = np.flatnonzero(p < 0)
        if neg.size:
            raise ValidationError(f"negative probability at index {int(neg[0])}", field="probs")
        if abs(p.sum() - 1.0) > PMF_SUM_TOL:
            raise ValidationError(f"pmf sums to {p.sum()!r}, not 1", field="probs")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def normalized(cls, alphabet: Alphabet, weights: Sequence[float]) -> "Pmf":
        """Build a pmf from nonnegative weights, rescaling them to sum to one."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative", field="probs")
        total = w.sum()
        if not total > 0:
            raise ValidationError("weights sum to zero", field="probs")
        return cls(alphabet, w / total)

    @classmethod
    def uniform(cls, alphabet: Alphabet) -> "Pmf":
        return cls(alphabet, np.full(alphabet.m, 1.0 / alphabet.m))

    @property
    def m(self) -> int:
        return self.alphabet.m

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0

    def mean(self) -> float:
        return float(self.probs @ self.alphabet.as_array())

    def __eq__(self, other):
        if not isinstance(other, Pmf):
            return NotImplemented
        return self.alphabet == other.alphabet and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.alphabet, self.probs.tobytes()))

    def __repr__(self):
        return f"Pmf({list(self.probs)!r})"


@dataclass(frozen=True)
class EmpiricalType:
    """Count vector ``[n_1, ..., n_m]`` of a size-n sample."""

    alphabet: Alphabet
    counts: tuple[int, ...]
    n: int = field(init=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.alphabet.m:
            raise ValidationError(
                f"type has {len(counts)} counts, alphabet has {self.alphabet.m}", field="counts")
        if any(c < 0 for c in counts):
            raise ValidationError("counts must be nonnegative", field="counts")
        n = sum(counts)
        if n < 1:
            raise ValidationError("type size n must be at least 1", field="counts")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", n)

    @classmethod
    def _trusted(cls, alphabet: Alphabet, counts: tuple[int, ...], n: int) -> "EmpiricalType":
        # enumeration fast path; inputs are valid by construction
        obj = object.__new__(cls)
        object.__setattr__(obj, "alphabet", alphabet)
        object.__setattr__(obj, "counts", counts)
        object.__setattr__(obj, "n", n)
        return obj

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def pmf(self) -> Pmf:
        return Pmf.normalized(self.alphabet, self.counts)


@dataclass(frozen=True)
class Sample:
    """Ordered draws, stored as 0-based indices into the alphabet."""

    alphabet: Alphabet
    draws: tuple[int, ...]

    def __post_init__(self):
        draws = tuple(int(d) for d in self.draws)
        bad = [i for i, d in enumerate(draws) if not 0 <= d < self.alphabet.m]
        if bad:
            raise ValidationError(f"draw {bad[0]} is out of range", field="draws")
        object.__setattr__(self, "draws", draws)

    @classmethod
    def from_values(cls, alphabet: Alphabet, values: Iterable[float]) -> "Sample":
        return cls(alphabet, tuple(alphabet.index(v) for v in values))

    @classmethod
    def draw(cls, pmf: Pmf, size: int, seed: int) -> "Sample":
        """i.i.d. draws from ``pmf`` using numpy's PCG64 generator."""
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = rng.choice(pmf.m, size=size, p=pmf.probs)
        return cls(pmf.alphabet, tuple(int(i) for i in idx))

    def __len__(self):
        return len(self.draws)

    def values(self) -> np.ndarray:
        return self.alphabet.as_array()[list(self.draws)]

    def type(self) -> EmpiricalType:
        counts = np.bincount(np.asarray(self.draws, dtype=np.int64), minlength=self.alphabet.m)
        return EmpiricalType(self.alphabet, tuple(int(c) for c in counts))


def _check_same(a, b):
    if a.alphabet != b.alphabet:
        raise AlphabetMismatchError("arguments live on different alphabets")


def i_divergence(p: Pmf, q: Pmf) -> float:
    """I(p||q) = sum p log(p/q); +inf when p charges an atom q does not."""
    _check_same(p, q)
    pp, qq = p.probs, q.probs
    pos = pp > 0
    if np.any(qq[pos] == 0):
        return math.inf
    val = float(np.sum(pp[pos] * (np.log(pp[pos]) - np.log(qq[pos]))))
    return max(val, 0.0)


def l_divergence(q: Pmf, p: Pmf) -> float:
    """L(q||p) = -sum p log q; +inf when p charges an atom q does not."""
    _check_same(q, p)
    pp, qq = p.probs, q.probs
    pos = pp > 0
    if np.any(qq[pos] == 0):
        return math.inf
    return float(-np.sum(pp[pos] * np.log(qq[pos])))


def shannon_entropy(p: Pmf) -> float:
    pos = p.probs[p.probs > 0]
    return float(-np.sum(pos * np.log(pos)))


def total_variation(p1: Pmf, p2: Pmf) -> float:
    """Half-sum convention, so values lie in [0, 1]."""
    _check_same(p1, p2)
    return float(0.5 * np.abs(p1.probs - p2.probs).sum())
