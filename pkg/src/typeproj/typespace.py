"""Exact computations on the lattice of empirical types.

The lattice of size-n types over m outcomes is streamed in blocks that share
a prefix of leading counts. Blocks come out in lexicographically decreasing
order of the count vector, and every reduction (max, log-sum-exp) is done per
block and then combined in block order, so results do not depend on the
number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy.special import gammaln

from .core import Alphabet, EmpiricalType, Pmf
from .errors import AlphabetMismatchError, InfeasibleError, ResourceCapError, ValidationError
from .projections import ConstraintRegion

DEFAULT_CAP = 10**8
BLOCK_ROWS = 1 << 16
TIE_TOL = 1e-9
TV_TOL = 1e-12


def enumeration_cap() -> int:
    """Lattice-size cap, overridable through ``TYPEPROJ_CAP``."""
    env = os.environ.get("TYPEPROJ_CAP")
    if env:
        try:
            return int(float(env))
        except ValueError:
            raise ValidationError(f"TYPEPROJ_CAP={env!r} is not a number") from None
    return DEFAULT_CAP


def count_types(m: int, n: int) -> int:
    return math.comb(n + m - 1, m - 1)


def _check_size(m: int, n: int, cap: int | None):
    if m < 2:
        raise ValidationError("m must be at least 2", field="m")
    if n < 1:
        raise ValidationError("n must be at least 1", field="n")
    cap = enumeration_cap() if cap is None else cap
    total = count_types(m, n)
    if total > cap:
        raise ResourceCapError(
            f"type lattice for m={m}, n={n} has {total} points, above the cap of {cap}",
            count=total, cap=cap)


def _compositions(m: int, n: int) -> np.ndarray:
    """All compositions of n into m parts, lexicographically decreasing."""
    rows = np.zeros((1, 0), dtype=np.int64)
    rem = np.array([n], dtype=np.int64)
    for _ in range(m - 1):
        reps = rem + 1
        parent = np.repeat(np.arange(rows.shape[0]), reps)
        starts = np.cumsum(reps) - reps
        offset = np.arange(parent.size) - np.repeat(starts, reps)
        first = rem[parent] - offset
        rows = np.column_stack([rows[parent], first])
        rem = rem[parent] - first
    return np.column_stack([rows, rem])


def _prefixes(m: int, n: int, depth: int) -> np.ndarray:
    """Leading ``depth`` counts of every block, in lattice order."""
    if depth == 0:
        return np.zeros((1, 0), dtype=np.int64)
    # prefixes of length d with sum <= n are compositions of n into d+1 parts, minus the slack
    return _compositions(depth + 1, n)[:, :depth]


def iter_count_blocks(m: int, n: int, cap: int | None = None) -> Iterator[np.ndarray]:
    """Stream the type lattice as int64 arrays of shape ``(rows, m)``."""
    _check_size(m, n, cap)
    depth = 0
    while depth < m - 2 and count_types(m - depth, n) > BLOCK_ROWS:
        depth += 1
    for prefix in _prefixes(m, n, depth):
        rest = _compositions(m - depth, n - int(prefix.sum()))
        if depth:
            rest = np.column_stack([np.broadcast_to(prefix, (rest.shape[0], depth)), rest])
        yield rest


def enumerate_types(alphabet: Alphabet | int, n: int, cap: int | None = None
                    ) -> Iterator[EmpiricalType]:
    """Yield every size-n type once, lexicographically decreasing in counts.

    An integer ``alphabet`` means the points ``0, ..., m-1``.
    """
    if isinstance(alphabet, int):
        alphabet = Alphabet.range(alphabet)
    for block in iter_count_blocks(alphabet.m, n, cap):
        for row in block.tolist():
            yield EmpiricalType._trusted(alphabet, tuple(row), n)


def _log_probs(counts: np.ndarray, n: int, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logq = np.log(q)
    safe = np.where(q > 0, logq, 0.0)
    lp = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1) + counts @ safe
    dead = (q == 0)
    if np.any(dead):
        lp = np.where((counts[:, dead] > 0).any(axis=1), -np.inf, lp)
    return lp


def log_type_prob(t: EmpiricalType, q: Pmf) -> float:
    """Log multinomial probability ``log(n! prod q_i^n_i / n_i!)`` of type t."""
    if t.alphabet != q.alphabet:
        raise AlphabetMismatchError("type and pmf live on different alphabets")
    return float(_log_probs(t.as_array()[None, :], t.n, q.probs)[0])


# --------------------------------------------------------------------------
# predicates


class TypePredicate:
    """Membership test for a set of types, evaluated block-wise.

    Subclasses implement ``mask(counts, n)`` returning a boolean array.
    Predicates combine with ``|`` (union) and ``&`` (intersection).
    """

    def mask(self, counts: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: EmpiricalType) -> bool:
        return bool(self.mask(t.as_array()[None, :], t.n)[0])

    def __or__(self, other):
        return _Combined(self, other, np.logical_or)

    def __and__(self, other):
        return _Combined(self, other, np.logical_and)


class _Combined(TypePredicate):
    def __init__(self, a, b, op):
        self.a, self.b, self.op = a, b, op

    def mask(self, counts, n):
        return self.op(self.a.mask(counts, n), self.b.mask(counts, n))


class Always(TypePredicate):
    def __init__(self, value: bool = True):
        self.value = bool(value)

    def mask(self, counts, n):
        return np.full(counts.shape[0], self.value)


class RegionPredicate(TypePredicate):
    """Types whose pmf lies in a region, up to a feasibility slack.

    Without an explicit ``slack`` equality rows get ``0.5 / n`` (the lattice
    rarely hits an equality exactly) and interval rows get ``1e-9``.
    """

    def __init__(self, region: ConstraintRegion, slack: float | None = None):
        self.region = region
        self.slack = slack

    def slacks(self, n: int) -> np.ndarray:
        if self.slack is not None:
            return np.full(self.region.J, float(self.slack))
        return np.where(self.region.is_equality, 0.5 / n, 1e-9)

    def mask(self, counts, n):
        v = (counts @ self.region.u.T) / n
        d = self.slacks(n)
        return np.all((v >= self.region.lower - d) & (v <= self.region.upper + d), axis=1)


class FunctionPredicate(TypePredicate):
    """Wraps a caller-supplied test.

    With ``vectorized=False`` the function gets one :class:`EmpiricalType`
    at a time; otherwise it gets the raw ``(counts, n)`` block.
    """

    def __init__(self, func: Callable, alphabet: Alphabet | None = None,
                 vectorized: bool = False):
        self.func = func
        self.alphabet = alphabet
        self.vectorized = vectorized

    def mask(self, counts, n):
        if self.vectorized:
            return np.asarray(self.func(counts, n), dtype=bool)
        alphabet = self.alphabet or Alphabet.range(counts.shape[1])
        return np.array([bool(self.func(EmpiricalType._trusted(alphabet, tuple(r), n)))
                         for r in counts.tolist()], dtype=bool)


def _as_predicate(pred) -> TypePredicate:
    if isinstance(pred, TypePredicate):
        return pred
    if isinstance(pred, ConstraintRegion):
        return RegionPredicate(pred)
    if callable(pred):
        return FunctionPredicate(pred)
    raise ValidationError(f"cannot use {type(pred).__name__} as a type predicate")


# --------------------------------------------------------------------------
# block-parallel reductions


def _map_blocks(fn, m, n, threads, cap):
    blocks = iter_count_blocks(m, n, cap)
    if threads <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def _lse_pair(values: np.ndarray) -> tuple[float, float]:
    """(max, sum exp(v - max)) of a block; (-inf, 0) when empty."""
    if values.size == 0:
        return -math.inf, 0.0
    mx = float(values.max())
    if mx == -math.inf:
        return mx, 0.0
    return mx, float(np.exp(values - mx).sum())


def _combine_lse(parts) -> float:
    mx, acc = -math.inf, 0.0
    for bm, bs in parts:
        if bm == -math.inf:
            continue
        if bm > mx:
            acc = acc * math.exp(mx - bm) + bs
            mx = bm
        else:
            acc += bs * math.exp(bm - mx)
    return mx + math.log(acc) if acc > 0 else -math.inf


def _check_q(q: Pmf, n: int):
    if n < 1:
        raise ValidationError("n must be at least 1", field="n")


def prob_of_set(n: int, q: Pmf, pred, threads: int = 1, cap: int | None = None) -> float:
    """Log-probability that a size-n type drawn under q satisfies ``pred``."""
    _check_q(q, n)
    pred = _as_predicate(pred)
    probs = q.probs

    def block(c):
        keep = pred.mask(c, n)
        return _lse_pair(_log_probs(c[keep], n, probs))

    return _combine_lse(_map_blocks(block, q.m, n, threads, cap))


def maxprob_types(n: int, q: Pmf, pred, threads: int = 1, cap: int | None = None
                  ) -> list[EmpiricalType]:
    """All feasible types of maximal probability (ties kept, lattice order)."""
    _check_q(q, n)
    pred = _as_predicate(pred)
    probs = q.probs

    def block(c):
        keep = pred.mask(c, n)
        lp = _log_probs(c[keep], n, probs)
        if lp.size == 0 or lp.max() == -math.inf:
            return -math.inf, c[:0], lp[:0]
        mx = float(lp.max())
        sel = lp >= mx - TIE_TOL
        return mx, c[keep][sel], lp[sel]

    parts = _map_blocks(block, q.m, n, threads, cap)
    best = max(p[0] for p in parts)
    if best == -math.inf:
        raise InfeasibleError(f"no type of size {n} with positive probability satisfies the predicate")
    out = []
    for _, rows, lps in parts:
        for row, lp in zip(rows.tolist(), lps):
            if lp >= best - TIE_TOL:
                out.append(EmpiricalType._trusted(q.alphabet, tuple(row), n))
    return out


@dataclass(frozen=True)
class RatePoint:
    n: int
    log_prob: float
    rate: float


def sanov_rate_curve(n_list, q: Pmf, pred, threads: int = 1, cap: int | None = None
                     ) -> list[RatePoint]:
    """Empirical decay rates ``-(1/n) log P(type in pred)`` for each n."""
    out = []
    for n in n_list:
        lp = prob_of_set(int(n), q, pred, threads=threads, cap=cap)
        out.append(RatePoint(int(n), lp, -lp / n if lp > -math.inf else math.inf))
    return out


def _conditional_parts(n, q, pred, threads, cap, extra):
    """Per block: lse of the conditioning set and of ``extra(block)``."""
    probs = q.probs

    def block(c):
        keep = pred.mask(c, n)
        c = c[keep]
        lp = _log_probs(c, n, probs)
        return _lse_pair(lp), extra(c, lp)

    return _map_blocks(block, q.m, n, threads, cap)


def clln_ball_mass(n: int, q: Pmf, pred, center: Pmf, eps: float, threads: int = 1,
                   cap: int | None = None) -> float:
    """P(TV(type, center) <= eps | type in pred) under i.i.d. sampling from q."""
    _check_q(q, n)
    if not eps > 0:
        raise ValidationError("eps must be positive", field="eps")
    if center.alphabet != q.alphabet:
        raise AlphabetMismatchError("center and q live on different alphabets")
    pred = _as_predicate(pred)
    cp = center.probs

    def in_ball(c, lp):
        tv = 0.5 * np.abs(c / n - cp).sum(axis=1)
        return _lse_pair(lp[tv <= eps + TV_TOL])

    parts = _conditional_parts(n, q, pred, threads, cap, in_ball)
    log_z = _combine_lse([a for a, _ in parts])
    if log_z == -math.inf:
        raise InfeasibleError("conditioning event has probability zero")
    log_ball = _combine_lse([b for _, b in parts])
    return min(1.0, math.exp(log_ball - log_z)) if log_ball > -math.inf else 0.0


def mean_type(n: int, q: Pmf, pred, threads: int = 1, cap: int | None = None) -> Pmf:
    """Conditional mean of the type given ``pred``.

    The result is generally not a lattice point and, for non-convex sets,
    need not satisfy the predicate.
    """
    _check_q(q, n)
    pred = _as_predicate(pred)

    def moments(c, lp):
        mx, _ = _lse_pair(lp)
        if mx == -math.inf:
            return mx, np.zeros(q.m)
        w = np.exp(lp - mx)
        return mx, w @ (c / n)

    parts = _conditional_parts(n, q, pred, threads, cap, moments)
    log_z = _combine_lse([a for a, _ in parts])
    if log_z == -math.inf:
        raise InfeasibleError("conditioning event has probability zero")
    acc = np.zeros(q.m)
    for _, (mx, vec) in parts:
        if mx > -math.inf:
            acc += vec * math.exp(mx - log_z)
    return Pmf.normalized(q.alphabet, acc)
