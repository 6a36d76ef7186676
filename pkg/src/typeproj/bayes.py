"""Posterior analysis over a finite grid of candidate sampling distributions.

The posterior depends on the sample only through its type, so expectations
over i.i.d. samples of size n reduce to exact sums over the type lattice
("exact" mode). "path" mode follows one seeded sample path instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Alphabet, EmpiricalType, Pmf, Sample, l_divergence, total_variation
from .errors import AlphabetMismatchError, InfeasibleError, ValidationError
from .projections import ConstraintRegion
from .typespace import _log_probs, _map_blocks, iter_count_blocks

TIE_TOL = 1e-9
TV_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PriorGrid:
    """Candidates with strictly positive prior weights, kept as normalized logs."""

    candidates: tuple[Pmf, ...]
    log_weights: np.ndarray

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise ValidationError("prior grid is empty", field="candidates")
        alpha = cands[0].alphabet
        if any(c.alphabet != alpha for c in cands):
            raise AlphabetMismatchError("candidates live on different alphabets")
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != (len(cands),):
            raise ValidationError("need one log weight per candidate", field="log_weights")
        if not np.all(np.isfinite(lw)):
            raise ValidationError("prior weights must be strictly positive", field="log_weights")
        lw = lw - logsumexp(lw)
        lw.setflags(write=False)
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, candidates: Sequence[Pmf]) -> "PriorGrid":
        return cls(tuple(candidates), np.zeros(len(candidates)))

    @classmethod
    def simplex_mesh(cls, alphabet: Alphabet, h: float = 0.05,
                     region: ConstraintRegion | None = None, slack: float = 1e-12) -> "PriorGrid":
        """Uniform prior on the simplex mesh of step ``h``, optionally cut by a region."""
        k = round(1.0 / h)
        if k < 1 or abs(k * h - 1.0) > 1e-9:
            raise ValidationError("mesh step must be 1/k for an integer k", field="h")
        cands = []
        for block in iter_count_blocks(alphabet.m, k):
            for row in block:
                p = Pmf(alphabet, row / k)
                if region is None or region.contains(p, slack):
                    cands.append(p)
        if not cands:
            raise InfeasibleError("no mesh point lies in the region")
        return cls.uniform(cands)

    @property
    def alphabet(self) -> Alphabet:
        return self.candidates[0].alphabet

    def __len__(self):
        return len(self.candidates)

    def matrix(self) -> np.ndarray:
        return np.array([c.probs for c in self.candidates])

    def to_json(self) -> dict:
        return {"candidates": [c.probs.tolist() for c in self.candidates],
                "log_weights": self.log_weights.tolist()}

    @classmethod
    def from_json(cls, alphabet: Alphabet, obj: dict) -> "PriorGrid":
        cands = tuple(Pmf(alphabet, c) for c in obj["candidates"])
        lw = obj.get("log_weights")
        return cls(cands, np.zeros(len(cands)) if lw is None else lw)


@dataclass(frozen=True, eq=False)
class PosteriorReport:
    log_posterior: np.ndarray
    map_indices: tuple[int, ...]
    mnpl_indices: tuple[int, ...]
    n: int


def log_likelihood(q: Pmf, t: EmpiricalType) -> float:
    """``sum_i n_i log q_i``, i.e. minus the negative log-likelihood of the sample."""
    if q.alphabet != t.alphabet:
        raise AlphabetMismatchError("pmf and type live on different alphabets")
    c = t.as_array()
    pos = c > 0
    if np.any(q.probs[pos] == 0):
        return -math.inf
    return float(c[pos] @ np.log(q.probs[pos]))


def _loglik_matrix(counts: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Log-likelihoods, rows = types, columns = candidates."""
    with np.errstate(divide="ignore"):
        logq = np.where(Q > 0, np.log(np.where(Q > 0, Q, 1.0)), 0.0)
    ll = counts @ logq.T
    dead = (counts > 0).astype(float) @ (Q == 0).T.astype(float) > 0
    return np.where(dead, -np.inf, ll)


def _argmax_set(v: np.ndarray) -> tuple[int, ...]:
    best = v.max()
    return tuple(int(i) for i in np.flatnonzero(v >= best - TIE_TOL))


def posterior(prior: PriorGrid, t: EmpiricalType) -> PosteriorReport:
    """Normalized log posterior with its MAP and MNPL index sets."""
    if prior.alphabet != t.alphabet:
        raise AlphabetMismatchError("prior and type live on different alphabets")
    ll = _loglik_matrix(t.as_array()[None, :].astype(float), prior.matrix())[0]
    if np.all(ll == -np.inf):
        raise InfeasibleError("every candidate gives the sample zero likelihood")
    joint = ll + prior.log_weights
    return PosteriorReport(joint - logsumexp(joint), _argmax_set(joint), _argmax_set(ll), t.n)


def _subset_mask(prior: PriorGrid, subset: Iterable[int]) -> np.ndarray:
    mask = np.zeros(len(prior), dtype=bool)
    idx = list(subset)
    if not idx:
        raise ValidationError("subset is empty", field="subset")
    for i in idx:
        if not 0 <= int(i) < len(prior):
            raise ValidationError(f"subset index {i} out of range", field="subset")
        mask[int(i)] = True
    return mask


def _log_mass_rows(counts: np.ndarray, prior: PriorGrid, mask: np.ndarray) -> np.ndarray:
    """log posterior mass of ``mask`` for each type row."""
    joint = _loglik_matrix(counts.astype(float), prior.matrix()) + prior.log_weights
    log_z = logsumexp(joint, axis=1)
    if np.any(log_z == -np.inf):
        raise InfeasibleError("some sample has zero likelihood under every candidate")
    with np.errstate(divide="ignore"):
        return logsumexp(np.where(mask, joint, -np.inf), axis=1) - log_z


def _path_counts(r: Pmf, n: int, seed: int) -> np.ndarray:
    return Sample.draw(r, n, seed).type().as_array()[None, :]


def grid_l_value(prior: PriorGrid, r: Pmf, subset: Iterable[int] | None = None) -> float:
    """``min`` over the chosen candidates of ``L(candidate||r)``."""
    idx = range(len(prior)) if subset is None else subset
    return min(l_divergence(prior.candidates[i], r) for i in idx)


def grid_l_projection(prior: PriorGrid, r: Pmf) -> int:
    """Index of the first candidate minimizing ``L(.||r)``."""
    vals = [l_divergence(c, r) for c in prior.candidates]
    return int(np.argmin(vals))


@dataclass(frozen=True)
class BSTRate:
    n: int
    empirical_rate: float
    theoretical_rate: float

    @property
    def gap(self) -> float:
        return self.empirical_rate - self.theoretical_rate


def _expect(prior, r, n, mode, seed, stat, threads):
    """Expectation of ``stat(counts) -> per-row values`` over size-n types under r."""
    if mode == "path":
        if seed is None:
            raise ValidationError("path mode needs a seed", field="seed")
        return float(stat(_path_counts(r, n, seed))[0])
    if mode != "exact":
        raise ValidationError(f"unknown mode {mode!r}", field="mode")

    def block(c):
        lp = _log_probs(c, n, r.probs)
        keep = lp > -np.inf
        if not np.any(keep):
            return 0.0
        vals = stat(c[keep])
        return float(np.exp(lp[keep]) @ vals)

    return math.fsum(_map_blocks(block, r.m, n, threads, None))


def bst_rate(prior: PriorGrid, subset: Iterable[int], r: Pmf, n: int, mode: str = "exact",
             seed: int | None = None, threads: int = 1) -> BSTRate:
    """Posterior decay rate ``(1/n) log pi_n(subset | sample)`` and its limit.

    The limit is ``-(L(subset||r) - L(grid||r))`` with both L values taken
    over grid candidates.
    """
    if r.alphabet != prior.alphabet:
        raise AlphabetMismatchError("prior and r live on different alphabets")
    mask = _subset_mask(prior, subset)
    theory = -(grid_l_value(prior, r, np.flatnonzero(mask)) - grid_l_value(prior, r))
    emp = _expect(prior, r, n, mode, seed, lambda c: _log_mass_rows(c, prior, mask) / n, threads)
    return BSTRate(n, emp, theory)


def blln_ball_mass(prior: PriorGrid, r: Pmf, n: int, eps: float, center: Pmf | None = None,
                   mode: str = "exact", seed: int | None = None, threads: int = 1) -> float:
    """Posterior mass of the TV ball of radius eps around ``center``.

    ``center`` defaults to the grid L-projection of r. Exact mode averages
    the mass over all size-n samples from r.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive", field="eps")
    if r.alphabet != prior.alphabet:
        raise AlphabetMismatchError("prior and r live on different alphabets")
    if center is None:
        center = prior.candidates[grid_l_projection(prior, r)]
    mask = np.array([total_variation(c, center) <= eps + TV_TOL for c in prior.candidates])
    if not np.any(mask):
        return 0.0
    if np.all(mask):
        return 1.0
    val = _expect(prior, r, n, mode, seed, lambda c: np.exp(_log_mass_rows(c, prior, mask)),
                  threads)
    return min(1.0, max(0.0, val))
