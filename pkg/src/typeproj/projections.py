"""I- and L-projections onto linear moment constraint sets.

Both projections are computed through their convex duals in the multipliers
``lam`` (one per constraint row):

* I-projection of q:  minimize  log sum_i q_i exp(-lam . u_i);
  the minimizer tilts q into ``p_i ~ q_i exp(-lam . u_i)``.
* L-projection of r:  minimize  -sum_i r_i log(1 - lam . u_i)
  over the open set where every ``1 - lam . u_i`` is positive; the minimizer
  reweights r into ``q_i = r_i / (1 - lam . u_i)``.

Literature on empirical likelihood often writes ``1 + lam . u``; the sign here
is the opposite, so multipliers map as ``lam -> -lam``.

The two low-level solvers, :func:`solve_tilted_dual` and
:func:`solve_el_dual`, work on arbitrary nonnegative atom weights and are
shared with :mod:`typeproj.estimators`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import Alphabet, Pmf, i_divergence, l_divergence
from .errors import AlphabetMismatchError, ConvergenceError, InfeasibleError, ValidationError

GTOL = 1e-10
MAX_ITER = 200
ARMIJO = 1e-4
BOUNDARY_FRACTION = 0.99
RANK_TOL = 1e-10
SUPPORT_TOL = 1e-9
KKT_TOL = 1e-9
NEAR_BOUNDARY = 1e-6


@dataclass(frozen=True, eq=False)
class ConstraintRegion:
    """Pmfs p with ``lower_j <= sum_i p_i u[j, i] <= upper_j`` for every row j.

    Bounds may be infinite (one-sided rows). ``lower == upper`` gives an
    equality row; the usual estimating-equation set is ``lower = upper = 0``.
    All-zero rows are allowed and are trivially satisfied or violated.
    """

    alphabet: Alphabet
    u: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if u.ndim != 2 or u.shape[1] != self.alphabet.m:
            raise ValidationError(f"u must have shape (J, {self.alphabet.m})", field="u")
        J = u.shape[0]
        if J < 1:
            raise ValidationError("a region needs at least one row", field="u")
        if not np.all(np.isfinite(u)):
            raise ValidationError("u entries must be finite", field="u")
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (J,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (J,)).copy()
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValidationError("bounds must not be NaN", field="lower")
        bad = np.flatnonzero(lo > hi)
        if bad.size:
            raise ValidationError(f"lower > upper in row {int(bad[0])}", field="lower")
        if np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValidationError("bounds point the wrong way", field="lower")
        nz = u[np.any(u != 0, axis=1)]
        if nz.shape[0] > 1:
            s = np.linalg.svd(nz, compute_uv=False)
            if s[-1] <= RANK_TOL * s[0]:
                raise ValidationError("rows of u are linearly dependent", field="u")
        for name, arr in (("u", u), ("lower", lo), ("upper", hi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def equality(cls, alphabet: Alphabet, u, values=0.0) -> "ConstraintRegion":
        return cls(alphabet, u, values, values)

    @classmethod
    def mean(cls, alphabet: Alphabet, lower=-math.inf, upper=math.inf) -> "ConstraintRegion":
        """Region ``lower <= E_p[x] <= upper``."""
        return cls(alphabet, [alphabet.points], lower, upper)

    @property
    def J(self) -> int:
        return self.u.shape[0]

    @property
    def is_equality(self) -> np.ndarray:
        return self.lower == self.upper

    def moments(self, probs) -> np.ndarray:
        return self.u @ np.asarray(probs, dtype=float).T

    def residual(self, probs) -> float:
        """Largest bound violation of ``probs`` (0 when feasible)."""
        v = self.moments(probs)
        viol = np.maximum(self.lower - v, v - self.upper)
        return float(max(viol.max(), 0.0))

    def contains(self, pmf: Pmf, slack: float = 0.0) -> bool:
        if pmf.alphabet != self.alphabet:
            raise AlphabetMismatchError("region and pmf live on different alphabets")
        return self.residual(pmf.probs) <= slack

    def to_json(self) -> dict:
        def enc(x):
            return None if math.isinf(x) else float(x)
        return {"u": self.u.tolist(),
                "lower": [enc(x) for x in self.lower],
                "upper": [enc(x) for x in self.upper]}

    @classmethod
    def from_json(cls, alphabet: Alphabet, obj: dict) -> "ConstraintRegion":
        u = np.atleast_2d(np.asarray(obj["u"], dtype=float))
        J = u.shape[0]
        lower = obj.get("lower", [0.0] * J)
        upper = obj.get("upper", [0.0] * J)
        lo = [-math.inf if x is None else float(x) for x in lower]
        hi = [math.inf if x is None else float(x) for x in upper]
        return cls(alphabet, u, lo, hi)


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """Solution of an I- or L-projection.

    For the L-projection ``divergence`` is ``I(r||q_hat)`` (the L-divergence
    minus the entropy of r) and ``l_value`` holds the raw ``L(q_hat||r)``.
    ``dual_value`` is the negated dual minimum, which equals ``divergence``
    at optimality. Multiplier j acts on row j shifted by its binding bound,
    ``u[j] - b_j``; rows that are not binding get zero.
    """

    pmf: Pmf
    multipliers: np.ndarray
    divergence: float
    dual_value: float
    iterations: int
    residual: float
    active: tuple[str, ...] = ()
    l_value: float | None = None
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    feasible: bool
    witness: Pmf | None = None
    certificate: np.ndarray | None = None
    margin: float = 0.0
    interior: bool = False


class DualSolution(NamedTuple):
    lam: np.ndarray
    value: float  # dual minimum
    probs: np.ndarray  # primal weights over all atoms, zero off the support
    grad_norm: float
    iterations: int
    on_face: bool


# --------------------------------------------------------------------------
# Newton with backtracking


class _NewtonOutcome(NamedTuple):
    lam: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    converged: bool


def _newton(oracle: Callable, lam0: np.ndarray, gtol: float, max_iter: int,
            max_step: Callable | None = None) -> _NewtonOutcome:
    """Minimize a smooth convex function given ``oracle(lam) -> (f, g, H)``.

    ``max_step(lam, d)`` bounds the step length to stay inside an open domain;
    the oracle returns ``f = inf`` outside it.
    """
    lam = lam0.copy()
    f, g, H = oracle(lam)
    gn = float(np.linalg.norm(g))
    for it in range(max_iter):
        if gn <= gtol:
            return _NewtonOutcome(lam, f, gn, it, True)
        d = np.linalg.lstsq(H, -g, rcond=1e-13)[0]
        slope = float(g @ d)
        if not slope < 0:
            d, slope = -g, -gn * gn
        t = 1.0
        if max_step is not None:
            t = min(1.0, BOUNDARY_FRACTION * max_step(lam, d))
        while True:
            cand = lam + t * d
            f_new, g_new, H_new = oracle(cand)
            if f_new <= f + ARMIJO * t * slope:
                break
            gn_new = float(np.linalg.norm(g_new))
            # objective flat to rounding: accept if the gradient still shrinks
            if (math.isfinite(f_new) and abs(f_new - f) <= 1e-14 * max(1.0, abs(f))
                    and gn_new < gn):
                break
            t *= 0.5
            if t < 1e-16:
                return _NewtonOutcome(lam, f, gn, it, False)
        lam, f, g, H = cand, f_new, g_new, H_new
        gn = float(np.linalg.norm(g))
    return _NewtonOutcome(lam, f, gn, max_iter, gn <= gtol)


# --------------------------------------------------------------------------
# LP helpers (phase one, support detection, separating certificates)


def _phase_one(U: np.ndarray, lower: np.ndarray, upper: np.ndarray,
               objective: np.ndarray | None = None):
    """Find p in the simplex with ``lower <= U p <= upper``.

    By default maximizes ``min_i p_i``; with ``objective`` maximizes
    ``objective . p`` instead. Returns ``(p, value)`` or ``None`` if
    infeasible.
    """
    J, k = U.shape
    eq = lower == upper
    A_ub, b_ub, A_eq, b_eq = [], [], [np.r_[np.ones(k), 0.0]], [1.0]
    for j in range(J):
        row = np.r_[U[j], 0.0]
        if eq[j]:
            A_eq.append(row)
            b_eq.append(lower[j])
            continue
        if math.isfinite(upper[j]):
            A_ub.append(row)
            b_ub.append(upper[j])
        if math.isfinite(lower[j]):
            A_ub.append(-row)
            b_ub.append(-lower[j])
    if objective is None:
        c = np.r_[np.zeros(k), -1.0]
        for i in range(k):
            row = np.zeros(k + 1)
            row[i], row[k] = -1.0, 1.0
            A_ub.append(row)
            b_ub.append(0.0)
        bounds = [(0, None)] * k + [(None, 1.0)]
    else:
        c = np.r_[-np.asarray(objective, dtype=float), 0.0]
        bounds = [(0, None)] * k + [(0, 0)]
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=b_ub if b_ub else None,
                  A_eq=np.array(A_eq), b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise ConvergenceError(f"phase-one LP failed: {res.message}")
    p = np.clip(res.x[:k], 0.0, None)
    return p, float(-res.fun)


def _separating_certificate(U: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Direction y with ``y . u_i - sup_{s in [lower, upper]} y . s >= margin > 0``.

    Such a y proves no pmf over these atoms meets the bounds.
    """
    J, k = U.shape
    # variables: a (J), b (J), s; y = a - b
    c = np.r_[np.zeros(2 * J), -1.0]
    hi = np.where(np.isfinite(upper), upper, 0.0)
    lo = np.where(np.isfinite(lower), lower, 0.0)
    A = np.hstack([-(U.T - hi), (U.T - lo), np.ones((k, 1))])
    bounds = ([(0, 1) if math.isfinite(upper[j]) else (0, 0) for j in range(J)]
              + [(0, 1) if math.isfinite(lower[j]) else (0, 0) for j in range(J)]
              + [(None, 1.0)])
    res = linprog(c, A_ub=A, b_ub=np.zeros(k), bounds=bounds, method="highs")
    if res.status != 0 or -res.fun <= 0:
        return None, 0.0
    y = res.x[:J] - res.x[J:2 * J]
    return y, float(-res.fun)


def _infeasible(U, lower, upper, what="constraint set") -> InfeasibleError:
    y, margin = _separating_certificate(U, lower, upper)
    msg = f"{what} is infeasible"
    if y is not None:
        msg += f" (separating direction {np.round(y, 12).tolist()}, margin {margin:.3g})"
    return InfeasibleError(msg, certificate=y, margin=margin)


def _maximal_support(U: np.ndarray, p0: np.ndarray) -> np.ndarray:
    """Atoms charged by at least one pmf with ``U p = 0``."""
    k = U.shape[1]
    zeros = np.zeros(U.shape[0])
    keep = p0 > SUPPORT_TOL
    for i in range(k):
        if keep[i]:
            continue
        e = np.zeros(k)
        e[i] = 1.0
        out = _phase_one(U, zeros, zeros, objective=e)
        if out is not None and out[1] > SUPPORT_TOL:
            keep |= out[0] > SUPPORT_TOL
    return keep


def _sign_infeasible(U: np.ndarray) -> bool:
    """Cheap hull test: some row is strictly one-signed over the atoms."""
    return bool(np.any(np.all(U > 0, axis=1) | np.all(U < 0, axis=1)))


# --------------------------------------------------------------------------
# dual solvers


def _tilted_oracle(logw: np.ndarray, U: np.ndarray):
    def oracle(lam):
        s = logw - lam @ U
        f = float(logsumexp(s))
        p = np.exp(s - f)
        mu = U @ p
        H = (U * p) @ U.T - np.outer(mu, mu)
        return f, -mu, H
    return oracle


def solve_tilted_dual(weights, U, gtol: float = GTOL, max_iter: int = MAX_ITER) -> DualSolution:
    """Minimize ``log sum_i w_i exp(-lam . U[:, i])`` over lam.

    The minimizer's tilted weights satisfy ``sum_i p_i U[:, i] = 0``. When
    zero lies on the boundary of the hull of the charged atoms the minimum is
    not attained; the problem is then solved on the face of atoms that some
    feasible pmf can charge (``on_face``). Raises :class:`InfeasibleError`
    when zero is outside the hull.
    """
    w = np.asarray(weights, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    J, k = U.shape
    supp = np.flatnonzero(w > 0)
    if supp.size == 0:
        raise ValidationError("all weights are zero")
    Us = U[:, supp]
    logw = np.log(w[supp])
    lam0 = np.zeros(J)
    if _sign_infeasible(Us):
        raise _infeasible(Us, np.zeros(J), np.zeros(J), "moment condition")
    out = _newton(_tilted_oracle(logw, Us), lam0, gtol, max_iter)
    on_face = False
    s = logw - out.lam @ Us
    # a converged run with vanishing weights may also be chasing a face
    if not out.converged or np.min(s - logsumexp(s)) < math.log(SUPPORT_TOL):
        zeros = np.zeros(J)
        ph = _phase_one(Us, zeros, zeros)
        if ph is None:
            raise _infeasible(Us, zeros, zeros, "moment condition")
        p0, margin = ph
        if margin > SUPPORT_TOL and not out.converged:
            raise ConvergenceError(
                f"tilted dual did not converge: gradient {out.grad_norm:.3g} "
                f"after {out.iterations} iterations")
        face = _maximal_support(Us, p0) if margin <= SUPPORT_TOL else np.ones(supp.size, bool)
        on_face = not face.all()
        if not on_face and not out.converged:
            raise ConvergenceError(
                f"tilted dual did not converge: gradient {out.grad_norm:.3g} "
                f"after {out.iterations} iterations")
    if on_face:
        supp, Us, logw = supp[face], Us[:, face], logw[face]
        out = _newton(_tilted_oracle(logw, Us), lam0, gtol, max_iter)
        if not out.converged:
            raise ConvergenceError(
                f"tilted dual did not converge on the face: gradient {out.grad_norm:.3g}")
        s = logw - out.lam @ Us
    probs = np.zeros(k)
    probs[supp] = np.exp(s - logsumexp(s))
    return DualSolution(out.lam, out.f, probs, out.grad_norm, out.iterations, on_face)


def _el_oracle(w: np.ndarray, U: np.ndarray):
    def oracle(lam):
        den = 1.0 - lam @ U
        if np.any(den <= 0):
            return math.inf, np.full(lam.shape, np.nan), None
        f = float(-np.sum(w * np.log(den)))
        a = w / den
        g = U @ a
        H = (U * (a / den)) @ U.T
        return f, g, H
    return oracle


def _el_max_step(U: np.ndarray):
    def max_step(lam, d):
        den = 1.0 - lam @ U
        ud = d @ U
        pos = ud > 0
        if not np.any(pos):
            return math.inf
        return float(np.min(den[pos] / ud[pos]))
    return max_step


def solve_el_dual(weights, U, gtol: float = GTOL, max_iter: int = MAX_ITER) -> DualSolution:
    """Minimize ``-sum_i w_i log(1 - lam . U[:, i])`` over its open domain.

    The returned ``probs`` are ``w_i / (1 - lam . U[:, i])`` normalized to
    sum to one (at the exact optimum the raw sum is the total weight). Finite only when some
    pmf charging every weighted atom satisfies ``sum_i p_i U[:, i] = 0``;
    otherwise :class:`InfeasibleError` is raised.
    """
    w = np.asarray(weights, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    J, k = U.shape
    supp = np.flatnonzero(w > 0)
    if supp.size == 0:
        raise ValidationError("all weights are zero")
    Us, ws = U[:, supp], w[supp]
    zeros = np.zeros(J)
    if _sign_infeasible(Us):
        raise _infeasible(Us, zeros, zeros, "moment condition")
    # the dual is homogeneous in the weights; normalizing keeps f on a unit scale
    total = ws.sum()
    out = _newton(_el_oracle(ws / total, Us), zeros, gtol, max_iter, _el_max_step(Us))
    den = 1.0 - out.lam @ Us
    # reweighting factors 1/den near zero mean the iterates chase the domain boundary
    if not out.converged or np.min(1.0 / den) < SUPPORT_TOL:
        ph = _phase_one(Us, zeros, zeros)
        if ph is None:
            raise _infeasible(Us, zeros, zeros, "moment condition")
        p0, margin = ph
        if margin <= SUPPORT_TOL:
            atom = int(supp[int(np.argmin(p0))])
            err = InfeasibleError(
                "no pmf charging every atom satisfies the moment condition; the dual "
                f"optimum sits on the domain boundary at atom {atom}")
            err.atom = atom
            raise err
        if not out.converged:
            raise ConvergenceError(
                f"EL dual did not converge: gradient {out.grad_norm:.3g} "
                f"after {out.iterations} iterations")
    probs = np.zeros(k)
    # sum_i w_i / den_i = 1 + lam . grad; renormalizing removes that O(|lam| gtol) drift
    a = ws / den
    probs[supp] = a / a.sum()
    return DualSolution(out.lam, out.f * total, probs, out.grad_norm, out.iterations, False)


# --------------------------------------------------------------------------
# projections onto regions


def _patterns(region: ConstraintRegion, rows: np.ndarray):
    """Active-set patterns ordered by number of active interval rows."""
    choices = []
    for j in rows:
        if region.is_equality[j]:
            choices.append(("eq",))
        else:
            opts = ["free"]
            if math.isfinite(region.lower[j]):
                opts.append("lo")
            if math.isfinite(region.upper[j]):
                opts.append("hi")
            choices.append(tuple(opts))
    pats = list(itertools.product(*choices))
    pats.sort(key=lambda pat: sum(s in ("lo", "hi") for s in pat))
    return pats


def _split_rows(region: ConstraintRegion):
    zero = ~np.any(region.u != 0, axis=1)
    bad = zero & ((region.lower > 0) | (region.upper < 0))
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise InfeasibleError(f"row {j} is identically zero but its bounds exclude 0")
    return np.flatnonzero(~zero)


def _project(base: Pmf, region: ConstraintRegion, kind: str, gtol, max_iter) -> ProjectionResult:
    if base.alphabet != region.alphabet:
        raise AlphabetMismatchError("region and pmf live on different alphabets")
    J = region.J
    rows = _split_rows(region)
    solver = solve_tilted_dual if kind == "I" else solve_el_dual
    # multiplier sign that keeps an upper bound binding
    hi_sign = 1.0 if kind == "I" else -1.0
    w = base.probs
    diagnostics = []
    if kind == "L" and np.any(w == 0):
        diagnostics.append("r has zeros; projection restricted to the support of r")
    boundary = None
    for pat in _patterns(region, rows):
        states = dict(zip(rows.tolist(), pat))
        act = [(j, s) for j, s in states.items() if s != "free"]
        lam = np.zeros(J)
        if act:
            idx = np.array([j for j, _ in act])
            b = np.array([region.upper[j] if s == "hi" else region.lower[j] for j, s in act])
            Ua = region.u[idx] - b[:, None]
            try:
                sol = solver(w, Ua, gtol=gtol, max_iter=max_iter)
            except InfeasibleError as err:
                if boundary is None and getattr(err, "atom", None) is not None:
                    boundary = err
                continue
            lam[idx] = sol.lam
            probs, iters, dual_min = sol.probs, sol.iterations, sol.value
            if sol.on_face:
                diagnostics.append("optimum on a face of the simplex; support reduced")
        else:
            probs, iters, dual_min = w.copy(), 0, 0.0
        if region.residual(probs) > KKT_TOL * max(1.0, float(np.abs(region.u).max())):
            continue
        ok = all((s != "hi" or hi_sign * lam[j] >= -KKT_TOL)
                 and (s != "lo" or hi_sign * lam[j] <= KKT_TOL) for j, s in act)
        if not ok:
            continue
        pmf = Pmf.normalized(base.alphabet, probs)
        if kind == "I":
            div = i_divergence(pmf, base)
            lval = None
        else:
            if abs(probs.sum() - 1.0) > 1e-10:
                raise ConvergenceError(f"L-projection weights sum to {probs.sum()!r}")
            div = i_divergence(base, pmf)
            lval = l_divergence(pmf, base)
            pos = w > 0
            ratio = float(np.min(probs[pos] / w[pos]))
            if ratio < NEAR_BOUNDARY:
                diagnostics.append(f"optimum near the domain boundary: min q_i/r_i = {ratio:.3g}")
        return ProjectionResult(
            pmf=pmf, multipliers=lam, divergence=div, dual_value=-dual_min,
            iterations=iters, residual=region.residual(pmf.probs),
            active=tuple(states.get(j, "zero") for j in range(J)),
            l_value=lval, diagnostics=tuple(diagnostics))
    mask = w > 0
    if kind == "L":
        if boundary is not None:
            raise boundary
        raise InfeasibleError(
            "no pmf positive on the support of r lies in the region",
            certificate=_separating_certificate(region.u[:, mask], region.lower, region.upper)[0])
    raise _infeasible(region.u[:, mask], region.lower, region.upper, "region")


def i_projection(q: Pmf, region: ConstraintRegion, gtol: float = GTOL,
                 max_iter: int = MAX_ITER) -> ProjectionResult:
    """I-projection ``argmin_{p in region} I(p||q)``.

    Returns the tilted pmf ``p_i ~ q_i exp(-lam . u_i)`` together with the
    multipliers. Interval rows are handled by trying active sets and keeping
    the first one whose KKT sign conditions hold.
    """
    return _project(q, region, "I", gtol, max_iter)


def l_projection(r: Pmf, region: ConstraintRegion, gtol: float = GTOL,
                 max_iter: int = MAX_ITER) -> ProjectionResult:
    """L-projection ``argmin_{q in region} L(q||r)``.

    Atoms where r vanishes get zero mass (the projection is computed on the
    support of r, and a diagnostic says so).
    """
    return _project(r, region, "L", gtol, max_iter)


def feasibility_check(region: ConstraintRegion) -> FeasibilityReport:
    """Decide whether some pmf meets every row of ``region``.

    The witness maximizes the smallest probability, so it is strictly
    positive whenever the region meets the open simplex.
    """
    out = _phase_one(region.u, region.lower, region.upper)
    if out is None:
        y, margin = _separating_certificate(region.u, region.lower, region.upper)
        return FeasibilityReport(False, certificate=y, margin=margin)
    p, t = out
    return FeasibilityReport(True, witness=Pmf.normalized(region.alphabet, p),
                             margin=t, interior=t > SUPPORT_TOL)
