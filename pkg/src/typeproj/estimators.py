"""Estimating-equation estimators built on the projection duals.

Each estimator maximizes over a theta grid a profile obtained by minimizing
a convex dual in the multipliers lam:

=================  ==============================================  =========
estimator          inner objective (minimized over lam)            atoms
=================  ==============================================  =========
MaxMaxEnt          log sum_i r_i exp(-lam . u(x_i; theta))         alphabet
L-projection       -sum_i r_i log(1 - lam . u(x_i; theta))         alphabet
EMME               log sum_l exp(-lam . u(x_l; theta)) - log N      sample
EL                 -sum_l log(1 - lam . u(x_l; theta))             sample
=================  ==============================================  =========

The grid argmax is refined by root-finding on the profile derivative, which
by the envelope theorem equals the partial theta-derivative of the inner
objective at the optimal lam. Golden-section search is the fallback when the
derivative does not bracket a root. With two parameters a bounded
quasi-Newton step inside the grid cell comes first, then coordinate sweeps.

Multipliers follow the ``1 - lam . u`` sign convention. The usual empirical
likelihood form ``1 + lam . u`` is the same problem with ``lam`` negated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar
from scipy.special import logsumexp

from .core import Pmf, Sample
from .errors import InfeasibleError, ValidationError
from .projections import solve_el_dual, solve_tilted_dual

REFINE_XTOL = 1e-12
GOLDEN_WIDTH = 1e-6
ATTAIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EEModel:
    """Estimating functions ``u(x, theta) -> R^J`` plus a finite theta grid."""

    evaluator: Callable[[float, np.ndarray], Sequence[float]]
    theta_grid: np.ndarray
    J: int = 0
    K: int = 0
    forms: tuple = ()

    def __post_init__(self):
        grid = np.asarray(self.theta_grid, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        if grid.ndim != 2 or grid.shape[0] == 0:
            raise ValidationError("theta_grid must be a nonempty list of theta values",
                                  field="theta_grid")
        if grid.shape[1] > 2:
            raise ValidationError("at most two parameters are supported", field="theta_grid")
        grid.setflags(write=False)
        object.__setattr__(self, "theta_grid", grid)
        object.__setattr__(self, "K", grid.shape[1])
        probe = np.atleast_1d(np.asarray(self.evaluator(0.0, grid[0]), dtype=float))
        object.__setattr__(self, "J", probe.size)

    def u_matrix(self, points: np.ndarray, theta) -> np.ndarray:
        """``(J, len(points))`` matrix of estimating-function values."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return np.array([np.atleast_1d(self.evaluator(float(x), theta)) for x in points],
                        dtype=float).reshape(len(points), self.J).T

    @classmethod
    def from_forms(cls, forms: Sequence[dict], theta_grid) -> "EEModel":
        """Build a model from the JSON function forms.

        ``{"form": "moment", "power": p}`` gives ``x**p - theta**p`` and
        ``{"form": "centered_power", "power": p, "offset": c}`` gives
        ``(x - theta)**p - c``. ``"param"`` picks the theta coordinate
        (default 0).
        """
        parsed = []
        for k, f in enumerate(forms):
            kind = f.get("form")
            if kind not in ("moment", "centered_power"):
                raise ValidationError(f"model.u[{k}]: unknown form {kind!r}", field="model.u")
            extra = set(f) - {"form", "power", "offset", "param"}
            if extra:
                raise ValidationError(f"model.u[{k}]: unexpected key {sorted(extra)[0]!r}",
                                      field="model.u")
            if kind == "moment" and "offset" in f:
                raise ValidationError(f"model.u[{k}]: 'moment' takes no offset", field="model.u")
            parsed.append((kind, int(f.get("power", 1)), float(f.get("offset", 0.0)),
                           int(f.get("param", 0))))
        if not parsed:
            raise ValidationError("model.u is empty", field="model.u")

        def evaluator(x, theta):
            out = []
            for kind, p, c, k in parsed:
                t = theta[k]
                out.append(x ** p - t ** p if kind == "moment" else (x - t) ** p - c)
            return out

        grid = np.asarray(theta_grid, dtype=float)
        K = 1 if grid.ndim == 1 else grid.shape[1]
        if any(k >= K or k < 0 for *_, k in parsed):
            raise ValidationError("model.u refers to a missing theta coordinate", field="model.u")
        return cls(evaluator, grid, forms=tuple(dict(f) for f in forms))


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Estimator output.

    ``weights`` are the implied probabilities on ``points``: the alphabet for
    MaxMaxEnt and L-projection, the individual sample draws for EL and EMME.
    """

    method: str
    theta_hat: np.ndarray
    lambda_hat: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    objective: float
    profile: list = field(default_factory=list)
    ties: int = 1
    diagnostics: tuple[str, ...] = ()

    def moment_residual(self, model: EEModel) -> float:
        U = model.u_matrix(self.points, self.theta_hat)
        return float(np.abs(U @ self.weights).max())


class _Problem:
    """Inner dual for one estimator on grouped atoms."""

    def __init__(self, method: str, model: EEModel, atoms: np.ndarray, weights: np.ndarray):
        self.method = method
        self.model = model
        self.atoms = atoms
        self.w = weights
        self.tilted = method in ("maxmaxent", "emme")

    def inner(self, theta):
        U = self.model.u_matrix(self.atoms, theta)
        solver = solve_tilted_dual if self.tilted else solve_el_dual
        return solver(self.w, U), U

    def objective(self, lam, theta) -> float:
        U = self.model.u_matrix(self.atoms, theta)
        pos = self.w > 0
        if self.tilted:
            return float(logsumexp(np.log(self.w[pos]) - lam @ U[:, pos]))
        den = 1.0 - lam @ U[:, pos]
        if np.any(den <= 0):
            return math.nan
        return float(-np.sum(self.w[pos] * np.log(den)))

    def profile(self, theta) -> float:
        try:
            sol, _ = self.inner(theta)
        except InfeasibleError:
            return -math.inf
        return sol.value

    def derivative(self, theta, k: int) -> float:
        try:
            sol, _ = self.inner(theta)
        except InfeasibleError:
            return math.nan
        theta = np.array(theta, dtype=float)
        h = 1e-5 * max(1.0, abs(theta[k]))
        up, dn = theta.copy(), theta.copy()
        up[k] += h
        dn[k] -= h
        return (self.objective(sol.lam, up) - self.objective(sol.lam, dn)) / (2 * h)


def _refine_1d(prob: _Problem, theta: np.ndarray, k: int, lo: float, hi: float,
               current: float) -> tuple[np.ndarray, float]:
    def at(v):
        t = theta.copy()
        t[k] = v
        return t

    best_t, best_v = theta, current
    if hi <= lo:
        return best_t, best_v
    d_lo, d_hi = prob.derivative(at(lo), k), prob.derivative(at(hi), k)
    cand = None
    if np.isfinite(d_lo) and np.isfinite(d_hi):
        if d_lo == 0:
            cand = lo
        elif d_hi == 0:
            cand = hi
        elif d_lo > 0 > d_hi:
            cand = brentq(lambda v: prob.derivative(at(v), k), lo, hi, xtol=REFINE_XTOL,
                          rtol=4 * np.finfo(float).eps, maxiter=200)
    if cand is None:
        res = minimize_scalar(lambda v: -_finite(prob.profile(at(v))), bounds=(lo, hi),
                              method="bounded", options={"xatol": GOLDEN_WIDTH})
        cand = float(res.x)
    val = prob.profile(at(cand))
    if val >= best_v - ATTAIN_TOL and np.isfinite(val):
        best_t, best_v = at(cand), val
    return best_t, best_v


def _refine_box(prob: _Problem, theta: np.ndarray, brackets, current: float
                ) -> tuple[np.ndarray, float]:
    """Quasi-Newton ascent inside the grid cell, with envelope-theorem gradients."""
    K = theta.size

    def fun(t):
        v = prob.profile(t)
        if not np.isfinite(v):
            return 1e300, np.zeros(K)
        g = np.array([prob.derivative(t, k) for k in range(K)])
        return -v, -np.nan_to_num(g)

    res = minimize(fun, theta, jac=True, method="L-BFGS-B", bounds=brackets,
                   options={"ftol": 0.0, "gtol": 1e-13, "maxiter": 200})
    val = prob.profile(res.x)
    if np.isfinite(val) and val >= current - ATTAIN_TOL:
        return np.asarray(res.x, dtype=float), val
    return theta, current


def _finite(v: float) -> float:
    return v if np.isfinite(v) else -1e300


def _neighbors(values: np.ndarray, v: float) -> tuple[float, float]:
    i = int(np.searchsorted(values, v))
    lo = values[i - 1] if i > 0 else values[i]
    hi = values[i + 1] if i + 1 < values.size else values[i]
    return float(lo), float(hi)


def _estimate(prob: _Problem, refine: bool = True) -> EstimateReport:
    model = prob.model
    grid = model.theta_grid
    vals = np.array([prob.profile(t) for t in grid])
    profile = [(tuple(float(x) for x in t), float(v)) for t, v in zip(grid, vals)]
    if np.all(vals == -np.inf):
        raise InfeasibleError(f"{prob.method}: moment conditions infeasible at every theta")
    best = vals.max()
    tied = np.flatnonzero(vals >= best - ATTAIN_TOL)
    # lexicographically smallest theta among ties
    order = np.lexsort(grid[tied].T[::-1])
    i0 = int(tied[order[0]])
    theta, value = grid[i0].copy(), float(vals[i0])
    diagnostics = []
    if np.any(vals == -np.inf):
        diagnostics.append(f"hull condition fails at {int(np.sum(vals == -np.inf))} grid points")
    if refine:
        axes = [np.unique(grid[:, k]) for k in range(model.K)]
        brackets = [_neighbors(axes[k], theta[k]) for k in range(model.K)]
        sweeps = 1
        if model.K > 1:
            theta, value = _refine_box(prob, theta, brackets, value)
            sweeps = 10
        for _ in range(sweeps):
            prev = theta.copy()
            for k in range(model.K):
                theta, value = _refine_1d(prob, theta, k, *brackets[k], value)
            if np.max(np.abs(theta - prev)) < 1e-12:
                break
    sol, _ = prob.inner(theta)
    return EstimateReport(
        method=prob.method, theta_hat=theta, lambda_hat=sol.lam, weights=sol.probs,
        points=prob.atoms, objective=float(sol.value), profile=profile,
        ties=int(tied.size), diagnostics=tuple(diagnostics))


def _grouped(sample: Sample):
    vals = sample.values()
    atoms, inverse, counts = np.unique(vals, return_inverse=True, return_counts=True)
    return atoms, inverse, counts.astype(float)


def _expand(report: EstimateReport, sample: Sample, inverse, counts) -> EstimateReport:
    """Spread grouped atom weights back over individual draws."""
    per_draw = (report.weights / counts)[inverse]
    per_draw = per_draw / per_draw.sum()
    return EstimateReport(
        method=report.method, theta_hat=report.theta_hat, lambda_hat=report.lambda_hat,
        weights=per_draw, points=sample.values(), objective=report.objective,
        profile=report.profile, ties=report.ties,
        diagnostics=report.diagnostics)


def _check_sample(sample: Sample, model: EEModel):
    if len(sample) < model.J:
        raise ValidationError(f"sample size {len(sample)} is below J={model.J}", field="sample")


def maxmaxent_estimate(r: Pmf, model: EEModel, refine: bool = True) -> EstimateReport:
    """MaxMaxEnt: ``argmax_theta min_lam log sum_i r_i exp(-lam . u(x_i; theta))``.

    The profile at theta equals ``-I(Pi(theta)||r)``; weights are the
    I-projection of r on the moment set at the estimate.
    """
    prob = _Problem("maxmaxent", model, r.alphabet.as_array(), r.probs)
    return _estimate(prob, refine)


def lprojection_estimate(r: Pmf, model: EEModel, refine: bool = True) -> EstimateReport:
    """Population version of EL: the profile is ``-I(r||q_hat(theta))``."""
    prob = _Problem("lprojection", model, r.alphabet.as_array(), r.probs)
    return _estimate(prob, refine)


def el_estimate(sample: Sample, model: EEModel, refine: bool = True) -> EstimateReport:
    """Empirical likelihood estimate.

    The profile is ``min_lam -sum_l log(1 - lam . u(x_l; theta))`` and the
    weights are ``1 / (n (1 - lam . u(x_l; theta_hat)))``.
    """
    _check_sample(sample, model)
    atoms, inverse, counts = _grouped(sample)
    prob = _Problem("el", model, atoms, counts)
    return _expand(_estimate(prob, refine), sample, inverse, counts)


def emme_estimate(sample: Sample, model: EEModel, refine: bool = True) -> EstimateReport:
    """Empirical maximum maximum entropy (exponential tilting) estimate.

    The profile is shifted by ``-log N`` so that zero means the empirical
    distribution itself satisfies the moment conditions.
    """
    _check_sample(sample, model)
    atoms, inverse, counts = _grouped(sample)
    N = counts.sum()
    prob = _Problem("emme", model, atoms, counts / N)
    return _expand(_estimate(prob, refine), sample, inverse, counts)

