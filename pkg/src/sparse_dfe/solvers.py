"""
First-order convex solvers used by the equalizers.

All three routines accept an optional precomputed ``gram = (A^H A, A^H y)``
pair. Inside the feedback loop the Gram matrix of a reduced system is a
principal submatrix of the full one, so callers can index instead of
recomputing ``A^H A`` every iteration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ShapeError, SingularityError


class StepRule(enum.Enum):
    #: plain projected gradient, step 1/L
    FIXED = "fixed_inverse_lipschitz"
    #: Nesterov-accelerated projected gradient, step 1/L, with a monotone
    #: safeguard (an iterate is only accepted if it lowers the objective)
    MONOTONE_ACCELERATED = "monotone_accelerated"


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 2000
    tol: float = 1e-8
    step_rule: StepRule = StepRule.MONOTONE_ACCELERATED
    l1_bisection_tol: float = 1e-2
    l1_bound_scale: float = 1.0
    l1_max_bisections: int = 60
    power_iters: int = 50

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))


@dataclass
class SolveResult:
    x: np.ndarray
    converged: bool
    iterations: int
    objective: float
    history: list[float] = field(default_factory=list)


# relative objective level treated as an exact fit
_ZERO_FIT = 1e-13


def _gram(A, y, gram):
    if gram is not None:
        return gram
    A = np.asarray(A)
    return A.conj().T @ A, A.conj().T @ y


def _check(A, y):
    A = np.asarray(A)
    y = np.asarray(y)
    if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
        raise ShapeError(f"A {A.shape} and y {y.shape} do not agree")
    return A, y


def lipschitz(G: np.ndarray, iters: int = 50, rtol: float = 1e-8) -> float:
    """Largest eigenvalue of the Hermitian PSD matrix ``G`` by power iteration."""
    n = G.shape[0]
    if n == 0:
        return 0.0
    # fixed pseudo-random start: a flat vector is an eigenvector of every circulant
    v = np.random.default_rng(0x5EED).standard_normal(n) + 0j
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = G @ v
        new = np.vdot(v, w).real
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    return float(lam)


def _clip(v, bound):
    return np.clip(v.real, -bound, bound) + 1j * np.clip(v.imag, -bound, bound)


def box_ls(A, y, bound: float, cfg: SolverConfig | None = None, *, x0=None,
           gram=None, record: bool = False) -> SolveResult:
    """Least squares over the box ``|Re x_i| <= bound, |Im x_i| <= bound``.

    Projected gradient with step ``1/L``, ``L`` the top eigenvalue of ``A^H A``;
    the default step rule adds monotone (FISTA-style) momentum, keeping a
    candidate only when it does not raise the objective. Stops when an accepted step lowers ``||Ax - y||^2`` by less than
    ``cfg.tol`` relative to its current value, or when the fit is exact to
    rounding. The returned iterate is always feasible.
    """
    cfg = cfg or SolverConfig()
    A, y = _check(A, y)
    if not bound > 0:
        raise ValueError("bound must be > 0")
    if A.shape[0] < A.shape[1]:
        raise ShapeError(f"box_ls needs rows >= cols, got {A.shape}")
    G, b = _gram(A, y, gram)
    yy = np.vdot(y, y).real
    n = G.shape[0]

    def objective(v, Gv):
        return max(np.vdot(v, Gv).real - 2 * np.vdot(v, b).real + yy, 0.0)

    L = lipschitz(G, cfg.power_iters)
    x = np.zeros(n, complex) if x0 is None else _clip(np.asarray(x0, complex), bound)
    f = objective(x, G @ x)
    history = [f] if record else []
    if L == 0 or n == 0:
        return SolveResult(x, True, 0, f, history)

    accelerate = cfg.step_rule is StepRule.MONOTONE_ACCELERATED
    z, x_prev, t = x.copy(), x.copy(), 1.0
    converged = f <= _ZERO_FIT * yy
    it = 0
    while not converged and it < cfg.max_iters:
        it += 1
        point = z if accelerate else x
        cand = _clip(point - (G @ point - b) / L, bound)
        fc = objective(cand, G @ cand)
        accepted = fc <= f
        if accelerate:
            t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            new_x = cand if accepted else x
            z = new_x + (t / t_next) * (cand - new_x) + ((t - 1) / t_next) * (new_x - x_prev)
            x_prev, t = new_x, t_next
        else:
            new_x = cand if accepted else x
        decrease = f - fc
        if accepted:
            x, f = new_x, fc
        if record:
            history.append(f)
        if f <= _ZERO_FIT * yy or (accepted and decrease <= cfg.tol * f):
            converged = True
        elif not accepted and not accelerate:
            # plain projected gradient can only stall here through rounding
            converged = True
    return SolveResult(x, converged, it, f, history)


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    """Complex soft-thresholding: shrink the modulus by ``lam``, keep the phase."""
    mag = np.abs(v)
    scale = np.maximum(mag - lam, 0.0) / np.where(mag > 0, mag, 1.0)
    return v * scale


def _lasso(G, c, rr, lam, L, e0, max_iters, tol):
    """FISTA for ``1/2 ||A e - r||^2 + lam ||e||_1``; returns (e, residual energy)."""
    e = e0.copy()
    z, t = e.copy(), 1.0
    for _ in range(max_iters):
        e_new = soft_threshold(z - (G @ z - c) / L, lam / L)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = e_new + ((t - 1) / t_next) * (e_new - e)
        step = np.linalg.norm(e_new - e)
        e, t = e_new, t_next
        if step <= tol * max(np.linalg.norm(e), 1e-300):
            break
    res = max(np.vdot(e, G @ e).real - 2 * np.vdot(e, c).real + rr, 0.0)
    return e, res


def l1_constrained(A, r, energy_bound: float, cfg: SolverConfig | None = None, *,
                   gram=None) -> SolveResult:
    """Minimize ``||e||_1`` subject to ``||A e - r||^2 <= energy_bound``.

    Solved as a sequence of Lagrangian (LASSO) problems with the multiplier
    found by geometric bisection. ``objective`` in the result is the
    residual energy ``||A e - r||^2`` of the returned vector.
    """
    cfg = cfg or SolverConfig()
    A, r = _check(A, r)
    if energy_bound < 0:
        raise ValueError("energy_bound must be >= 0")
    n = A.shape[1]
    rr = np.vdot(r, r).real
    if rr <= energy_bound:
        return SolveResult(np.zeros(n, complex), True, 0, rr)
    G, c = _gram(A, r, gram)
    L = lipschitz(G, cfg.power_iters)
    lam_hi = float(np.max(np.abs(c))) if n else 0.0
    if L == 0 or lam_hi == 0:
        return SolveResult(np.zeros(n, complex), False, 0, rr)

    target = energy_bound
    slack = cfg.l1_bisection_tol * target
    lam_lo = lam_hi * 1e-10
    e = np.zeros(n, complex)
    best = None  # (l1 norm, e, residual) of the sparsest feasible iterate
    closest = (np.inf, e, rr)
    steps = 0
    converged = False
    while steps < cfg.l1_max_bisections:
        steps += 1
        lam = np.sqrt(lam_lo * lam_hi)
        e, res = _lasso(G, c, rr, lam, L, e, cfg.max_iters, cfg.tol)
        if abs(res - target) < abs(closest[2] - target):
            closest = (np.sum(np.abs(e)), e, res)
        if res <= target + slack:
            l1 = np.sum(np.abs(e))
            if best is None or l1 < best[0]:
                best = (l1, e, res)
        if abs(res - target) <= slack:
            converged = True
            break
        if res > target:
            lam_hi = lam
        else:
            lam_lo = lam
        if lam_hi / lam_lo - 1 < 1e-10:
            break
    if converged:
        return SolveResult(e, True, steps, res)
    _, e_out, res_out = best if best is not None else closest
    return SolveResult(e_out, False, steps, res_out)


def ridge_ls(A, y, sigma2: float, *, gram=None) -> np.ndarray:
    """``(A^H A + sigma2 I)^{-1} A^H y`` by Cholesky; ``sigma2 = 0`` gives least squares."""
    A, y = _check(A, y)
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    G, b = _gram(A, y, gram)
    n = G.shape[0]
    M = G + sigma2 * np.eye(n) if sigma2 else G
    try:
        factor = scipy.linalg.cho_factor(M, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"normal equations are singular ({exc})") from None
    d = np.abs(np.diag(factor[0]))
    if n and d.min() <= 1e-10 * d.max():
        raise SingularityError("normal equations are numerically singular")
    return scipy.linalg.cho_solve(factor, b, check_finite=False)
