"""
Decision feedback with sparsity-adaptive thresholding.

Each outer iteration equalizes and detects the still-undecided symbols,
estimates the (sparse) error of those decisions from the residual, and feeds
back every symbol whose error estimate falls below a noise-adapted threshold.
Fed-back symbols are subtracted from the observation and their columns are
dropped, so the next system is smaller and overdetermined.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg.blas import zgerc

from .constellation import detect
from .equalizers import EqualizerKind, equalize
from .errors import ShapeError, SingularityError
from .solvers import SolverConfig, l1_constrained
from .system_model import SystemInstance


class ErrorEstimator(enum.Enum):
    MF = "mf"
    L1 = "l1"


class ThresholdRule(enum.Enum):
    ADAPTIVE = "adaptive"
    LOGM = "logm"
    FEEDBACK_ONE = "feedback-one"


RHO_FLOOR = 1e-12
# ||r|| below this times sqrt(rows) certifies the current decisions
ZERO_RESIDUAL = 1e-12


@dataclass(frozen=True)
class DfeConfig:
    """Feedback loop settings.

    ``max_outer_iters=None`` means ``2 m``. ``noise_scale="rows"`` divides the
    residual norm by the number of observations instead of the number of
    still-active unknowns when forming the threshold (diagnostic only).
    ``fast_linear`` lets ZF/MMSE reuse a downdated inverse across iterations
    instead of refactorizing the reduced normal equations.
    """

    equalizer: EqualizerKind = EqualizerKind.MMSE
    error_estimator: ErrorEstimator = ErrorEstimator.MF
    threshold_rule: ThresholdRule = ThresholdRule.ADAPTIVE
    max_outer_iters: int | None = None
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)
    noise_scale: str = "active"
    keep_snapshots: bool = False
    fast_linear: bool = True

    def __post_init__(self):
        object.__setattr__(self, "equalizer", EqualizerKind(self.equalizer))
        object.__setattr__(self, "error_estimator", ErrorEstimator(self.error_estimator))
        object.__setattr__(self, "threshold_rule", ThresholdRule(self.threshold_rule))
        if self.max_outer_iters is not None and self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.noise_scale not in ("active", "rows"):
            raise ValueError("noise_scale must be 'active' or 'rows'")


@dataclass
class ErrorEstimate:
    values: np.ndarray
    estimator: ErrorEstimator
    converged: bool = True


@dataclass
class IterationRecord:
    iteration: int
    n_active: int
    threshold: float
    rho: float
    residual_norm: float
    n_feedback: int
    fallback: str | None = None
    solver_failed: bool = False
    estimate_failed: bool = False
    snapshot: dict | None = None


@dataclass
class DfeState:
    """Loop state; ``active`` holds original indices of undecided symbols."""

    active: np.ndarray
    y_k: np.ndarray
    A_k: np.ndarray
    decided: dict[int, complex] = field(default_factory=dict)
    iteration: int = 0
    trace: list[IterationRecord] = field(default_factory=list)

    @classmethod
    def initial(cls, A, y) -> DfeState:
        A = np.asarray(A)
        return cls(np.arange(A.shape[1]), np.asarray(y, complex).copy(), A)

    @property
    def m(self) -> int:
        return len(self.active) + len(self.decided)

    def check_partition(self) -> None:
        idx = np.concatenate([self.active, np.fromiter(self.decided, int, len(self.decided))])
        if not np.array_equal(np.sort(idx), np.arange(self.m)):
            raise AssertionError("decided and active sets do not partition the block")
        if self.A_k.shape[1] != len(self.active):
            raise AssertionError("A_k columns do not match the active set")


@dataclass
class DfeResult:
    x_hat: np.ndarray
    trace: list[IterationRecord]

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def first_feedback(self) -> int:
        return self.trace[0].n_feedback if self.trace else 0

    @property
    def solver_failures(self) -> int:
        return sum(r.solver_failed or r.estimate_failed for r in self.trace)


def residual(y_k, A_k, xhat_k) -> np.ndarray:
    y_k = np.asarray(y_k)
    A_k = np.asarray(A_k)
    xhat_k = np.asarray(xhat_k)
    if A_k.shape != (y_k.size, xhat_k.size):
        raise ShapeError(f"A_k {A_k.shape} does not match y_k {y_k.shape} and x_hat {xhat_k.shape}")
    return y_k - A_k @ xhat_k


def error_estimate_mf(A_k, r_k) -> ErrorEstimate:
    """Matched-filter error estimate ``A_k^H r_k``."""
    return ErrorEstimate(np.asarray(A_k).conj().T @ r_k, ErrorEstimator.MF)


def error_estimate_l1(A_k, r_k, sigma2: float, cfg: SolverConfig | None = None, *,
                      gram=None) -> ErrorEstimate:
    """Sparsest error explaining the residual up to the expected noise energy."""
    cfg = cfg or SolverConfig()
    A_k = np.asarray(A_k)
    bound = A_k.shape[0] * sigma2 * cfg.l1_bound_scale
    res = l1_constrained(A_k, r_k, bound, cfg, gram=gram)
    return ErrorEstimate(res.x, ErrorEstimator.L1, res.converged)


def sparsity_estimate(r_k, s_min: float) -> float:
    """Estimated number of wrong decisions, ``||r_k||^2 / s_min^2``."""
    r_k = np.asarray(r_k)
    return float(np.vdot(r_k, r_k).real) / s_min**2


def threshold(m_k: int, rho_k: float, r_norm: float,
              rule: ThresholdRule = ThresholdRule.ADAPTIVE, scale_len: int | None = None) -> float:
    """Feedback cut-off for ``|e_hat|``.

    Adaptive: ``sqrt(2 ln(m_k / rho)) * ||r|| / sqrt(m_k)`` with ``rho`` clamped
    to ``[1e-12, m_k / e]`` so the logarithm stays >= 1. LOGM drops the
    sparsity penalty: ``sqrt(2 ln m_k) * ||r|| / sqrt(m_k)``. ``scale_len``
    replaces the ``sqrt(m_k)`` divisor when given.
    """
    rule = ThresholdRule(rule)
    sigma_m = r_norm / math.sqrt(scale_len or m_k)
    if rule is ThresholdRule.LOGM:
        return math.sqrt(2 * math.log(m_k)) * sigma_m
    rho = min(max(rho_k, RHO_FLOOR), m_k / math.e)
    return math.sqrt(2 * math.log(m_k / rho)) * sigma_m


def select_feedback(e_hat: ErrorEstimate | np.ndarray, t_k: float,
                    rule: ThresholdRule = ThresholdRule.ADAPTIVE) -> np.ndarray:
    """Positions (into the active set) judged correct.

    Everything strictly below ``t_k``; if nothing is, the single smallest
    entry. FEEDBACK_ONE always returns only the smallest entry.
    """
    values = e_hat.values if isinstance(e_hat, ErrorEstimate) else np.asarray(e_hat)
    mag = np.abs(values)
    if ThresholdRule(rule) is not ThresholdRule.FEEDBACK_ONE:
        chosen = np.flatnonzero(mag < t_k)
        if chosen.size:
            return chosen
    return np.array([int(np.argmin(mag))])


def cancel_interference(state: DfeState, selected, xhat_k,
                        record: IterationRecord | None = None) -> DfeState:
    """Subtract the selected decisions from ``y_k`` and drop their columns."""
    selected = np.asarray(selected, dtype=int)
    if selected.size == 0:
        raise ValueError("empty feedback selection")
    xhat_k = np.asarray(xhat_k)
    keep = np.ones(len(state.active), bool)
    keep[selected] = False
    y_next = state.y_k - state.A_k[:, selected] @ xhat_k[selected]
    decided = dict(state.decided)
    decided.update(zip(state.active[selected].tolist(), xhat_k[selected].tolist()))
    trace = state.trace + [record] if record is not None else list(state.trace)
    return DfeState(state.active[keep], y_next, state.A_k[:, keep], decided, state.iteration + 1, trace)


class _InverseTracker:
    """``(G_k + s I)^{-1}`` and ``A_k^H y_k`` kept in sync as columns leave.

    Removing a set S from the active set uses the Schur-complement identity
    ``inv(G_RR) = W_RR - W_RS inv(W_SS) W_SR``; large removals refactorize.
    """

    def __init__(self, G, b, shift):
        self.G = G
        self.shift = shift
        self.pos = np.arange(G.shape[0])
        self.b = b.copy()
        self.W = self._invert(G)

    def _invert(self, G_sub):
        n = G_sub.shape[0]
        M = G_sub + self.shift * np.eye(n) if self.shift else G_sub
        try:
            f = scipy.linalg.cho_factor(M, check_finite=False)
        except np.linalg.LinAlgError:
            raise SingularityError("normal equations are singular") from None
        d = np.abs(np.diag(f[0]))
        if d.min() <= 1e-10 * d.max():
            raise SingularityError("normal equations are numerically singular")
        return scipy.linalg.cho_solve(f, np.eye(n), check_finite=False)

    def solve(self):
        return self.W @ self.b

    def remove(self, sel, x_sel):
        if len(sel) == 1 and len(self.pos) > 1:
            j = int(sel[0])
            g = np.delete(self.G[self.pos, self.pos[j]], j)
            self.b = np.delete(self.b, j) - g * x_sel[0]
            w = np.delete(self.W[:, j], j)
            W = np.delete(np.delete(self.W, j, 0), j, 1)
            W -= np.outer(w / self.W[j, j].real, w.conj())
            self.W = W
            self.pos = np.delete(self.pos, j)
            return
        keep = np.ones(len(self.pos), bool)
        keep[sel] = False
        R = np.flatnonzero(keep)
        self.b = self.b[R] - self.G[np.ix_(self.pos[R], self.pos[sel])] @ x_sel
        if len(R) and len(sel) <= len(R):
            W_RS = self.W[np.ix_(R, sel)]
            W_SS = self.W[np.ix_(sel, sel)]
            W = self.W[np.ix_(R, R)] - W_RS @ np.linalg.solve(W_SS, W_RS.conj().T)
            self.W = 0.5 * (W + W.conj().T)
        elif len(R):
            self.W = self._invert(self.G[np.ix_(self.pos[R], self.pos[R])])
        else:
            self.W = np.zeros((0, 0), complex)
        self.pos = self.pos[R]


def _feedback_one_fast(instance: SystemInstance, cfg: DfeConfig, shift: float) -> DfeResult:
    """Feed-back-one loop on full-size buffers.

    Decided positions stay in place but are masked out: removing index ``j``
    from ``W = (G_k + s I)^{-1}`` is the rank-one update
    ``W - W[:, j] W[j, :] / W[j, j]``, which zeroes row and column ``j``, so
    every product can run on contiguous ``m x m`` arrays.
    """
    A, y = instance.A, instance.y
    c = instance.constellation
    rows, m = A.shape
    G = A.conj().T @ A
    W = np.asfortranarray(_InverseTracker(G, np.zeros(m, complex), shift).W)
    b = A.conj().T @ y
    yk = y.astype(complex)
    done = np.zeros(m, bool)
    x_out = np.empty(m, complex)
    trace = []
    for it in range(m):
        xhat = detect(W @ b, c)
        xhat[done] = 0
        r = yk - A @ xhat
        mag = np.abs(r.conj() @ A)  # |A^H r|
        mag[done] = np.inf
        j = int(np.argmin(mag))
        r_norm = float(np.linalg.norm(r))
        trace.append(IterationRecord(it, m - it, float("nan"), r_norm**2 / c.s_min**2, r_norm, 1))
        xj = xhat[j]
        x_out[j] = xj
        done[j] = True
        yk -= A[:, j] * xj
        b -= G[:, j] * xj
        b[j] = 0
        w = W[:, j].copy()
        zgerc(-1.0 / w[j].real, w, w, a=W, overwrite_a=1)
        W[j, :] = 0
        W[:, j] = 0
    return DfeResult(x_out, trace)


def run_dfe(instance: SystemInstance, cfg: DfeConfig | None = None) -> DfeResult:
    """Run the feedback loop on one instance and reassemble all ``m`` decisions."""
    cfg = cfg or DfeConfig()
    A, y, sigma2 = instance.A, instance.y, instance.sigma2
    c = instance.constellation
    rows, m = A.shape
    max_iters = cfg.max_outer_iters or 2 * m
    rule = cfg.threshold_rule
    scfg = cfg.solver_cfg

    if (rule is ThresholdRule.FEEDBACK_ONE and cfg.fast_linear and not cfg.keep_snapshots
            and cfg.error_estimator is ErrorEstimator.MF and cfg.equalizer is not EqualizerKind.CONVEX
            and max_iters >= m):
        try:
            return _feedback_one_fast(instance, cfg, sigma2 if cfg.equalizer is EqualizerKind.MMSE else 0.0)
        except SingularityError:
            pass

    G = A.conj().T @ A
    tracker = None
    if cfg.fast_linear and cfg.equalizer is not EqualizerKind.CONVEX:
        shift = sigma2 if cfg.equalizer is EqualizerKind.MMSE else 0.0
        try:
            tracker = _InverseTracker(G, A.conj().T @ y, shift)
        except SingularityError:
            tracker = None

    state = DfeState.initial(A, y)
    xhat = np.zeros(0, complex)
    while state.active.size and state.iteration < max_iters:
        act = state.active
        A_k, y_k = state.A_k, state.y_k
        failed = False
        if tracker is not None:
            soft = tracker.solve()
        else:
            gram = (G[np.ix_(act, act)], A_k.conj().T @ y_k)
            try:
                est = equalize(cfg.equalizer, A_k, y_k, sigma2, c, scfg, gram=gram)
                soft, failed = est.values, not est.converged
            except SingularityError:
                failed = True
            if failed:
                soft = equalize(EqualizerKind.MMSE, A_k, y_k, sigma2, c, scfg, gram=gram).values
        xhat = detect(soft, c)
        r = residual(y_k, A_k, xhat)
        r_norm = float(np.linalg.norm(r))
        if cfg.error_estimator is ErrorEstimator.L1:
            e_hat = error_estimate_l1(A_k, r, sigma2, scfg)
        else:
            e_hat = error_estimate_mf(A_k, r)
        m_k = len(act)
        rho = sparsity_estimate(r, c.s_min)
        fallback = None
        if rule is ThresholdRule.FEEDBACK_ONE:
            t = float("nan")
            sel = select_feedback(e_hat, t, rule)
        else:
            t = threshold(m_k, rho, r_norm, rule, rows if cfg.noise_scale == "rows" else None)
            if r_norm < ZERO_RESIDUAL * math.sqrt(rows):
                sel = np.arange(m_k)
                fallback = "zero-residual"
            else:
                sel = select_feedback(e_hat, t, rule)
                if not np.abs(e_hat.values[sel[0]]) < t:
                    fallback = "empty"
        snapshot = None
        if cfg.keep_snapshots:
            snapshot = {"active": act.copy(), "x_hat": xhat.copy(), "e_hat": e_hat.values.copy(),
                        "selected": sel.copy()}
        record = IterationRecord(state.iteration, m_k, t, rho, r_norm, len(sel), fallback,
                                 failed, not e_hat.converged, snapshot)
        if tracker is not None:
            tracker.remove(sel, xhat[sel])
        state = cancel_interference(state, sel, xhat, record)

    x_out = np.empty(m, complex)
    for i, s in state.decided.items():
        x_out[i] = s
    if state.active.size:
        # iteration cap reached: undecided symbols keep their latest detection
        x_out[state.active] = xhat[np.isin(act, state.active)]
    return DfeResult(x_out, state.trace)
