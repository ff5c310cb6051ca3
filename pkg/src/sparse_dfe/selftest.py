"""Quick oracle-equivalence and invariant checks runnable without pytest."""

from __future__ import annotations

import itertools

import numpy as np
import scipy.optimize

from .constellation import Modulation, detect, get_constellation, modulate
from .dfe import DfeConfig, ThresholdRule, run_dfe
from .equalizers import EqualizerKind, equalize_and_detect
from .harness import ml_oracle, trial_rng
from .solvers import SolverConfig, box_ls, l1_constrained, ridge_ls
from .system_model import SpreadingKind, make_instance, make_spreading, snr_to_sigma2


def _box_oracle(A, y, bound):
    """Bounded least squares on the stacked real system, via scipy's BVLS."""
    Ar = np.block([[A.real, -A.imag], [A.imag, A.real]])
    yr = np.concatenate([y.real, y.imag])
    sol = scipy.optimize.lsq_linear(Ar, yr, bounds=(-bound, bound), method="bvls", tol=1e-14)
    n = A.shape[1]
    return sol.x[:n] + 1j * sol.x[n:]


def check_constellations():
    for kind in Modulation:
        c = get_constellation(kind)
        bits = np.array(list(itertools.product([0, 1], repeat=c.bits_per_symbol))).ravel()
        sym = modulate(bits, c)
        assert np.array_equal(detect(sym, c), sym)
        assert abs(np.mean(np.abs(c.points) ** 2) - 1) < 1e-12


def check_unitary_spreading():
    rng = trial_rng(0, 0)
    for kind in (SpreadingKind.DFT, SpreadingKind.HADAMARD, SpreadingKind.HAAR):
        U = make_spreading(kind, 16, rng)
        assert np.abs(U.conj().T @ U - np.eye(16)).max() < 1e-10


def check_box_ls_oracle():
    rng = trial_rng(0, 1)
    A = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)) + 4 * np.eye(8)
    y = 3 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
    res = box_ls(A, y, 1.0, SolverConfig(max_iters=20000, tol=1e-14))
    ref = _box_oracle(A, y, 1.0)
    f = np.linalg.norm(A @ res.x - y) ** 2
    f_ref = np.linalg.norm(A @ ref - y) ** 2
    assert abs(f - f_ref) <= 1e-4 * max(1.0, f_ref)


def check_ridge_ls():
    rng = trial_rng(0, 2)
    A = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
    y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    ref = np.linalg.inv(A.conj().T @ A + 0.3 * np.eye(4)) @ A.conj().T @ y
    assert np.allclose(ridge_ls(A, y, 0.3), ref, atol=1e-10)


def check_l1_degenerate():
    r = np.array([0.1, -0.1j, 0.05])
    assert not np.any(l1_constrained(np.eye(3), r, 1.0).x)


def check_noiseless_dfe():
    c = get_constellation("qpsk")
    for rule in ThresholdRule:
        for eq in EqualizerKind:
            inst = make_instance(16, c, "dft", 0.0, trial_rng(0, 3))
            assert np.array_equal(run_dfe(inst, DfeConfig(eq, threshold_rule=rule)).x_hat, inst.x_true)


def check_fast_paths():
    c = get_constellation("qpsk")
    for rule in ThresholdRule:
        for t in range(3):
            inst = make_instance(32, c, "dft", snr_to_sigma2(8), trial_rng(0, 4, t))
            a = run_dfe(inst, DfeConfig(threshold_rule=rule)).x_hat
            b = run_dfe(inst, DfeConfig(threshold_rule=rule, fast_linear=False)).x_hat
            assert np.array_equal(a, b)


def check_ml_dominance():
    c = get_constellation("qpsk")
    inst = make_instance(4, c, "haar", 0.0, trial_rng(0, 5))
    assert np.array_equal(ml_oracle(inst), inst.x_true)
    assert np.array_equal(equalize_and_detect("mmse", inst.A, inst.y, 0.0, c), inst.x_true)


CHECKS = [
    check_constellations,
    check_unitary_spreading,
    check_box_ls_oracle,
    check_ridge_ls,
    check_l1_degenerate,
    check_noiseless_dfe,
    check_fast_paths,
    check_ml_dominance,
]


def run_selftest(out=print) -> bool:
    ok = True
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            check()
            out(f"PASS {name}")
        except Exception as exc:  # report every failure, keep going
            ok = False
            out(f"FAIL {name}: {type(exc).__name__} {exc}")
    return ok
