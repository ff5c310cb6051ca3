"""End-to-end acceptance criteria, each printed as one PASS/FAIL line.

Trial budgets target a single CPU. Statistical comparisons use the binomial
standard error of each BER cell; ``a <= b`` is accepted when
``a - b <= 2 * sqrt(se_a^2 + se_b^2)``.
"""

import math
import os

import numpy as np
import pytest

from sparse_dfe import (DfeConfig, EqualizerKind, ErrorEstimator, SolverConfig, ThresholdRule,
                        box_ls, equalize_and_detect, get_constellation, l1_constrained, make_instance,
                        ridge_ls, run_dfe, snr_to_sigma2)
from sparse_dfe.harness import (FEED_BACK_ONE, INF, INF_THRESH, L1_THRESH, MMSE, MMSE_LOGM, MMSE_THRESH,
                                Pipeline, SweepConfig, first_iteration_feedback, ml_oracle, run_pipeline,
                                run_sweep, snr_at_ber, mf_noise_samples, trial_rng)

from conftest import CRITERIA, random_unitary

pytestmark = pytest.mark.acceptance

# trial caps per BER cell; the ordering sweeps stop earlier once 100 bit errors are in
CAP_ORDERING = int(os.environ.get("SPARSE_DFE_ACCEPT_CAP", "10000"))
CAP_SECONDARY = int(os.environ.get("SPARSE_DFE_ACCEPT_CAP2", "3000"))


def record(n, ok, detail):
    CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(CRITERIA[n])
    assert ok, detail


def se(p):
    return math.sqrt(max(p.ber * (1 - p.ber), 0.0) / p.bits)


def not_worse(a, b, k=2.0):
    """BER(a) <= BER(b) within k combined standard errors."""
    return a.ber - b.ber <= k * math.hypot(se(a), se(b))


def ordering_violations(report, chain, snrs):
    bad = []
    for snr in snrs:
        cells = [report.get(name, snr) for name in chain]
        for lo, hi in zip(cells, cells[1:]):
            if not not_worse(lo, hi):
                bad.append(f"{snr:g}dB {lo.config}={lo.ber:.3g} > {hi.config}={hi.ber:.3g}")
    return bad


ORDER = ["Feed back", "inf+thresh", "MMSE+thresh", "inf", "MMSE"]


def ordering_sweep(spreading, snrs, cap):
    cfg = SweepConfig(m=128, spreading=spreading, snr_db_list=snrs,
                      pipelines=(MMSE, INF, MMSE_THRESH, INF_THRESH, FEED_BACK_ONE),
                      trials_per_point=cap, min_bit_errors=100)
    return run_sweep(cfg)


# ---------------------------------------------------------------------------


def test_c01_noiseless_exactness():
    configs = [None] + [DfeConfig(eq, est, rule) for eq in EqualizerKind for est in ErrorEstimator
                        for rule in ThresholdRule]
    failures = []
    runs = 0
    for m in (8, 32, 128):
        for mod in ("bpsk", "qpsk", "qam16"):
            c = get_constellation(mod)
            for spreading in ("dft", "hadamard", "haar"):
                inst = make_instance(m, c, spreading, 0.0, trial_rng(101, m, len(mod), len(spreading)))
                for eq in EqualizerKind:
                    runs += 1
                    if not np.array_equal(equalize_and_detect(eq, inst.A, inst.y, 0.0, c), inst.x_true):
                        failures.append(f"{m}/{mod}/{spreading}/{eq.value}")
                for cfg in configs[1:]:
                    runs += 1
                    if not np.array_equal(run_dfe(inst, cfg).x_hat, inst.x_true):
                        failures.append(f"{m}/{mod}/{spreading}/{cfg.equalizer.value}-"
                                        f"{cfg.error_estimator.value}-{cfg.threshold_rule.value}")
    record(1, not failures, f"{runs - len(failures)}/{runs} noiseless runs bit-exact {failures[:5]}")


def test_c02_matched_filter_noise_statistics():
    res = mf_noise_samples(m=128, snr_db=8.0, n_trials=100, seed=202, spreading="dft", iterations=(0,))
    st = res.stats[0]
    n_pooled = st.pooled.size
    rel = st.empirical_var / st.predicted_var - 1
    ks = st.ks()
    ok = n_pooled >= 10_000 and abs(rel) <= 0.05 and ks.pvalue >= 0.01
    record(2, ok, f"pooled={n_pooled} var={st.empirical_var:.4f} predicted={st.predicted_var:.4f} "
                  f"({rel:+.1%}, need within 5%) KS p={ks.pvalue:.3g} (need >= 0.01)")


def test_c03_first_iteration_feedback():
    sc = first_iteration_feedback(m=128, snr_db=10.0, n_trials=200, seed=303, max_errors=6)
    ok = sc.median_fed_back > 90 and sc.wrong_inclusion_rate < 0.02
    record(3, ok, f"median fed back={sc.median_fed_back:g} (need > 90) "
                  f"wrong inclusion={sc.wrong_inclusion_rate:.3%} (need < 2%)")


def test_c04_dft_ordering_and_gain():
    snrs = tuple(float(s) for s in range(0, 15, 2))
    report = ordering_sweep("dft", snrs, CAP_ORDERING)
    bad = ordering_violations(report, ORDER, [s for s in snrs if s >= 8])
    # the MMSE curve reaches 1e-3 just beyond 14 dB; extend both curves for the gap only
    ext = run_sweep(SweepConfig(m=128, spreading="dft", snr_db_list=(16.0, 18.0), pipelines=(MMSE, MMSE_THRESH),
                                trials_per_point=CAP_ORDERING, min_bit_errors=100))
    full = report + ext
    s_mmse = snr_at_ber(full.curve("MMSE"), 1e-3)
    s_thr = snr_at_ber(full.curve("MMSE+thresh"), 1e-3)
    gap = None if s_mmse is None or s_thr is None else s_mmse - s_thr
    ok = not bad and gap is not None and abs(gap - 4.0) <= 1.5
    gap_txt = "n/a" if gap is None else f"{gap:.2f}"
    record(4, ok, f"ordering violations at >=8dB: {bad or 'none'}; MMSE vs MMSE+thresh gap at 1e-3 = "
                  f"{gap_txt} dB (need 4 +- 1.5)")


def test_c05_penalty_factor():
    snrs = tuple(float(s) for s in range(0, 15, 2))
    report = run_sweep(SweepConfig(m=128, snr_db_list=snrs, pipelines=(MMSE_THRESH, MMSE_LOGM),
                                   trials_per_point=CAP_ORDERING, min_bit_errors=100))
    bad = [f"{s:g}dB" for s in snrs if not not_worse(report.get("MMSE+thresh", s), report.get("MMSE+logm", s))]
    record(5, not bad, f"adaptive <= logm within 2 SE at every SNR; violations: {bad or 'none'}")


def test_c06_convergence_iterations():
    snrs = (8.0, 10.0, 12.0, 14.0)
    medians = {}
    for m, trials in ((128, 200), (1024, 30)):
        cfg = SweepConfig(m=m, snr_db_list=snrs, pipelines=(MMSE_THRESH,), trials_per_point=trials,
                          min_bit_errors=10**12, min_trials=trials, batch_size=trials)
        medians[m] = [p.median_iters for p in run_sweep(cfg).points]
    ok = all(v <= 5 for vals in medians.values() for v in vals) and \
        all(abs(a - b) <= 2 for a, b in zip(medians[128], medians[1024]))
    record(6, ok, f"median outer iterations at {snrs} dB: m=128 {medians[128]}, m=1024 {medians[1024]}")


def test_c07_block_length_insensitivity():
    pts = {}
    for m in (128, 1024):
        cfg = SweepConfig(m=m, snr_db_list=(10.0,), pipelines=(MMSE_THRESH,), trials_per_point=20000,
                          min_bit_errors=1000, min_trials=10, batch_size=10)
        pts[m] = run_sweep(cfg).points[0]
    a, b = pts[128], pts[1024]
    ratio = b.ber / a.ber
    (alo, ahi), (blo, bhi) = a.ci, b.ci
    gap = max(alo - bhi, blo - ahi, 0.0)
    # adjacent: the intervals are separated by no more than the wider half-width
    adjacent = gap <= max(ahi - alo, bhi - blo) / 2
    ok = 0.5 <= ratio <= 2.0 and adjacent
    record(7, ok, f"BER m=128 {a.ber:.3g} [{alo:.3g},{ahi:.3g}] m=1024 {b.ber:.3g} [{blo:.3g},{bhi:.3g}] "
                  f"ratio={ratio:.2f} interval gap={gap:.2g}")


def test_c08_other_spreadings():
    snrs = (8.0, 10.0, 12.0, 14.0)
    bad = []
    for spreading in ("hadamard", "haar"):
        report = ordering_sweep(spreading, snrs, CAP_SECONDARY)
        bad += [f"{spreading}: {v}" for v in ordering_violations(report, ORDER, snrs)]
    record(8, not bad, f"ordering violations at >=8dB: {bad or 'none'}")


def test_c09_gaussian_spreading():
    snrs = tuple(float(s) for s in range(0, 21, 2))
    cfg = SweepConfig(m=128, spreading="gaussian", snr_db_list=snrs,
                      pipelines=(MMSE, MMSE_THRESH, INF_THRESH, FEED_BACK_ONE),
                      trials_per_point=CAP_SECONDARY, min_bit_errors=100)
    report = run_sweep(cfg)
    s_mmse = snr_at_ber(report.curve("MMSE"), 1e-2)
    s_thr = snr_at_ber(report.curve("MMSE+thresh"), 1e-2)
    gap = None if s_mmse is None or s_thr is None else s_mmse - s_thr
    differ = []
    for s in snrs:
        a, b = report.get("inf+thresh", s), report.get("Feed back", s)
        if abs(a.ber - b.ber) > 2 * math.hypot(se(a), se(b)):
            differ.append(f"{s:g}dB {a.ber:.3g} vs {b.ber:.3g}")
    ok = gap is not None and gap >= 5.0 and not differ
    gap_txt = "n/a" if gap is None else f"{gap:.2f}"
    record(9, ok, f"MMSE vs MMSE+thresh gap at 1e-2 = {gap_txt} dB (need >= 5); "
                  f"inf+thresh vs feedback-one distinguishable at: {differ or 'none'}")


def test_c10_ml_dominance():
    c = get_constellation("qpsk")
    sigma2 = snr_to_sigma2(6.0)
    pipes = [MMSE, INF, MMSE_THRESH, INF_THRESH, L1_THRESH, FEED_BACK_ONE, MMSE_LOGM,
             Pipeline("ZF", EqualizerKind.ZF), Pipeline("ZF+thresh", EqualizerKind.ZF, ThresholdRule.ADAPTIVE)]
    cfg = SolverConfig()
    n = 10_000
    ml_err = np.zeros(n)
    err = {p.name: np.zeros(n) for p in pipes}
    for t in range(n):
        inst = make_instance(6, c, "dft", sigma2, trial_rng(1010, t))
        ml_err[t] = np.count_nonzero(ml_oracle(inst) != inst.x_true)
        for p in pipes:
            err[p.name][t] = np.count_nonzero(run_pipeline(inst, p, cfg)[0] != inst.x_true)
    ser_ml = ml_err.sum() / (6 * n)
    beaten = []
    for name, e in err.items():
        ser = e.sum() / (6 * n)
        se_ = math.hypot(math.sqrt(ser * (1 - ser) / (6 * n)), math.sqrt(ser_ml * (1 - ser_ml) / (6 * n)))
        if ser_ml - ser > 2 * se_:
            beaten.append(f"{name}={ser:.4f}")
    worst = min(err, key=lambda k: err[k].sum())
    record(10, not beaten, f"ML SER={ser_ml:.4f}, best other {worst}={err[worst].sum() / (6 * n):.4f}; "
                           f"configs beating ML beyond 2 SE: {beaten or 'none'}")


def test_c11_solver_properties():
    rng = np.random.default_rng(1111)
    problems = []
    for trial in range(60):
        n = int(rng.integers(1, 17))
        rows = n + int(rng.integers(0, 8))
        A = rng.standard_normal((rows, n)) + 1j * rng.standard_normal((rows, n))
        y = 3 * (rng.standard_normal(rows) + 1j * rng.standard_normal(rows))
        bound = float(rng.uniform(0.1, 2))
        res = box_ls(A, y, bound, SolverConfig(max_iters=500), x0=4 * y[:n], record=True)
        if np.any(np.diff(res.history) > 0):
            problems.append(f"box_ls objective increased (trial {trial})")
        if np.any(np.abs(res.x.real) > bound) or np.any(np.abs(res.x.imag) > bound):
            problems.append(f"box_ls left the box (trial {trial})")
    r = 0.1 * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
    A = random_unitary(rng, 16)
    if np.any(l1_constrained(A, r, 1.1 * np.linalg.norm(r) ** 2).x):
        problems.append("l1 estimate nonzero below the energy bound")
    for _ in range(10):
        A = random_unitary(rng, 16)
        y = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        s2 = float(rng.uniform(0, 2))
        if not np.allclose(ridge_ls(A, y, s2), A.conj().T @ y / (1 + s2), atol=1e-12):
            problems.append("ridge_ls differs from the unitary closed form")
        B = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16)) + 4 * np.eye(16)
        ref = np.linalg.solve(B, y)
        if np.linalg.norm(ridge_ls(B, y, 0.0) - ref) > 1e-8 * np.linalg.norm(ref):
            problems.append("ridge_ls(sigma2=0) differs from the inverse")
    record(11, not problems, f"box_ls monotone+feasible on 60 problems, l1 zero case, ridge closed forms: "
                             f"{problems[:3] or 'all hold'}")


def test_c12_determinism(tmp_path):
    base = SweepConfig(m=32, snr_db_list=(4.0, 8.0, 12.0),
                       pipelines=(MMSE, INF, MMSE_THRESH, INF_THRESH, L1_THRESH, FEED_BACK_ONE),
                       trials_per_point=200, min_bit_errors=50)
    blobs = []
    for i, threads in enumerate((1, 1, 4)):
        path = tmp_path / f"run{i}.csv"
        run_sweep(SweepConfig(**{**base.__dict__, "threads": threads})).write_csv(path)
        blobs.append(path.read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    record(12, ok, f"3 runs (threads 1, 1, 4) byte-identical={ok}, {len(blobs[0])} bytes")
