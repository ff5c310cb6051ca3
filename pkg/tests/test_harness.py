"""Monte-Carlo harness: determinism, statistics and the exhaustive oracle."""

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_dfe import ConfigurationError, SearchSpaceTooLarge, get_constellation, make_instance
from sparse_dfe.constellation import detect
from sparse_dfe.harness import (BER_COLUMNS, FEED_BACK_ONE, INF, MMSE, MMSE_THRESH, PointStats, SweepConfig,
                                first_iteration_feedback, ml_oracle, resolve_threads, run_sweep, snr_at_ber,
                                mf_noise_samples, trial_rng, wilson_interval)


def small_cfg(**kw):
    base = dict(m=16, snr_db_list=(4.0, 8.0), pipelines=(MMSE, MMSE_THRESH, FEED_BACK_ONE),
                trials_per_point=150, min_bit_errors=50, batch_size=50, min_trials=50)
    base.update(kw)
    return SweepConfig(**base)


def test_csv_bytes_identical_across_runs_and_threads(tmp_path):
    paths = []
    for i, threads in enumerate((1, 1, 3)):
        p = tmp_path / f"ber{i}.csv"
        run_sweep(small_cfg(threads=threads)).write_csv(p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]
    assert paths[0].decode().splitlines()[0] == ",".join(BER_COLUMNS)
    assert "np." not in paths[0].decode()


def test_high_snr_is_error_free():
    report = run_sweep(small_cfg(snr_db_list=(100.0,), pipelines=(MMSE, INF, MMSE_THRESH, FEED_BACK_ONE),
                                 trials_per_point=100))
    assert all(p.bit_errors == 0 for p in report.points)


def test_early_stopping_is_batch_granular():
    p = run_sweep(small_cfg(snr_db_list=(0.0,), pipelines=(MMSE,))).points[0]
    assert p.trials == 50 and p.bit_errors >= 50


def test_trial_rng_streams():
    a = trial_rng(1, 0, 0, 5).standard_normal(4)
    np.testing.assert_array_equal(a, trial_rng(1, 0, 0, 5).standard_normal(4))
    assert not np.array_equal(a, trial_rng(1, 0, 0, 6).standard_normal(4))


@settings(max_examples=40)
@given(n=st.integers(1, 5000), data=st.data())
def test_wilson_matches_scipy(n, data):
    k = data.draw(st.integers(0, n))
    ref = scipy.stats.binomtest(k, n).proportion_ci(0.95, method="wilson")
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(ref.low, abs=1e-9) and hi == pytest.approx(ref.high, abs=1e-9)


def _pt(snr, ber, bits=10**6):
    return PointStats("x", snr, 1, bits, int(round(ber * bits)), 1, 0, [1], [0])


def test_snr_at_ber_interpolation():
    curve = [_pt(0, 1e-1), _pt(10, 1e-3)]
    assert snr_at_ber(curve, 1e-2) == pytest.approx(5.0)
    assert snr_at_ber(curve, 1e-5) is None


def test_sweep_config_validation():
    with pytest.raises(ConfigurationError):
        SweepConfig(m=100, spreading="hadamard").validate()
    with pytest.raises(ConfigurationError):
        SweepConfig(pipelines=(MMSE, MMSE)).validate()


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("SPARSE_DFE_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("SPARSE_DFE_THREADS", "lots")
    with pytest.raises(ConfigurationError):
        resolve_threads(None)


class TestMlOracle:
    def test_noiseless(self, rng, qpsk):
        inst = make_instance(6, qpsk, "haar", 0.0, rng)
        np.testing.assert_array_equal(ml_oracle(inst), inst.x_true)

    def test_scalar_is_nearest_point(self, rng, qpsk):
        for _ in range(20):
            inst = make_instance(1, qpsk, "dft", 0.5, rng)
            a = inst.A[0, 0]
            np.testing.assert_array_equal(ml_oracle(inst), detect(np.array([inst.y[0] / a]), qpsk))

    def test_refuses_large_space(self, rng, qpsk):
        with pytest.raises(SearchSpaceTooLarge):
            ml_oracle(make_instance(11, qpsk, "dft", 0.1, rng))

    def test_minimizes_cost(self, rng):
        c = get_constellation("bpsk")
        inst = make_instance(5, c, "haar", 1.0, rng)
        x = ml_oracle(inst)
        best = np.linalg.norm(inst.y - inst.A @ x)
        for bits in range(32):
            cand = c.points[[(bits >> i) & 1 for i in range(5)]]
            assert best <= np.linalg.norm(inst.y - inst.A @ cand) + 1e-12


def test_mf_noise_variance_with_independent_errors(qpsk):
    """z = e_hat - e has variance ||e||^2/m + sigma2 when e is independent of the noise."""
    rng = np.random.default_rng(11)
    m, s2, z, pred = 128, 2.0, [], []
    for _ in range(60):
        inst = make_instance(m, qpsk, "dft", s2, rng)
        xh = inst.x_true.copy()
        flip = rng.choice(m, 8, replace=False)
        xh[flip] = -xh[flip]
        e = inst.x_true - xh
        z.append(inst.A.conj().T @ (inst.y - inst.A @ xh) - e)
        pred.append(np.vdot(e, e).real / m + s2)
    z = np.concatenate(z)
    pooled = np.concatenate([z.real, z.imag])
    assert pooled.size >= 10_000
    assert 2 * pooled.var() == pytest.approx(np.mean(pred), rel=0.05)


def test_mf_noise_samples_structure():
    res = mf_noise_samples(m=32, snr_db=4.0, n_trials=20, seed=3)
    assert res.errorful_trials == 20 and not res.empty
    st0 = res.stats[0]
    assert st0.samples.size == 20 * 32 and st0.n_trials == 20
    sq, tq = st0.qq(50)
    assert len(sq) == len(tq) == 50 and np.all(np.diff(sq) >= 0)


def test_first_iteration_feedback_shapes():
    sc = first_iteration_feedback(m=32, snr_db=10.0, n_trials=20, seed=2)
    assert sc.fed_back.shape == (20,)
    assert np.all(sc.true_errors <= 6)
    assert 0.0 <= sc.wrong_inclusion_rate <= 1.0
    assert math.isfinite(sc.median_fed_back)
