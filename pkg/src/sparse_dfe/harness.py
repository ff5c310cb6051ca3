"""
Monte-Carlo experiments: BER sweeps, matched-filter noise statistics, first
iteration feedback statistics and an exhaustive ML reference.

Every trial draws from its own generator seeded by
``(master_seed, pipeline index, snr index, trial index)``, and points are
evaluated in fixed-size batches, so results (and the early-stopping point)
do not depend on how many worker threads ran the trials.
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .constellation import Modulation, detect, get_constellation
from .dfe import DfeConfig, ErrorEstimator, ThresholdRule, run_dfe
from .equalizers import EqualizerKind, equalize
from .errors import ConfigurationError, SearchSpaceTooLarge, SingularityError
from .solvers import SolverConfig
from .system_model import (
    ChannelKind,
    SpreadingKind,
    SystemInstance,
    default_channel,
    make_instance,
    snr_to_sigma2,
)

BER_COLUMNS = ["config", "snr_db", "bits", "bit_errors", "ber", "ci_lo", "ci_hi",
               "mean_iters", "median_iters", "mean_fb0"]
QQ_COLUMNS = ["iteration", "sample_q", "theory_q"]

ML_MAX_CANDIDATES = 2**20


@dataclass(frozen=True)
class Pipeline:
    """One receiver: an equalizer, optionally followed by the feedback loop.

    ``threshold_rule=None`` means the plain equalizer; ``ml=True`` replaces
    everything by exhaustive search.
    """

    name: str
    equalizer: EqualizerKind = EqualizerKind.MMSE
    threshold_rule: ThresholdRule | None = None
    error_estimator: ErrorEstimator = ErrorEstimator.MF
    ml: bool = False

    def __post_init__(self):
        object.__setattr__(self, "equalizer", EqualizerKind(self.equalizer))
        object.__setattr__(self, "error_estimator", ErrorEstimator(self.error_estimator))
        if self.threshold_rule is not None:
            object.__setattr__(self, "threshold_rule", ThresholdRule(self.threshold_rule))

    def dfe_config(self, solver_cfg: SolverConfig) -> DfeConfig | None:
        if self.threshold_rule is None:
            return None
        return DfeConfig(self.equalizer, self.error_estimator, self.threshold_rule, solver_cfg=solver_cfg)


# receivers compared in the figure presets
MMSE = Pipeline("MMSE")
INF = Pipeline("inf", EqualizerKind.CONVEX)
MMSE_THRESH = Pipeline("MMSE+thresh", threshold_rule=ThresholdRule.ADAPTIVE)
INF_THRESH = Pipeline("inf+thresh", EqualizerKind.CONVEX, ThresholdRule.ADAPTIVE)
L1_THRESH = Pipeline("l1 opt+thresh", threshold_rule=ThresholdRule.ADAPTIVE, error_estimator=ErrorEstimator.L1)
FEED_BACK_ONE = Pipeline("Feed back", threshold_rule=ThresholdRule.FEEDBACK_ONE)
MMSE_LOGM = Pipeline("MMSE+logm", threshold_rule=ThresholdRule.LOGM)
ML = Pipeline("ML", ml=True)


@dataclass(frozen=True)
class SweepConfig:
    m: int = 128
    constellation: Modulation = Modulation.QPSK
    spreading: SpreadingKind = SpreadingKind.DFT
    snr_db_list: tuple[float, ...] = tuple(range(0, 17, 2))
    pipelines: tuple[Pipeline, ...] = (MMSE_THRESH,)
    trials_per_point: int = 20000
    master_seed: int = 1
    min_bit_errors: int = 100
    min_trials: int = 100
    batch_size: int = 100
    channel: ChannelKind | None = None
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "constellation", Modulation(self.constellation))
        object.__setattr__(self, "spreading", SpreadingKind(self.spreading))
        object.__setattr__(self, "snr_db_list", tuple(float(s) for s in self.snr_db_list))
        object.__setattr__(self, "pipelines", tuple(self.pipelines))
        if self.channel is not None:
            object.__setattr__(self, "channel", ChannelKind(self.channel))

    def validate(self) -> None:
        if self.m < 1:
            raise ConfigurationError(f"block length must be >= 1, got {self.m}")
        if self.spreading is SpreadingKind.HADAMARD and self.m & (self.m - 1):
            raise ConfigurationError(f"hadamard spreading needs a power-of-two block length, got {self.m}")
        if self.trials_per_point < 1:
            raise ConfigurationError("trials_per_point must be >= 1")
        if not self.snr_db_list:
            raise ConfigurationError("the SNR list is empty")
        if not self.pipelines:
            raise ConfigurationError("no receiver configured")
        if len({p.name for p in self.pipelines}) != len(self.pipelines):
            raise ConfigurationError("receiver names must be unique")
        if self.batch_size < 1 or self.threads < 1:
            raise ConfigurationError("batch_size and threads must be >= 1")
        c = get_constellation(self.constellation)
        for p in self.pipelines:
            if p.ml and c.order ** self.m > ML_MAX_CANDIDATES:
                raise ConfigurationError(
                    f"ML search over {c.order}^{self.m} candidates exceeds {ML_MAX_CANDIDATES}")

    @property
    def channel_kind(self) -> ChannelKind:
        return self.channel or default_channel(self.spreading)


@dataclass
class TrialOutcome:
    bit_errors: int
    symbol_errors: int
    iterations: int
    first_feedback: int
    solver_failures: int


@dataclass
class PointStats:
    config: str
    snr_db: float
    trials: int
    bits: int
    bit_errors: int
    symbols: int
    symbol_errors: int
    iterations: list[int] = field(repr=False)
    first_feedback: list[int] = field(repr=False)
    solver_failures: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols

    @property
    def ber_se(self) -> float:
        p = self.ber
        return math.sqrt(p * (1 - p) / self.bits)

    @property
    def ser_se(self) -> float:
        p = self.ser
        return math.sqrt(p * (1 - p) / self.symbols)

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.bit_errors, self.bits)

    @property
    def mean_iters(self) -> float:
        return float(np.mean(self.iterations))

    @property
    def median_iters(self) -> float:
        return float(np.median(self.iterations))

    @property
    def mean_fb0(self) -> float:
        return float(np.mean(self.first_feedback))

    def row(self) -> list[str]:
        lo, hi = self.ci
        nums = (self.ber, lo, hi, self.mean_iters, self.median_iters, self.mean_fb0)
        return [self.config, repr(float(self.snr_db)), str(self.bits), str(self.bit_errors),
                *(repr(float(v)) for v in nums)]


@dataclass
class BerReport:
    points: list[PointStats]

    def get(self, config: str, snr_db: float) -> PointStats:
        for p in self.points:
            if p.config == config and p.snr_db == float(snr_db):
                return p
        raise KeyError((config, snr_db))

    def curve(self, config: str) -> list[PointStats]:
        return sorted((p for p in self.points if p.config == config), key=lambda p: p.snr_db)

    @property
    def configs(self) -> list[str]:
        return list(dict.fromkeys(p.config for p in self.points))

    @property
    def solver_failures(self) -> int:
        return sum(p.solver_failures for p in self.points)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BER_COLUMNS)
            for p in self.points:
                w.writerow(p.row())

    def __add__(self, other: BerReport) -> BerReport:
        return BerReport(self.points + other.points)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n == 0:
        return 0.0, 1.0
    z = scipy.stats.norm.ppf(0.5 + level / 2)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, float(centre - half)), min(1.0, float(centre + half))


def trial_rng(master_seed: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, *indices]))


@functools.cache
def _candidates(order: int, m: int) -> np.ndarray:
    """All index vectors of length ``m`` in lexicographic order, shape (order^m, m)."""
    grid = np.array(list(itertools.product(range(order), repeat=m)), dtype=np.int64)
    grid.setflags(write=False)
    return grid


def ml_oracle(instance: SystemInstance, max_candidates: int = ML_MAX_CANDIDATES) -> np.ndarray:
    """Exhaustive minimizer of ``||y - A x||^2`` over the alphabet^m.

    Ties go to the lexicographically smallest index vector.
    """
    c = instance.constellation
    m = instance.m
    if c.order**m > max_candidates:
        raise SearchSpaceTooLarge(f"{c.order}^{m} candidates exceeds the limit of {max_candidates}")
    cand = _candidates(c.order, m)
    best_cost, best = np.inf, None
    chunk = 65536
    for start in range(0, len(cand), chunk):
        X = c.points[cand[start:start + chunk]]
        cost = np.sum(np.abs(instance.y[:, None] - instance.A @ X.T) ** 2, axis=0)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best_cost, best = cost[i], start + i
    return c.points[cand[best]]


def run_pipeline(instance: SystemInstance, pipeline: Pipeline, solver_cfg: SolverConfig):
    """Decisions for one instance: (x_hat, iterations, first feedback, solver failures)."""
    if pipeline.ml:
        return ml_oracle(instance), 1, 0, 0
    dfe_cfg = pipeline.dfe_config(solver_cfg)
    if dfe_cfg is None:
        failures = 0
        try:
            est = equalize(pipeline.equalizer, instance.A, instance.y, instance.sigma2,
                           instance.constellation, solver_cfg)
            failures = int(not est.converged)
            soft = est.values
        except SingularityError:
            failures = 1
            soft = equalize(EqualizerKind.MMSE, instance.A, instance.y, instance.sigma2,
                            instance.constellation, solver_cfg).values
        return detect(soft, instance.constellation), 1, 0, failures
    res = run_dfe(instance, dfe_cfg)
    return res.x_hat, res.iterations, res.first_feedback, res.solver_failures


def _run_trial(cfg: SweepConfig, p_idx: int, s_idx: int, trial: int) -> TrialOutcome:
    rng = trial_rng(cfg.master_seed, p_idx, s_idx, trial)
    c = get_constellation(cfg.constellation)
    sigma2 = snr_to_sigma2(cfg.snr_db_list[s_idx], c)
    inst = make_instance(cfg.m, c, cfg.spreading, sigma2, rng, cfg.channel_kind)
    x_hat, iters, fb0, fails = run_pipeline(inst, cfg.pipelines[p_idx], cfg.solver_cfg)
    idx = c.indices(x_hat)
    return TrialOutcome(c.bit_distance(idx, inst.x_index), int(np.count_nonzero(idx != inst.x_index)),
                        iters, fb0, fails)


def run_point(cfg: SweepConfig, p_idx: int, s_idx: int, executor=None) -> PointStats:
    """Trials for one (receiver, SNR) cell with batch-granular early stopping."""
    c = get_constellation(cfg.constellation)
    outcomes: list[TrialOutcome] = []
    bit_errors = 0
    while len(outcomes) < cfg.trials_per_point:
        start = len(outcomes)
        batch = range(start, min(start + cfg.batch_size, cfg.trials_per_point))
        call = functools.partial(_run_trial, cfg, p_idx, s_idx)
        results = list(executor.map(call, batch)) if executor else [call(t) for t in batch]
        outcomes.extend(results)
        bit_errors += sum(o.bit_errors for o in results)
        if len(outcomes) >= cfg.min_trials and bit_errors >= cfg.min_bit_errors:
            break
    n = len(outcomes)
    return PointStats(
        config=cfg.pipelines[p_idx].name,
        snr_db=cfg.snr_db_list[s_idx],
        trials=n,
        bits=n * cfg.m * c.bits_per_symbol,
        bit_errors=bit_errors,
        symbols=n * cfg.m,
        symbol_errors=sum(o.symbol_errors for o in outcomes),
        iterations=[o.iterations for o in outcomes],
        first_feedback=[o.first_feedback for o in outcomes],
        solver_failures=sum(o.solver_failures for o in outcomes),
    )


def run_sweep(cfg: SweepConfig, progress=None) -> BerReport:
    """BER versus SNR for every configured receiver.

    ``progress`` is called with each finished :class:`PointStats`.
    """
    cfg.validate()
    points = []
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for p_idx in range(len(cfg.pipelines)):
            for s_idx in range(len(cfg.snr_db_list)):
                point = run_point(cfg, p_idx, s_idx, executor)
                points.append(point)
                if progress:
                    progress(point)
    finally:
        if executor:
            executor.shutdown()
    return BerReport(points)


def snr_at_ber(curve: list[PointStats], target: float) -> float | None:
    """SNR where the BER curve first crosses ``target`` (log-linear interpolation)."""
    for a, b in zip(curve, curve[1:]):
        if a.ber >= target > b.ber:
            if b.ber == 0:
                return b.snr_db
            la, lb, lt = math.log10(a.ber), math.log10(b.ber), math.log10(target)
            return a.snr_db + (la - lt) / (la - lb) * (b.snr_db - a.snr_db)
    return None


# --------------------------------------------------------------------------
# matched-filter noise statistics


@dataclass
class NoiseStats:
    """Pooled ``z = e_hat - e`` samples of one feedback iteration."""

    iteration: int
    samples: np.ndarray  # complex, pooled over trials
    trial_scales: np.ndarray  # per-sample conditional variance ||e||^2/m + sigma2
    error_energy: float  # mean ||e||^2 over the contributing trials
    m_k: float  # mean number of active unknowns
    sigma2: float
    n_trials: int

    @property
    def predicted_var(self) -> float:
        return self.error_energy / self.m_k + self.sigma2

    @property
    def empirical_mean(self) -> complex:
        return complex(np.mean(self.samples))

    @property
    def empirical_var(self) -> float:
        return float(np.mean(np.abs(self.samples - self.samples.mean()) ** 2))

    @property
    def pooled(self) -> np.ndarray:
        """Real and imaginary parts, standardized by the predicted variance."""
        s = self.samples / np.sqrt(self.predicted_var / 2)
        return np.concatenate([s.real, s.imag])

    @property
    def pooled_conditional(self) -> np.ndarray:
        """Real and imaginary parts, each standardized by its own trial's variance."""
        s = self.samples / np.sqrt(self.trial_scales / 2)
        return np.concatenate([s.real, s.imag])

    def ks(self, conditional: bool = False):
        data = self.pooled_conditional if conditional else self.pooled
        return scipy.stats.kstest(data, "norm")

    @property
    def cross_covariance(self) -> float:
        """Normalized real/imag cross-covariance (0 for a circular distribution)."""
        re, im = self.samples.real, self.samples.imag
        return float(np.mean((re - re.mean()) * (im - im.mean())) / (re.std() * im.std()))

    def qq(self, n_points: int = 200) -> tuple[np.ndarray, np.ndarray]:
        """Sample versus standard-normal quantiles.

        Iteration 0 uses the predicted variance; later iterations, where no
        prediction applies, their own empirical variance.
        """
        if self.iteration == 0:
            data = self.pooled
        else:
            s = self.samples / np.sqrt(self.empirical_var / 2)
            data = np.concatenate([s.real, s.imag])
        probs = (np.arange(n_points) + 0.5) / n_points
        return np.quantile(data, probs), scipy.stats.norm.ppf(probs)


@dataclass
class NoiseStudy:
    stats: dict[int, NoiseStats]
    trials_run: int
    errorful_trials: int

    @property
    def empty(self) -> bool:
        return 0 not in self.stats

    def write_qq_csv(self, path, n_points: int = 200) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(QQ_COLUMNS)
            for k in sorted(self.stats):
                sq, tq = self.stats[k].qq(n_points)
                for a, b in zip(sq, tq):
                    w.writerow([k, repr(float(a)), repr(float(b))])


def mf_noise_samples(m: int = 128, snr_db: float = 8.0, n_trials: int = 100, seed: int = 1, *,
                     constellation: Modulation | str = Modulation.QPSK,
                     spreading: SpreadingKind | str = SpreadingKind.DFT,
                     iterations: tuple[int, ...] = (0, 1, 2),
                     equalizer: EqualizerKind | str = EqualizerKind.MMSE) -> NoiseStudy:
    """Collect ``z_k = e_hat_k - e_k`` from trials with at least one wrong decision.

    ``n_trials`` counts trials that have an error in the initial detection;
    trials without errors are drawn but skipped (they carry no interference
    term). Iteration ``k > 0`` statistics come from trials that reach it.
    """
    c = get_constellation(constellation)
    sigma2 = snr_to_sigma2(snr_db, c)
    cfg = DfeConfig(equalizer, keep_snapshots=True)
    acc = {k: ([], [], [], []) for k in iterations}  # samples, scales, ||e||^2, m_k
    used = drawn = 0
    while used < n_trials and drawn < 100 * n_trials:
        rng = trial_rng(seed, drawn)
        drawn += 1
        inst = make_instance(m, c, spreading, sigma2, rng)
        res = run_dfe(inst, cfg)
        first = res.trace[0].snapshot
        if not np.any(inst.x_true != first["x_hat"]):
            continue
        used += 1
        for k in iterations:
            if k >= len(res.trace):
                continue
            snap = res.trace[k].snapshot
            e = inst.x_true[snap["active"]] - snap["x_hat"]
            z = snap["e_hat"] - e
            ee = float(np.vdot(e, e).real)
            mk = len(snap["active"])
            s, sc, en, ms = acc[k]
            s.append(z)
            sc.append(np.full(mk, ee / mk + sigma2))
            en.append(ee)
            ms.append(mk)
    stats = {}
    for k, (s, sc, en, ms) in acc.items():
        if s:
            stats[k] = NoiseStats(k, np.concatenate(s), np.concatenate(sc), float(np.mean(en)),
                                  float(np.mean(ms)), sigma2, len(s))
    return NoiseStudy(stats, drawn, used)


# --------------------------------------------------------------------------
# first-iteration feedback statistics


@dataclass
class FeedbackScenario:
    fed_back: np.ndarray  # per trial, size of the first feedback set
    wrong_fed_back: np.ndarray  # per trial, wrong decisions inside it
    true_errors: np.ndarray  # per trial, wrong initial decisions
    thresholds: np.ndarray
    rho: np.ndarray

    @property
    def median_fed_back(self) -> float:
        return float(np.median(self.fed_back))

    @property
    def wrong_inclusion_rate(self) -> float:
        """Fraction of fed-back symbols that were wrong."""
        return float(self.wrong_fed_back.sum() / self.fed_back.sum())

    @property
    def missed_error_rate(self) -> float:
        """Fraction of wrong initial decisions that were fed back anyway."""
        total = self.true_errors.sum()
        return float(self.wrong_fed_back.sum() / total) if total else 0.0


def first_iteration_feedback(m: int = 128, snr_db: float = 10.0, n_trials: int = 200, seed: int = 1,
                             max_errors: int | None = 6, *,
                             spreading: SpreadingKind | str = SpreadingKind.DFT,
                             constellation: Modulation | str = Modulation.QPSK,
                             rule: ThresholdRule | str = ThresholdRule.ADAPTIVE) -> FeedbackScenario:
    """First-iteration feedback of the MMSE-initialized loop, over ``n_trials``
    trials whose initial detection has at most ``max_errors`` wrong symbols."""
    c = get_constellation(constellation)
    sigma2 = snr_to_sigma2(snr_db, c)
    cfg = DfeConfig(EqualizerKind.MMSE, threshold_rule=rule, keep_snapshots=True, max_outer_iters=1)
    rows = []
    drawn = 0
    while len(rows) < n_trials and drawn < 100 * n_trials:
        rng = trial_rng(seed, drawn)
        drawn += 1
        inst = make_instance(m, c, spreading, sigma2, rng)
        rec = run_dfe(inst, cfg).trace[0]
        snap = rec.snapshot
        wrong = inst.x_true[snap["active"]] != snap["x_hat"]
        if max_errors is not None and wrong.sum() > max_errors:
            continue
        rows.append((len(snap["selected"]), int(wrong[snap["selected"]].sum()), int(wrong.sum()),
                     rec.threshold, rec.rho))
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return FeedbackScenario(arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2].astype(int),
                            arr[:, 3], arr[:, 4])


def resolve_threads(threads: int | None) -> int:
    """``threads`` if given, else ``$SPARSE_DFE_THREADS``, else 1."""
    if threads:
        return threads
    env = os.environ.get("SPARSE_DFE_THREADS")
    if not env:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigurationError(f"SPARSE_DFE_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigurationError(f"SPARSE_DFE_THREADS must be a positive integer, got {env!r}")
    return n


def with_pipelines(cfg: SweepConfig, *pipelines: Pipeline) -> SweepConfig:
    return replace(cfg, pipelines=tuple(pipelines))
