"""
Command-line front end.

    sparse-dfe sweep     BER sweep for the receivers selected by --equalizer/--dfe/--error-est
    sparse-dfe preset F  figure set-up F (fig6 ... fig12), flags override its defaults
    sparse-dfe trace     per-iteration log of the feedback loop on one seeded instance
    sparse-dfe theorem1  matched-filter noise statistics and QQ table
    sparse-dfe selftest  built-in oracle and invariant checks

Exit status: 0 ok, 1 self-test failure, 2 usage/configuration error,
3 output directory not writable, 4 solver failures under --strict.
"""

from __future__ import annotations

import argparse
import csv
import enum
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .constellation import Modulation, count_bit_errors, get_constellation
from .dfe import DfeConfig, ErrorEstimator, ThresholdRule, run_dfe
from .equalizers import EqualizerKind
from .errors import ConfigurationError, SparseDfeError, UsageError
from .harness import (
    FEED_BACK_ONE,
    INF,
    INF_THRESH,
    L1_THRESH,
    MMSE,
    MMSE_LOGM,
    MMSE_THRESH,
    Pipeline,
    SweepConfig,
    resolve_threads,
    run_sweep,
    mf_noise_samples,
    trial_rng,
)
from .selftest import run_selftest
from .solvers import SolverConfig
from .system_model import SpreadingKind, make_instance, snr_to_sigma2


class Command(enum.Enum):
    SWEEP = "sweep"
    TRACE = "trace"
    THEOREM1 = "theorem1"
    PRESET = "preset"
    SELFTEST = "selftest"


DFE_TOKENS = {"off": None, "adaptive": ThresholdRule.ADAPTIVE, "logm": ThresholdRule.LOGM,
              "feedback-one": ThresholdRule.FEEDBACK_ONE}
_RULE_SUFFIX = {None: "", ThresholdRule.ADAPTIVE: "+thresh", ThresholdRule.LOGM: "+logm",
                ThresholdRule.FEEDBACK_ONE: "+feedback-one"}

DEFAULTS = {
    "block_len": 128,
    "constellation": "qpsk",
    "spreading": "dft",
    "equalizer": "mmse",
    "dfe": "adaptive",
    "error_est": "mf",
    "snr_db": "0:16:2",
    "trials": 20000,
    "min_errors": 100,
    "seed": 1,
    "out": "results",
    "threads": None,
    "solver_max_iters": 2000,
    "solver_tol": 1e-8,
    "l1_bound_scale": 1.0,
}


# Figure set-ups: block length 128 and QPSK unless noted, with the receivers
# compared in each figure. SNR grids are chosen to keep runs desk-scale.
PRESETS: dict[str, list[dict]] = {
    # DFT spreading, all six receivers
    "fig6": [dict(spreading="dft", pipelines=(MMSE, INF, MMSE_THRESH, INF_THRESH, L1_THRESH, FEED_BACK_ONE))],
    # Hadamard and Haar spreading
    "fig7": [dict(spreading="hadamard", pipelines=(MMSE, MMSE_THRESH, FEED_BACK_ONE))],
    "fig8": [dict(spreading="haar", pipelines=(MMSE, MMSE_THRESH, FEED_BACK_ONE))],
    # block length 128 against 1024
    "fig9": [dict(m=m, spreading="dft",
                  pipelines=(replace(MMSE, name=f"MMSE m={m}"), replace(MMSE_THRESH, name=f"MMSE+thresh m={m}")))
             for m in (128, 1024)],
    # threshold with and without the sparsity penalty
    "fig10": [dict(spreading="dft", pipelines=(MMSE, MMSE_LOGM, MMSE_THRESH))],
    # 16-QAM (long run)
    "fig11": [dict(spreading="dft", constellation="qam16", snr_db_list=tuple(range(0, 31, 3)),
                   pipelines=(MMSE, INF, MMSE_THRESH, INF_THRESH, FEED_BACK_ONE))],
    # CDMA: Gaussian spreading, no fading
    "fig12": [dict(spreading="gaussian", snr_db_list=tuple(range(0, 21, 2)),
                   pipelines=(MMSE, INF, MMSE_THRESH, INF_THRESH, FEED_BACK_ONE))],
}


@dataclass
class Invocation:
    command: Command
    preset: str | None
    sweeps: list[SweepConfig]
    out: str
    strict: bool = False
    explicit: dict = field(default_factory=dict)

    @property
    def sweep(self) -> SweepConfig:
        return self.sweeps[0]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_snr(text: str) -> tuple[float, ...]:
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            return tuple(float(v) for v in np.round(np.arange(lo, hi + step / 2, step), 10))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--snr-db: cannot parse {text!r}; use a comma list or lo:hi:step") from None


def _tokens(flag: str, text: str, allowed) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    for t in items:
        if t not in allowed:
            raise UsageError(f"{flag}: invalid choice {t!r} (choose from {', '.join(allowed)})")
    if not items:
        raise UsageError(f"{flag}: no value given")
    return items


def pipeline_name(eq: EqualizerKind, rule: ThresholdRule | None, est: ErrorEstimator) -> str:
    name = eq.label + _RULE_SUFFIX[rule]
    if rule is not None and est is ErrorEstimator.L1:
        name = f"{eq.label}+l1{_RULE_SUFFIX[rule]}"
    return name


def _build_parser() -> _Parser:
    p = _Parser(prog="sparse-dfe", description="Sparsity-enhanced decision feedback equalization simulator.")
    p.add_argument("command", choices=[c.value for c in Command])
    p.add_argument("preset", nargs="?")
    p.add_argument("--block-len", type=int)
    p.add_argument("--constellation")
    p.add_argument("--spreading")
    p.add_argument("--equalizer")
    p.add_argument("--dfe")
    p.add_argument("--error-est")
    p.add_argument("--snr-db")
    p.add_argument("--trials", type=int)
    p.add_argument("--min-errors", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--threads", type=int)
    p.add_argument("--solver-max-iters", type=int)
    p.add_argument("--solver-tol", type=float)
    p.add_argument("--l1-bound-scale", type=float)
    return p


def parse_args(argv: list[str]) -> Invocation:
    """Validate ``argv`` into an :class:`Invocation`; raises UsageError/ConfigurationError."""
    ns = _build_parser().parse_args(argv)
    command = Command(ns.command)
    explicit = {k: v for k, v in vars(ns).items()
                if k not in ("command", "preset", "strict") and v is not None}
    opt = {**DEFAULTS, **explicit}

    if command is Command.PRESET:
        if ns.preset not in PRESETS:
            raise UsageError(f"preset: unknown figure {ns.preset!r} (choose from {', '.join(PRESETS)})")
    elif ns.preset is not None:
        raise UsageError(f"unexpected argument {ns.preset!r}")

    constellation = _tokens("--constellation", opt["constellation"], [m.value for m in Modulation])[0]
    spreading = _tokens("--spreading", opt["spreading"], [s.value for s in SpreadingKind])[0]
    eqs = [EqualizerKind(t) for t in _tokens("--equalizer", opt["equalizer"], [e.value for e in EqualizerKind])]
    rules = [DFE_TOKENS[t] for t in _tokens("--dfe", opt["dfe"], list(DFE_TOKENS))]
    est = ErrorEstimator(_tokens("--error-est", opt["error_est"], [e.value for e in ErrorEstimator])[0])
    snrs = _parse_snr(opt["snr_db"])
    if not snrs:
        raise UsageError("--snr-db: empty list")
    for flag in ("block_len", "trials", "solver_max_iters"):
        if opt[flag] < 1:
            raise UsageError(f"--{flag.replace('_', '-')}: must be >= 1")
    if opt["min_errors"] < 0:
        raise UsageError("--min-errors: must be >= 0")
    if opt["solver_tol"] <= 0 or opt["l1_bound_scale"] <= 0:
        raise UsageError("--solver-tol and --l1-bound-scale must be > 0")
    if opt["threads"] is not None and opt["threads"] < 1:
        raise UsageError("--threads: must be >= 1")

    solver_cfg = SolverConfig(max_iters=opt["solver_max_iters"], tol=opt["solver_tol"],
                              l1_bound_scale=opt["l1_bound_scale"])
    pipelines = tuple(Pipeline(pipeline_name(e, r, est), e, r, est) for e in eqs for r in rules)
    base = SweepConfig(
        m=opt["block_len"], constellation=constellation, spreading=spreading, snr_db_list=snrs,
        pipelines=pipelines, trials_per_point=opt["trials"], master_seed=opt["seed"],
        min_bit_errors=opt["min_errors"], solver_cfg=solver_cfg, threads=resolve_threads(opt["threads"]),
    )
    if command is Command.PRESET:
        sweeps = []
        for spec in PRESETS[ns.preset]:
            spec = dict(spec)
            # explicit flags win over the preset's own choices
            if "block_len" in explicit:
                spec.pop("m", None)
            if "spreading" in explicit:
                spec.pop("spreading", None)
            if "constellation" in explicit:
                spec.pop("constellation", None)
            if "snr_db" in explicit:
                spec.pop("snr_db_list", None)
            sweeps.append(replace(base, **spec))
    else:
        sweeps = [base]
    for s in sweeps:
        s.validate()
    return Invocation(command, ns.preset, sweeps, opt["out"], ns.strict, explicit)


def format_invocation(inv: Invocation) -> str:
    """Effective configuration as a command line that parses back to ``inv``."""
    s = inv.sweep
    parts = [inv.command.value]
    if inv.preset:
        parts.append(inv.preset)
    flags = {
        "--block-len": s.m,
        "--constellation": s.constellation.value,
        "--spreading": s.spreading.value,
    }
    if inv.command is not Command.PRESET:
        eqs = list(dict.fromkeys(p.equalizer.value for p in s.pipelines))
        rules = list(dict.fromkeys(next(k for k, v in DFE_TOKENS.items() if v is p.threshold_rule)
                                   for p in s.pipelines))
        flags.update({"--equalizer": ",".join(eqs), "--dfe": ",".join(rules),
                      "--error-est": s.pipelines[0].error_estimator.value})
    else:
        flags = {f"--{k.replace('_', '-')}": inv.explicit[k]
                 for k in ("block_len", "constellation", "spreading", "snr_db") if k in inv.explicit}
    if inv.command is not Command.PRESET or "snr_db" in inv.explicit:
        flags["--snr-db"] = ",".join(repr(v) for v in s.snr_db_list)
    flags.update({
        "--trials": s.trials_per_point,
        "--min-errors": s.min_bit_errors,
        "--seed": s.master_seed,
        "--threads": s.threads,
        "--solver-max-iters": s.solver_cfg.max_iters,
        "--solver-tol": repr(s.solver_cfg.tol),
        "--l1-bound-scale": repr(s.solver_cfg.l1_bound_scale),
        "--out": inv.out,
    })
    for k, v in flags.items():
        parts += [k, str(v)]
    if inv.strict:
        parts.append("--strict")
    return " ".join(parts)


def _check_out_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)
    with tempfile.TemporaryFile(dir=path):
        pass


def _run_sweeps(inv: Invocation, out) -> int:
    report = None
    for cfg in inv.sweeps:
        def progress(p):
            lo, hi = p.ci
            out(f"{p.config:>22s}  snr={p.snr_db:5.1f} dB  ber={p.ber:.3e} [{lo:.2e}, {hi:.2e}]  "
                f"errors={p.bit_errors}/{p.bits}  iters(median)={p.median_iters:g}")
        r = run_sweep(cfg, progress)
        report = r if report is None else report + r
    path = os.path.join(inv.out, "ber.csv")
    report.write_csv(path)
    out(f"wrote {path}")
    if inv.strict and report.solver_failures:
        out(f"strict: {report.solver_failures} flagged solver failures")
        return 4
    return 0


def _run_trace(inv: Invocation, out) -> int:
    s = inv.sweep
    c = get_constellation(s.constellation)
    snr = s.snr_db_list[0]
    rng = trial_rng(s.master_seed, 0)
    inst = make_instance(s.m, c, s.spreading, snr_to_sigma2(snr, c), rng, s.channel_kind)
    pipe = next((p for p in s.pipelines if p.threshold_rule is not None), None)
    if pipe is None:
        raise ConfigurationError("trace needs a feedback rule (--dfe adaptive|logm|feedback-one)")
    res = run_dfe(inst, DfeConfig(pipe.equalizer, pipe.error_estimator, pipe.threshold_rule,
                                  solver_cfg=s.solver_cfg))
    out(f"trace: {pipe.name}, m={s.m}, {c.kind.value}, {s.spreading.value}, snr={snr:g} dB, seed={s.master_seed}")
    path = os.path.join(inv.out, "trace.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "n_active", "threshold", "rho", "residual_norm", "n_feedback", "fallback"])
        for r in res.trace:
            out(f"iter {r.iteration}: t={r.threshold:.4g} rho={r.rho:.4g} |r|={r.residual_norm:.4g} "
                f"active={r.n_active} fed_back={r.n_feedback}" + (f" ({r.fallback})" if r.fallback else ""))
            w.writerow([r.iteration, r.n_active, repr(r.threshold), repr(r.rho), repr(r.residual_norm),
                        r.n_feedback, r.fallback or ""])
    out(f"bit errors: {count_bit_errors(res.x_hat, inst.x_true, c)}")
    return 0


def _run_theorem1(inv: Invocation, out) -> int:
    s = inv.sweep
    n = min(s.trials_per_point, 1000)
    res = mf_noise_samples(s.m, s.snr_db_list[0], n, s.master_seed,
                           constellation=s.constellation, spreading=s.spreading)
    if res.empty:
        out("theorem1: no trial had a detection error; nothing to report")
        return 0
    for k, st in sorted(res.stats.items()):
        ks = st.ks()
        out(f"iteration {k}: samples={st.samples.size} mean={st.empirical_mean:.3g} "
            f"var={st.empirical_var:.4g} predicted={st.predicted_var:.4g} "
            f"KS D={ks.statistic:.4g} p={ks.pvalue:.3g}")
    path = os.path.join(inv.out, "qq.csv")
    res.write_qq_csv(path)
    out(f"wrote {path}")
    return 0


def run(inv: Invocation, out=print) -> int:
    if inv.command is Command.SELFTEST:
        return 0 if run_selftest(out) else 1
    try:
        _check_out_dir(inv.out)
    except OSError as exc:
        out(f"error: cannot write to {inv.out!r}: {exc}")
        return 3
    out(f"# effective: {format_invocation(inv)}")
    if inv.command in (Command.SWEEP, Command.PRESET):
        return _run_sweeps(inv, out)
    if inv.command is Command.TRACE:
        return _run_trace(inv, out)
    return _run_theorem1(inv, out)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_args(argv)
        return run(inv)
    except (UsageError, ConfigurationError) as exc:
        print(f"sparse-dfe: error: {exc}", file=sys.stderr)
        return 2
    except SparseDfeError as exc:
        print(f"sparse-dfe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
