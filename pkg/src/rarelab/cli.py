"""Command-line runner: ``rarelab {calibrate,estimate,verify,report}``.

Every run writes into one output directory:

``resolved_config.toml``
    The fully resolved configuration (re-running it reproduces the run).
``summary.json``
    Command, seed, exit code and the list of files written.
``thresholds.csv``
    ``n, w_n, u_n, mu_exact, w_mu, r_n, outer_inner_ratio, kappa, n_components``.
``estimates.csv`` (estimate)
    ``scale, quantity, K, index, estimate, ci_low, ci_high, n_samples, seed, flag``.
``level_sets.csv``, ``pmf_<name>_n<scale>.csv`` (estimate)
    Return-time level sets and ``(k, mass)`` records with a trailing deficit row.
``report.json``, ``checks/<check>__<table>.csv`` (verify)
    One record per check plus its attachments.

Outputs contain no timestamps or thread counts, so a rerun with the same
configuration and seed produces identical bytes. Exit codes: 0 success,
1 a check failed, 2 configuration or calibration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .config import ConfigError, ExperimentConfig
from .estimators import (EstimatorConfig, mc_alpha_hat, mc_alpha_hat_grid, mc_beta,
                         mc_entry_pmf, mc_extremal_index, mc_lambda, mc_max_cdf,
                         mc_rare_event_pmf)
from .symbolic import CylinderUnion
from .systems import PiecewiseAffineMarkovMap
from .targets import CalibrationError, Observable, TargetSet, nested_family
from .verify import (FAIL, CheckReport, check_beta, check_cb_bound, check_equivalence,
                     check_evl, check_extremal_ratio, check_limit, check_period_criterion,
                     check_phi_mixing, check_t1, oracle_prediction)

log = logging.getLogger("rarelab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_map(cfg: ExperimentConfig) -> PiecewiseAffineMarkovMap:
    return PiecewiseAffineMarkovMap.from_string(cfg.map.branches)


def build_target(cfg: ExperimentConfig, tmap) -> TargetSet:
    t = cfg.target
    if t.kind == "cantor":
        return TargetSet.cantor(t.level)
    points = [Fraction(p) for p in t.points]
    if t.kind == "periodic":
        return TargetSet.periodic_orbit(tmap, points[0], t.period)
    return TargetSet.from_points(points)


def build_family(cfg: ExperimentConfig, tmap, obs):
    s = cfg.schedule
    return nested_family(obs, tmap, Fraction(s.tau), s.w0, s.scales, s.growth, s.r_exponent)


def estimator_config(cfg: ExperimentConfig, stream: int, threads: Optional[int],
                     K: Optional[int] = None, samples: Optional[int] = None) -> EstimatorConfig:
    e = cfg.estimators
    return EstimatorConfig(samples=e.samples if samples is None else samples, seed=e.seed,
                           K=e.K if K is None else K, ell_max=e.ell_max, stream=stream,
                           threads=threads)


def beta_scales(cfg: ExperimentConfig, family) -> list:
    """``s_n``: explicit values or the scale exponent ``log2(1/μ(U_n))`` rounded down."""
    if cfg.estimators.beta_s != "scale":
        return list(cfg.estimators.beta_s)
    return [(lv.mu.denominator // lv.mu.numerator).bit_length() - 1 for lv in family]


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def threshold_rows(family) -> list:
    return [(lv.n, lv.w, lv.u, lv.mu, lv.w * lv.mu, lv.r_n, lv.outer_inner_ratio,
             lv.kappa, lv.n_components) for lv in family]


THRESHOLD_HEADER = ("n", "w_n", "u_n", "mu_exact", "w_mu", "r_n", "outer_inner_ratio",
                    "kappa", "n_components")


# ---------------------------------------------------------------------------
# Commands; each returns (files, exit code)
# ---------------------------------------------------------------------------


def cmd_calibrate(cfg: ExperimentConfig, threads: Optional[int] = None):
    tmap = build_map(cfg)
    obs = Observable(build_target(cfg, tmap))
    try:
        family = build_family(cfg, tmap, obs)
    except CalibrationError as exc:
        log.error("calibration failed: %s", exc)
        return {"thresholds.csv": csv_text(("error",), [(str(exc),)])}, EXIT_CONFIG
    return {"thresholds.csv": csv_text(THRESHOLD_HEADER, threshold_rows(family))}, EXIT_OK


ESTIMATE_HEADER = ("scale", "quantity", "K", "index", "estimate", "ci_low", "ci_high",
                   "n_samples", "seed", "flag")


def cmd_estimate(cfg: ExperimentConfig, threads: Optional[int] = None):
    """Per-scale estimator bundle. Degenerate estimates become flagged rows."""
    files, code = cmd_calibrate(cfg)
    if code:
        return files, code
    tmap = build_map(cfg)
    obs = Observable(build_target(cfg, tmap))
    family = build_family(cfg, tmap, obs)
    e = cfg.estimators
    seed = e.seed
    rows = []
    level_rows = []
    tau = Fraction(cfg.schedule.tau)
    for lv in family:
        n = lv.n
        base = 1000 * (n + 1)
        grid = mc_alpha_hat_grid(tmap, lv.U, estimator_config(cfg, base, threads),
                                 sorted(set(e.K_grid) | {e.K}))
        for K in e.K_grid:
            st = grid[K]
            lo, hi = st.alpha_hat_ci()
            for ell in range(1, st.ell_max + 1):
                rows.append((n, "alpha_hat", K, ell, st.alpha_hat[ell - 1], lo[ell - 1],
                             hi[ell - 1], st.n_samples, seed, ""))
            try:
                lam = st.lambdas
                hw = st.derived_lambda_halfwidth()
                for ell in range(1, len(lam) + 1):
                    v, h = float(lam[ell - 1]), float(hw[ell - 1])
                    rows.append((n, "lambda_derived", K, ell, v, v - h, v + h,
                                 st.n_samples, seed, ""))
            except ValueError as exc:
                rows.append((n, "lambda_derived", K, "", "nan", "nan", "nan",
                             st.n_samples, seed, f"degenerate: {exc}"))
        st = grid[e.K]
        for ell in range(2, st.ell_max + 1):
            for i in range(1, e.K + 1):
                p = st.level_sets[ell, i]
                if p:
                    level_rows.append((n, e.K, ell, i, p))
        lam_n = e.lambda_samples or e.samples
        lam = mc_lambda(tmap, lv.U, estimator_config(cfg, base + 1, threads), samples=lam_n)
        if lam.flagged:
            rows.append((n, "lambda_direct", e.K, "", "nan", "nan", "nan", lam_n, seed,
                         "no window contained a visit"))
        else:
            for ell in range(1, len(lam.lambdas) + 1):
                rows.append((n, "lambda_direct", e.K, ell, lam.lambdas[ell - 1],
                             lam.low[ell - 1], lam.high[ell - 1], lam_n, seed, ""))
            rows.append((n, "mean_cluster_size", e.K, "", lam.mean_size,
                         lam.mean_size - lam.mean_size_halfwidth,
                         lam.mean_size + lam.mean_size_halfwidth, lam_n, seed, ""))
        hit_n = e.hitting_samples or e.samples
        ei = mc_extremal_index(tmap, lv.U, estimator_config(cfg, base + 2, threads),
                               samples_B=hit_n)
        rows.append((n, "extremal_A", e.K, "", ei.A, ei.A_low, ei.A_high, ei.n_A, seed, ""))
        rows.append((n, "extremal_B", e.K, "", ei.B, ei.B_low, ei.B_high, ei.n_B, seed, ""))
        c = estimator_config(cfg, base + 4, threads)
        zeta = mc_entry_pmf(tmap, lv.U, tau, c)
        xi = mc_rare_event_pmf(tmap, obs, lv.threshold, lv.w,
                               estimator_config(cfg, base + 5, threads))
        for name, emp in (("zeta", zeta), ("xi", xi)):
            lo, hi = emp.wilson()
            for k in range(len(emp.counts)):
                rows.append((n, f"{name}_pmf", "", k, emp.masses[k], lo[k], hi[k],
                             emp.total, seed, ""))
            files[f"pmf_{name}_n{n}.csv"] = csv_text(("k", "mass"), emp.to_pmf().to_records())
        mx = mc_max_cdf(tmap, obs, lv.threshold, lv.w, estimator_config(cfg, base + 6, threads))
        rows.append((n, "p_max_le_u", "", "", mx.p, mx.low, mx.high, mx.n, seed, ""))
    s_n = beta_scales(cfg, family)
    for b in mc_beta(tmap, [lv.U for lv in family], s_n,
                     estimator_config(cfg, 900_000, threads)):
        for ell in range(2, len(b.beta) + 1):
            rows.append((b.n, "beta", b.s_n, ell, b.beta[ell - 1], "", "", b.n_samples,
                         seed, ""))
    files["estimates.csv"] = csv_text(ESTIMATE_HEADER, rows)
    files["level_sets.csv"] = csv_text(("scale", "K", "ell", "i", "p"), level_rows)
    return files, EXIT_OK


def run_checks(cfg: ExperimentConfig, threads: Optional[int] = None) -> list:
    """Run the configured checks; returns ``[(CheckReport, seconds)]`` in run order."""
    tmap = build_map(cfg)
    target = build_target(cfg, tmap)
    obs = Observable(target)
    family = build_family(cfg, tmap, obs)
    ch = cfg.checks
    e = cfg.estimators
    tau = Fraction(cfg.schedule.tau)
    final = family.final
    needs_oracle = {"limit", "evl", "extremal_ratio"} & set(ch.run)
    prediction = None
    if needs_oracle:
        o = cfg.oracle
        prediction = oracle_prediction(tmap, target, K=o.K, depth=o.depth or None,
                                       ell_max=o.ell_max)
    out = []

    def timed(fn):
        t0 = time.perf_counter()
        rep = fn()
        dt = time.perf_counter() - t0
        log.info("check %-16s %-12s %7.1f s", rep.name, rep.status, dt)
        out.append((rep, dt))

    for name in ch.run:
        if name == "period_criterion":
            timed(lambda: check_period_criterion(tmap, family, target))
        elif name == "equivalence":
            lv = family[ch.equivalence_scale]
            samples = e.equivalence_samples or e.samples
            timed(lambda: check_equivalence(
                tmap, obs, lv.threshold, tau,
                estimator_config(cfg, 100, threads, samples=samples),
                w=lv.w * ch.equivalence_w_factor))
        elif name == "t1":
            def t1():
                stats = mc_alpha_hat(tmap, final.U, estimator_config(cfg, 200, threads))
                lam = mc_lambda(tmap, final.U, estimator_config(cfg, 201, threads),
                                samples=e.lambda_samples or e.samples)
                return check_t1(stats, lam, sum_tol=ch.sum_tol)
            timed(t1)
        elif name == "limit":
            timed(lambda: check_limit(tmap, obs, family, tau,
                                      estimator_config(cfg, 300, threads), prediction,
                                      tv_threshold=ch.tv_threshold))
        elif name == "evl":
            timed(lambda: check_evl(tmap, obs, final.threshold, tau,
                                    estimator_config(cfg, 400, threads), prediction.alpha1,
                                    allowance=ch.evl_allowance))
        elif name == "beta":
            timed(lambda: check_beta(tmap, family, beta_scales(cfg, family),
                                     estimator_config(cfg, 500, threads,
                                                      K=max(e.K_grid))))
        elif name == "extremal_ratio":
            timed(lambda: check_extremal_ratio(
                tmap, final.U, estimator_config(cfg, 600, threads), prediction.alpha1,
                tol=ch.ratio_tol, samples_B=e.hitting_samples or None))
        elif name == "cb_bound":
            word = tuple(int(c) for c in ch.cb_word)
            U = CylinderUnion.from_words(tmap, len(word), [word])
            timed(lambda: check_cb_bound(tmap, U, ch.cb_K, ch.cb_Delta, Fraction(ch.cb_tau)))
        elif name == "phi_mixing":
            timed(lambda: check_phi_mixing(tmap, n_max=ch.phi_n_max, j_max=ch.phi_n_max,
                                           gap_max=ch.phi_gap_max))
    return out


def cmd_verify(cfg: ExperimentConfig, threads: Optional[int] = None):
    files, code = cmd_calibrate(cfg)
    if code:
        return files, code
    results = run_checks(cfg, threads)
    reports = [r for r, _ in results]
    files.update(report_files(cfg, reports))
    failed = [r.name for r in reports if r.status == FAIL]
    for name in failed:
        log.error("check failed: %s", name)
    return files, EXIT_FAIL if failed else EXIT_OK


def report_files(cfg: ExperimentConfig, reports: Sequence[CheckReport]) -> dict:
    files = {}
    for r in reports:
        for art, (header, rows) in r.artifacts.items():
            files[f"checks/{r.name}__{art}.csv"] = csv_text(header, rows)
    doc = {"experiment": cfg.name, "seed": cfg.estimators.seed,
           "checks": [r.record() for r in reports],
           "failed": [r.name for r in reports if r.status == FAIL]}
    files["report.json"] = json_text(doc)
    return files


def cmd_report(run_dirs: Sequence[Path]):
    """Merge the summaries, check records and estimates of earlier runs."""
    runs = []
    check_rows = []
    est_rows = []
    est_header = None
    for d in run_dirs:
        d = Path(d)
        try:
            summary = json.loads((d / "summary.json").read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{d}: not a run directory ({exc})") from exc
        entry = {"run": d.name, "summary": summary}
        rep = d / "report.json"
        if rep.exists():
            entry["report"] = json.loads(rep.read_text())
            for c in entry["report"]["checks"]:
                check_rows.append((d.name, summary.get("experiment", ""), c["name"],
                                   c["status"]))
        est = d / "estimates.csv"
        if est.exists():
            with est.open(newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                est_header = est_header or ("run", *header)
                est_rows.extend((d.name, *row) for row in reader)
        runs.append(entry)
    files = {"report.json": json_text({"runs": runs}),
             "checks.csv": csv_text(("run", "experiment", "check", "status"), check_rows)}
    if est_header:
        files["estimates.csv"] = csv_text(est_header, est_rows)
    return files, EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def write_outputs(out: Path, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for rel, text in sorted(files.items()):
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rarelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("calibrate", "threshold table for the configured family"),
                        ("estimate", "Monte Carlo estimator bundle per scale"),
                        ("verify", "run the configured checks")):
        s = sub.add_parser(name, help=help_)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="experiment TOML file")
        src.add_argument("--preset", choices=config_mod.PRESETS, help="shipped preset")
        s.add_argument("--seed", type=int, help="override [estimators].seed (u64)")
        s.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        s.add_argument("--out", type=Path, help="output directory (default: [output].dir)")
    r = sub.add_parser("report", help="merge earlier run directories")
    r.add_argument("runs", nargs="+", type=Path)
    r.add_argument("--out", type=Path, default=Path("runs/report"))
    p.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    return p


COMMANDS = {"calibrate": cmd_calibrate, "estimate": cmd_estimate, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "report":
            files, code = cmd_report(args.runs)
            write_outputs(args.out, files)
            return code
        cfg = (config_mod.load(args.config) if args.config is not None
               else config_mod.load_preset(args.preset))
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed: must fit in 64 bits")
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
    except ConfigError as exc:
        print(f"rarelab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg.output.dir)
    files, code = COMMANDS[args.command](cfg, args.threads)
    files["resolved_config.toml"] = cfg.to_toml()
    summary = {"command": args.command, "experiment": cfg.name,
               "seed": cfg.estimators.seed, "exit_code": code,
               "files": sorted(files) + ["summary.json"]}
    files["summary.json"] = json_text(summary)
    write_outputs(out, files)
    if code == EXIT_CONFIG:
        print(f"rarelab: error: calibration failed; see {out / 'thresholds.csv'}",
              file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
