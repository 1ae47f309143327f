"""Command-line entry point for the crossbar SDE experiments.

Three subcommands reproduce the headline experiments and emit
machine-readable CSV/JSON outputs (plots are rendered separately from these
files):

* ``rng-characterize``: random-vector generation quality versus word-line
  position on a wide tile.
* ``solve-bs``: Monte Carlo solution of the geometric-brownian-motion SDE
  in digital, noise-only, or full-crossbar configuration, compared against
  the closed-form solution.
* ``energy-report``: array energy accounting for the default full-crossbar
  workload.

All commands are deterministic for a fixed master seed, independent of the
thread count.  The exit code is 0 only if every configured acceptance
threshold passed; verdict JSON files carry the details either way.
"""

import argparse
import json
import os
import sys

import numpy as np
from scipy.stats import norm

from .circuit import CrossbarTile, TileSolver, solve_tile
from .config import ExperimentConfig, load_config
from .device import cycle_resample
from .energy import EnergyLedger, report
from .errors import SdexError, UsageError
from .gauss import calibrate, make_source, sample_unit_normal
from .sde import (
    DigitalParams,
    DigitalReference,
    bs_analytic_final,
    bs_mean,
    bs_var,
    build_bs_experiment,
    simulate_ensemble,
)
from .stats import ks_statistic, moments, trend_slope

_STREAM_TRACE = 3
_STREAM_ANALYTIC_REF = 4


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c)
                              for c in row) + "\n")


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


# -- rng-characterize --------------------------------------------------------


def cmd_rng_characterize(cfg: ExperimentConfig, out_dir: str) -> bool:
    if cfg.n_vectors < 1:
        raise UsageError("n_vectors must be >= 1")
    if cfg.vector_len < 2:
        raise UsageError("vector_len must be >= 2")

    rng = np.random.default_rng(np.random.SeedSequence((cfg.master_seed, 0)))
    source = make_source(cfg.rng_crossbar_config(), cfg.device_spec(), rng,
                         calib_n=cfg.calib_n, p_stuck_on=cfg.p_stuck_on,
                         p_stuck_off=cfg.p_stuck_off)
    source.read_pulse_s = cfg.read_pulse_s
    ledger = EnergyLedger()
    model = cfg.pulse_model()
    calibrate(source, ledger, model)
    raw = np.empty((cfg.n_vectors, source.dim))
    z = sample_unit_normal(source, cfg.n_vectors, ledger, model, raw_out=raw)

    _write_csv(
        _out(out_dir, "samples.csv"),
        ["pair_index", "draw_index", "raw_current_diff_A", "z_value"],
        ((p, k, raw[k, p], z[k, p])
         for p in range(source.dim) for k in range(cfg.n_vectors)),
    )

    stats = [moments(z[:, p]) for p in range(source.dim)]
    _write_csv(
        _out(out_dir, "moments.csv"),
        ["pair_index", "mean", "std", "skew", "excess_kurtosis"],
        ((p, s.mean, s.std, s.skew, s.excess_kurtosis) for p, s in enumerate(stats)),
    )

    idx = np.arange(source.dim, dtype=float)
    skew_trend = trend_slope(idx, [s.skew for s in stats])
    kurt_trend = trend_slope(idx, [s.excess_kurtosis for s in stats])

    # Position independence on the raw current differences: the first and
    # last pairs sit at opposite ends of the word line's IR-drop gradient.
    n = cfg.n_vectors
    first, last = raw[:, 0], raw[:, -1]
    mean_gap = abs(first.mean() - last.mean())
    pooled_se = float(np.sqrt(first.var() / n + last.var() / n))
    std_ratio = float(first.std() / last.std())

    checks = {
        "skew_within_bound": bool(max(abs(s.skew) for s in stats) < cfg.moment_bound),
        "kurtosis_within_bound": bool(
            max(abs(s.excess_kurtosis) for s in stats) < cfg.moment_bound),
        "kurtosis_trend_ci_contains_zero": kurt_trend.contains_zero(),
        "mean_gap_within_3_pooled_se": bool(mean_gap < 3.0 * pooled_se),
        "std_ratio_in_band": bool(
            cfg.std_ratio_low < std_ratio < cfg.std_ratio_high),
    }
    verdict = {
        "experiment": "rng-characterize",
        "n_vectors": cfg.n_vectors,
        "vector_len": cfg.vector_len,
        "crossbar": {"rows": cfg.rng_rows, "cols": 2 * cfg.vector_len,
                     "r_line": cfg.r_line},
        "moment_bound": cfg.moment_bound,
        "trend": {
            "skew_slope": skew_trend.slope,
            "skew_ci": [skew_trend.ci_low, skew_trend.ci_high],
            "kurtosis_slope": kurt_trend.slope,
            "kurtosis_ci": [kurt_trend.ci_low, kurt_trend.ci_high],
        },
        "first_vs_last_pair": {
            "mean_gap_A": mean_gap,
            "pooled_se_A": pooled_se,
            "std_ratio": std_ratio,
        },
        "energy": report(ledger, writes_per_program=cfg.writes_per_program),
        "checks": checks,
        "pass": all(checks.values()),
    }
    _write_json(_out(out_dir, "rng_verdict.json"), verdict)
    return verdict["pass"]


# -- solve-bs ----------------------------------------------------------------


def _lognormal_cdf(params, t):
    mu = np.log(params.x0) + (params.r - 0.5 * params.sigma ** 2) * t
    s = params.sigma * np.sqrt(t)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = norm.cdf((np.log(x[pos]) - mu) / s)
        return out

    return cdf


def _write_read_trace(cfg: ExperimentConfig, exp, path: str) -> None:
    """First read operations of the run: two single verify-style reads for
    the weight writes, then fresh random-source draws."""
    tile = exp.base_tile.copy()
    solver = TileSolver(tile)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.master_seed, _STREAM_TRACE)))
    drive = np.zeros(tile.config.rows)
    drive[0] = tile.config.v_read
    rows = []
    for k in range(min(2, cfg.read_trace_n)):
        currents, _ = solver.solve_many(drive[None, :])
        for j, c in enumerate(currents[0]):
            rows.append((k, "weight_verify", j, c))
    for k in range(2, cfg.read_trace_n):
        for _, cp, cm in exp.source.pairs:
            for c in (cp, cm):
                tile.set_device(0, c, cycle_resample(
                    tile.device(0, c), exp.source.variability, rng))
        currents, _ = solver.solve_many(drive[None, :])
        for j, c in enumerate(currents[0]):
            rows.append((k, "random_source_draw", j, c))
    _write_csv(path, ["read_index", "kind", "bitline_index", "current_a"], rows)


def _write_tile_layout(tile: CrossbarTile, path: str) -> None:
    rows = []
    for i in range(tile.config.rows):
        for j in range(tile.config.cols):
            rows.append((i, j, tile.g_target[i, j], tile.g_actual[i, j],
                         tile.dev_class[i, j].value, tile.fault[i, j].value))
    _write_csv(path, ["row", "col", "g_target_S", "g_actual_S", "device_class", "fault"], rows)


def cmd_solve_bs(cfg: ExperimentConfig, out_dir: str, mode: str,
                 dump_trajectories: int = 0, dump_nodal: str | None = None) -> bool:
    params = cfg.bs_params()
    exp = build_bs_experiment(
        params, cfg.crossbar_config(), cfg.device_spec(), mode,
        master_seed=cfg.master_seed, t1=cfg.bs_t1, n_steps=cfg.n_steps,
        calib_n=cfg.calib_n, pulse_model=cfg.pulse_model(),
        mapping=cfg.bs_mapping(), read_pulse_s=cfg.read_pulse_s,
        p_stuck_on=cfg.p_stuck_on, p_stuck_off=cfg.p_stuck_off,
    )
    threads = cfg.effective_threads()
    res = simulate_ensemble(
        exp.problem, exp.noise, m=cfg.m_trajectories, mode=exp.mode,
        master_seed=cfg.master_seed, threads=threads,
        keep_paths=dump_trajectories, divergence_limit=cfg.divergence_limit,
    )
    tag = mode.replace("-", "_")

    finals = res.finals[:, 0]
    _write_csv(
        _out(out_dir, f"finals_{tag}.csv"),
        ["trajectory_id", "seed", "final_value"],
        ((int(i), int(s), v) for i, s, v in zip(res.trajectory_ids, res.seeds, finals)),
    )

    # Closed-form finals on reference Wiener draws, for the overlay plots.
    ref_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.master_seed, _STREAM_ANALYTIC_REF)))
    w_ref = ref_rng.standard_normal(cfg.m_trajectories) * np.sqrt(cfg.bs_t1)
    analytic_finals = bs_analytic_final(params, cfg.bs_t1, w_ref)
    _write_csv(
        _out(out_dir, "analytic_reference.csv"),
        ["sample_index", "wiener_value", "final_value"],
        ((k, w, v) for k, (w, v) in enumerate(zip(w_ref, analytic_finals))),
    )

    fin_stats = moments(finals)
    ks_analytic = ks_statistic(finals, cdf=_lognormal_cdf(params, cfg.bs_t1))
    comparison = {
        "experiment": "solve-bs",
        "mode": mode,
        "m_trajectories": cfg.m_trajectories,
        "n_steps": cfg.n_steps,
        "n_diverged": res.n_diverged,
        "params": {"r": params.r, "sigma": params.sigma, "x0": params.x0,
                   "t": cfg.bs_t1},
        "finals": {
            "n": fin_stats.n, "mean": fin_stats.mean, "std": fin_stats.std,
            "variance": fin_stats.std ** 2, "skew": fin_stats.skew,
            "excess_kurtosis": fin_stats.excess_kurtosis,
        },
        "analytic": {"mean": bs_mean(params, cfg.bs_t1),
                     "variance": bs_var(params, cfg.bs_t1)},
        "ks": {"vs_analytic": ks_analytic},
    }

    checks = {}
    if mode == "digital":
        se = np.sqrt(bs_var(params, cfg.bs_t1) / fin_stats.n)
        checks["mean_within_3se"] = bool(
            abs(fin_stats.mean - bs_mean(params, cfg.bs_t1))
            < cfg.mean_sigma_gate * se)
        checks["variance_within_10pct"] = bool(
            abs(fin_stats.std ** 2 / bs_var(params, cfg.bs_t1) - 1.0)
            < cfg.var_rel_gate)
    else:
        digital = simulate_ensemble(
            exp.problem, DigitalReference(), m=cfg.m_trajectories,
            mode=DigitalParams(), master_seed=cfg.master_seed, threads=threads,
            divergence_limit=cfg.divergence_limit,
        )
        dig_stats = moments(digital.finals[:, 0])
        comparison["ks"]["vs_digital"] = ks_statistic(finals, ys=digital.finals[:, 0])
        comparison["digital"] = {"mean": dig_stats.mean, "std": dig_stats.std,
                                 "skew": dig_stats.skew}
        comparison["skew_vs_digital"] = fin_stats.skew - dig_stats.skew
        checks["ks_vs_digital_below_threshold"] = bool(
            comparison["ks"]["vs_digital"] < cfg.ks_threshold)
        checks["ks_vs_analytic_below_threshold"] = bool(ks_analytic < cfg.ks_threshold)

    comparison["checks"] = checks
    comparison["pass"] = all(checks.values())
    _write_json(_out(out_dir, f"comparison_{tag}.json"), comparison)

    ledger = EnergyLedger().merge(exp.setup_ledger).merge(res.ledger)
    _write_json(
        _out(out_dir, f"energy_{tag}.json"),
        report(ledger, sample_count=cfg.m_trajectories * cfg.n_steps,
               writes_per_program=cfg.writes_per_program),
    )

    _write_tile_layout(exp.base_tile, _out(out_dir, f"tile_layout_{tag}.csv"))
    if exp.source is not None and cfg.read_trace_n > 0:
        _write_read_trace(cfg, exp, _out(out_dir, f"read_trace_{tag}.csv"))

    if dump_trajectories > 0:
        _write_csv(
            _out(out_dir, f"trajectories_{tag}.csv"),
            ["trajectory_id", "step", "t", "x"],
            ((traj.trajectory_id, s, traj.times[s], traj.states[s, 0])
             for traj in res.trajectories for s in range(traj.times.size)),
        )
    if dump_nodal is not None:
        drive = np.zeros(cfg.rows)
        drive[0] = cfg.v_read
        solve_tile(exp.base_tile.copy(), drive, dump_path=dump_nodal)

    return comparison["pass"]


# -- energy-report -----------------------------------------------------------


def cmd_energy_report(cfg: ExperimentConfig, out_dir: str) -> bool:
    """Energy accounting for the default workload (full-crossbar solve)."""
    exp = build_bs_experiment(
        cfg.bs_params(), cfg.crossbar_config(), cfg.device_spec(), "full-crossbar",
        master_seed=cfg.master_seed, t1=cfg.bs_t1, n_steps=cfg.n_steps,
        calib_n=cfg.calib_n, pulse_model=cfg.pulse_model(),
        mapping=cfg.bs_mapping(), read_pulse_s=cfg.read_pulse_s,
        p_stuck_on=cfg.p_stuck_on, p_stuck_off=cfg.p_stuck_off,
    )
    res = simulate_ensemble(
        exp.problem, exp.noise, m=cfg.m_trajectories, mode=exp.mode,
        master_seed=cfg.master_seed, threads=cfg.effective_threads(),
        divergence_limit=cfg.divergence_limit,
    )
    ledger = EnergyLedger().merge(exp.setup_ledger).merge(res.ledger)
    sample_count = cfg.m_trajectories * cfg.n_steps
    out = report(ledger, sample_count=sample_count,
                 writes_per_program=cfg.writes_per_program)
    out["workload"] = {
        "mode": "full-crossbar",
        "m_trajectories": cfg.m_trajectories,
        "n_steps": cfg.n_steps,
        "n_diverged": res.n_diverged,
    }
    _write_json(_out(out_dir, "energy_report.json"), out)
    return True


# -- argument plumbing -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key=value config file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out-dir", default="sdex_out", help="output directory")
    common.add_argument("--threads", type=int,
                        help="worker thread cap (default: all cores)")

    parser = argparse.ArgumentParser(
        prog="sdex",
        description="Monte Carlo SDE solving on simulated memristor crossbars",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("rng-characterize", parents=[common],
                   help="random-vector quality vs word-line position")
    p_bs = sub.add_parser("solve-bs", parents=[common],
                          help="Black-Scholes Monte Carlo ensemble")
    p_bs.add_argument("--mode", choices=["noise-only", "full-crossbar", "digital"],
                      default="noise-only")
    p_bs.add_argument("--dump-trajectories", type=int, default=0, metavar="N",
                      help="also write full paths of the first N trajectories")
    p_bs.add_argument("--dump-nodal", metavar="PATH",
                      help="write the assembled nodal system to a text file")
    sub.add_parser("energy-report", parents=[common],
                   help="energy accounting for the default workload")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides={
            "master_seed": args.seed, "threads": args.threads})
        if args.command == "rng-characterize":
            ok = cmd_rng_characterize(cfg, args.out_dir)
        elif args.command == "solve-bs":
            ok = cmd_solve_bs(cfg, args.out_dir, args.mode,
                              dump_trajectories=args.dump_trajectories,
                              dump_nodal=args.dump_nodal)
        else:
            ok = cmd_energy_report(cfg, args.out_dir)
    except SdexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    if not ok:
        print("one or more configured acceptance thresholds FAILED "
              f"(see verdict JSON in {args.out_dir})", file=sys.stderr)
        return 1
    print(f"ok: outputs written to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
