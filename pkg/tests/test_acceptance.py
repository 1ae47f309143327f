"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line.  Run with `pytest tests/test_acceptance.py -v -s`.

The statistical criteria run at their stated scales under the fixed default
master seed, so the whole suite is deterministic.
"""

import filecmp
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from sdex.circuit import CrossbarConfig, CrossbarTile, MappingParams, map_matrix, solve_tile, vmm_read
from sdex.cli import _lognormal_cdf, cmd_rng_characterize, main
from sdex.config import load_config
from sdex.device import DeviceSpec
from sdex.energy import EnergyLedger
from sdex.sde import (
    BlackScholesParams,
    DigitalParams,
    DigitalReference,
    bs_analytic_final,
    bs_mean,
    bs_var,
    build_bs_experiment,
    estimate_strong_order,
    simulate_ensemble,
)
from sdex.stats import ks_statistic, moments

from oracles import dense_mna_solve

SEED = 6
PLOTS_DIR = os.path.join(os.path.dirname(__file__), "..", "plots")


def _report(name: str, ok: bool, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {name}: {tag} {detail}")


@pytest.fixture(scope="module")
def bs_setup():
    params = BlackScholesParams()
    return params, CrossbarConfig(), DeviceSpec()


@pytest.fixture(scope="module")
def noise_only_finals(bs_setup):
    params, cfg, spec = bs_setup
    exp = build_bs_experiment(params, cfg, spec, "noise-only", master_seed=SEED)
    res = simulate_ensemble(exp.problem, exp.noise, m=1000, mode=exp.mode,
                            master_seed=SEED, threads=1)
    dig = simulate_ensemble(exp.problem, DigitalReference(), m=1000,
                            master_seed=SEED, threads=1)
    return res.finals[:, 0], dig.finals[:, 0]


def test_circuit_oracle_equivalence():
    """100 random 8x8 tiles across r_line in {0, 5, 20} match dense MNA."""
    spec = DeviceSpec()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    counts = (34, 33, 33)
    for r_line, n in zip((0.0, 5.0, 20.0), counts):
        cfg = CrossbarConfig(r_line=r_line)
        for _ in range(n):
            tile = CrossbarTile(cfg, spec)
            tile.g_actual[:, :] = rng.uniform(1e-5, 1e-4, (8, 8))
            tile.version += 1
            v = rng.uniform(0.0, 0.2, 8)
            got = solve_tile(tile, v).bitline_currents
            want, _ = dense_mna_solve(tile, v)
            worst = max(worst, np.max(np.abs(got - want)) / np.max(np.abs(want)))
    ok = worst < 1e-9
    _report("circuit-oracle-equivalence", ok, f"(worst rel err {worst:.2e})")
    assert ok


def test_ideal_vmm_reduction():
    """Zero parasitics, zero perturbation: error within the DAC bound."""
    spec = DeviceSpec(write_perturbation=0.0)
    cfg = CrossbarConfig(r_line=0.0, r_in=0.0, r_out=0.0)
    rng = np.random.default_rng(SEED + 1)
    bound = 1.0 * 1.0 * 8 * 2.0 ** (1 - cfg.dac_bits)
    worst = 0.0
    for _ in range(100):
        w = rng.uniform(-1.0, 1.0, (8, 8))
        mapped = map_matrix(w, spec, cfg, rng,
                            params=MappingParams(w_max=1.0, x_max=1.0))
        x = rng.uniform(-1.0, 1.0, 8)
        err = np.max(np.abs(vmm_read(mapped, x).values - x @ w))
        worst = max(worst, err)
    ok = worst <= bound
    _report("ideal-vmm-reduction", ok, f"(worst {worst:.3e} <= bound {bound:.3e})")
    assert ok


def test_fig2_rng_characterization(tmp_path):
    """32x32 crossbar, 500 16-length vectors: moments, trend, position."""
    cfg = load_config(overrides={"master_seed": SEED}, environ={})
    ok = cmd_rng_characterize(cfg, str(tmp_path))
    verdict = json.loads((tmp_path / "rng_verdict.json").read_text())
    checks = verdict["checks"]
    _report("fig2-rng-characterization", ok,
            f"(std_ratio {verdict['first_vs_last_pair']['std_ratio']:.3f}, "
            f"kurt slope CI {verdict['trend']['kurtosis_ci']})")
    assert checks["skew_within_bound"]
    assert checks["kurtosis_within_bound"]
    assert checks["kurtosis_trend_ci_contains_zero"]
    assert checks["mean_gap_within_3_pooled_se"]
    assert checks["std_ratio_in_band"]
    assert ok


def test_black_scholes_weak_accuracy_digital(bs_setup):
    """Digital noise, m=10000: mean within 3 SE, variance within 10%."""
    params, cfg, spec = bs_setup
    # Brute-force oracle for the analytic moments, recomputed here.
    w = np.random.default_rng(SEED + 2).standard_normal(10**6)
    oracle = bs_analytic_final(params, 1.0, w)
    assert abs(oracle.mean() - bs_mean(params, 1.0)) < 3 * oracle.std() / 1000.0
    assert abs(oracle.var() / bs_var(params, 1.0) - 1.0) < 0.01

    exp = build_bs_experiment(params, cfg, spec, "digital", master_seed=SEED)
    res = simulate_ensemble(exp.problem, DigitalReference(), m=10_000,
                            master_seed=SEED, threads=1)
    finals = res.finals[:, 0]
    se = math.sqrt(bs_var(params, 1.0) / 10_000)
    mean_err = abs(finals.mean() - bs_mean(params, 1.0))
    var_rel = abs(finals.var() / bs_var(params, 1.0) - 1.0)
    ok = mean_err < 3 * se and var_rel < 0.10
    _report("black-scholes-weak-accuracy", ok,
            f"(|mean err| {mean_err:.5f} < {3*se:.5f}, var rel {var_rel:.3%})")
    assert mean_err < 3 * se
    assert var_rel < 0.10


def test_fig3d_analog_noise_agreement(bs_setup, noise_only_finals):
    """Noise-only mode vs digital finals and vs the closed-form CDF."""
    params, _, _ = bs_setup
    finals, dig = noise_only_finals
    ks_digital = ks_statistic(finals, ys=dig)
    ks_analytic = ks_statistic(finals, cdf=_lognormal_cdf(params, 1.0))
    ok = ks_digital < 0.08 and ks_analytic < 0.08
    _report("fig3d-analog-noise-agreement", ok,
            f"(ks vs digital {ks_digital:.4f}, ks vs analytic {ks_analytic:.4f})")
    assert ks_digital < 0.08
    assert ks_analytic < 0.08


def test_write_perturbation_skew_effect(bs_setup):
    """Crossbar-evaluated parameters add positive skew at 5% perturbation;
    the effect collapses when the perturbation is turned off.

    The comparison is paired: both runs consume identical digital noise, so
    the difference isolates the weight-write path.
    """
    params, cfg, _ = bs_setup
    m = 4000

    def skew_for(spec):
        exp = build_bs_experiment(params, cfg, spec, "full-crossbar",
                                  master_seed=SEED)
        cb = simulate_ensemble(exp.problem, DigitalReference(), m=m,
                               mode=exp.mode, master_seed=SEED, threads=1)
        dg = simulate_ensemble(exp.problem, DigitalReference(), m=m,
                               mode=DigitalParams(), master_seed=SEED, threads=1)
        return moments(cb.finals[:, 0]).skew, moments(dg.finals[:, 0]).skew

    sk_cb, sk_dg = skew_for(DeviceSpec(write_perturbation=0.05))
    sk_cb0, sk_dg0 = skew_for(DeviceSpec(write_perturbation=0.0))
    gap_5pct = sk_cb - sk_dg
    gap_0pct = abs(sk_cb0 - sk_dg0)
    ok = gap_5pct > 0 and gap_0pct < 0.15
    _report("write-perturbation-skew-effect", ok,
            f"(skew gap at 5%: {gap_5pct:+.4f}; at 0%: {gap_0pct:.4f})")
    assert gap_5pct > 0
    assert gap_0pct < 0.15


def test_strong_convergence_order(bs_setup):
    """Euler-Maruyama strong order ~1/2 on coupled Brownian paths."""
    params, _, _ = bs_setup
    from sdex.sde import black_scholes_problem

    problem = black_scholes_problem(params)
    slope = estimate_strong_order(problem, [2.0 ** -k for k in range(4, 9)],
                                  m=2000, master_seed=SEED)
    ok = 0.4 <= slope <= 0.6
    _report("strong-convergence-order", ok, f"(slope {slope:.3f})")
    assert 0.4 <= slope <= 0.6


def test_energy_figures(bs_setup):
    """Default full-crossbar workload: per-sample ~0.8 uJ, total ~0.16 J,
    ~200k writes, ~3 uJ of VMM reads (all within the stated factors)."""
    params, cfg, spec = bs_setup
    exp = build_bs_experiment(params, cfg, spec, "full-crossbar", master_seed=SEED)
    res = simulate_ensemble(exp.problem, exp.noise, m=1000, mode=exp.mode,
                            master_seed=SEED, threads=1)
    led = EnergyLedger().merge(exp.setup_ledger).merge(res.ledger)

    programs = led.write_pulse_count // 100
    per_sample = (led.write_energy_j + led.verify_energy_j) / (1000 * 100)
    total = led.total_j
    vmm_j = led.read_energy_j

    checks = {
        "per_sample": 0.8e-6 / 2 <= per_sample <= 0.8e-6 * 2,
        "total": 0.16 / 2 <= total <= 0.16 * 2,
        "write_count": abs(programs - 200_000) <= 0.10 * 200_000,
        "vmm_reads": 3e-6 / 2 <= vmm_j <= 3e-6 * 2,
    }
    ok = all(checks.values())
    _report("energy-figures", ok,
            f"(per-sample {per_sample*1e6:.2f} uJ, total {total:.3f} J, "
            f"programs {programs}, vmm {vmm_j*1e6:.2f} uJ)")
    assert checks["per_sample"]
    assert checks["total"]
    assert checks["write_count"]
    assert checks["vmm_reads"]


def test_determinism_across_reruns_and_threads(tmp_path, monkeypatch):
    """Byte-identical outputs for every command, independent of threads."""
    for key, val in (("SDEX_N_VECTORS", "40"), ("SDEX_CALIB_N", "120"),
                     ("SDEX_RNG_ROWS", "4"), ("SDEX_VECTOR_LEN", "4"),
                     ("SDEX_M_TRAJECTORIES", "12"), ("SDEX_N_STEPS", "8"),
                     ("SDEX_READ_TRACE_N", "4")):
        monkeypatch.setenv(key, val)
    runs = [
        (["rng-characterize"], ["samples.csv", "moments.csv", "rng_verdict.json"], "1"),
        (["solve-bs", "--mode", "noise-only"],
         ["finals_noise_only.csv", "comparison_noise_only.json",
          "energy_noise_only.json", "read_trace_noise_only.csv"], "3"),
        (["solve-bs", "--mode", "full-crossbar"],
         ["finals_full_crossbar.csv", "energy_full_crossbar.json"], "2"),
        (["solve-bs", "--mode", "digital"], ["finals_digital.csv"], "4"),
        (["energy-report"], ["energy_report.json"], "2"),
    ]
    ok = True
    for argv, files, alt_threads in runs:
        out_a = tmp_path / ("a_" + argv[0] + argv[-1].replace("-", "_"))
        out_b = tmp_path / ("b_" + argv[0] + argv[-1].replace("-", "_"))
        main(argv + ["--out-dir", str(out_a), "--seed", "123", "--threads", "1"])
        main(argv + ["--out-dir", str(out_b), "--seed", "123",
                     "--threads", alt_threads])
        for name in files:
            same = filecmp.cmp(out_a / name, out_b / name, shallow=False)
            ok = ok and same
            assert same, f"{argv}: {name} differs across thread counts"
    _report("determinism", ok)
    assert ok


def test_secondary_plot_scripts(tmp_path):
    """All four plot kinds render from the golden fixtures; the histogram's
    analytic overlay integrates to one on the plotted grid."""
    fixtures = os.path.join(PLOTS_DIR, "tests", "fixtures")
    render = os.path.join(PLOTS_DIR, "render.py")
    kinds = {
        "rng-moments": [os.path.join(fixtures, "moments.csv")],
        "bs-histogram": [os.path.join(fixtures, "finals_noise_only.csv"),
                         os.path.join(fixtures, "comparison_noise_only.json"),
                         os.path.join(fixtures, "analytic_reference.csv")],
        "conductance-heatmap": [os.path.join(fixtures, "tile_layout_noise_only.csv")],
        "bitline-trace": [os.path.join(fixtures, "read_trace_noise_only.csv")],
    }
    ok = True
    for kind, inputs in kinds.items():
        out = tmp_path / f"{kind}.png"
        proc = subprocess.run(
            [sys.executable, render, "--kind", kind, "--in", *inputs,
             "--out", str(out)],
            capture_output=True, text=True)
        ok = ok and proc.returncode == 0 and out.exists()
        assert proc.returncode == 0, f"{kind}: {proc.stderr}"
        assert out.exists() and out.stat().st_size > 0

    sys.path.insert(0, PLOTS_DIR)
    try:
        from render import analytic_overlay_grid

        comparison = json.load(open(kinds["bs-histogram"][1]))
        finals = np.loadtxt(kinds["bs-histogram"][0], delimiter=",", skiprows=1,
                            usecols=2)
        grid, pdf = analytic_overlay_grid(comparison["params"], finals)
        integral = float(np.trapezoid(pdf, grid))
        ok = ok and abs(integral - 1.0) < 0.01
        _report("secondary-plot-scripts", ok, f"(overlay integral {integral:.4f})")
        assert abs(integral - 1.0) < 0.01
    finally:
        sys.path.remove(PLOTS_DIR)
    assert ok
