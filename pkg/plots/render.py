#!/usr/bin/env python3
"""Render figures from the simulator CLI's delimited outputs.

Reads only the documented CSV/JSON files; never touches the simulator in
process and never modifies its inputs.  One image per invocation:

    render.py --kind rng-moments        --in moments.csv              --out fig.png
    render.py --kind bs-histogram      --in finals.csv comparison.json [analytic_reference.csv] --out fig.png
    render.py --kind conductance-heatmap --in tile_layout.csv          --out fig.png
    render.py --kind bitline-trace     --in read_trace.csv            --out fig.png

The bs-histogram overlays the closed-form lognormal density computed from
the comparison JSON's (r, sigma, t, x0).
"""

import argparse
import json
import math
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


class ValidationError(ValueError):
    """An input file does not match its documented schema."""


def load_csv(path: str, required: list[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise ValidationError(f"{path}: cannot parse as CSV ({exc})") from exc
    for col in required:
        if col not in df.columns:
            raise ValidationError(f"{path}: missing required column {col!r}")
    if df.empty:
        raise ValidationError(f"{path}: no data rows")
    return df


def analytic_overlay_grid(params: dict, finals: np.ndarray, n: int = 800):
    """Grid and lognormal density implied by (r, sigma, t, x0).

    The grid spans the density's +/-5 log-sigma range united with the data
    range, so the plotted curve carries essentially all probability mass.
    """
    for key in ("r", "sigma", "t", "x0"):
        if key not in params:
            raise ValidationError(f"comparison JSON params missing {key!r}")
    r, sigma, t, x0 = (float(params[k]) for k in ("r", "sigma", "t", "x0"))
    mu = math.log(x0) + (r - 0.5 * sigma * sigma) * t
    s = sigma * math.sqrt(t)
    if s <= 0:
        raise ValidationError("sigma * sqrt(t) must be positive for the overlay")
    lo = min(math.exp(mu - 5 * s), float(np.min(finals)))
    hi = max(math.exp(mu + 5 * s), float(np.max(finals)))
    grid = np.linspace(max(lo, 1e-12), hi, n)
    pdf = np.exp(-0.5 * ((np.log(grid) - mu) / s) ** 2) / (grid * s * math.sqrt(2 * math.pi))
    return grid, pdf


def render_rng_moments(inputs: list[str], out: str) -> None:
    df = load_csv(inputs[0], ["pair_index", "mean", "std", "skew", "excess_kurtosis"])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(df["pair_index"], df["skew"], marker="o", label="skew")
    ax.scatter(df["pair_index"], df["excess_kurtosis"], marker="s",
               label="excess kurtosis")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("pair position on word line")
    ax.set_ylabel("sample moment")
    ax.set_title("higher moments vs word-line position")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def _classify_histogram_inputs(inputs: list[str]):
    finals_path, comparison_path, reference_path = None, None, None
    for path in inputs:
        if path.endswith(".json"):
            comparison_path = path
        else:
            head = pd.read_csv(path, nrows=0)
            if "wiener_value" in head.columns:
                reference_path = path
            else:
                finals_path = path
    if finals_path is None or comparison_path is None:
        raise ValidationError(
            "bs-histogram needs a finals CSV and a comparison JSON "
            "(optionally an analytic-reference CSV)")
    return finals_path, comparison_path, reference_path


def render_bs_histogram(inputs: list[str], out: str) -> None:
    finals_path, comparison_path, reference_path = _classify_histogram_inputs(inputs)
    finals = load_csv(finals_path, ["trajectory_id", "seed", "final_value"])
    comparison = json.load(open(comparison_path))
    if "params" not in comparison:
        raise ValidationError(f"{comparison_path}: missing 'params'")

    values = finals["final_value"].to_numpy()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=60, density=True, alpha=0.6,
            label=f"finals ({comparison.get('mode', 'run')})")
    if reference_path is not None:
        ref = load_csv(reference_path, ["sample_index", "wiener_value", "final_value"])
        ax.hist(ref["final_value"].to_numpy(), bins=60, density=True,
                histtype="step", label="closed-form samples")
    grid, pdf = analytic_overlay_grid(comparison["params"], values)
    ax.plot(grid, pdf, "k-", lw=1.5, label="analytic density")
    ax.set_xlabel("final value")
    ax.set_ylabel("density")
    ax.set_title("ensemble finals vs closed form")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_conductance_heatmap(inputs: list[str], out: str) -> None:
    df = load_csv(inputs[0], ["row", "col", "g_actual_S"])
    rows = int(df["row"].max()) + 1
    cols = int(df["col"].max()) + 1
    resistance = np.full((rows, cols), np.nan)
    for _, rec in df.iterrows():
        resistance[int(rec["row"]), int(rec["col"])] = 1.0 / rec["g_actual_S"]
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(resistance / 1e3, cmap="viridis")
    fig.colorbar(im, ax=ax, label="resistance (kOhm)")
    ax.set_xlabel("bit line")
    ax.set_ylabel("word line")
    ax.set_title("device resistances")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_bitline_trace(inputs: list[str], out: str) -> None:
    df = load_csv(inputs[0], ["read_index", "kind", "bitline_index", "current_a"])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for bitline, grp in df.groupby("bitline_index"):
        ax.plot(grp["read_index"], grp["current_a"] * 1e6, marker=".",
                lw=0.8, label=f"bit line {bitline}")
    first_draw = df[df["kind"] == "random_source_draw"]["read_index"].min()
    if not np.isnan(first_draw):
        ax.axvline(first_draw - 0.5, color="k", ls="--", lw=0.8)
    ax.set_xlabel("read operation")
    ax.set_ylabel("bit-line current (uA)")
    ax.set_title("bit-line currents per read")
    if df["bitline_index"].nunique() <= 8:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


RENDERERS = {
    "rng-moments": render_rng_moments,
    "bs-histogram": render_bs_histogram,
    "conductance-heatmap": render_conductance_heatmap,
    "bitline-trace": render_bitline_trace,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="render figures from simulator output files")
    parser.add_argument("--kind", required=True, choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="FILE")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        RENDERERS[args.kind](args.inputs, args.out)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
