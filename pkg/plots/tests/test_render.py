import json
import os
import subprocess
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from render import ValidationError, analytic_overlay_grid, main

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fx(name):
    return os.path.join(FIXTURES, name)


@pytest.mark.parametrize("kind,inputs", [
    ("rng-moments", ["moments.csv"]),
    ("bs-histogram", ["finals_noise_only.csv", "comparison_noise_only.json",
                      "analytic_reference.csv"]),
    ("conductance-heatmap", ["tile_layout_noise_only.csv"]),
    ("bitline-trace", ["read_trace_noise_only.csv"]),
])
def test_renders_each_kind(tmp_path, kind, inputs):
    out = tmp_path / f"{kind}.png"
    code = main(["--kind", kind, "--in", *[fx(f) for f in inputs],
                 "--out", str(out)])
    assert code == 0
    assert out.stat().st_size > 1000


def test_inputs_are_never_modified(tmp_path):
    paths = [fx("finals_noise_only.csv"), fx("comparison_noise_only.json")]
    before = [open(p, "rb").read() for p in paths]
    main(["--kind", "bs-histogram", "--in", *paths,
          "--out", str(tmp_path / "h.png")])
    after = [open(p, "rb").read() for p in paths]
    assert before == after


def test_empty_csv_is_rejected(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("pair_index,mean,std,skew,excess_kurtosis\n")
    code = main(["--kind", "rng-moments", "--in", str(empty),
                 "--out", str(tmp_path / "x.png")])
    assert code == 2


def test_schema_mismatch_names_the_column(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("pair_index,mean,std,skew\n0,0.0,1.0,0.1\n")
    with pytest.raises(ValidationError, match="excess_kurtosis"):
        from render import render_rng_moments

        render_rng_moments([str(bad)], str(tmp_path / "x.png"))


def test_histogram_requires_params_block(tmp_path):
    meta = tmp_path / "meta.json"
    meta.write_text(json.dumps({"mode": "noise-only"}))
    code = main(["--kind", "bs-histogram",
                 "--in", fx("finals_noise_only.csv"), str(meta),
                 "--out", str(tmp_path / "x.png")])
    assert code == 2


def test_overlay_density_integrates_to_one():
    comparison = json.load(open(fx("comparison_noise_only.json")))
    finals = np.loadtxt(fx("finals_noise_only.csv"), delimiter=",", skiprows=1,
                        usecols=2)
    grid, pdf = analytic_overlay_grid(comparison["params"], finals)
    assert abs(float(np.trapezoid(pdf, grid)) - 1.0) < 0.01


def test_cli_subprocess_roundtrip(tmp_path):
    render = os.path.join(os.path.dirname(__file__), "..", "render.py")
    out = tmp_path / "fig.png"
    proc = subprocess.run(
        [sys.executable, render, "--kind", "conductance-heatmap",
         "--in", fx("tile_layout_noise_only.csv"), "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
