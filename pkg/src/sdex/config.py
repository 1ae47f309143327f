"""Experiment configuration: flat key=value file, environment overrides.

Every knob carries the reference experiment's default, so an empty config
reproduces the headline runs.  Unknown keys are rejected rather than
ignored; environment variables with the ``SDEX_`` prefix override any key
(e.g. ``SDEX_M_TRAJECTORIES=200``).
"""

import os
from dataclasses import dataclass, fields

from .circuit import CrossbarConfig, MappingParams
from .device import DeviceSpec
from .energy import PulseModel
from .errors import UsageError
from .sde import BlackScholesParams

ENV_PREFIX = "SDEX_"


@dataclass
class ExperimentConfig:
    # crossbar tile
    rows: int = 8
    cols: int = 8
    r_line: float = 5.0
    r_in: float = 1000.0
    r_out: float = 1000.0
    v_read: float = 0.2
    dac_bits: int = 16
    # devices
    g_lrs: float = 1e-4
    g_hrs: float = 1e-5
    write_perturbation: float = 0.05
    lrs_variability: float = 0.10
    hrs_variability: float = 0.25
    p_stuck_on: float = 0.0
    p_stuck_off: float = 0.0
    # write/read pulse scheme
    write_v: float = 1.0
    write_t: float = 200e-9
    writes_per_program: int = 100
    verify_v: float = 0.2
    verify_t: float = 1e-3
    read_v: float = 0.2
    read_pulse_s: float = 200e-9
    # random-vector characterization experiment
    rng_rows: int = 32
    n_vectors: int = 500
    vector_len: int = 16
    calib_n: int = 1000
    # Black-Scholes ensemble experiment
    m_trajectories: int = 1000
    n_steps: int = 100
    bs_r: float = 0.1
    bs_sigma: float = 0.2
    bs_x0: float = 1.0
    bs_t1: float = 1.0
    bs_x_max: float = 8.0
    bs_w_max: float = 1.0
    # acceptance thresholds used by the command verdicts
    ks_threshold: float = 0.08
    moment_bound: float = 0.6
    std_ratio_low: float = 0.95
    std_ratio_high: float = 1.05
    mean_sigma_gate: float = 3.0
    var_rel_gate: float = 0.10
    # bookkeeping
    master_seed: int = 6
    threads: int = 0  # 0: use all available cores
    divergence_limit: float = 1e12
    read_trace_n: int = 16

    # -- views -------------------------------------------------------------

    def crossbar_config(self) -> CrossbarConfig:
        return CrossbarConfig(rows=self.rows, cols=self.cols, r_line=self.r_line,
                              r_in=self.r_in, r_out=self.r_out, v_read=self.v_read,
                              dac_bits=self.dac_bits)

    def rng_crossbar_config(self) -> CrossbarConfig:
        return CrossbarConfig(rows=self.rng_rows, cols=2 * self.vector_len,
                              r_line=self.r_line, r_in=self.r_in, r_out=self.r_out,
                              v_read=self.v_read, dac_bits=self.dac_bits)

    def device_spec(self) -> DeviceSpec:
        return DeviceSpec(g_lrs=self.g_lrs, g_hrs=self.g_hrs,
                          write_perturbation=self.write_perturbation,
                          lrs_variability=self.lrs_variability,
                          hrs_variability=self.hrs_variability)

    def pulse_model(self) -> PulseModel:
        return PulseModel(write_v=self.write_v, write_t=self.write_t,
                          writes_per_program=self.writes_per_program,
                          verify_v=self.verify_v, verify_t=self.verify_t,
                          read_v=self.read_v)

    def bs_params(self) -> BlackScholesParams:
        return BlackScholesParams(r=self.bs_r, sigma=self.bs_sigma, x0=self.bs_x0)

    def bs_mapping(self) -> MappingParams:
        return MappingParams(w_max=self.bs_w_max, x_max=self.bs_x_max)

    def effective_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise UsageError(f"config key {key}: cannot parse {raw!r}") from exc


def load_config(path: str | None = None, overrides: dict | None = None,
                environ: dict | None = None) -> ExperimentConfig:
    """Defaults, then config file, then SDEX_* environment, then overrides."""
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in _FIELD_TYPES:
                    raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _parse_value(key, raw)

    environ = os.environ if environ is None else environ
    for key in _FIELD_TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            values[key] = _parse_value(key, environ[env_key])

    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key {key!r}")
        if val is not None:
            values[key] = val

    return ExperimentConfig(**values)
