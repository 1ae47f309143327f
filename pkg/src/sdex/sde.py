"""SDE problems, Euler-Maruyama ensembles, and the geometric-brownian-motion
reference solution.

The integrator is the plain forward Euler-Maruyama update
``X_{n+1} = X_n + r(t_n, X_n) dt + sigma(t_n, X_n) * dW_n`` with diagonal
(elementwise) diffusion and Wiener increments of standard deviation
sqrt(dt).  Noise can come from a digital generator or from crossbar
differential pairs; independently, the drift/diffusion products can be
evaluated exactly or through bit-serial crossbar reads against programmed
coefficient pairs.

Trajectories are embarrassingly parallel: worker k seeds every stream it
owns from (master_seed, k), so results are identical for any thread count.
"""

import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    DEFAULT_READ_PULSE_S,
    CrossbarConfig,
    CrossbarTile,
    TileSolver,
    weight_to_pair,
    MappingParams,
)
from .device import DeviceClass, DeviceSpec, DeviceState, program_weight
from .energy import EnergyLedger, PulseModel, charge_program
from .errors import NumericalError, RangeError, UsageError
from .gauss import GaussianSource, calibrate

# Stream labels hung off the master seed; workers never share a stream.
_STREAM_LAYOUT = 0
_STREAM_CALIBRATION = 1
_STREAM_TRAJECTORY = 2
_STREAM_TRACE = 3

DIVERGENCE_LIMIT = 1e12


@dataclass
class SdeProblem:
    """dX = drift(t, X) dt + diffusion(t, X) * dW on [t0, t1], diagonal noise.

    `exact_final`, when the closed form is known, maps (t, W_t) to the exact
    state on the same Brownian path; the strong-order estimator uses it as
    its reference when available.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    x0: np.ndarray
    t0: float = 0.0
    t1: float = 1.0
    n_steps: int = 100
    exact_final: Callable | None = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.x0.size != self.dim:
            raise UsageError(f"x0 has size {self.x0.size}, expected dim {self.dim}")
        if not self.t1 > self.t0:
            raise UsageError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.n_steps < 1:
            raise UsageError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps


@dataclass(frozen=True)
class BlackScholesParams:
    r: float = 0.1
    sigma: float = 0.2
    x0: float = 1.0

    def __post_init__(self):
        if self.sigma < 0.0:
            raise RangeError("sigma must be nonnegative")
        if self.x0 <= 0.0:
            raise RangeError("x0 must be positive")


def black_scholes_problem(
    params: BlackScholesParams,
    t0: float = 0.0,
    t1: float = 1.0,
    n_steps: int = 100,
) -> SdeProblem:
    """Geometric brownian motion dX = r X dt - sigma X dW (fixed rate and
    volatility; the minus sign is distribution-neutral since W is symmetric)."""
    r, s, x0 = params.r, params.sigma, params.x0

    def exact_final(t, w):
        # Pathwise solution of the integrated form, for strong-error coupling.
        return x0 * np.exp((r - 0.5 * s * s) * t - s * w)

    return SdeProblem(
        dim=1,
        drift=lambda t, x: r * x,
        diffusion=lambda t, x: -s * x,
        x0=np.array([x0]),
        t0=t0,
        t1=t1,
        n_steps=n_steps,
        exact_final=exact_final,
    )


def bs_analytic_final(params: BlackScholesParams, t: float, w) -> float:
    """Closed-form final value X_0 exp(sigma W + (r - sigma^2/2) t)."""
    if t < 0.0:
        raise RangeError("t must be nonnegative")
    return params.x0 * np.exp(params.sigma * np.asarray(w) + (params.r - 0.5 * params.sigma ** 2) * t)


def bs_mean(params: BlackScholesParams, t: float) -> float:
    return params.x0 * math.exp(params.r * t)


def bs_var(params: BlackScholesParams, t: float) -> float:
    return params.x0 ** 2 * math.exp(2.0 * params.r * t) * (
        math.exp(params.sigma ** 2 * t) - 1.0
    )


def em_step(
    x: np.ndarray,
    t: float,
    dt: float,
    dw: np.ndarray,
    problem: SdeProblem,
) -> np.ndarray:
    """One forward Euler-Maruyama update."""
    if dt <= 0.0:
        raise UsageError("dt must be positive")
    drift = np.asarray(problem.drift(t, x), dtype=float)
    diff = np.asarray(problem.diffusion(t, x), dtype=float)
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(diff))):
        raise NumericalError(f"non-finite drift/diffusion at t={t}, x={x}")
    return x + drift * dt + diff * dw


# -- noise sources and parameter-evaluation modes ---------------------------


@dataclass
class DigitalReference:
    """Unit normals from the worker's own pseudo-random stream."""


@dataclass
class CrossbarSource:
    """Unit normals from a calibrated differential-pair source; each worker
    gets its own tile copy and random stream, sharing the calibration."""

    prototype: GaussianSource
    pulse_model: PulseModel = field(default_factory=PulseModel)


@dataclass
class DigitalParams:
    """Evaluate drift/diffusion exactly from the problem callables."""


@dataclass
class CrossbarParams:
    """Evaluate the coefficient products on the crossbar (1-D geometric form).

    Each worker reprograms the rate and volatility differential pairs on its
    tile copy (fresh write perturbation per trajectory), then reads
    (rate*X, vol*X) through the bit-serial DAC every step.  The drift term
    is the first product; the diffusion term is `diffusion_sign` times the
    second.

    `gain` holds the per-pair transfer of the read chain relative to an
    ideal array, computed once from the nominal layout (targets only, no
    device noise).  The off-array decode divides by it, the standard
    design-time scaling; realized write errors still land on the products.
    """

    prototype: CrossbarTile
    rate: float
    volatility: float
    input_row: int = 0
    rate_pair: tuple[int, int] = (0, 1)
    vol_pair: tuple[int, int] = (2, 3)
    mapping: MappingParams = field(default_factory=lambda: MappingParams(w_max=1.0, x_max=8.0))
    diffusion_sign: float = -1.0
    pulse_model: PulseModel = field(default_factory=PulseModel)
    read_pulse_s: float = DEFAULT_READ_PULSE_S
    gain: tuple[float, float] = (1.0, 1.0)


class _PairProductReader:
    """Bit-serial read of coefficient*input products from differential pairs
    sharing one input word line."""

    def __init__(self, tile: CrossbarTile, solver: TileSolver, mode: CrossbarParams,
                 spec: DeviceSpec):
        self.tile = tile
        self.solver = solver
        self.mode = mode
        self.spec = spec
        cfg = tile.config
        n_mag_bits = cfg.dac_bits - 1
        self.q_full = (1 << n_mag_bits) - 1
        self.n_mag_bits = n_mag_bits
        self.scale = (
            (mode.mapping.x_max / self.q_full)
            * mode.mapping.w_max
            / (cfg.v_read * spec.g_swing)
        ) if self.q_full else 0.0

    def program(self, rng: np.random.Generator, ledger: EnergyLedger | None) -> None:
        for coeff, pair in ((self.mode.rate, self.mode.rate_pair),
                            (self.mode.volatility, self.mode.vol_pair)):
            gp, gm = weight_to_pair(coeff, self.mode.mapping, self.spec)
            for col, gt in zip(pair, (gp, gm)):
                i = self.mode.input_row
                self.tile.set_class(i, col, DeviceClass.WEIGHT)
                old = self.tile.g_actual[i, col]
                self.tile.set_device(i, col, program_weight(
                    self.tile.device(i, col), self.spec, gt, rng))
                if ledger is not None:
                    charge_program(ledger, self.tile, (i, col), self.mode.pulse_model,
                                   g_start=old, g_end=self.tile.g_actual[i, col])

    def read(self, x: float, ledger: EnergyLedger | None) -> tuple[float, float]:
        if abs(x) > self.mode.mapping.x_max:
            raise RangeError(
                f"|X|={abs(x):.4g} exceeds the DAC input range "
                f"x_max={self.mode.mapping.x_max:.4g}"
            )
        if self.q_full == 0:
            return 0.0, 0.0
        cfg = self.tile.config
        q = int(round(abs(x) / self.mode.mapping.x_max * self.q_full))
        sign = 1.0 if x >= 0 else -1.0
        drives, weights = [], []
        for k in range(self.n_mag_bits):
            if (q >> k) & 1:
                v = np.zeros(cfg.rows)
                v[self.mode.input_row] = cfg.v_read
                drives.append(v)
                weights.append(sign * float(1 << k))
        if not drives:
            return 0.0, 0.0
        currents, powers = self.solver.solve_many(np.asarray(drives))
        if ledger is not None:
            ledger.read_energy_j += float(powers.sum()) * self.mode.read_pulse_s
            ledger.vmm_read_count += len(drives)
        w = np.asarray(weights)
        rp, vp = self.mode.rate_pair, self.mode.vol_pair
        g_rate, g_vol = self.mode.gain
        rate_x = float(np.sum(w * (currents[:, rp[0]] - currents[:, rp[1]]))
                       * self.scale / g_rate)
        vol_x = float(np.sum(w * (currents[:, vp[0]] - currents[:, vp[1]]))
                      * self.scale / g_vol)
        return rate_x, vol_x


# -- ensemble integration ----------------------------------------------------


@dataclass
class Trajectory:
    trajectory_id: int
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, dim)


@dataclass
class EnsembleResult:
    finals: np.ndarray          # (m_kept, dim)
    trajectory_ids: np.ndarray  # (m_kept,)
    seeds: np.ndarray           # (m_kept,) derived per-trajectory seed words
    ledger: EnergyLedger
    n_diverged: int = 0
    trajectories: list[Trajectory] = field(default_factory=list)


def trajectory_seed(master_seed: int, k: int) -> tuple[np.random.SeedSequence, int]:
    ss = np.random.SeedSequence((master_seed, _STREAM_TRAJECTORY, k))
    return ss, int(ss.generate_state(1, np.uint64)[0])


def _simulate_one(problem, noise, mode, master_seed, k, keep_path, divergence_limit):
    ss, seed_word = trajectory_seed(master_seed, k)
    rng = np.random.default_rng(ss)
    ledger = EnergyLedger()

    src = None
    if isinstance(noise, CrossbarSource):
        src = noise.prototype.copy_with_rng(rng)
        if not src.calibrated:
            raise UsageError("crossbar noise source must be calibrated first")

    reader = None
    if isinstance(mode, CrossbarParams):
        if problem.dim != 1:
            raise UsageError("crossbar parameter evaluation supports 1-D problems")
        tile = src.tile if src is not None else mode.prototype.copy()
        solver = src._solver if src is not None else TileSolver(tile)
        reader = _PairProductReader(tile, solver, mode, tile.spec)
        reader.program(rng, ledger)

    dt = problem.dt
    sqrt_dt = math.sqrt(dt)
    x = problem.x0.copy()
    t = problem.t0
    states = np.empty((problem.n_steps + 1, problem.dim)) if keep_path else None
    if keep_path:
        states[0] = x

    diverged = False
    for step in range(problem.n_steps):
        if src is not None:
            z = src.draw_unit(ledger, noise.pulse_model)
        else:
            z = rng.standard_normal(problem.dim)
        dw = z * sqrt_dt
        if reader is not None:
            rate_x, vol_x = reader.read(float(x[0]), ledger)
            x = x + rate_x * dt + mode.diffusion_sign * vol_x * dw
        else:
            x = em_step(x, t, dt, dw, problem)
        t = problem.t0 + (step + 1) * dt
        if keep_path:
            states[step + 1] = x
        if np.any(np.abs(x) > divergence_limit):
            diverged = True
            break

    traj = None
    if keep_path and not diverged:
        times = problem.t0 + dt * np.arange(problem.n_steps + 1)
        traj = Trajectory(k, times, states)
    return k, seed_word, (None if diverged else x.copy()), ledger, traj


def simulate_ensemble(
    problem: SdeProblem,
    noise,
    m: int,
    mode=None,
    master_seed: int = 0,
    threads: int = 1,
    keep_paths: int = 0,
    divergence_limit: float = DIVERGENCE_LIMIT,
) -> EnsembleResult:
    """Integrate m independent trajectories and gather finals plus energy.

    `noise` is a DigitalReference or a CrossbarSource; `mode` a DigitalParams
    (default) or CrossbarParams.  `keep_paths` retains the full states of
    that many leading trajectories for dump files.  Diverged trajectories
    (|X| beyond `divergence_limit`) are excluded from the finals and counted.
    """
    if m < 1:
        raise UsageError("need at least one trajectory")
    mode = mode if mode is not None else DigitalParams()

    def run(k):
        return _simulate_one(problem, noise, mode, master_seed, k,
                             keep_path=k < keep_paths,
                             divergence_limit=divergence_limit)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, range(m)))
    else:
        results = [run(k) for k in range(m)]

    ledger = EnergyLedger()
    finals, ids, seeds, trajs = [], [], [], []
    n_diverged = 0
    for k, seed_word, final, led, traj in results:  # merged in index order
        ledger.merge(led)
        if final is None:
            n_diverged += 1
            continue
        finals.append(final)
        ids.append(k)
        seeds.append(seed_word)
        if traj is not None:
            trajs.append(traj)
    return EnsembleResult(
        finals=np.asarray(finals).reshape(len(finals), problem.dim),
        trajectory_ids=np.asarray(ids, dtype=np.int64),
        seeds=np.asarray(seeds, dtype=np.uint64),
        ledger=ledger,
        n_diverged=n_diverged,
        trajectories=trajs,
    )


def estimate_strong_order(
    problem: SdeProblem,
    dts: list[float],
    m: int,
    master_seed: int = 0,
) -> float:
    """Slope of log E|X_T^(dt) - X_T^(ref)| against log dt on coupled paths.

    All levels reuse the same Brownian increments, generated at the finest
    resolution and aggregated upward.  The reference is the problem's exact
    pathwise solution when it has one, otherwise an integration 8x finer
    than the smallest requested step.
    """
    dts = sorted(set(float(dt) for dt in dts), reverse=True)
    if len(dts) < 3:
        raise UsageError("need at least 3 distinct dt values")
    span = problem.t1 - problem.t0
    steps = []
    for dt in dts:
        n = span / dt
        if abs(n - round(n)) > 1e-9:
            raise UsageError(f"dt={dt} does not divide the time span {span}")
        steps.append(int(round(n)))
    n_base = steps[-1] if problem.exact_final is not None else steps[-1] * 8
    for n in steps:
        if n_base % n:
            raise UsageError("dt values must be nested multiples for path coupling")

    dt_base = span / n_base
    errs = np.zeros(len(dts))
    for k in range(m):
        ss, _ = trajectory_seed(master_seed, k)
        rng = np.random.default_rng(ss)
        dw_fine = rng.standard_normal(n_base) * math.sqrt(dt_base)
        if problem.exact_final is not None:
            ref = np.atleast_1d(problem.exact_final(span, float(dw_fine.sum())))
        else:
            ref = _integrate_path(problem, dw_fine, n_base)
        for i, n in enumerate(steps):
            dw = dw_fine.reshape(n, n_base // n).sum(axis=1)
            x = _integrate_path(problem, dw, n)
            errs[i] += float(np.linalg.norm(x - ref, ord=1))
    errs /= m

    from .stats import trend_slope

    return trend_slope(np.log(np.asarray(dts)), np.log(errs)).slope


def _integrate_path(problem: SdeProblem, dw: np.ndarray, n: int) -> np.ndarray:
    dt = (problem.t1 - problem.t0) / n
    x = problem.x0.copy()
    t = problem.t0
    for step in range(n):
        x = em_step(x, t, dt, np.atleast_1d(dw[step]), problem)
        t = problem.t0 + (step + 1) * dt
    return x


# -- the Fig. 3 style Black-Scholes experiment -------------------------------

BS_RATE_PAIR = (0, 1)
BS_VOL_PAIR = (2, 3)
BS_NOISE_PAIR = (4, 5)
BS_ROW = 0


def _nominal_read_gains(
    config: CrossbarConfig,
    spec: DeviceSpec,
    rate: float,
    volatility: float,
    mapping: MappingParams,
) -> tuple[float, float]:
    """Per-pair transfer of the read chain on the nominal layout.

    Builds the design-target tile (no programming noise, unused devices at
    exactly g_lrs), drives the input word line at v_read, and compares each
    pair's current difference with the ideal-array value.  The network is
    linear, so one probe fixes the gain for every DAC plane.
    """
    tile = CrossbarTile(config, spec)
    tile.g_actual[:, :] = spec.g_lrs
    tile.g_target[:, :] = spec.g_lrs
    for c in BS_NOISE_PAIR:
        tile.g_actual[BS_ROW, c] = spec.g_hrs
    for coeff, pair in ((rate, BS_RATE_PAIR), (volatility, BS_VOL_PAIR)):
        gp, gm = weight_to_pair(coeff, mapping, spec)
        tile.g_actual[BS_ROW, pair[0]] = gp
        tile.g_actual[BS_ROW, pair[1]] = gm
    tile.version += 1
    drive = np.zeros(config.rows)
    drive[BS_ROW] = config.v_read
    currents, _ = TileSolver(tile).solve_many(drive[None, :])
    gains = []
    for coeff, pair in ((rate, BS_RATE_PAIR), (volatility, BS_VOL_PAIR)):
        ideal = config.v_read * coeff * spec.g_swing / mapping.w_max
        measured = float(currents[0, pair[0]] - currents[0, pair[1]])
        gains.append(measured / ideal if ideal else 1.0)
    return gains[0], gains[1]


@dataclass
class BsExperiment:
    problem: SdeProblem
    params: BlackScholesParams
    noise: object
    mode: object
    base_tile: CrossbarTile
    source: GaussianSource | None
    setup_ledger: EnergyLedger
    pulse_model: PulseModel


def build_bs_experiment(
    params: BlackScholesParams,
    config: CrossbarConfig,
    spec: DeviceSpec,
    mode_name: str,
    master_seed: int = 0,
    t1: float = 1.0,
    n_steps: int = 100,
    calib_n: int = 1000,
    pulse_model: PulseModel | None = None,
    mapping: MappingParams | None = None,
    read_pulse_s: float = DEFAULT_READ_PULSE_S,
    charge_setup: bool = True,
    p_stuck_on: float = 0.0,
    p_stuck_off: float = 0.0,
) -> BsExperiment:
    """Wire up one of the three solver configurations.

    mode_name: 'digital' (reference), 'noise-only' (crossbar random numbers,
    exact products), or 'full-crossbar' (crossbar random numbers and
    crossbar-evaluated products).  The crossbar layout puts the rate pair,
    volatility pair and random-source pair side by side on word line 0 and
    parks every unused device in its low-resistance state, so the energy
    picture is the worst-case one.
    """
    if mode_name not in ("digital", "noise-only", "full-crossbar"):
        raise UsageError(f"unknown mode {mode_name!r}")
    if config.cols < 6:
        raise UsageError("the layout needs at least 6 columns")
    pulse_model = pulse_model or PulseModel()
    mapping = mapping or MappingParams(w_max=1.0, x_max=8.0)
    problem = black_scholes_problem(params, t0=0.0, t1=t1, n_steps=n_steps)
    setup_ledger = EnergyLedger()

    layout_rng = np.random.default_rng(
        np.random.SeedSequence((master_seed, _STREAM_LAYOUT)))
    tile = CrossbarTile(config, spec)
    lrs = spec.g_lrs * (1.0 + spec.lrs_variability * layout_rng.standard_normal(
        (config.rows, config.cols)))
    np.clip(lrs, spec.g_hrs, spec.g_lrs * (1 + 3 * spec.lrs_variability), out=lrs)
    tile.g_actual[:, :] = lrs
    tile.g_target[:, :] = spec.g_lrs
    tile.version += 1
    for c in BS_NOISE_PAIR:
        tile.set_device(BS_ROW, c, DeviceState(
            g_target=spec.g_hrs, g_actual=spec.g_hrs,
            dev_class=DeviceClass.RANDOM_SOURCE))
    tile.apply_faults(p_stuck_on, p_stuck_off, layout_rng)

    source = None
    noise = DigitalReference()
    if mode_name in ("noise-only", "full-crossbar"):
        source = GaussianSource(
            tile=tile, pairs=[(BS_ROW, *BS_NOISE_PAIR)], g_target=spec.g_hrs,
            variability=spec.hrs_variability,
            rng=np.random.default_rng(np.random.SeedSequence((master_seed, _STREAM_CALIBRATION))),
            calib_n=calib_n, read_pulse_s=read_pulse_s,
        )

    mode = DigitalParams()
    if mode_name == "full-crossbar":
        mode = CrossbarParams(
            prototype=tile, rate=params.r, volatility=params.sigma,
            input_row=BS_ROW, rate_pair=BS_RATE_PAIR, vol_pair=BS_VOL_PAIR,
            mapping=mapping, diffusion_sign=-1.0, pulse_model=pulse_model,
            read_pulse_s=read_pulse_s,
            gain=_nominal_read_gains(config, spec, params.r, params.sigma, mapping),
        )
        # Baseline weight programming so calibration sees realistic leak paths.
        baseline = _PairProductReader(tile, TileSolver(tile), mode, spec)
        baseline.program(layout_rng, setup_ledger if charge_setup else None)

    if source is not None:
        calibrate(source, setup_ledger if charge_setup else None, pulse_model)
        noise = CrossbarSource(prototype=source, pulse_model=pulse_model)

    return BsExperiment(
        problem=problem, params=params, noise=noise, mode=mode,
        base_tile=tile, source=source, setup_ledger=setup_ledger,
        pulse_model=pulse_model,
    )
