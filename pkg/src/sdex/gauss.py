"""Gaussian random vectors harvested from differential device pairs.

Each coordinate of the vector is the bit-line current difference of two
adjacent-column devices programmed to the same target conductance: the
difference of two equal-mean gaussian draws is zero-mean by symmetry, and
calibration against measured statistics turns it into a unit normal.
Calibration is empirical rather than analytic on purpose: line resistance
reshapes the conductance-to-current map, and measured (mu, sigma) constants
absorb that without modeling it.

Covariance shaping multiplies unit-normal vectors by the lower Cholesky
factor of the target covariance, with the factor itself stored as crossbar
weights and applied through the bit-serial VMM read.
"""

from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    DEFAULT_READ_PULSE_S,
    CrossbarConfig,
    CrossbarTile,
    MappedMatrix,
    MappingParams,
    TileSolver,
    map_matrix,
    vmm_read,
)
from .device import DeviceClass, DeviceSpec, DeviceState, cycle_resample
from .energy import EnergyLedger, PulseModel, charge_program, charge_vmm_read
from .errors import CalibrationError, DecompositionError, UsageError

_SIGMA_FLOOR_A = 1e-15

# Unit-normal draws are differences of +/-4-sigma-truncated normals, so the
# shaper's input range is bounded; 6.0 leaves margin over the 5.66 extreme.
SHAPER_X_MAX = 6.0


@dataclass
class GaussianSource:
    """Addressed differential pairs plus calibration constants.

    `pairs` lists (row, col_plus, col_minus) addresses of random-source
    devices on `tile`; after `calibrate`, `mu` and `sigma` (amperes) map raw
    current differences to unit-normal samples.

    Samples alternate the polarity of the differential read (chopping).
    The sign of i+ - i- is a free convention, and alternating it cancels
    any residual mean offset left by finite calibration; without it, a mean
    error eps accumulates linearly along an integrated Wiener path and
    shows up 10x amplified after 100 steps.
    """

    tile: CrossbarTile
    pairs: list[tuple[int, int, int]]
    g_target: float
    variability: float
    rng: np.random.Generator
    calib_n: int = 1000
    read_pulse_s: float = DEFAULT_READ_PULSE_S
    chop: bool = True
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    _solver: TileSolver = field(init=False, repr=False)
    _draw_count: int = field(init=False, default=0, repr=False)

    def __post_init__(self):
        for row, cp, cm in self.pairs:
            if cp == cm:
                raise UsageError(f"pair on row {row} uses the same column twice")
            for c in (cp, cm):
                if self.tile.dev_class[row, c] is not DeviceClass.RANDOM_SOURCE:
                    raise UsageError(
                        f"device ({row}, {c}) is not random-source class"
                    )
        self._solver = TileSolver(self.tile)

    @property
    def dim(self) -> int:
        return len(self.pairs)

    @property
    def calibrated(self) -> bool:
        return self.mu is not None

    def copy_with_rng(self, rng: np.random.Generator) -> "GaussianSource":
        """Clone for a worker: own tile, own stream, shared calibration."""
        dup = GaussianSource(
            tile=self.tile.copy(), pairs=list(self.pairs), g_target=self.g_target,
            variability=self.variability, rng=rng, calib_n=self.calib_n,
            read_pulse_s=self.read_pulse_s, chop=self.chop,
        )
        dup.mu = None if self.mu is None else self.mu.copy()
        dup.sigma = None if self.sigma is None else self.sigma.copy()
        return dup

    # -- raw machinery -------------------------------------------------------

    def _wordline_drive(self) -> np.ndarray:
        v = np.zeros(self.tile.config.rows)
        for row, _, _ in self.pairs:
            v[row] = self.tile.config.v_read
        return v

    def draw_raw(self, ledger: EnergyLedger | None = None,
                 pulse_model: PulseModel | None = None) -> np.ndarray:
        """Resample every pair's devices, read the tile once, return the
        per-pair current differences (amperes)."""
        for row, cp, cm in self.pairs:
            for c in (cp, cm):
                state = self.tile.device(row, c)
                new = cycle_resample(state, self.variability, self.rng)
                self.tile.set_device(row, c, new)
                if ledger is not None and pulse_model is not None:
                    charge_program(ledger, self.tile, (row, c), pulse_model,
                                   g_start=state.g_actual, g_end=new.g_actual)
        currents, powers = self._solver.solve_many(self._wordline_drive()[None, :])
        if ledger is not None:
            ledger.read_energy_j += float(powers[0]) * self.read_pulse_s
            ledger.vmm_read_count += 1
        i = currents[0]
        return np.array([i[cp] - i[cm] for _, cp, cm in self.pairs])

    def draw_unit(self, ledger: EnergyLedger | None = None,
                  pulse_model: PulseModel | None = None,
                  raw_out: np.ndarray | None = None) -> np.ndarray:
        """One calibrated unit-normal vector, with alternating read polarity."""
        if not self.calibrated:
            raise UsageError("source must be calibrated before sampling")
        raw = self.draw_raw(ledger, pulse_model)
        if raw_out is not None:
            raw_out[:] = raw
        z = (raw - self.mu) / self.sigma
        if self.chop and self._draw_count % 2:
            z = -z
        self._draw_count += 1
        return z


def make_source(
    config: CrossbarConfig,
    spec: DeviceSpec,
    rng: np.random.Generator,
    pairs: list[tuple[int, int, int]] | None = None,
    g_target: float | None = None,
    variability: float | None = None,
    calib_n: int = 1000,
    unused_at_lrs: bool = True,
    p_stuck_on: float = 0.0,
    p_stuck_off: float = 0.0,
) -> GaussianSource:
    """Build a tile whose word line 0 carries adjacent-column random pairs.

    By default every pair sits on the first word line (columns (0,1), (2,3),
    ...), the devices target the high-resistance state with its cycle
    variability, and all remaining devices idle at the low-resistance state
    with the LRS programming spread.
    """
    tile = CrossbarTile(config, spec)
    if pairs is None:
        pairs = [(0, 2 * k, 2 * k + 1) for k in range(config.cols // 2)]
    g_target = spec.g_hrs if g_target is None else g_target
    variability = spec.hrs_variability if variability is None else variability

    if unused_at_lrs:
        lrs_draw = spec.g_lrs * (1.0 + spec.lrs_variability * rng.standard_normal(
            (config.rows, config.cols)))
        np.clip(lrs_draw, spec.g_hrs, spec.g_lrs * (1 + 3 * spec.lrs_variability), out=lrs_draw)
        tile.g_actual[:, :] = lrs_draw
        tile.g_target[:, :] = spec.g_lrs
        tile.version += 1

    for row, cp, cm in pairs:
        for c in (cp, cm):
            tile.set_device(row, c, DeviceState(
                g_target=g_target, g_actual=max(g_target, 1e-7),
                dev_class=DeviceClass.RANDOM_SOURCE))
    tile.apply_faults(p_stuck_on, p_stuck_off, rng)
    return GaussianSource(tile=tile, pairs=pairs, g_target=g_target,
                          variability=variability, rng=rng, calib_n=calib_n)


def calibrate(
    source: GaussianSource,
    ledger: EnergyLedger | None = None,
    pulse_model: PulseModel | None = None,
) -> GaussianSource:
    """Measure per-pair (mu, sigma) over calib_n fresh draws.

    Every draw reprograms both devices of every pair and reads the tile, so
    the full write/read cost lands in the ledger when one is given.
    """
    if source.calib_n < 100:
        raise UsageError(f"calib_n must be >= 100, got {source.calib_n}")
    raw = np.empty((source.calib_n, source.dim))
    for k in range(source.calib_n):
        raw[k] = source.draw_raw(ledger, pulse_model)
    mu = raw.mean(axis=0)
    sigma = raw.std(axis=0)
    if np.any(sigma < _SIGMA_FLOOR_A):
        worst = int(np.argmin(sigma))
        raise CalibrationError(
            f"pair {worst} spread {sigma[worst]:.3g} A is degenerate; "
            "is the cycle variability zero?"
        )
    source.mu = mu
    source.sigma = sigma
    return source


def sample_unit_normal(
    source: GaussianSource,
    n: int,
    ledger: EnergyLedger | None = None,
    pulse_model: PulseModel | None = None,
    raw_out: np.ndarray | None = None,
) -> np.ndarray:
    """Draw an (n, d) matrix of unit-normal samples from the source.

    Each row costs two device writes per pair (fresh randomness every draw)
    plus one tile read.  `raw_out`, when given, receives the uncalibrated
    current differences for characterization dumps.
    """
    if not source.calibrated:
        raise UsageError("source must be calibrated before sampling")
    z = np.empty((n, source.dim))
    for k in range(n):
        z[k] = source.draw_unit(ledger, pulse_model,
                                raw_out=None if raw_out is None else raw_out[k])
    return z


def cholesky(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T = sigma.

    Plain unblocked factorization: the covariances here are small (tens of
    dimensions), and doing it in the open lets a failure name its pivot.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise UsageError(f"covariance must be square, got shape {sigma.shape}")
    scale = np.max(np.abs(sigma))
    if scale > 0 and np.max(np.abs(sigma - sigma.T)) > 1e-10 * scale:
        raise UsageError("covariance must be symmetric within 1e-10 relative")
    d = sigma.shape[0]
    L = np.zeros((d, d))
    for j in range(d):
        pivot = sigma[j, j] - np.dot(L[j, :j], L[j, :j])
        if pivot <= 0.0 or not np.isfinite(pivot):
            raise DecompositionError(pivot=j, value=float(pivot))
        L[j, j] = np.sqrt(pivot)
        for i in range(j + 1, d):
            L[i, j] = (sigma[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return L


@dataclass
class CovarianceShaper:
    """Cholesky factor of a target covariance, stored as crossbar weights."""

    sigma_matrix: np.ndarray
    chol_l: np.ndarray
    mapped: MappedMatrix

    @property
    def dim(self) -> int:
        return self.sigma_matrix.shape[0]


def make_shaper(
    sigma_matrix: np.ndarray,
    spec: DeviceSpec,
    config: CrossbarConfig,
    rng: np.random.Generator,
    x_max: float = SHAPER_X_MAX,
    ledger: EnergyLedger | None = None,
    pulse_model: PulseModel | None = None,
) -> CovarianceShaper:
    sigma_matrix = np.asarray(sigma_matrix, dtype=float)
    L = cholesky(sigma_matrix)
    params = MappingParams(w_max=float(np.max(np.abs(L))), x_max=x_max)
    # y = z @ L.T applies L to each unit-normal row vector z.
    mapped = map_matrix(L.T, spec, config, rng, params=params,
                        ledger=ledger, pulse_model=pulse_model)
    return CovarianceShaper(sigma_matrix=sigma_matrix, chol_l=L, mapped=mapped)


def sample_correlated(
    shaper: CovarianceShaper,
    source: GaussianSource,
    n: int,
    ledger: EnergyLedger | None = None,
    pulse_model: PulseModel | None = None,
) -> np.ndarray:
    """(n, d) samples with covariance shaper.sigma_matrix: unit normals from
    the source pushed through the crossbar-held Cholesky factor."""
    if shaper.dim != source.dim:
        raise UsageError(
            f"shaper dimension {shaper.dim} != source dimension {source.dim}"
        )
    z = sample_unit_normal(source, n, ledger, pulse_model)
    out = np.empty_like(z)
    for k in range(n):
        res = vmm_read(shaper.mapped, z[k], source.read_pulse_s)
        if ledger is not None:
            charge_vmm_read(ledger, res)
        out[k] = res.values
    return out
