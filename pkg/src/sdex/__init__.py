"""Monte Carlo SDE solving on simulated nonideal memristor crossbars."""

__version__ = "0.1.0"

from .circuit import (
    CrossbarConfig,
    CrossbarTile,
    MappingParams,
    ReadResult,
    TileSolver,
    map_matrix,
    solve_tile,
    vmm_read,
)
from .device import DeviceClass, DeviceSpec, DeviceState, Fault, cycle_resample, program_weight
from .energy import EnergyLedger, PulseModel, charge_program, charge_vmm_read, report
from .errors import (
    CalibrationError,
    DecompositionError,
    DegenerateDataError,
    NumericalError,
    RangeError,
    SdexError,
    UsageError,
)
from .gauss import (
    CovarianceShaper,
    GaussianSource,
    calibrate,
    cholesky,
    make_shaper,
    make_source,
    sample_correlated,
    sample_unit_normal,
)
from .sde import (
    BlackScholesParams,
    BsExperiment,
    CrossbarParams,
    CrossbarSource,
    DigitalParams,
    DigitalReference,
    EnsembleResult,
    SdeProblem,
    black_scholes_problem,
    bs_analytic_final,
    bs_mean,
    bs_var,
    build_bs_experiment,
    em_step,
    estimate_strong_order,
    simulate_ensemble,
)
from .stats import MomentStats, TrendResult, ks_statistic, moments, trend_slope
