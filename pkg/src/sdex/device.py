"""Stochastic memristor device models.

Two distinct noise mechanisms are modeled, and they must not be conflated:

* programming (write) error: a one-shot multiplicative gaussian perturbation
  applied when a weight is tuned to a target conductance, and
* cycle-to-cycle variability: the gaussian spread of the conductance state
  that reappears on every program cycle and is harvested as the entropy
  source for random-vector generation.

All conductances are in siemens.  Devices are plain values; callers own
their copies and their random streams.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import RangeError, UsageError

# Hard floor keeping every device conductive so the nodal matrix stays SPD.
G_FLOOR_S = 1e-7

# Cycle-to-cycle draws are truncated at +/-4 sigma; moment distortion < 0.01%.
RESAMPLE_TRUNC_SIGMA = 4.0


class DeviceClass(Enum):
    WEIGHT = "weight"
    RANDOM_SOURCE = "random_source"
    UNUSED = "unused"


class Fault(Enum):
    NONE = "none"
    STUCK_ON = "stuck_on"
    STUCK_OFF = "stuck_off"


@dataclass(frozen=True)
class DeviceSpec:
    """Technology parameters shared by every device on a tile.

    Defaults: 10 kOhm low-resistance state, 100 kOhm high-resistance state,
    5% write perturbation, 10% LRS / 25% HRS cycle variability.
    """

    g_lrs: float = 1e-4
    g_hrs: float = 1e-5
    write_perturbation: float = 0.05
    lrs_variability: float = 0.10
    hrs_variability: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.g_hrs < self.g_lrs):
            raise RangeError(
                f"need 0 < g_hrs < g_lrs, got g_hrs={self.g_hrs} g_lrs={self.g_lrs}"
            )
        for name in ("write_perturbation", "lrs_variability", "hrs_variability"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise RangeError(f"{name} must lie in [0, 1), got {v}")

    @property
    def g_mid(self) -> float:
        return 0.5 * (self.g_lrs + self.g_hrs)

    @property
    def g_swing(self) -> float:
        return self.g_lrs - self.g_hrs


@dataclass(frozen=True)
class DeviceState:
    """One memristor: programming target, realized conductance, role, fault."""

    g_target: float
    g_actual: float
    dev_class: DeviceClass = DeviceClass.WEIGHT
    fault: Fault = Fault.NONE

    def __post_init__(self):
        if self.g_actual <= 0.0:
            raise RangeError(f"g_actual must be positive, got {self.g_actual}")


def fault_pinned_conductance(fault: Fault, spec: DeviceSpec) -> float:
    """Conductance a faulted device is pinned to (stuck-off floors at HRS)."""
    if fault is Fault.STUCK_ON:
        return spec.g_lrs
    if fault is Fault.STUCK_OFF:
        return spec.g_hrs
    raise UsageError("fault_pinned_conductance called on an unfaulted device")


def program_weight(
    state: DeviceState,
    spec: DeviceSpec,
    g_target: float,
    rng: np.random.Generator,
) -> DeviceState:
    """Tune a device toward ``g_target`` with finite write precision.

    The realized conductance is g_target * (1 + eps) with
    eps ~ N(0, write_perturbation), clamped to
    [g_hrs*(1-3p), g_lrs*(1+3p)].  Programming a faulted device is a no-op;
    the returned state still carries its fault flag.
    """
    if state.fault is not Fault.NONE:
        return state
    # Relative slack covers the full-swing mapping landing exactly on an edge.
    if not (spec.g_hrs * (1 - 1e-9) <= g_target <= spec.g_lrs * (1 + 1e-9)):
        raise RangeError(
            f"g_target={g_target:.4g} S outside [{spec.g_hrs:.4g}, {spec.g_lrs:.4g}]"
        )
    p = spec.write_perturbation
    g = g_target * (1.0 + p * rng.standard_normal()) if p > 0.0 else g_target
    lo = spec.g_hrs * (1.0 - 3.0 * p)
    hi = spec.g_lrs * (1.0 + 3.0 * p)
    g = min(max(g, lo, G_FLOOR_S), hi)
    return replace(state, g_target=g_target, g_actual=g)


def cycle_resample(
    state: DeviceState,
    variability: float,
    rng: np.random.Generator,
) -> DeviceState:
    """Redraw a random-source device's conductance from its cycle distribution.

    g_actual ~ N(g_target, variability * g_target), truncated at +/-4 sigma
    and floored at G_FLOOR_S.  Only RandomSource devices may be resampled;
    random draws must be explicit, never an accident of weight handling.
    """
    if state.dev_class is not DeviceClass.RANDOM_SOURCE:
        raise UsageError(
            f"cycle_resample on {state.dev_class.value} device; "
            "only random-source devices are resampled"
        )
    if state.fault is not Fault.NONE:
        return state
    if not (0.0 <= variability < 1.0):
        raise RangeError(f"variability must lie in [0, 1), got {variability}")
    if variability == 0.0:
        return replace(state, g_actual=max(state.g_target, G_FLOOR_S))
    g = _truncated_normal_draw(rng) * variability * state.g_target + state.g_target
    return replace(state, g_actual=max(g, G_FLOOR_S))


def _truncated_normal_draw(rng: np.random.Generator) -> float:
    # Rejection sampling; acceptance probability ~ 1 - 6e-5 at 4 sigma.
    for _ in range(1000):
        z = rng.standard_normal()
        if abs(z) <= RESAMPLE_TRUNC_SIGMA:
            return z
    raise RuntimeError("truncated normal rejection loop failed to terminate")
