"""Array energy accounting for write and read operations.

A device program is modeled as a train of write pulses with a verify read
between pulses.  Write-pulse dissipation uses the device's instantaneous
conductance, interpolated linearly from its pre-write value to its
programmed value across the train.  Verify-read dissipation counts the
selected device at the full verify voltage plus half-voltage dissipation in
the unselected devices sharing the driven word line; devices elsewhere sit
between grounded lines and are not charged.  Unselected cells left in their
low-resistance state therefore dominate, which makes the figure a
worst-case-leaning estimate.

VMM read energy is not modeled here: the circuit solver attaches an exact
dissipation record to every bit-plane read, and `charge_vmm_read` just
accumulates those records.

Ledgers are plain values.  Give one to each worker and merge at the end,
always in a fixed order, so parallel totals match serial totals exactly.
"""

from dataclasses import dataclass, fields

import numpy as np

from .circuit import EnergyEvent, ReadResult, VmmResult
from .errors import RangeError


@dataclass(frozen=True)
class PulseModel:
    """Write/verify pulse scheme: 100 pulses of 1 V / 200 ns per program,
    with a 1 ms, 0.2 V verify read between pulses."""

    write_v: float = 1.0
    write_t: float = 200e-9
    writes_per_program: int = 100
    verify_v: float = 0.2
    verify_t: float = 1e-3
    read_v: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0 and f.name not in ("verify_t", "write_t"):
                raise RangeError(f"{f.name} must be positive")
            if getattr(self, f.name) < 0:
                raise RangeError(f"{f.name} must be nonnegative")


@dataclass
class EnergyLedger:
    write_pulse_count: int = 0
    verify_read_count: int = 0
    vmm_read_count: int = 0
    write_energy_j: float = 0.0
    verify_energy_j: float = 0.0
    read_energy_j: float = 0.0

    @property
    def total_j(self) -> float:
        return self.write_energy_j + self.verify_energy_j + self.read_energy_j

    def merge(self, other: "EnergyLedger") -> "EnergyLedger":
        self.write_pulse_count += other.write_pulse_count
        self.verify_read_count += other.verify_read_count
        self.vmm_read_count += other.vmm_read_count
        self.write_energy_j += other.write_energy_j
        self.verify_energy_j += other.verify_energy_j
        self.read_energy_j += other.read_energy_j
        return self


def charge_program(
    ledger: EnergyLedger,
    tile,
    device_addr: tuple[int, int],
    model: PulseModel,
    g_start: float | None = None,
    g_end: float | None = None,
) -> EnergyLedger:
    """Charge one full device-program event (pulse train plus verify reads).

    `g_start`/`g_end` bound the conductance trajectory; both default to the
    device's current conductance, which is the right call for an in-place
    cycle resample where start and end sit in the same state.
    """
    i, j = device_addr
    g_now = float(tile.g_actual[i, j])
    g0 = g_now if g_start is None else float(g_start)
    g1 = g_now if g_end is None else float(g_end)
    n = model.writes_per_program

    # Midpoint rule along the linear ramp: the pulse-train total is exactly
    # n * mean(g0, g1) regardless of n.
    frac = (np.arange(n) + 0.5) / n if n > 1 else np.array([0.5])
    g_ramp = g0 + (g1 - g0) * frac
    ledger.write_energy_j += float(np.sum(model.write_v ** 2 * g_ramp * model.write_t))
    ledger.write_pulse_count += n

    # Half-select verify: selected device at verify_v, unselected devices on
    # the driven word line at verify_v / 2.
    row = tile.g_actual[i, :]
    g_row_rest = float(row.sum()) - g_now
    per_read = (
        model.verify_v ** 2 * np.mean(g_ramp)
        + (0.5 * model.verify_v) ** 2 * g_row_rest
    ) * model.verify_t
    ledger.verify_energy_j += float(n * per_read)
    ledger.verify_read_count += n
    return ledger


def charge_vmm_read(ledger: EnergyLedger, read_result) -> EnergyLedger:
    """Accumulate the dissipation records of a tile read or a full VMM read."""
    if isinstance(read_result, (ReadResult, VmmResult)):
        events = read_result.energy_events
    else:
        events = list(read_result)
    for ev in events:
        _charge_event(ledger, ev)
    return ledger


def _charge_event(ledger: EnergyLedger, event: EnergyEvent) -> None:
    ledger.read_energy_j += event.energy_j
    ledger.vmm_read_count += 1


def report(ledger: EnergyLedger, sample_count: int | None = None, writes_per_program: int | None = None) -> dict:
    """Summary record with fixed field names, suitable for the JSON report."""
    out = {
        "write_pulses": ledger.write_pulse_count,
        "verify_reads": ledger.verify_read_count,
        "vmm_reads": ledger.vmm_read_count,
        "write_energy_j": ledger.write_energy_j,
        "verify_energy_j": ledger.verify_energy_j,
        "read_energy_j": ledger.read_energy_j,
        "total_j": ledger.total_j,
    }
    if writes_per_program:
        out["device_programs"] = ledger.write_pulse_count // writes_per_program
    if sample_count:
        out["sample_count"] = sample_count
        out["per_sample_j"] = ledger.total_j / sample_count
    return out
