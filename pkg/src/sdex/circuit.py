"""Resistive-network solver for memristor crossbar tiles.

Topology (two nodes per cell): every cell (i, j) has a word-line node and a
bit-line node coupled by the device conductance.  Word-line nodes chain
through line-resistance segments back to their row driver through the input
resistance; bit-line nodes chain down the column to ground through the
output resistance.  The read current of column j is the current delivered
into its bit line by the devices, which by KCL equals the current leaving
through the sense resistor.

Zero-valued parasitics are handled exactly, not by epsilon resistances:
a zero resistance merges its two nodes (union-find), so the ideal crossbar
degenerates to the analytic Ohm's-law product and the conditioning of the
nodal matrix never depends on how small the parasitics are.

The reduced system is symmetric positive definite.  Small tiles go through
a dense Cholesky factorization, large ones through sparse LU; either path
is kept well under the 1e-12 relative-residual contract.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .device import (
    DeviceClass,
    DeviceSpec,
    DeviceState,
    Fault,
    fault_pinned_conductance,
    program_weight,
)
from .errors import RangeError, SolverInternalError, UsageError

# Duration of one read pulse (a single DAC bit-plane slice or raw read).
DEFAULT_READ_PULSE_S = 200e-9

# Unknown-count threshold between the dense and sparse factorization paths.
_DENSE_MAX = 600

_GND = -1  # fixed-node slot encoding: -1 ground, -(2+i) row driver i


@dataclass(frozen=True)
class CrossbarConfig:
    rows: int = 8
    cols: int = 8
    r_line: float = 5.0
    r_in: float = 1000.0
    r_out: float = 1000.0
    v_read: float = 0.2
    dac_bits: int = 16

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise RangeError(f"tile must be at least 1x1, got {self.rows}x{self.cols}")
        for name in ("r_line", "r_in", "r_out"):
            if getattr(self, name) < 0.0:
                raise RangeError(f"{name} must be >= 0")
        if self.v_read <= 0.0:
            raise RangeError("v_read must be positive")
        if not (1 <= self.dac_bits <= 32):
            raise RangeError(f"dac_bits must lie in [1, 32], got {self.dac_bits}")


@dataclass(frozen=True)
class EnergyEvent:
    voltage: float
    duration_s: float
    energy_j: float


@dataclass
class ReadResult:
    bitline_currents: np.ndarray  # (cols,), amperes
    energy_events: list[EnergyEvent] = field(default_factory=list)


class CrossbarTile:
    """An R x C grid of device states plus the parasitic configuration.

    Conductances are stored as arrays so the solver can read them without
    per-device indirection; `device`/`set_device` expose the per-cell view.
    Tiles are plain values: `copy()` and hand one to each worker.
    """

    def __init__(self, config: CrossbarConfig, spec: DeviceSpec):
        self.config = config
        self.spec = spec
        shape = (config.rows, config.cols)
        self.g_target = np.full(shape, spec.g_hrs)
        self.g_actual = np.full(shape, spec.g_hrs)
        self.dev_class = np.full(shape, DeviceClass.UNUSED, dtype=object)
        self.fault = np.full(shape, Fault.NONE, dtype=object)
        self.version = 0

    def copy(self) -> "CrossbarTile":
        dup = CrossbarTile(self.config, self.spec)
        dup.g_target = self.g_target.copy()
        dup.g_actual = self.g_actual.copy()
        dup.dev_class = self.dev_class.copy()
        dup.fault = self.fault.copy()
        dup.version = self.version
        return dup

    def device(self, i: int, j: int) -> DeviceState:
        return DeviceState(
            g_target=self.g_target[i, j],
            g_actual=self.g_actual[i, j],
            dev_class=self.dev_class[i, j],
            fault=self.fault[i, j],
        )

    def set_device(self, i: int, j: int, state: DeviceState) -> None:
        self.g_target[i, j] = state.g_target
        self.g_actual[i, j] = state.g_actual
        self.dev_class[i, j] = state.dev_class
        self.fault[i, j] = state.fault
        self.version += 1

    def set_class(self, i: int, j: int, dev_class: DeviceClass) -> None:
        self.dev_class[i, j] = dev_class
        self.version += 1

    def apply_faults(self, p_stuck_on: float, p_stuck_off: float, rng: np.random.Generator) -> None:
        """Pin a random subset of devices on or off; rates are per-device."""
        if p_stuck_on + p_stuck_off <= 0.0:
            return
        u = rng.random((self.config.rows, self.config.cols))
        for i in range(self.config.rows):
            for j in range(self.config.cols):
                if u[i, j] < p_stuck_on:
                    f = Fault.STUCK_ON
                elif u[i, j] < p_stuck_on + p_stuck_off:
                    f = Fault.STUCK_OFF
                else:
                    continue
                g = fault_pinned_conductance(f, self.spec)
                self.set_device(i, j, DeviceState(g, g, self.dev_class[i, j], f))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


class _SlotGather:
    """Vectorized node-voltage lookup from (solution vector, driver voltages)."""

    def __init__(self, slots: np.ndarray):
        slots = np.asarray(slots, dtype=np.int64)
        self.n = slots.size
        self.unk_mask = slots >= 0
        self.unk_idx = slots[self.unk_mask]
        self.drv_mask = slots <= -2
        self.drv_row = -(slots[self.drv_mask] + 2)

    def values(self, x: np.ndarray, v_drivers: np.ndarray) -> np.ndarray:
        v = np.zeros(self.n)
        if self.unk_idx.size:
            v[self.unk_mask] = x[self.unk_idx]
        if self.drv_row.size:
            v[self.drv_mask] = v_drivers[self.drv_row]
        return v


class TileSolver:
    """Prefactored nodal structure for repeated solves of one tile.

    The topology (node merging, parasitic stamps, device stamp positions)
    is built once; `refresh()` re-reads the tile conductances and
    refactorizes only when the tile changed.  `solve_many` batches several
    right-hand sides through one factorization, which is what makes the
    bit-serial DAC read cheap.
    """

    def __init__(self, tile: CrossbarTile):
        self.tile = tile
        self._build_structure()
        self._factor_version = -1

    # -- structure ---------------------------------------------------------

    def _build_structure(self) -> None:
        cfg = self.tile.config
        R, C = cfg.rows, cfg.cols
        nw = R * C

        uf = _UnionFind(2 * nw)
        if cfg.r_line == 0.0:
            for i in range(R):
                for j in range(C - 1):
                    uf.union(i * C + j, i * C + j + 1)
            for j in range(C):
                for i in range(R - 1):
                    uf.union(nw + i * C + j, nw + (i + 1) * C + j)

        fixed: dict[int, int] = {}  # root -> slot code (_GND or driver)
        if cfg.r_in == 0.0:
            for i in range(R):
                fixed[uf.find(i * C)] = -(2 + i)
        if cfg.r_out == 0.0:
            for j in range(C):
                root = uf.find(nw + (R - 1) * C + j)
                if root in fixed:
                    raise SolverInternalError("driver shorted to ground")
                fixed[root] = _GND

        unknown_index: dict[int, int] = {}
        for node in range(2 * nw):
            root = uf.find(node)
            if root not in fixed and root not in unknown_index:
                unknown_index[root] = len(unknown_index)
        self.n_unknowns = len(unknown_index)

        def slot(node: int) -> int:
            root = uf.find(node)
            return fixed.get(root, unknown_index.get(root, 0))

        node_slots = np.array([slot(n) for n in range(2 * nw)], dtype=np.int64)
        self._w_slots = node_slots[:nw]
        self._b_slots = node_slots[nw:]
        self._w_gather = _SlotGather(self._w_slots)
        self._b_gather = _SlotGather(self._b_slots)

        # Fixed (parasitic) elements: (slot_a, slot_b, conductance).
        fixed_elems: list[tuple[int, int, float]] = []
        if cfg.r_line > 0.0:
            g = 1.0 / cfg.r_line
            for i in range(R):
                for j in range(C - 1):
                    fixed_elems.append((slot(i * C + j), slot(i * C + j + 1), g))
            for j in range(C):
                for i in range(R - 1):
                    fixed_elems.append((slot(nw + i * C + j), slot(nw + (i + 1) * C + j), g))
        if cfg.r_in > 0.0:
            g = 1.0 / cfg.r_in
            for i in range(R):
                fixed_elems.append((slot(i * C), -(2 + i), g))
        if cfg.r_out > 0.0:
            g = 1.0 / cfg.r_out
            for j in range(C):
                fixed_elems.append((slot(nw + (R - 1) * C + j), _GND, g))

        N = self.n_unknowns
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        rhs_idx: list[int] = []
        rhs_g: list[float] = []
        rhs_row: list[int] = []
        for sa, sb, g in fixed_elems:
            for u, f in ((sa, sb), (sb, sa)):
                if u >= 0:
                    rows.append(u), cols.append(u), vals.append(g)
                    if f <= -2:
                        rhs_idx.append(u), rhs_g.append(g), rhs_row.append(-(f + 2))
            if sa >= 0 and sb >= 0:
                rows.extend((sa, sb)), cols.extend((sb, sa)), vals.extend((-g, -g))
        self._fixed_rows = np.array(rows, dtype=np.int64)
        self._fixed_cols = np.array(cols, dtype=np.int64)
        self._fixed_vals = np.array(vals)
        self._rhs_fixed_idx = np.array(rhs_idx, dtype=np.int64)
        self._rhs_fixed_g = np.array(rhs_g)
        self._rhs_fixed_row = np.array(rhs_row, dtype=np.int64)
        self._fixed_a_gather = _SlotGather(np.array([e[0] for e in fixed_elems], dtype=np.int64))
        self._fixed_b_gather = _SlotGather(np.array([e[1] for e in fixed_elems], dtype=np.int64))
        self._fixed_g = np.array([e[2] for e in fixed_elems])

        # Device stamps, indexed by flattened (i, j).
        d_rows, d_cols, d_k, d_sign = [], [], [], []
        dd_idx, dd_k, dd_row = [], [], []
        for k in range(nw):
            sa, sb = self._w_slots[k], self._b_slots[k]
            if sa == sb:
                continue  # both terminals merged: no current, no stamp
            for u, f in ((sa, sb), (sb, sa)):
                if u >= 0:
                    d_rows.append(u), d_cols.append(u), d_k.append(k), d_sign.append(1.0)
                    if f <= -2:
                        dd_idx.append(u), dd_k.append(k), dd_row.append(-(f + 2))
            if sa >= 0 and sb >= 0:
                d_rows.extend((sa, sb)), d_cols.extend((sb, sa))
                d_k.extend((k, k)), d_sign.extend((-1.0, -1.0))
        self._dev_rows = np.array(d_rows, dtype=np.int64)
        self._dev_cols = np.array(d_cols, dtype=np.int64)
        self._dev_k = np.array(d_k, dtype=np.int64)
        self._dev_sign = np.array(d_sign)
        self._rhs_dev_idx = np.array(dd_idx, dtype=np.int64)
        self._rhs_dev_k = np.array(dd_k, dtype=np.int64)
        self._rhs_dev_row = np.array(dd_row, dtype=np.int64)

        self._dense = N <= _DENSE_MAX
        if self._dense and N > 0:
            self._base = np.zeros((N, N))
            np.add.at(self._base, (self._fixed_rows, self._fixed_cols), self._fixed_vals)
        elif N > 0:
            self._coo_rows = np.concatenate([self._fixed_rows, self._dev_rows])
            self._coo_cols = np.concatenate([self._fixed_cols, self._dev_cols])

    # -- factorization -----------------------------------------------------

    def refresh(self) -> None:
        """Refactorize if the tile's devices changed since the last solve."""
        if self._factor_version == self.tile.version:
            return
        g_flat = self.tile.g_actual.ravel()
        N = self.n_unknowns
        if N == 0:
            pass
        elif self._dense:
            A = self._base.copy()
            np.add.at(A, (self._dev_rows, self._dev_cols), self._dev_sign * g_flat[self._dev_k])
            try:
                self._chol = sla.cho_factor(A, overwrite_a=True, check_finite=False)
            except sla.LinAlgError as exc:  # pragma: no cover - SPD by construction
                raise SolverInternalError(f"nodal matrix not SPD: {exc}") from exc
            self._A_dense = None
        else:
            vals = np.concatenate([self._fixed_vals, self._dev_sign * g_flat[self._dev_k]])
            A = sp.coo_matrix((vals, (self._coo_rows, self._coo_cols)), shape=(N, N)).tocsc()
            try:
                self._lu = spla.splu(A)
            except RuntimeError as exc:  # pragma: no cover
                raise SolverInternalError(f"sparse factorization failed: {exc}") from exc
        self._g_flat = g_flat.copy()
        self._factor_version = self.tile.version

    def _rhs(self, v: np.ndarray) -> np.ndarray:
        b = np.zeros(self.n_unknowns)
        if self._rhs_fixed_idx.size:
            np.add.at(b, self._rhs_fixed_idx, self._rhs_fixed_g * v[self._rhs_fixed_row])
        if self._rhs_dev_idx.size:
            np.add.at(b, self._rhs_dev_idx, self._g_flat[self._rhs_dev_k] * v[self._rhs_dev_row])
        return b

    # -- solving -----------------------------------------------------------

    def solve_many(self, v_wordlines: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve for a batch of word-line drive vectors.

        Parameters: v_wordlines, shape (n_rhs, rows), volts.
        Returns (currents, powers): bit-line currents (n_rhs, cols) in
        amperes and total dissipated power (n_rhs,) in watts.
        """
        self.refresh()
        cfg = self.tile.config
        V = np.atleast_2d(np.asarray(v_wordlines, dtype=float))
        if V.shape[1] != cfg.rows:
            raise UsageError(f"expected {cfg.rows} word-line voltages, got {V.shape[1]}")
        if np.any(np.abs(V) > 2.0 * cfg.v_read + 1e-12):
            raise RangeError("|wordline voltage| exceeds 2*v_read")

        n_rhs = V.shape[0]
        N = self.n_unknowns
        if N > 0:
            B = np.column_stack([self._rhs(V[r]) for r in range(n_rhs)])
            if self._dense:
                X = sla.cho_solve(self._chol, B, check_finite=False)
            else:
                X = self._lu.solve(B)
            if X.ndim == 1:
                X = X[:, None]
        else:
            X = np.zeros((0, n_rhs))

        g = self._g_flat
        currents = np.empty((n_rhs, cfg.cols))
        powers = np.empty(n_rhs)
        for r in range(n_rhs):
            x = X[:, r]
            vw = self._w_gather.values(x, V[r])
            vb = self._b_gather.values(x, V[r])
            dv = vw - vb
            dev_cur = (g * dv).reshape(cfg.rows, cfg.cols)
            currents[r] = dev_cur.sum(axis=0)
            p = float(np.sum(g * dv * dv))
            if self._fixed_g.size:
                fa = self._fixed_a_gather.values(x, V[r])
                fb = self._fixed_b_gather.values(x, V[r])
                p += float(np.sum(self._fixed_g * (fa - fb) ** 2))
            powers[r] = p
        return currents, powers

    def dump(self, path: str, v_wordlines: np.ndarray) -> None:
        """Write the assembled nodal matrix, RHS and solution to a text file."""
        self.refresh()
        v = np.asarray(v_wordlines, dtype=float)
        N = self.n_unknowns
        g_flat = self._g_flat
        A = np.zeros((N, N))
        np.add.at(A, (self._fixed_rows, self._fixed_cols), self._fixed_vals)
        np.add.at(A, (self._dev_rows, self._dev_cols), self._dev_sign * g_flat[self._dev_k])
        b = self._rhs(v)
        x = np.linalg.solve(A, b) if N else np.zeros(0)
        with open(path, "w") as fh:
            fh.write(f"# nodal system: {N} unknowns, tile {self.tile.config.rows}x{self.tile.config.cols}\n")
            fh.write("# matrix A (siemens)\n")
            np.savetxt(fh, A)
            fh.write("# rhs b (amperes)\n")
            np.savetxt(fh, b[None, :] if N else np.zeros((1, 0)))
            fh.write("# solution x (volts)\n")
            np.savetxt(fh, x[None, :] if N else np.zeros((1, 0)))


def solve_tile(
    tile: CrossbarTile,
    wordline_voltages: np.ndarray,
    read_pulse_s: float = DEFAULT_READ_PULSE_S,
    dump_path: str | None = None,
) -> ReadResult:
    """Solve one read of the tile and return bit-line currents plus the
    dissipation event for the energy ledger.

    This is the convenience single-shot entry point; hot loops should hold a
    `TileSolver` and call `solve_many` to reuse the factorization.
    """
    solver = TileSolver(tile)
    if dump_path is not None:
        solver.dump(dump_path, wordline_voltages)
    currents, powers = solver.solve_many(np.asarray(wordline_voltages, dtype=float)[None, :])
    if not np.all(np.isfinite(currents[0])):
        raise SolverInternalError("non-finite bit-line currents")
    event = EnergyEvent(tile.config.v_read, read_pulse_s, float(powers[0]) * read_pulse_s)
    return ReadResult(bitline_currents=currents[0], energy_events=[event])


# -- differential weight mapping and the bit-serial VMM read ---------------


@dataclass(frozen=True)
class MappingParams:
    """Scale constants tying logical values to the crossbar's physical range.

    A logical weight w in [-w_max, w_max] maps to a conductance pair
    G+/- = g_mid +/- w * g_swing / (2 w_max); inputs are sign-magnitude
    fixed-point with |x| <= x_max.
    """

    w_max: float = 1.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.w_max <= 0.0 or self.x_max <= 0.0:
            raise RangeError("w_max and x_max must be positive")


@dataclass
class _MappedBlock:
    row0: int          # first logical input this tile covers
    col0: int          # first logical output this tile covers
    n_in: int
    n_out: int
    tile: CrossbarTile
    solver: TileSolver


@dataclass
class MappedMatrix:
    n_in: int
    n_out: int
    params: MappingParams
    blocks: list[_MappedBlock]
    config: CrossbarConfig
    spec: DeviceSpec


@dataclass
class VmmResult:
    values: np.ndarray
    energy_events: list[EnergyEvent] = field(default_factory=list)


def weight_to_pair(w: float, params: MappingParams, spec: DeviceSpec) -> tuple[float, float]:
    """Differential conductance pair encoding one signed logical weight."""
    if abs(w) > params.w_max:
        raise RangeError(f"|w|={abs(w):.4g} exceeds w_max={params.w_max:.4g}")
    delta = w * spec.g_swing / (2.0 * params.w_max)
    return spec.g_mid + delta, spec.g_mid - delta


def map_matrix(
    matrix: np.ndarray,
    spec: DeviceSpec,
    config: CrossbarConfig,
    rng: np.random.Generator,
    params: MappingParams | None = None,
    ledger=None,
    pulse_model=None,
) -> MappedMatrix:
    """Program a logical weight matrix onto one or more crossbar tiles.

    The matrix is (n_in, n_out): inputs drive word lines, each logical
    output is the current difference of an adjacent column pair.  Matrices
    larger than one tile are split into tile-sized blocks accumulated
    digitally; padding positions are left as unused devices at g_hrs.
    Each device write goes through `program_weight`, so the configured
    write perturbation lands on the stored weights; writes are charged to
    `ledger` when one is supplied.
    """
    from .energy import charge_program  # local import: energy is a leaf module

    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    n_in, n_out = matrix.shape
    if config.cols % 2 != 0:
        raise UsageError("differential mapping needs an even number of tile columns")
    if params is None:
        w_max = float(np.max(np.abs(matrix)))
        params = MappingParams(w_max=w_max if w_max > 0 else 1.0)

    pairs_per_tile = config.cols // 2
    blocks: list[_MappedBlock] = []
    for row0 in range(0, n_in, config.rows):
        nr = min(config.rows, n_in - row0)
        for col0 in range(0, n_out, pairs_per_tile):
            nc = min(pairs_per_tile, n_out - col0)
            tile = CrossbarTile(config, spec)
            for i in range(nr):
                for jp in range(nc):
                    gp, gm = weight_to_pair(matrix[row0 + i, col0 + jp], params, spec)
                    for jj, gt in ((2 * jp, gp), (2 * jp + 1, gm)):
                        tile.set_class(i, jj, DeviceClass.WEIGHT)
                        old = tile.g_actual[i, jj]
                        tile.set_device(i, jj, program_weight(tile.device(i, jj), spec, gt, rng))
                        if ledger is not None and pulse_model is not None:
                            charge_program(ledger, tile, (i, jj), pulse_model,
                                           g_start=old, g_end=tile.g_actual[i, jj])
            blocks.append(_MappedBlock(row0, col0, nr, nc, tile, TileSolver(tile)))
    return MappedMatrix(n_in, n_out, params, blocks, config, spec)


def vmm_read(
    mapped: MappedMatrix,
    x: np.ndarray,
    read_pulse_s: float = DEFAULT_READ_PULSE_S,
) -> VmmResult:
    """Analog vector-matrix product y = x @ M through the mapped tiles.

    The input is quantized sign-magnitude to dac_bits fixed point and driven
    one bit plane at a time at v_read (two phases: positive entries, then
    negative entries with outputs subtracted).  Plane outputs are weighted
    by powers of two and rescaled to the logical domain off the crossbar.
    All-zero planes drive no current and are skipped.  One energy event is
    recorded per solved plane per tile.
    """
    cfg = mapped.config
    x = np.asarray(x, dtype=float).ravel()
    if x.size != mapped.n_in:
        raise UsageError(f"expected input of length {mapped.n_in}, got {x.size}")
    if np.any(np.abs(x) > mapped.params.x_max):
        raise RangeError(
            f"|x| exceeds x_max={mapped.params.x_max:.4g}; refusing to clip"
        )

    n_mag_bits = cfg.dac_bits - 1
    q_full = (1 << n_mag_bits) - 1
    y = np.zeros(mapped.n_out)
    events: list[EnergyEvent] = []
    if q_full == 0:
        return VmmResult(y, events)

    q = np.rint(np.abs(x) / mapped.params.x_max * q_full).astype(np.int64)
    for block in mapped.blocks:
        q_blk = q[block.row0: block.row0 + block.n_in]
        x_blk = x[block.row0: block.row0 + block.n_in]
        drives: list[np.ndarray] = []
        weights: list[float] = []
        for sign in (1.0, -1.0):
            mag = np.where(np.sign(x_blk) == sign, q_blk, 0)
            if not mag.any():
                continue
            for k in range(n_mag_bits):
                bits = (mag >> k) & 1
                if not bits.any():
                    continue
                v = np.zeros(cfg.rows)
                v[: block.n_in] = cfg.v_read * bits
                drives.append(v)
                weights.append(sign * float(1 << k))
        if not drives:
            continue
        currents, powers = block.solver.solve_many(np.asarray(drives))
        diff = currents[:, 0::2] - currents[:, 1::2]  # (n_planes, pairs_per_tile)
        acc = (np.asarray(weights)[:, None] * diff[:, : block.n_out]).sum(axis=0)
        y[block.col0: block.col0 + block.n_out] += acc
        events.extend(
            EnergyEvent(cfg.v_read, read_pulse_s, float(p) * read_pulse_s) for p in powers
        )

    scale = (mapped.params.x_max / q_full) * mapped.params.w_max / (cfg.v_read * mapped.spec.g_swing)
    return VmmResult(y * scale, events)
