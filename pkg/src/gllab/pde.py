"""Controlled hydrodynamic equation on the circle.

Solves d/dt m = (1/2) d^2/dtheta^2 [H(m)] - d/dtheta u for the envelope
slope H(m) (the tilt at which the reference density has mean m), with an
explicit conservative finite-volume scheme: cells are centered on the
uniform nodes theta_j = j/J, the diffusive term is the standard 3-point
flux difference of H(m), and the control enters through face values.
Both terms telescope, so cell-average mass is conserved to round-off.

Face values of the control are the average of the two neighboring cells;
piecewise-constant controls embedded from the particle system use the
left cell's value instead so the embedding is exact.  Stability needs
dt <= dtheta^2 / max H'(m); the solver validates this against the
envelope curvature over the initial range and raises CFLViolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CFLViolation, NonFiniteField
from .potential import EnvelopeTable, Potential
from .particles import SimpleControl

DEFAULT_CFL_SAFETY = 0.5


@dataclass
class ControlGrid:
    """Space-time control sampled on the solver grid.

    values[k, j] is the control on time slice k (left endpoint t_k) and
    cell j.  The squared L2 norm over [0, T] x S is cached at
    construction.
    """

    values: np.ndarray
    horizon: float
    face_mode: str = "centered"     # "centered" | "left"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("control values must be a (K, J) array")
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")
        if self.face_mode not in ("centered", "left"):
            raise ValueError("face_mode must be 'centered' or 'left'")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")
        self.l2_norm_sq = float(
            np.sum(self.values ** 2) * self.dt * self.dtheta)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def j_cells(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def dtheta(self) -> float:
        return 1.0 / self.j_cells

    @classmethod
    def zeros(cls, n_steps: int, j_cells: int, horizon: float) -> "ControlGrid":
        return cls(np.zeros((n_steps, j_cells)), horizon)

    @classmethod
    def from_function(cls, u: Callable, n_steps: int, j_cells: int,
                      horizon: float) -> "ControlGrid":
        times = np.arange(n_steps) * (horizon / n_steps)
        theta = np.arange(j_cells) / j_cells
        vals = np.stack([np.asarray(u(t, theta), dtype=float) for t in times])
        return cls(vals, horizon)

    def face_values(self, k: int) -> np.ndarray:
        """Right-face value for each cell on time slice k."""
        row = self.values[k]
        if self.face_mode == "left":
            return row
        return 0.5 * (row + np.roll(row, -1))


@dataclass
class DensityField:
    """Space-time density on the solver grid: values[k, j] = m(t_k, j/J)."""

    values: np.ndarray
    horizon: float
    range_escaped: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise ValueError("field needs at least two time levels")
        if not (self.horizon > 0):
            raise ValueError("horizon must be positive")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def j_cells(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def dtheta(self) -> float:
        return 1.0 / self.j_cells

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def masses(self) -> np.ndarray:
        """Cell-average integral at every time level."""
        return self.values.mean(axis=1)

    def slice_at(self, t: float) -> np.ndarray:
        k = int(round(t / self.dt))
        return self.values[min(max(k, 0), self.n_steps)]

    def to_csv(self, fh):
        j = self.j_cells
        header = ["t"] + [f"m_{i}" for i in range(j)]
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(self.times):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in self.values[k]]
            fh.write(",".join(row) + "\n")


def _resolve_grid(pot: Potential, m0, j_cells, table_pad=1.0):
    m0_arr = np.asarray(m0(np.arange(j_cells) / j_cells)
                        if callable(m0) else m0, dtype=float)
    if m0_arr.ndim != 1:
        raise ValueError("initial density must be one-dimensional")
    lo = float(np.min(m0_arr))
    hi = float(np.max(m0_arr))
    pad = table_pad * max(hi - lo, 1.0)
    table = EnvelopeTable(pot, lo - pad, hi + pad)
    return m0_arr, table


def cfl_time_steps(pot: Potential, m0, j_cells: int, horizon: float,
                   safety: float = DEFAULT_CFL_SAFETY) -> int:
    """Smallest step count satisfying dt <= safety * dtheta^2 / max H'."""
    m0_arr, table = _resolve_grid(pot, m0, j_cells)
    dtheta = 1.0 / m0_arr.size
    dt_max = safety * dtheta ** 2 / table.max_curvature()
    return max(1, int(math.ceil(horizon / dt_max)))


def solve_controlled_pde(pot: Potential, m0, u: ControlGrid | None = None,
                         horizon: float | None = None,
                         j_cells: int | None = None,
                         n_steps: int | None = None,
                         cfl_safety: float = DEFAULT_CFL_SAFETY) -> DensityField:
    """March the controlled equation forward from the initial density.

    When a ControlGrid is given it fixes the grid (and the horizon);
    otherwise the control is zero, ``j_cells`` sizes the grid from the
    initial density, and ``n_steps`` defaults to the CFL-determined count.
    """
    if u is not None:
        horizon = u.horizon
        j_cells = u.j_cells
        n_steps = u.n_steps
    if horizon is None or not (horizon > 0):
        raise ValueError("horizon must be positive")
    if callable(m0):
        if j_cells is None:
            raise ValueError("j_cells required with a callable initial density")
        m = np.asarray(m0(np.arange(j_cells) / j_cells), dtype=float)
    else:
        m = np.asarray(m0, dtype=float).copy()
        j_cells = m.size
    m_arr, table = _resolve_grid(pot, m, j_cells)
    m = m_arr.copy()

    dtheta = 1.0 / j_cells
    dt_max = cfl_safety * dtheta ** 2 / table.max_curvature()
    if n_steps is None:
        n_steps = max(1, int(math.ceil(horizon / dt_max)))
    dt = horizon / n_steps
    if dt > dt_max * (1 + 1e-9):
        raise CFLViolation(
            f"dt={dt:g} exceeds {dt_max:g} "
            f"(= safety*dtheta^2/max_curvature with safety={cfl_safety:g}, "
            f"J={j_cells}, max H'={table.max_curvature():g})")

    diff = 0.5 * dt / dtheta ** 2
    adv = dt / dtheta
    out = np.empty((n_steps + 1, j_cells))
    out[0] = m
    for k in range(n_steps):
        hm = table(m)
        lap = np.roll(hm, -1) - 2.0 * hm + np.roll(hm, 1)
        m = m + diff * lap
        if u is not None:
            right = u.face_values(k)
            m = m - adv * (right - np.roll(right, 1))
        if not np.all(np.isfinite(m)):
            raise NonFiniteField(f"field blew up at step {k + 1}")
        out[k + 1] = m

    return DensityField(out, horizon, range_escaped=table.range_escaped)


def weak_form_residual(pot: Potential, field: DensityField,
                       u: ControlGrid | None, test_function: Callable,
                       t: float) -> float:
    """Defect of the weak formulation against a smooth test function.

    Computes |<m(t),J> - <m(0),J> - (1/2) int int J'' H(m) - int int J' u|
    with grid quadrature in space and left-endpoint rule in time, matching
    the explicit scheme's attribution of fluxes to the left time level.
    """
    j = field.j_cells
    theta = np.arange(j) / j
    dtheta = field.dtheta
    dt = field.dt
    k_end = int(round(t / dt))
    if abs(k_end * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError("t must lie on the field's time grid")
    k_end = min(max(k_end, 0), field.n_steps)

    # Spectral derivatives of the test function on the periodic grid;
    # exact for trigonometric polynomials below the Nyquist mode.
    jv = np.asarray(test_function(theta), dtype=float)
    freq = 2.0j * np.pi * np.fft.rfftfreq(j, d=dtheta)
    jhat = np.fft.rfft(jv)
    jp = np.fft.irfft(jhat * freq, n=j)
    jpp = np.fft.irfft(jhat * freq ** 2, n=j)

    table = EnvelopeTable(pot, float(np.min(field.values)) - 1.0,
                          float(np.max(field.values)) + 1.0)
    boundary = (np.sum(field.values[k_end] * jv)
                - np.sum(field.values[0] * jv)) * dtheta
    diffusive = 0.0
    advective = 0.0
    for k in range(k_end):
        diffusive += np.sum(jpp * table(field.values[k])) * dtheta * dt
        if u is not None:
            advective += np.sum(jp * u.values[k]) * dtheta * dt
    return float(abs(boundary - 0.5 * diffusive - advective))


def minimal_control_embedding(control: SimpleControl, j_cells: int,
                              n_steps: int, horizon: float) -> ControlGrid:
    """Embed a per-site simple control as a piecewise-constant field.

    Cell j takes the value of the site whose cell ((i-1)/N, i/N] contains
    theta_j; faces use the left cell.  When J is a multiple of N and the
    time slicing refines the control pieces, the grid L2 norm equals the
    per-site average of the time integrals exactly.
    """
    n = control.n_sites
    theta = np.arange(j_cells) / j_cells
    site = (np.ceil(theta * n).astype(int) - 1) % n
    dt = horizon / n_steps
    vals = np.stack([control.values_at(k * dt)[site] for k in range(n_steps)])
    return ControlGrid(vals, horizon, face_mode="left")


def control_l2_distance(u1: ControlGrid, u2: ControlGrid) -> float:
    if u1.values.shape != u2.values.shape or u1.horizon != u2.horizon:
        raise ValueError("control grids are not conformable")
    return float(math.sqrt(np.sum((u1.values - u2.values) ** 2)
                           * u1.dt * u1.dtheta))


def contraction_gap(pot: Potential, m0, u1: ControlGrid, u2: ControlGrid,
                    snapshot_count: int = 9,
                    n_atoms: int | None = None):
    """Path distance of two controlled solutions vs. the Gronwall bound.

    Returns (lhs, rhs): lhs is the snapshot-sup bounded-Lipschitz distance
    between the two solutions from the same initial density, rhs is
    exp(T/2) times the L2 distance of the controls.
    """
    from .measures import path_from_density_slices, d_star

    f1 = solve_controlled_pde(pot, m0, u1)
    f2 = solve_controlled_pde(pot, m0, u2)
    times = np.linspace(0.0, u1.horizon, snapshot_count)
    idx = np.round(times / f1.dt).astype(int)
    n_atoms = n_atoms or min(f1.j_cells, 64)
    p1 = path_from_density_slices(idx * f1.dt, [f1.values[k] for k in idx],
                                  n_atoms)
    p2 = path_from_density_slices(idx * f2.dt, [f2.values[k] for k in idx],
                                  n_atoms)
    lhs = d_star(p1, p2)
    rhs = math.exp(u1.horizon / 2.0) * control_l2_distance(u1, u2)
    return lhs, rhs
