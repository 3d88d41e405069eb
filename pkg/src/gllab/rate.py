"""Action functional of a density path: static cost plus control cost.

The total rate of a path m splits into the entropy of its initial profile
(the integral of the Legendre transform h(m(0, theta))) and half the
squared L2 norm of the smallest control that reproduces the path through
the controlled equation.  That minimal control is recovered from the
path's defect g = dm/dt - (1/2) [H(m)]_thetatheta: the equation forces
du/dtheta = -g, so u* is the zero-mean circular antiderivative of -g,
which exists only when g integrates to zero in theta (mass is conserved);
otherwise the path is infeasible and the rate is +inf.

The dynamic cost can be cross-checked against the negative-order Sobolev
seminorm of g computed by discrete Fourier transform; the two agree up to
grid resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotMeanZero, QuadratureDiverged, RootNotBracketed
from .pde import ControlGrid, DensityField
from .potential import EnvelopeTable, Potential

MASS_DEFECT_TOL = 1e-8


@dataclass(frozen=True)
class RateDecomposition:
    """Rate of one path: initial entropy term plus dynamic control term."""

    initial_cost: float
    minimal_control: ControlGrid | None
    dynamic_cost: float
    total: float
    feasible: bool

    def csv_row(self) -> str:
        return (f"{self.initial_cost:.17g},{self.dynamic_cost:.17g},"
                f"{self.total:.17g},{str(self.feasible).lower()}")

    CSV_HEADER = "initial_cost,dynamic_cost,total,feasible"


def initial_cost(pot: Potential, m0) -> float:
    """Integral over the circle of the Legendre transform of m(0, .)."""
    m0 = np.asarray(m0, dtype=float)
    h, _ = pot.legendre_h_vec(m0)
    return float(np.mean(h))


def _defect(pot: Potential, field: DensityField) -> np.ndarray:
    """g[k] = forward time difference minus the discrete diffusive term."""
    vals = field.values
    dt = field.dt
    dth = field.dtheta
    table = EnvelopeTable(pot, float(np.min(vals)) - 1.0,
                          float(np.max(vals)) + 1.0)
    g = np.empty((field.n_steps, field.j_cells))
    for k in range(field.n_steps):
        hm = table(vals[k])
        lap = np.roll(hm, -1) - 2.0 * hm + np.roll(hm, 1)
        g[k] = (vals[k + 1] - vals[k]) / dt - 0.5 * lap / dth ** 2
    return g


def minimal_control(pot: Potential, field: DensityField,
                    mass_tol: float = MASS_DEFECT_TOL):
    """Smallest-L2 control reproducing the path, or None if infeasible.

    Returns (control, feasible).  Feasibility requires the defect to have
    zero spatial mean on every slice (up to mass_tol, relative to the
    field scale); the control cells are face-averaged values of the
    antiderivative, shifted to zero mean.
    """
    g = _defect(pot, field)
    scale = 1.0 + float(np.max(np.abs(field.values)))
    if float(np.max(np.abs(g.mean(axis=1)), initial=0.0)) > mass_tol * scale:
        return None, False
    dth = field.dtheta
    centered = g - g.mean(axis=1, keepdims=True)
    faces = np.concatenate(
        [np.zeros((g.shape[0], 1)), -dth * np.cumsum(centered, axis=1)],
        axis=1)
    cells = 0.5 * (faces[:, :-1] + faces[:, 1:])
    cells -= cells.mean(axis=1, keepdims=True)
    return ControlGrid(cells, field.horizon), True


def rate(pot: Potential, field: DensityField) -> RateDecomposition:
    """Full decomposition; infeasible paths get total = +inf."""
    try:
        init = initial_cost(pot, field.values[0])
    except (RootNotBracketed, QuadratureDiverged):
        return RateDecomposition(math.inf, None, math.inf, math.inf, False)
    control, feasible = minimal_control(pot, field)
    if not feasible:
        return RateDecomposition(init, None, math.inf, math.inf, False)
    dyn = 0.5 * control.l2_norm_sq
    return RateDecomposition(init, control, dyn, init + dyn, True)


def h_minus_one_seminorm(g, mean_tol: float = 1e-10) -> float:
    """Negative-order seminorm: L2 norm of the zero-mean antiderivative.

    Computed through the discrete Fourier transform as
    sqrt(sum_{k != 0} |g_hat_k|^2 / (2 pi k)^2); raises NotMeanZero when
    the input has nonzero spatial mean.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 1:
        raise ValueError("expected one spatial slice")
    scale = float(np.max(np.abs(g), initial=0.0))
    mean = float(np.mean(g))
    if abs(mean) > mean_tol * max(1.0, scale):
        raise NotMeanZero(f"spatial mean {mean:.3e} is not zero")
    j = g.size
    coeff = np.fft.rfft(g) / j
    k = np.arange(coeff.size)
    mult = np.ones(coeff.size)
    if j % 2 == 0:
        mult[-1] = 0.5    # Nyquist bin counts once, not twice
    terms = (np.abs(coeff[1:]) ** 2) * mult[1:] / (2.0 * np.pi * k[1:]) ** 2
    return float(math.sqrt(2.0 * np.sum(terms)))


def dynamic_cost_via_seminorm(pot: Potential, field: DensityField) -> float:
    """Time integral of half the squared seminorm of the defect."""
    g = _defect(pot, field)
    g = g - g.mean(axis=1, keepdims=True)
    total = sum(h_minus_one_seminorm(row) ** 2 for row in g)
    return 0.5 * total * field.dt
