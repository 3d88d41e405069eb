"""Atomic signed measures on the unit circle and distances between them.

The empirical field of a lattice state is the signed measure placing mass
X_i/N at location i/N.  Distances use the bounded-Lipschitz dual norm,
computed exactly as a finite linear program over the test-function values
at the atom locations: |f_k| <= 1 and |f_k - f_l| <= d_arc(theta_k,
theta_l).  Path distance is the max over shared snapshot times.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import SizeCapExceeded, TimeGridMismatch
from .particles import LatticeState, TrajectoryRecord

DEFAULT_LP_ATOM_CAP = 512


@dataclass(frozen=True)
class AtomicSignedMeasure:
    """Finite signed measure supported on points of the circle [0, 1)."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "locations",
                           np.asarray(self.locations, dtype=float))
        object.__setattr__(self, "weights",
                           np.asarray(self.weights, dtype=float))
        if self.locations.shape != self.weights.shape or self.locations.ndim != 1:
            raise ValueError("locations and weights must be matching 1-d arrays")
        if np.any((self.locations < 0) | (self.locations >= 1)):
            raise ValueError("locations must lie in [0, 1)")

    @property
    def n_atoms(self) -> int:
        return self.locations.size

    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def pair(self, test_function: Callable) -> float:
        """Integral of the test function against this measure."""
        return float(np.sum(self.weights
                            * np.asarray(test_function(self.locations))))

    def scaled(self, factor: float) -> "AtomicSignedMeasure":
        return AtomicSignedMeasure(self.locations, factor * self.weights)


def from_state(state: LatticeState) -> AtomicSignedMeasure:
    """Empirical field of a lattice state: mass X_i/N at i/N (site N at 0)."""
    n = state.n_sites
    locations = (np.arange(1, n + 1) % n) / n
    return AtomicSignedMeasure(locations, state.charges / n)


def density_to_atoms(density, n_atoms: int) -> AtomicSignedMeasure:
    """Collocate a density on the circle onto n_atoms midpoint atoms.

    ``density`` is either a callable on [0,1) or an array of values on the
    uniform node grid j/J (J >= n_atoms); atom i/N gets weight m(i/N)/N.
    """
    locations = np.arange(n_atoms) / n_atoms
    if callable(density):
        vals = np.asarray(density(locations), dtype=float)
    else:
        grid_vals = np.asarray(density, dtype=float)
        j = grid_vals.size
        if j < n_atoms:
            raise ValueError("grid resolution is below the atom count")
        grid = np.arange(j + 1) / j
        wrapped = np.concatenate([grid_vals, grid_vals[:1]])
        vals = np.interp(locations, grid, wrapped)
    return AtomicSignedMeasure(locations, vals / n_atoms)


def arc_distance(a, b):
    """Shortest distance along the circle of circumference one."""
    d = np.abs(np.asarray(a) - np.asarray(b))
    return np.minimum(d, 1.0 - d)


def bl_distance(mu1: AtomicSignedMeasure, mu2: AtomicSignedMeasure,
                atom_cap: int = DEFAULT_LP_ATOM_CAP) -> float:
    """Bounded-Lipschitz distance, solved exactly as a finite LP.

    Atoms of the difference measure with zero net weight are dropped
    first; constraining the remaining values is exact because any
    feasible assignment extends to the full circle with the same bound
    and Lipschitz constant.
    """
    locs = np.concatenate([mu1.locations, mu2.locations])
    wts = np.concatenate([mu1.weights, -mu2.weights])
    uniq, inv = np.unique(locs, return_inverse=True)
    net = np.zeros(uniq.size)
    np.add.at(net, inv, wts)
    scale = float(np.max(np.abs(net), initial=0.0))
    if scale == 0.0:
        return 0.0
    keep = np.abs(net) > 1e-15 * scale
    theta = uniq[keep]
    c = net[keep]
    m = theta.size
    if m == 1:
        return float(np.abs(c[0]))
    if m > atom_cap:
        raise SizeCapExceeded(
            f"{m} atoms exceed the configured LP cap {atom_cap}")

    kk, ll = np.triu_indices(m, k=1)
    d = arc_distance(theta[kk], theta[ll])
    rows = np.arange(kk.size)
    data = np.ones(kk.size)
    grad = sparse.coo_matrix(
        (np.concatenate([data, -data]),
         (np.concatenate([rows, rows]), np.concatenate([kk, ll]))),
        shape=(kk.size, m)).tocsr()
    a_ub = sparse.vstack([grad, -grad])
    b_ub = np.concatenate([d, d])

    res = linprog(-c, A_ub=a_ub, b_ub=b_ub, bounds=(-1.0, 1.0),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(-res.fun)


@dataclass(frozen=True)
class MeasurePath:
    """Snapshots of an atomic measure along a common time grid."""

    sample_times: np.ndarray
    snapshots: tuple

    def __post_init__(self):
        object.__setattr__(self, "sample_times",
                           np.asarray(self.sample_times, dtype=float))
        if len(self.snapshots) != self.sample_times.size:
            raise ValueError("one snapshot per sample time required")

    def pairings(self, test_function: Callable) -> np.ndarray:
        return np.asarray([s.pair(test_function) for s in self.snapshots])


def path_from_record(record: TrajectoryRecord) -> MeasurePath:
    return MeasurePath(
        record.sample_times,
        tuple(from_state(record.state_at(k))
              for k in range(record.sample_times.size)))


def path_from_density_slices(times, slices, n_atoms: int) -> MeasurePath:
    return MeasurePath(np.asarray(times, dtype=float),
                       tuple(density_to_atoms(s, n_atoms) for s in slices))


def d_star(path1: MeasurePath, path2: MeasurePath,
           atom_cap: int = DEFAULT_LP_ATOM_CAP) -> float:
    """Uniform-in-time bounded-Lipschitz distance over shared snapshots."""
    if path1.sample_times.size != path2.sample_times.size or \
            not np.allclose(path1.sample_times, path2.sample_times,
                            rtol=0.0, atol=1e-12):
        raise TimeGridMismatch("paths do not share a snapshot grid")
    return max(bl_distance(a, b, atom_cap)
               for a, b in zip(path1.snapshots, path2.snapshots))


def measure_path_to_csv(path: MeasurePath, fh):
    n = max(s.n_atoms for s in path.snapshots)
    header = ["t"] + [f"theta_{i}" for i in range(n)] \
        + [f"w_{i}" for i in range(n)]
    fh.write(",".join(header) + "\n")
    for t, snap in zip(path.sample_times, path.snapshots):
        locs = list(snap.locations) + [float("nan")] * (n - snap.n_atoms)
        wts = list(snap.weights) + [float("nan")] * (n - snap.n_atoms)
        row = [f"{t:.17g}"] + [f"{v:.17g}" for v in locs] \
            + [f"{v:.17g}" for v in wts]
        fh.write(",".join(row) + "\n")
