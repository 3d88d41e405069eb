"""Interacting lattice diffusion on the discrete circle.

N coupled scalar diffusions X_1..X_N evolve through bond variables: each
bond i carries dZ_i = (N^2/2)(phi'(X_{i-1}) - phi'(X_i)) dt + N dB_i and
site i receives dZ_i - dZ_{i+1}, indices mod N.  The update is written in
that flux form so the total charge sum(X) is conserved to round-off by
construction.  A controlled variant adds a per-site drift psi_i to the
driving noise and tracks the Girsanov log weight

    log dP/dPbar = -sum_i int psi_i dB_i - (1/2) sum_i int psi_i^2 dt

together with the quadratic control cost.  Under the controlled law the
weight is an exact exponential martingale even at finite dt, because the
per-step increment is a Gaussian shift identity.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteState
from .potential import Potential, TiltedFamilySampler

DEFAULT_STABILITY_SAFETY = 0.1


@dataclass(frozen=True)
class LatticeState:
    """Charges on the N lattice sites at one instant."""

    charges: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "charges",
                           np.asarray(self.charges, dtype=float))
        if self.charges.ndim != 1 or self.charges.size < 1:
            raise ValueError("charges must be a nonempty 1-d array")

    @property
    def n_sites(self) -> int:
        return self.charges.size

    def total_charge(self) -> float:
        return float(np.sum(self.charges))


@dataclass(frozen=True)
class SimConfig:
    """Time-stepping parameters for one particle run.

    The drift carries an N^2 factor, so explicit stepping needs
    dt <= c / N^2; ``stability_constant`` is that c.  When left as None it
    defaults to DEFAULT_STABILITY_SAFETY / max|phi''|, evaluated over the
    potential's probe range at validation time.
    """

    n_sites: int
    horizon: float
    dt: float
    seed: int = 0
    scheme: str = "euler_maruyama"
    stability_constant: float | None = None

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be positive")
        if not (self.horizon > 0 and self.dt > 0):
            raise ValueError("horizon and dt must be positive")
        if self.scheme != "euler_maruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def validate_stability(self, pot: Potential):
        c = self.stability_constant
        if c is None:
            c = DEFAULT_STABILITY_SAFETY / pot.max_phi_double_prime()
        limit = c / self.n_sites ** 2
        if self.dt > limit * (1 + 1e-12):
            raise ValueError(
                f"dt={self.dt:g} exceeds stability limit {limit:g} "
                f"(= c/N^2 with c={c:g}, N={self.n_sites})")

    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))


def stable_dt(pot: Potential, n_sites: int,
              safety: float = DEFAULT_STABILITY_SAFETY) -> float:
    """Largest dt the stability rule allows for this potential and N."""
    return safety / pot.max_phi_double_prime() / n_sites ** 2


@dataclass(frozen=True)
class SimpleControl:
    """Piecewise-constant-in-time per-site control.

    ``values[j, i]`` applies to site i+1 on the interval
    (breakpoints[j], breakpoints[j+1]].  All entries are bounded by
    ``bound`` (validated here); this is the class of controls the
    variational experiments optimize over.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "breakpoints",
                           np.asarray(self.breakpoints, dtype=float))
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=float))
        if self.breakpoints.ndim != 1 or self.breakpoints.size < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.values.shape[0] != self.breakpoints.size - 1:
            raise ValueError("values must have one row per interval")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")
        if float(np.max(np.abs(self.values), initial=0.0)) > self.bound + 1e-12:
            raise ValueError("control values exceed the declared bound")

    @property
    def n_sites(self) -> int:
        return self.values.shape[1]

    def values_at(self, t: float) -> np.ndarray:
        """Control row active just after time t (right limit)."""
        j = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        j = min(max(j, 0), self.values.shape[0] - 1)
        return self.values[j]

    @classmethod
    def constant(cls, value, n_sites: int, horizon: float,
                 bound: float | None = None) -> "SimpleControl":
        row = np.broadcast_to(np.asarray(value, dtype=float),
                              (n_sites,)).copy()
        b = bound if bound is not None else float(np.max(np.abs(row)))
        return cls(np.asarray([0.0, horizon]), row[None, :], b)

    @classmethod
    def from_function(cls, u: Callable, n_sites: int, horizon: float,
                      n_pieces: int | None = None,
                      bound: float | None = None) -> "SimpleControl":
        """Sample u(t, theta) at piece starts and site positions i/N.

        This is the canonical embedding of a space-time control field into
        the simple-control class: piece j holds u(j*T/K, i/N).
        """
        k = n_pieces if n_pieces is not None else n_sites
        bp = np.linspace(0.0, horizon, k + 1)
        theta = np.arange(1, n_sites + 1) / n_sites
        vals = np.stack([np.asarray(u(bp[j], theta), dtype=float)
                         for j in range(k)])
        b = bound if bound is not None else float(np.max(np.abs(vals))) + 1e-12
        return cls(bp, vals, b)


# -- single-step kernels ----------------------------------------------------


def _advance(pot: Potential, charges: np.ndarray, dt: float,
             noise: np.ndarray, psi: np.ndarray | None):
    """One explicit step on charges of shape (..., N).

    Returns (new_charges, log_weight_increment, cost_increment); the
    increments are zeros when psi is None.
    """
    n = charges.shape[-1]
    sqdt = math.sqrt(dt)
    fp = np.asarray(pot.phi_prime(charges), dtype=float)
    drift = 0.5 * n * n * (np.roll(fp, 1, axis=-1) - fp) * dt
    db = sqdt * noise
    if psi is not None:
        db = db + psi * dt
    dz = drift + n * db
    new = charges + dz - np.roll(dz, -1, axis=-1)
    if psi is None:
        zero = np.zeros(charges.shape[:-1])
        return new, zero, zero
    logw = -np.sum(psi * sqdt * noise, axis=-1) \
        - 0.5 * np.sum(psi ** 2, axis=-1) * dt
    cost = 0.5 * np.sum(psi ** 2, axis=-1) * dt
    return new, logw, cost


def step_uncontrolled(pot: Potential, state: LatticeState, dt: float,
                      rng: np.random.Generator) -> LatticeState:
    """One conservative Euler-Maruyama step of the uncontrolled system."""
    noise = rng.standard_normal(state.n_sites)
    new, _, _ = _advance(pot, state.charges, dt, noise, None)
    if not np.all(np.isfinite(new)):
        raise NonFiniteState(f"state blew up at t={state.time + dt:g}")
    return LatticeState(new, state.time + dt)


def step_controlled(pot: Potential, state: LatticeState,
                    control_values: np.ndarray, dt: float,
                    rng: np.random.Generator):
    """One controlled step; returns (state, log_weight_inc, cost_inc)."""
    psi = np.asarray(control_values, dtype=float)
    noise = rng.standard_normal(state.n_sites)
    new, logw, cost = _advance(pot, state.charges, dt, noise, psi)
    if not np.all(np.isfinite(new)):
        raise NonFiniteState(f"state blew up at t={state.time + dt:g}")
    return LatticeState(new, state.time + dt), float(logw), float(cost)


# -- trajectories ------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryRecord:
    """Snapshots of one trajectory plus accumulated weight and cost.

    ``log_weight_path``/``cost_path`` hold the running totals at each
    sample time; the scalar fields are the end-of-horizon values.
    """

    sample_times: np.ndarray
    states: np.ndarray               # (S, N)
    girsanov_log_weight: float
    control_cost: float
    log_weight_path: np.ndarray      # (S,)
    cost_path: np.ndarray            # (S,)

    def state_at(self, index: int) -> LatticeState:
        return LatticeState(self.states[index], float(self.sample_times[index]))

    def to_csv(self, fh):
        n = self.states.shape[1]
        header = ["t"] + [f"x_{i}" for i in range(n)] \
            + ["cumulative_log_weight", "cumulative_cost"]
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(self.sample_times):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in self.states[k]] \
                + [f"{self.log_weight_path[k]:.17g}",
                   f"{self.cost_path[k]:.17g}"]
            fh.write(",".join(row) + "\n")


def simulate_trajectory(pot: Potential, config: SimConfig,
                        initial: LatticeState,
                        control: SimpleControl | None = None,
                        sample_times: Sequence[float] | None = None,
                        rng: np.random.Generator | None = None
                        ) -> TrajectoryRecord:
    """Run one trajectory, recording snapshots at the requested times.

    Sample times snap to the nearest step-grid point.  With a fixed seed
    the output is bit-identical across runs; pass an explicit rng to
    manage replica streams externally.
    """
    config.validate_stability(pot)
    if not isinstance(initial, LatticeState):
        initial = LatticeState(np.asarray(initial, dtype=float))
    if initial.n_sites != config.n_sites:
        raise ValueError("initial state size does not match config")
    if control is not None and control.n_sites != config.n_sites:
        raise ValueError("control width does not match config")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    n_steps = config.n_steps()
    dt = config.horizon / n_steps
    if sample_times is None:
        sample_times = [0.0, config.horizon]
    sample_idx = np.clip(np.round(np.asarray(sample_times, dtype=float) / dt)
                         .astype(int), 0, n_steps)
    lookup = {}
    for pos, idx in enumerate(sample_idx):
        lookup.setdefault(int(idx), []).append(pos)

    s = len(sample_idx)
    states = np.empty((s, config.n_sites))
    logw_path = np.empty(s)
    cost_path = np.empty(s)

    charges = initial.charges.copy()
    logw = 0.0
    cost = 0.0
    for pos in lookup.get(0, []):
        states[pos] = charges
        logw_path[pos] = logw
        cost_path[pos] = cost

    t = 0.0
    for k in range(n_steps):
        psi = control.values_at(t) if control is not None else None
        noise = rng.standard_normal(config.n_sites)
        charges, dlogw, dcost = _advance(pot, charges, dt, noise, psi)
        if not np.all(np.isfinite(charges)):
            raise NonFiniteState(f"state blew up at step {k + 1}")
        logw += float(dlogw)
        cost += float(dcost)
        t = (k + 1) * dt
        for pos in lookup.get(k + 1, []):
            states[pos] = charges
            logw_path[pos] = logw
            cost_path[pos] = cost

    return TrajectoryRecord(
        sample_times=sample_idx * dt,
        states=states,
        girsanov_log_weight=logw,
        control_cost=cost,
        log_weight_path=logw_path,
        cost_path=cost_path,
    )


# -- initial profiles ---------------------------------------------------------


@dataclass(frozen=True)
class ProfileMeasure:
    """Position-dependent single-site law for initial conditions.

    ``conditional_sampler(theta, rng)`` draws one charge per entry of the
    position array theta; ``conditional_mean`` and ``entropy_density``
    give the mean and the relative entropy against the reference density
    at each position.  Site i realizes the cell average over
    ((i-1)/N, i/N] exactly, by drawing theta uniformly in the cell first.
    """

    conditional_sampler: Callable
    conditional_mean: Callable
    entropy_density: Callable
    description: str = ""


def equilibrium_profile(pot: Potential) -> ProfileMeasure:
    """Every site starts from the reference density itself."""
    sampler = TiltedFamilySampler(pot, 0.0, 0.0)
    _, mean0, _ = pot._tilted_stats(0.0)

    return ProfileMeasure(
        conditional_sampler=lambda theta, rng: sampler.sample(
            np.zeros_like(np.asarray(theta, dtype=float)), rng),
        conditional_mean=lambda theta: np.full_like(
            np.asarray(theta, dtype=float), mean0),
        entropy_density=lambda theta: np.zeros_like(
            np.asarray(theta, dtype=float)),
        description="equilibrium",
    )


def tilted_profile(pot: Potential, mean_fn: Callable,
                   description: str = "tilted") -> ProfileMeasure:
    """Exponentially tilted profile with prescribed mean m0(theta).

    The tilt solves rho'(lam(theta)) = m0(theta); its entropy density is
    the Legendre transform value h(m0(theta)).  Tilts are tabulated over
    the observed mean range so per-draw solves are just interpolation.
    """
    probe = np.linspace(0.0, 1.0, 512, endpoint=False)
    means = np.asarray(mean_fn(probe), dtype=float)
    mlo, mhi = float(np.min(means)), float(np.max(means))
    span = max(mhi - mlo, 1e-6)
    grid = np.linspace(mlo - 0.01 * span, mhi + 0.01 * span, 513)
    h_grid, lam_grid = pot.legendre_h_vec(grid)
    sampler = TiltedFamilySampler(pot, float(np.min(lam_grid)),
                                  float(np.max(lam_grid)))

    def lam_of_theta(theta):
        return np.interp(mean_fn(theta), grid, lam_grid)

    return ProfileMeasure(
        conditional_sampler=lambda theta, rng: sampler.sample(
            lam_of_theta(np.asarray(theta, dtype=float)), rng),
        conditional_mean=lambda theta: np.asarray(mean_fn(theta), dtype=float),
        entropy_density=lambda theta: np.interp(
            np.asarray(mean_fn(theta), dtype=float), grid, h_grid),
        description=description,
    )


def tilted_sine_profile(pot: Potential, amplitude: float) -> ProfileMeasure:
    return tilted_profile(
        pot, lambda theta: amplitude * np.sin(2.0 * np.pi * np.asarray(theta)),
        description=f"tilted_sine({amplitude:g})")


def tilted_constant_profile(pot: Potential, level: float) -> ProfileMeasure:
    return tilted_profile(pot, lambda theta: np.full_like(
        np.asarray(theta, dtype=float), level),
        description=f"tilted_constant({level:g})")


def deterministic_profile(mean_fn: Callable,
                          description: str = "deterministic") -> ProfileMeasure:
    """Point mass at m0(theta); infinite entropy against the reference."""
    return ProfileMeasure(
        conditional_sampler=lambda theta, rng: np.asarray(
            mean_fn(theta), dtype=float),
        conditional_mean=lambda theta: np.asarray(mean_fn(theta), dtype=float),
        entropy_density=lambda theta: np.full_like(
            np.asarray(theta, dtype=float), np.inf),
        description=description,
    )


def _cell_positions(n_sites: int, shape, rng: np.random.Generator):
    """theta drawn uniformly in ((i-1)/N, i/N] for each site i."""
    i = np.arange(1, n_sites + 1, dtype=float)
    u = rng.random(shape + (n_sites,))
    return (i - u) / n_sites


def sample_initial_from_profile(profile: ProfileMeasure, n_sites: int,
                                rng: np.random.Generator) -> LatticeState:
    """Draw one initial state whose site laws are the exact cell averages."""
    theta = _cell_positions(n_sites, (), rng)
    return LatticeState(profile.conditional_sampler(theta, rng), 0.0)


def sample_initial_matrix(profile: ProfileMeasure, n_sites: int,
                          n_replicas: int,
                          rng: np.random.Generator) -> np.ndarray:
    """(n_replicas, n_sites) matrix of independent initial draws."""
    theta = _cell_positions(n_sites, (n_replicas,), rng)
    return profile.conditional_sampler(theta, rng)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def entropy_cost_of_profile(profile: ProfileMeasure, n_sites: int) -> float:
    """Mean per-site relative entropy of the cell-averaged initial law.

    Jensen bounds each site's entropy by the cell average of the entropy
    density, and the sum over sites is the circle integral; evaluated by
    per-cell Gauss-Legendre quadrature.
    """
    edges = np.arange(n_sites + 1) / n_sites
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 / n_sites
    theta = mid[:, None] + half * _GL_NODES[None, :]
    vals = np.asarray(profile.entropy_density(theta), dtype=float)
    return float(np.sum(vals @ _GL_WEIGHTS) * half)


# -- batched replicas ---------------------------------------------------------


@dataclass(frozen=True)
class ReplicaBatch:
    """Vectorized ensemble run: pairings, weights, costs per replica."""

    sample_times: np.ndarray          # (S,)
    pairings: np.ndarray              # (n_fns, S, M)
    log_weights: np.ndarray           # (M,)
    costs: np.ndarray                 # (M,)
    states: np.ndarray | None = None  # (S, M, N) if recorded
    wall_time: float = 0.0


def simulate_replicas(pot: Potential, config: SimConfig,
                      profile: ProfileMeasure,
                      n_replicas: int,
                      control: SimpleControl | None = None,
                      sample_times: Sequence[float] | None = None,
                      pairing_functions: Sequence[Callable] = (),
                      record_states: bool = False,
                      rng: np.random.Generator | None = None) -> ReplicaBatch:
    """Run n_replicas trajectories in one vectorized sweep.

    All replicas share a single stream (one (M, N) normal block per
    step), which keeps large ensembles fast; the result is deterministic
    for a fixed seed.  Pairings against the given test functions are
    accumulated at the snapshot times so callers rarely need full states.
    """
    config.validate_stability(pot)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_sites
    n_steps = config.n_steps()
    dt = config.horizon / n_steps
    start = _time.perf_counter()

    if sample_times is None:
        sample_times = [0.0, config.horizon]
    sample_idx = np.clip(np.round(np.asarray(sample_times, dtype=float) / dt)
                         .astype(int), 0, n_steps)
    lookup = {}
    for pos, idx in enumerate(sample_idx):
        lookup.setdefault(int(idx), []).append(pos)

    theta_sites = np.arange(1, n + 1) / n
    j_vals = [np.asarray(fn(theta_sites), dtype=float)
              for fn in pairing_functions]

    charges = sample_initial_matrix(profile, n, n_replicas, rng)
    logw = np.zeros(n_replicas)
    cost = np.zeros(n_replicas)

    s = len(sample_idx)
    pairings = np.empty((len(j_vals), s, n_replicas))
    states = np.empty((s, n_replicas, n)) if record_states else None

    def record(step_index):
        for pos in lookup.get(step_index, []):
            for q, jv in enumerate(j_vals):
                pairings[q, pos] = charges @ jv / n
            if states is not None:
                states[pos] = charges

    record(0)
    for k in range(n_steps):
        psi = control.values_at(k * dt) if control is not None else None
        noise = rng.standard_normal((n_replicas, n))
        charges, dlogw, dcost = _advance(pot, charges, dt, noise, psi)
        if not np.all(np.isfinite(charges)):
            raise NonFiniteState(f"ensemble blew up at step {k + 1}")
        if psi is not None:
            logw += dlogw
            cost += dcost
        record(k + 1)

    return ReplicaBatch(
        sample_times=sample_idx * dt,
        pairings=pairings,
        log_weights=logw,
        costs=cost,
        states=states,
        wall_time=_time.perf_counter() - start,
    )
