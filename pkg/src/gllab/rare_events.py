"""Monte Carlo laboratory: exponential functionals, importance sampling,
and variational upper bounds for the lattice diffusion.

The central identity is the control representation of exponential
integrals: -(1/N) log E[exp(-N F)] over the equilibrium ensemble equals
the infimum, over initial profiles and simple controls, of

    per-site initial entropy + E[ control cost + F(controlled field) ].

Every admissible (profile, control) pair therefore yields an upper bound
on the Laplace functional at the same N; the trend study tracks how the
best bound from a parametric control family approaches the plain Monte
Carlo estimate as N grows, with the deterministic limit value
inf {F + rate} alongside.
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateEstimate
from .particles import (ProfileMeasure, ReplicaBatch, SimConfig,
                        SimpleControl, entropy_cost_of_profile,
                        equilibrium_profile, simulate_replicas, stable_dt,
                        tilted_profile)
from .pde import ControlGrid, DensityField, cfl_time_steps, solve_controlled_pde
from .potential import Potential
from .rate import minimal_control, rate


@dataclass(frozen=True)
class Functional:
    """Bounded continuous functional of a measure path.

    Supported kinds: "pairing_at_end" applies ``transform`` to the pairing
    of the final snapshot with ``test_function``; "sup_pairing" applies it
    to the running maximum of that pairing over the snapshot grid.  Values
    are clamped to [-bound, bound] on evaluation, so the functional is
    bounded by construction; an infinite bound is rejected.
    """

    kind: str
    test_function: Callable
    transform: Callable
    bound: float

    def __post_init__(self):
        if self.kind not in ("pairing_at_end", "sup_pairing"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise ValueError("functional bound must be finite and positive")

    def from_pairings(self, pairings: np.ndarray) -> np.ndarray:
        """Evaluate on a (snapshots, replicas) pairing array."""
        if self.kind == "pairing_at_end":
            v = pairings[-1]
        else:
            v = np.max(pairings, axis=0)
        return np.clip(np.asarray(self.transform(v), dtype=float),
                       -self.bound, self.bound)

    def on_limit_pairing(self, pairing_path: np.ndarray) -> float:
        """Evaluate on a deterministic pairing path (one value per time)."""
        v = pairing_path[-1] if self.kind == "pairing_at_end" \
            else float(np.max(pairing_path))
        return float(np.clip(self.transform(v), -self.bound, self.bound))


@dataclass(frozen=True)
class ExperimentReport:
    """One estimator run, in the shape the reports CSV expects."""

    method: str
    n_sites: int
    replicas: int
    estimate: float
    std_error: float
    wall_time: float
    seed: int

    def csv_row(self) -> str:
        return (f"{self.method},{self.n_sites},{self.replicas},"
                f"{self.estimate:.17g},{self.std_error:.17g},"
                f"{self.wall_time:.6g},{self.seed}")

    CSV_HEADER = "method,N,M,estimate,std_error,wall_time_s,seed"


def _snapshot_times(config: SimConfig, functional: Functional,
                    snapshot_count: int = 9):
    if functional.kind == "pairing_at_end":
        return [0.0, config.horizon]
    return list(np.linspace(0.0, config.horizon, snapshot_count))


def _run_batch(pot, config, profile, n_replicas, functional, control=None,
               rng=None) -> tuple[ReplicaBatch, np.ndarray]:
    batch = simulate_replicas(
        pot, config, profile, n_replicas, control=control,
        sample_times=_snapshot_times(config, functional),
        pairing_functions=[functional.test_function], rng=rng)
    f_vals = functional.from_pairings(batch.pairings[0])
    if not np.all(np.isfinite(f_vals)):
        raise DegenerateEstimate("functional produced non-finite values")
    return batch, f_vals


def laplace_functional_mc(pot: Potential, functional: Functional,
                          config: SimConfig, profile: ProfileMeasure,
                          n_replicas: int,
                          rng: np.random.Generator | None = None
                          ) -> ExperimentReport:
    """-(1/N) log of the empirical mean of exp(-N F), with delta-method SE.

    The mean is taken in shifted log space, so the estimate stays finite
    whenever any replica contributes weight; a vanishing or non-finite
    weight mass raises DegenerateEstimate instead of returning NaN.
    """
    start = _time.perf_counter()
    _, f_vals = _run_batch(pot, config, profile, n_replicas, functional,
                           rng=rng)
    n = config.n_sites
    a = -n * f_vals
    shift = float(np.max(a))
    w = np.exp(a - shift)
    mean_w = float(np.mean(w))
    if not (mean_w > 0 and math.isfinite(mean_w)):
        raise DegenerateEstimate("all exponential weights vanished")
    sd_w = float(np.std(w, ddof=1)) if n_replicas > 1 else 0.0
    estimate = -(shift + math.log(mean_w)) / n
    std_error = sd_w / (math.sqrt(n_replicas) * mean_w * n)
    return ExperimentReport("laplace_mc", n, n_replicas, estimate, std_error,
                            _time.perf_counter() - start, config.seed)


def importance_sampled_expectation(pot: Potential, functional: Functional,
                                   control: SimpleControl,
                                   config: SimConfig,
                                   profile: ProfileMeasure,
                                   n_replicas: int,
                                   rng: np.random.Generator | None = None
                                   ) -> ExperimentReport:
    """Estimate E[G] under the uncontrolled law by reweighting controlled
    replicas with the Girsanov factor exp(log dP/dPbar)."""
    start = _time.perf_counter()
    batch, g_vals = _run_batch(pot, config, profile, n_replicas, functional,
                               control=control, rng=rng)
    vals = g_vals * np.exp(batch.log_weights)
    estimate = float(np.mean(vals))
    std_error = float(np.std(vals, ddof=1)) / math.sqrt(n_replicas) \
        if n_replicas > 1 else 0.0
    return ExperimentReport("importance_sampling", config.n_sites, n_replicas,
                            estimate, std_error,
                            _time.perf_counter() - start, config.seed)


def plain_expectation(pot: Potential, functional: Functional,
                      config: SimConfig, profile: ProfileMeasure,
                      n_replicas: int,
                      rng: np.random.Generator | None = None
                      ) -> ExperimentReport:
    """Control-free companion estimator of E[G] for consistency checks."""
    start = _time.perf_counter()
    _, g_vals = _run_batch(pot, config, profile, n_replicas, functional,
                           rng=rng)
    estimate = float(np.mean(g_vals))
    std_error = float(np.std(g_vals, ddof=1)) / math.sqrt(n_replicas) \
        if n_replicas > 1 else 0.0
    return ExperimentReport("plain_mc", config.n_sites, n_replicas, estimate,
                            std_error, _time.perf_counter() - start,
                            config.seed)


def variational_upper_bound(pot: Potential, functional: Functional,
                            control: SimpleControl | None,
                            profile: ProfileMeasure, config: SimConfig,
                            n_replicas: int,
                            rng: np.random.Generator | None = None
                            ) -> ExperimentReport:
    """Entropy + mean(cost + F) for one admissible (profile, control) pair.

    By the control representation this upper-bounds the Laplace functional
    at the same N, up to Monte Carlo error on the mean.
    """
    start = _time.perf_counter()
    batch, f_vals = _run_batch(pot, config, profile, n_replicas, functional,
                               control=control, rng=rng)
    entropy = entropy_cost_of_profile(profile, config.n_sites)
    # batch.costs sums over sites; the bound lives in per-site units
    samples = batch.costs / config.n_sites + f_vals
    estimate = entropy + float(np.mean(samples))
    std_error = float(np.std(samples, ddof=1)) / math.sqrt(n_replicas) \
        if n_replicas > 1 else 0.0
    return ExperimentReport("variational_bound", config.n_sites, n_replicas,
                            estimate, std_error,
                            _time.perf_counter() - start, config.seed)


# -- steering paths and control families -------------------------------------


def sine_target_field(target: float, horizon: float, j_cells: int = 64,
                      n_steps: int | None = None,
                      rate_constant: float = 2.0 * math.pi ** 2
                      ) -> DensityField:
    """Deviation path m(t) = b(t) sin(2 pi theta) ending at pairing target.

    The amplitude grows exponentially at the heat-mode rate, which is the
    least-action shape for the quadratic reference potential and a usable
    candidate otherwise; b(T) is set so the final pairing with
    sin(2 pi theta) equals ``target``.
    """
    n_steps = n_steps or max(64, j_cells)
    times = np.linspace(0.0, horizon, n_steps + 1)
    theta = np.arange(j_cells) / j_cells
    b = 2.0 * target * np.exp(rate_constant * (times - horizon))
    vals = b[:, None] * np.sin(2.0 * np.pi * theta)[None, :]
    return DensityField(vals, horizon)


def simple_control_from_grid(grid: ControlGrid, n_sites: int,
                             n_pieces: int | None = None,
                             bound: float | None = None) -> SimpleControl:
    """Sample a control field at piece starts and site positions i/N."""
    k = n_pieces if n_pieces is not None else n_sites
    horizon = grid.horizon
    bp = np.linspace(0.0, horizon, k + 1)
    theta = (np.arange(1, n_sites + 1) % n_sites) / n_sites
    jdx = np.round(theta * grid.j_cells).astype(int) % grid.j_cells
    vals = np.empty((k, n_sites))
    for piece in range(k):
        kdx = min(int(bp[piece] / grid.dt + 1e-9), grid.n_steps - 1)
        vals[piece] = grid.values[kdx, jdx]
    b = bound if bound is not None else float(np.max(np.abs(vals))) + 1e-9
    return SimpleControl(bp, vals, b)


@dataclass(frozen=True)
class SteeringPlan:
    """A deviation path with its minimal control and initial profile."""

    field: DensityField
    control_grid: ControlGrid
    profile: ProfileMeasure
    limit_pairing: np.ndarray     # pairing path of the limit field
    rate_total: float


def steering_plan(pot: Potential, target: float, horizon: float,
                  test_function: Callable, j_cells: int = 64,
                  scale: float = 1.0) -> SteeringPlan:
    """Build the steering field toward ``target``, scaled by ``scale``.

    The control is the path's minimal control times ``scale`` (scale 1
    reproduces the path); the profile is the tilt matching the path's
    initial slice.
    """
    n_steps = cfl_time_steps(pot, lambda th: 2.0 * abs(target)
                             * np.ones_like(th), j_cells, horizon)
    field = sine_target_field(target, horizon, j_cells, n_steps)
    control, feasible = minimal_control(pot, field)
    if not feasible:
        raise RuntimeError("steering field unexpectedly infeasible")
    if scale != 1.0:
        control = ControlGrid(scale * control.values, horizon)
    b0 = 2.0 * target * math.exp(-2.0 * math.pi ** 2 * horizon)
    profile = tilted_profile(
        pot, lambda th: b0 * np.sin(2.0 * np.pi * np.asarray(th)),
        description=f"steering(target={target:g})")
    theta = np.arange(j_cells) / j_cells
    jv = np.asarray(test_function(theta), dtype=float)
    limit_pairing = field.values @ jv / j_cells
    decomp = rate(pot, field)
    return SteeringPlan(field, control, profile, limit_pairing, decomp.total)


@dataclass(frozen=True)
class TrendRow:
    n_sites: int
    laplace: float
    laplace_se: float
    variational: float
    variational_se: float
    limit_value: float

    def csv_row(self) -> str:
        return (f"{self.n_sites},{self.laplace:.17g},{self.laplace_se:.17g},"
                f"{self.variational:.17g},{self.variational_se:.17g},"
                f"{self.limit_value:.17g}")

    CSV_HEADER = ("N,laplace,laplace_se,best_variational,variational_se,"
                  "inf_f_plus_rate")


def ldp_trend_study(pot: Potential, functional: Functional,
                    n_list: Sequence[int], horizon: float,
                    n_replicas: int, targets: Sequence[float],
                    seed: int = 0, workers: int = 1,
                    control_scales: Sequence[float] = (1.0,),
                    dt_safety: float = 0.1,
                    report_sink: list | None = None) -> list[TrendRow]:
    """Laplace estimates vs. best variational bounds across system sizes.

    For each N the control family consists of the minimal controls of the
    steering paths for each target (embedded as simple controls with N
    pieces) times each scale, paired with the matching tilted profiles.
    The limit column is the minimum of F + rate over the same targets.
    Individual estimator reports are appended to ``report_sink`` when one
    is supplied.
    """
    plans = [steering_plan(pot, v, horizon, functional.test_function)
             for v in targets]
    limit_value = min(
        functional.on_limit_pairing(p.limit_pairing) + p.rate_total
        for p in plans)

    seeds = np.random.SeedSequence(seed).spawn(len(n_list))
    rows = []
    for pos, n in enumerate(n_list):
        streams = seeds[pos].spawn(1 + len(plans) * len(control_scales))
        config = SimConfig(n, horizon, stable_dt(pot, n, dt_safety),
                           seed=seed)
        lap = laplace_functional_mc(
            pot, functional, config, equilibrium_profile(pot), n_replicas,
            rng=np.random.default_rng(streams[0]))

        def bound_for(task):
            idx, (plan, scale) = task
            ctrl_grid = plan.control_grid if scale == 1.0 else \
                ControlGrid(scale * plan.control_grid.values, horizon)
            control = simple_control_from_grid(ctrl_grid, n)
            return variational_upper_bound(
                pot, functional, control, plan.profile, config, n_replicas,
                rng=np.random.default_rng(streams[1 + idx]))

        tasks = list(enumerate(
            (plan, scale) for plan in plans for scale in control_scales))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                reports = list(pool.map(bound_for, tasks))
        else:
            reports = [bound_for(t) for t in tasks]
        best = min(reports, key=lambda r: r.estimate)
        if report_sink is not None:
            report_sink.append(lap)
            report_sink.extend(reports)
        rows.append(TrendRow(n, lap.estimate, lap.std_error,
                             best.estimate, best.std_error, limit_value))
    return rows


def trend_gaps(rows: Sequence[TrendRow]) -> np.ndarray:
    return np.asarray([r.variational - r.laplace for r in rows])
