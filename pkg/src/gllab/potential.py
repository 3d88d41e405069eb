"""Single-site potential machinery.

A :class:`Potential` wraps the potential closures ``phi``, ``phi_prime``,
``phi_double_prime`` together with a fixed quadrature grid and exposes the
derived quantities everything downstream needs: the log moment generating
function, its Legendre transform, exponentially tilted sampling, and the
cutoff local-equilibrium average.  The reference weight is the probability
density ``exp(-phi(x))``; a normalization offset is computed once at
construction so this density integrates to one.

All integrals run over one fixed trapezoid grid and are evaluated in log
space (logsumexp), so moderately large tilts do not overflow.  A doubling
check at construction and a tail-mass check on every user-facing integral
guard the fixed window: if either fails, :class:`QuadratureDiverged` is
raised rather than returning a silently truncated value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import QuadratureDiverged, RootNotBracketed

# Bracket expansion for the tilt solve stops here; targets that stay
# unbracketed at this tilt are treated as unachievable.
BRACKET_CAP = 64.0

# Largest fraction of integral mass allowed on the outermost node pair.
TAIL_BUDGET = 1e-10

_LOG_TAIL_BUDGET = math.log(TAIL_BUDGET)


@dataclass(frozen=True)
class QuadratureSpec:
    """Fixed trapezoid rule on [-domain_halfwidth, domain_halfwidth]."""

    node_count: int = 4096
    domain_halfwidth: float = 12.0
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.node_count < 16:
            raise ValueError("node_count must be at least 16")
        if not (self.domain_halfwidth > 0):
            raise ValueError("domain_halfwidth must be positive")
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class CumulantGenerator:
    """Log-MGF of the reference density and its first two derivatives.

    ``rho_prime`` is the mean of the tilted density, ``rho_double_prime``
    its variance; both are quadrature-backed vectorized callables.
    """

    rho: Callable
    rho_prime: Callable
    rho_double_prime: Callable


class Potential:
    """Normalized single-site potential with quadrature-backed cumulants.

    Parameters
    ----------
    phi, phi_prime, phi_double_prime : callables
        Potential and derivatives, vectorized over numpy arrays.  ``phi``
        may be un-normalized; the constructor adds the offset that makes
        exp(-phi) a probability density.
    quadrature : QuadratureSpec
        Grid for every integral this object performs.
    sigma_checks : tuple of float
        Values of sigma for which the integrability of
        exp(sigma*|phi_prime| - phi) is verified at construction.  This is
        the moment condition the particle drift analysis needs.

    Instances are immutable after construction and safe to share across
    threads; the tilted-sampling tables are the only caches and are
    guarded by idempotent insertion.
    """

    def __init__(self, phi, phi_prime, phi_double_prime,
                 quadrature: QuadratureSpec | None = None,
                 name: str = "custom", sigma_checks=(0.5, 1.0)):
        self.quadrature = quadrature or QuadratureSpec()
        q = self.quadrature
        self.name = name

        y = np.linspace(-q.domain_halfwidth, q.domain_halfwidth, q.node_count)
        self._y = y
        self._dy = y[1] - y[0]
        logw = np.full(q.node_count, math.log(self._dy))
        logw[0] -= math.log(2.0)
        logw[-1] -= math.log(2.0)
        self._logw = logw

        raw = np.asarray(phi(y), dtype=float)
        if raw.shape != y.shape or not np.all(np.isfinite(raw)):
            raise ValueError("phi must be finite and vectorized on the grid")

        # Additive constant making exp(-phi) integrate to one.
        z = float(logsumexp(-raw + logw))
        self._check_doubling(phi, z)
        self.normalization_offset = z
        self._raw_phi = phi
        self._raw_phi_prime = phi_prime
        self._raw_phi_double_prime = phi_double_prime

        self._phi_grid = raw + z          # normalized phi on the grid
        self._phi_prime_grid = np.asarray(phi_prime(y), dtype=float)
        self._neg_phi_logw = -self._phi_grid + logw
        self._y2 = y ** 2

        for sigma in sigma_checks:
            g = sigma * np.abs(self._phi_prime_grid) - self._phi_grid
            self._tail_checked_logsumexp(g, f"sigma moment check (sigma={sigma})")

        self._tilt_tables: dict[float, np.ndarray] = {}

    # -- basic closures ------------------------------------------------

    def phi(self, x):
        """Normalized potential value."""
        return np.asarray(self._raw_phi(x)) + self.normalization_offset

    def phi_prime(self, x):
        return self._raw_phi_prime(x)

    def phi_double_prime(self, x):
        return self._raw_phi_double_prime(x)

    def max_phi_double_prime(self, halfwidth=8.0):
        """Max curvature over a probe range, used by stability rules."""
        mask = np.abs(self._y) <= halfwidth
        return float(np.max(np.abs(self._raw_phi_double_prime(self._y[mask]))))

    # -- quadrature helpers --------------------------------------------

    def _check_doubling(self, phi, z_coarse):
        q = self.quadrature
        y2 = np.linspace(-q.domain_halfwidth, q.domain_halfwidth,
                         2 * q.node_count - 1)
        dy2 = y2[1] - y2[0]
        logw2 = np.full(y2.size, math.log(dy2))
        logw2[0] -= math.log(2.0)
        logw2[-1] -= math.log(2.0)
        z2 = float(logsumexp(-np.asarray(phi(y2), dtype=float) + logw2))
        if abs(z2 - z_coarse) > q.tolerance:
            raise QuadratureDiverged(
                f"doubling check failed: |{z2:.3e} - {z_coarse:.3e}| "
                f"> {q.tolerance:g}; refine the quadrature spec")

    def _tail_checked_logsumexp(self, log_integrand, what):
        """logsumexp over the grid, raising if the window truncates mass."""
        gw = log_integrand + self._logw
        total = float(logsumexp(gw))
        edge = float(logsumexp([gw[0], gw[-1]]))
        if not math.isfinite(total) or edge - total > _LOG_TAIL_BUDGET:
            raise QuadratureDiverged(
                f"{what}: integrand tail exceeds the truncation budget "
                f"(edge-to-total log ratio {edge - total:.2f})")
        return total

    def _tilted_stats(self, lam, tail_check=False):
        """(rho, mean, variance) of the lam-tilted density, vectorized.

        lam may be a scalar or an array; stats come back with its shape.
        The shifted-exp normalization is done by hand because this sits in
        the innermost loop of the envelope tabulation.
        """
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
        gw = lam_arr[..., None] * self._y + self._neg_phi_logw
        shift = np.max(gw, axis=-1, keepdims=True)
        w = np.exp(gw - shift)
        z = np.sum(w, axis=-1)
        rho = shift[..., 0] + np.log(z)
        if tail_check:
            edge = np.logaddexp(gw[..., 0], gw[..., -1])
            if (not np.all(np.isfinite(rho))
                    or np.any(edge - rho > _LOG_TAIL_BUDGET)):
                raise QuadratureDiverged(
                    "tilted integrand mass leaks past the quadrature window; "
                    "widen domain_halfwidth or reduce the tilt")
        mean = (w @ self._y) / z
        var = (w @ self._y2) / z - mean ** 2
        if np.isscalar(lam) or np.asarray(lam).ndim == 0:
            return float(rho[0]), float(mean[0]), float(var[0])
        return rho, mean, var

    # -- cumulant generating function ----------------------------------

    def log_mgf(self, lam):
        """log integral of exp(lam*x - phi(x)); zero at lam = 0."""
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
        out = np.empty(lam_arr.shape)
        for i, l in np.ndenumerate(lam_arr):
            g = l * self._y - self._phi_grid
            out[i] = self._tail_checked_logsumexp(g, f"log_mgf(lam={l:g})")
        if np.isscalar(lam) or np.asarray(lam).ndim == 0:
            return float(out[0])
        return out

    def cumulants(self) -> CumulantGenerator:
        """Bundle (rho, rho', rho'') as vectorized callables."""

        def rho(lam):
            return self.log_mgf(lam)

        def rho_prime(lam):
            return self._tilted_stats(lam, tail_check=True)[1]

        def rho_double_prime(lam):
            return self._tilted_stats(lam, tail_check=True)[2]

        return CumulantGenerator(rho, rho_prime, rho_double_prime)

    # -- Legendre transform --------------------------------------------

    def legendre_h(self, x):
        """Legendre transform of the log-MGF at mean value x.

        Returns ``(h, lam_star)`` where lam_star solves rho'(lam) = x.
        Scalar in, scalars out.
        """
        h, lam = self.legendre_h_vec(np.asarray([x], dtype=float))
        return float(h[0]), float(lam[0])

    def legendre_h_vec(self, x):
        """Vectorized Legendre transform; returns (h, lam_star) arrays.

        Safeguarded Newton on the monotone map lam -> rho'(lam), with the
        bracket grown geometrically from [-1, 1] up to |lam| = BRACKET_CAP.
        Raises RootNotBracketed for unachievable mean values.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("legendre_h_vec expects a 1-d array")
        lo = np.full(x.shape, -1.0)
        hi = np.full(x.shape, 1.0)

        # Grow brackets until rho'(lo) <= x <= rho'(hi) everywhere.
        for _ in range(32):
            m_hi = self._tilted_stats(hi)[1]
            need = m_hi < x
            if not np.any(need):
                break
            if np.all(hi[need] >= BRACKET_CAP):
                bad = x[need & (hi >= BRACKET_CAP)]
                raise RootNotBracketed(
                    f"mean value(s) {bad[:4]} not achievable with tilt "
                    f"<= {BRACKET_CAP}")
            hi = np.where(need, np.minimum(hi * 2.0, BRACKET_CAP), hi)
        else:
            raise RootNotBracketed("bracket expansion did not terminate")
        for _ in range(32):
            m_lo = self._tilted_stats(lo)[1]
            need = m_lo > x
            if not np.any(need):
                break
            if np.all(lo[need] <= -BRACKET_CAP):
                bad = x[need & (lo <= -BRACKET_CAP)]
                raise RootNotBracketed(
                    f"mean value(s) {bad[:4]} not achievable with tilt "
                    f">= -{BRACKET_CAP}")
            lo = np.where(need, np.maximum(lo * 2.0, -BRACKET_CAP), lo)
        else:
            raise RootNotBracketed("bracket expansion did not terminate")

        lam = 0.5 * (lo + hi)
        tol = 1e-12 * (1.0 + np.abs(x))
        for _ in range(200):
            _, mean, var = self._tilted_stats(lam)
            f = mean - x
            if np.all(np.abs(f) <= tol):
                break
            lo = np.where(f < 0, lam, lo)
            hi = np.where(f >= 0, lam, hi)
            step = f / np.maximum(var, 1e-300)
            cand = lam - step
            bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
            lam = np.where(bad, 0.5 * (lo + hi), cand)
        else:
            raise RootNotBracketed(
                f"tilt solve did not converge; residual "
                f"{np.max(np.abs(f)):.3e}")

        rho, _, _ = self._tilted_stats(lam, tail_check=True)
        rho = np.atleast_1d(rho)
        return lam * x - rho, lam

    # -- tilted sampling -------------------------------------------------

    def _tilt_cdf(self, lam):
        """Tabulated CDF of the lam-tilted density on the grid (cached)."""
        key = float(np.round(lam, 12))
        table = self._tilt_tables.get(key)
        if table is None:
            g = lam * self._y - self._phi_grid
            rho = self._tail_checked_logsumexp(g, f"tilt table (lam={lam:g})")
            dens = np.exp(g - rho)
            cdf = np.concatenate(
                [[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * self._dy)])
            cdf /= cdf[-1]
            table = cdf
            self._tilt_tables[key] = table
        return table

    def sample_tilted(self, lam, rng, size=None):
        """Draw from the lam-tilted density by tabulated inverse CDF."""
        cdf = self._tilt_cdf(lam)
        u = rng.random(size)
        return np.interp(u, cdf, self._y)

    # -- cutoff local-equilibrium average --------------------------------

    def local_equilibrium_average(self, x, cutoff):
        """Tilted average of phi_prime clamped to [-cutoff, cutoff].

        The tilt is chosen so the tilted mean equals x; as the cutoff
        grows this tends to the Legendre envelope slope at x.
        """
        if cutoff < 0:
            raise ValueError("cutoff must be nonnegative")
        _, lam = self.legendre_h(x)
        g = lam * self._y - self._phi_grid + self._logw
        w = np.exp(g - logsumexp(g))
        clipped = np.clip(self._phi_prime_grid, -cutoff, cutoff)
        return float(w @ clipped)


class TiltedFamilySampler:
    """Vectorized sampler for a whole family of tilted densities.

    The per-tilt inverse CDF is exact on the quadrature grid; between the
    tabulated tilt values the inverse CDF is interpolated linearly.  Used
    by profile samplers where the tilt varies from draw to draw: per-draw
    table construction would be quadratic in the batch size, while here
    draws group by bracketing table row.
    """

    def __init__(self, pot: Potential, lam_min: float, lam_max: float,
                 n_tables: int = 129):
        if lam_max < lam_min:
            raise ValueError("lam_max must be >= lam_min")
        self._pot = pot
        pad = 1e-9 * (1.0 + abs(lam_min) + abs(lam_max))
        self._lam_min = lam_min - pad
        self._lam_max = lam_max + pad
        if self._lam_max - self._lam_min < 1e-8:
            self._lams = np.asarray([lam_min])
        else:
            self._lams = np.linspace(self._lam_min, self._lam_max, n_tables)
        self._cdfs = np.stack([pot._tilt_cdf(l) for l in self._lams])

    def sample(self, lam, rng):
        """Draw one sample per entry of lam (array-valued tilt)."""
        lam = np.asarray(lam, dtype=float)
        u = rng.random(lam.shape)
        y = self._pot._y
        if self._lams.size == 1:
            return np.interp(u, self._cdfs[0], y)
        dl = self._lams[1] - self._lams[0]
        pos = np.clip((lam - self._lams[0]) / dl, 0.0, self._lams.size - 1 - 1e-12)
        idx = pos.astype(int)
        frac = pos - idx
        out = np.empty(lam.shape)
        for k in np.unique(idx):
            mask = idx == k
            lo = np.interp(u[mask], self._cdfs[k], y)
            hi = np.interp(u[mask], self._cdfs[k + 1], y)
            out[mask] = (1.0 - frac[mask]) * lo + frac[mask] * hi
        return out


class EnvelopeTable:
    """Memoized piecewise-linear table of the envelope slope x -> lam*(x).

    The PDE solver evaluates the envelope slope per cell per step; solving
    the tilt equation each time would dominate the runtime.  The table is
    rebuilt with a doubled range whenever a query escapes it; if the
    underlying solve itself fails, queries are clamped, a warning is
    emitted once, and ``range_escaped`` is set.
    """

    def __init__(self, pot: Potential, lo: float, hi: float, n_nodes: int = 2049):
        self._pot = pot
        self._n = n_nodes
        self.range_escaped = False
        self._build(lo, hi)

    def _build(self, lo, hi):
        if hi - lo < 1e-6:
            mid = 0.5 * (lo + hi)
            lo, hi = mid - 0.5, mid + 0.5
        pot = self._pot
        # Bracket the tilt range whose means cover [lo, hi], then invert
        # the forward map lam -> mean by interpolation with Newton polish.
        # Root-finding per node would redo the quadrature hundreds of
        # times; this way costs four vectorized passes.
        lam_hi = 1.0
        while pot._tilted_stats(lam_hi)[1] < hi:
            if lam_hi >= BRACKET_CAP:
                raise RootNotBracketed(
                    f"mean value {hi:g} not achievable with tilt "
                    f"<= {BRACKET_CAP}")
            lam_hi = min(lam_hi * 2.0, BRACKET_CAP)
        lam_lo = -1.0
        while pot._tilted_stats(lam_lo)[1] > lo:
            if lam_lo <= -BRACKET_CAP:
                raise RootNotBracketed(
                    f"mean value {lo:g} not achievable with tilt "
                    f">= -{BRACKET_CAP}")
            lam_lo = max(lam_lo * 2.0, -BRACKET_CAP)
        lam_grid = np.linspace(lam_lo, lam_hi, self._n)
        _, fwd_means, _ = pot._tilted_stats(lam_grid)

        xs = np.linspace(lo, hi, self._n)
        lams = np.interp(xs, fwd_means, lam_grid)
        var = None
        for _ in range(2):
            _, mean, var = pot._tilted_stats(lams)
            lams = np.clip(lams - (mean - xs) / np.maximum(var, 1e-300),
                           lam_lo, lam_hi)
        self._xs = xs
        self._lams = lams
        self._vars = np.asarray(var)
        self.lo = lo
        self.hi = hi

    def max_curvature(self):
        """Upper bound for d(lam*)/dx over the table range (CFL input)."""
        return float(1.0 / np.min(np.maximum(self._vars, 1e-300)))

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        mn, mx = float(np.min(m)), float(np.max(m))
        while mn < self.lo or mx > self.hi:
            span = self.hi - self.lo
            try:
                self._build(min(mn, self.lo) - 0.5 * span,
                            max(mx, self.hi) + 0.5 * span)
            except (RootNotBracketed, QuadratureDiverged):
                if not self.range_escaped:
                    warnings.warn(
                        "envelope slope queried outside the resolvable "
                        "range; clamping (run marked range-escaped)")
                self.range_escaped = True
                m = np.clip(m, self.lo, self.hi)
                break
            mn, mx = float(np.min(m)), float(np.max(m))
        return np.interp(m, self._xs, self._lams)


# -- built-in families ----------------------------------------------------


def gaussian_potential(quadrature: QuadratureSpec | None = None) -> Potential:
    """Quadratic potential whose reference density is standard normal."""
    c = 0.5 * math.log(2.0 * math.pi)
    return Potential(
        phi=lambda x: 0.5 * np.asarray(x) ** 2 + c,
        phi_prime=lambda x: np.asarray(x, dtype=float),
        phi_double_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        quadrature=quadrature,
        name="gaussian",
    )


def quartic_potential(a: float = 1.0, b: float = 0.0,
                      quadrature: QuadratureSpec | None = None) -> Potential:
    """Potential a*x^4/4 + b*x^2/2, normalized at construction.

    Requires a > 0, or a == 0 with b > 0 (which is a rescaled Gaussian).
    """
    if a < 0 or (a == 0 and b <= 0):
        raise ValueError("need a > 0, or a == 0 with b > 0")
    return Potential(
        phi=lambda x: 0.25 * a * np.asarray(x) ** 4 + 0.5 * b * np.asarray(x) ** 2,
        phi_prime=lambda x: a * np.asarray(x) ** 3 + b * np.asarray(x),
        phi_double_prime=lambda x: 3.0 * a * np.asarray(x) ** 2 + b,
        quadrature=quadrature,
        name="quartic",
    )


def make_potential(name: str, quadrature: QuadratureSpec | None = None,
                   **params) -> Potential:
    """Build a potential by family name ('gaussian' or 'quartic')."""
    if name == "gaussian":
        if params:
            raise ValueError("gaussian potential takes no parameters")
        return gaussian_potential(quadrature)
    if name == "quartic":
        return quartic_potential(params.pop("a", 1.0), params.pop("b", 0.0),
                                 quadrature)
    raise ValueError(f"unknown potential family {name!r}")
