"""Stationary random potentials with short- or long-range correlations.

Every realization is piecewise constant on a square cell lattice in physical
space: cell ``(cx, cy)`` covers the points with
``floor(x / cell_size + shift) == (cx, cy)``.  The SRC field draws one
independent sign per cell of size ``eps`` on a randomly shifted lattice.  The
LRC field is a subordinated Gaussian sampled on a grid of spacing
``eps * resolution`` and read by nearest grid point, which is the same cell
structure with shift 1/2.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import erf

from .errors import ResourceLimitError

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
DEFAULT_MEMORY_BUDGET = 1.5e9


def splitmix64(z):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def mix_seed(base_seed, k):
    """Deterministic 64-bit seed for sample ``k`` of a run seeded with ``base_seed``."""
    with np.errstate(over="ignore"):
        z = splitmix64(np.array([int(base_seed) & _MASK64], dtype=np.uint64))
        z = splitmix64(z ^ np.uint64(int(k) & _MASK64))
    return int(z[0])


def _uniforms(seed, count, stream):
    z = np.uint64(int(seed) & _MASK64) ^ np.uint64(stream)
    with np.errstate(over="ignore"):
        h = splitmix64(z + np.arange(1, count + 1, dtype=np.uint64) * np.uint64(0xD1B54A32D192ED03))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def hashed_signs(seed, cx, cy):
    """Independent fair +-1 values keyed on (seed, cx, cy)."""
    cx = np.asarray(cx, dtype=np.int64).astype(np.uint64)
    cy = np.asarray(cy, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = splitmix64(np.uint64(int(seed) & _MASK64) ^ (cx * np.uint64(0x9E3779B97F4A7C15)))
        z = splitmix64(z ^ (cy * np.uint64(0xC2B2AE3D27D4EB4F)))
    return 1.0 - 2.0 * (z >> np.uint64(63)).astype(np.float64)


@dataclass(frozen=True)
class SrcFieldSpec:
    amplitude: float = 1.0

    kind = "src"

    @property
    def bound(self):
        return abs(self.amplitude)

    def covariance(self, lag):
        lag = np.abs(np.asarray(lag, dtype=float))
        return self.amplitude**2 * np.prod(np.clip(1.0 - lag, 0.0, None), axis=-1)


@dataclass(frozen=True)
class LrcFieldSpec:
    alpha: float = 1.0
    kappa_g: float = 1.0
    b: float = 1.0
    resolution: float = 0.125
    max_padding: int = 8
    memory_budget: float = DEFAULT_MEMORY_BUDGET

    kind = "lrc"

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.kappa_g <= 0:
            raise ValueError("kappa_g must be positive")
        if not 0.0 < self.resolution <= 0.25:
            raise ValueError(f"grid resolution must lie in (0, 1/4], got {self.resolution}")

    @property
    def bound(self):
        return abs(self.b)

    def gaussian_covariance(self, lag_norm):
        """Covariance of the underlying unit-variance Gaussian field."""
        a, k = self.alpha, self.kappa_g
        return k * (k ** (-2.0 / a) + np.asarray(lag_norm, dtype=float) ** 2) ** (-a / 2.0)

    def subordinate(self, g):
        return self.b * erf(np.asarray(g) / math.sqrt(2.0))

    def covariance(self, lag):
        """Exact covariance of the subordinated field, b^2 (2/pi) arcsin(R_g / (1 + R_g(0))).

        R_g(0) = kappa_g^2, so the Gaussian field has unit variance only for kappa_g = 1.
        """
        r = np.linalg.norm(np.atleast_1d(np.asarray(lag, dtype=float)), axis=-1)
        var = float(self.gaussian_covariance(0.0))
        return self.b**2 * (2.0 / math.pi) * np.arcsin(self.gaussian_covariance(r) / (1.0 + var))


@dataclass(frozen=True)
class ZeroFieldSpec:
    kind = "zero"
    bound = 0.0


@dataclass(frozen=True, eq=False)
class FieldRealization:
    """One sample of q(x / eps) stored as values on a cell lattice.

    ``cell_values(cx, cy)`` returns the field on lattice cells; calling the
    realization evaluates it at physical points.
    """

    spec: object
    eps: float
    seed: int
    cell_size: float
    shift: np.ndarray
    grid: np.ndarray = None  # LRC only: subordinated values on the sampling grid

    @property
    def kind(self):
        return self.spec.kind

    @property
    def bound(self):
        return self.spec.bound

    def cell_index(self, points):
        pts = np.asarray(points, dtype=float)
        c = np.floor(pts / self.cell_size + self.shift).astype(np.int64)
        return c[..., 0], c[..., 1]

    def cell_values(self, cx, cy):
        if self.kind == "zero":
            return np.zeros(np.broadcast(cx, cy).shape)
        if self.kind == "src":
            return self.spec.amplitude * hashed_signs(self.seed, cx, cy)
        m = self.grid.shape[0]
        return self.grid[np.clip(cx, 0, m - 1), np.clip(cy, 0, m - 1)]

    def __call__(self, points):
        cx, cy = self.cell_index(points)
        return self.cell_values(cx, cy)


def zero_field(eps=1.0):
    return FieldRealization(ZeroFieldSpec(), float(eps), 0, float(eps), np.zeros(2))


def sample_src(spec, eps, seed):
    """Sign field of amplitude ``spec.amplitude`` on a shifted lattice of cell size eps."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    shift = _uniforms(seed, 2, 0x5EED)
    return FieldRealization(spec, float(eps), int(seed), float(eps), shift)


def _wrapped_lags(P, step):
    k = np.arange(P)
    return np.minimum(k, P - k) * step


@lru_cache(maxsize=8)
def _embedding_spectrum(alpha, kappa_g, resolution, m, max_padding, memory_budget):
    base = 2 * (m - 1)
    factor = 1
    while True:
        P = factor * base
        required = 6 * 8 * P * P
        if required > memory_budget:
            raise ResourceLimitError(
                f"circulant embedding of size {P}x{P} needs about {required / 1e9:.2f} GB "
                f"(budget {memory_budget / 1e9:.2f} GB)",
                required_bytes=required,
            )
        spec = LrcFieldSpec(alpha, kappa_g, 1.0, resolution)
        lx = _wrapped_lags(P, resolution)
        c = spec.gaussian_covariance(np.hypot(lx[:, None], lx[None, :]))
        lam = np.fft.rfft2(c).real
        neg = -lam[lam < 0].sum()
        # full-spectrum energy: interior rfft columns stand for two full-spectrum entries
        total = np.abs(lam).sum()
        frac = neg / total if total > 0 else 0.0
        if frac <= 1e-5 or factor >= max_padding:
            break
        factor *= 2
    if frac > 1e-6:
        log.warning(
            "circulant embedding (P=%d) has negative eigenvalues holding %.2e of the spectrum; clipped",
            P,
            frac,
        )
    lam = np.sqrt(np.clip(lam, 0.0, None))
    lam.setflags(write=False)
    return lam, P, frac


def embedding_info(spec, eps):
    m = lrc_grid_size(spec, eps)
    _, P, frac = _embedding_spectrum(
        spec.alpha, spec.kappa_g, spec.resolution, m, spec.max_padding, spec.memory_budget
    )
    return {"grid_points": m, "embedding_size": P, "negative_fraction": frac}


def lrc_grid_size(spec, eps):
    return int(math.ceil(1.0 / (eps * spec.resolution) - 1e-9)) + 1


def sample_gaussian_grid(spec, eps, seed):
    """Unit-variance Gaussian field on the grid ``k * eps * resolution``, k = 0..m-1."""
    m = lrc_grid_size(spec, eps)
    sqrt_lam, P, _ = _embedding_spectrum(
        spec.alpha, spec.kappa_g, spec.resolution, m, spec.max_padding, spec.memory_budget
    )
    rng = np.random.default_rng(int(seed) & _MASK64)
    w = rng.standard_normal((P, P))
    g = np.fft.irfft2(sqrt_lam * np.fft.rfft2(w), s=(P, P))
    return np.ascontiguousarray(g[:m, :m])


def sample_lrc(spec, eps, seed):
    """Subordinated Gaussian field Phi(g) read by nearest grid point."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    g = sample_gaussian_grid(spec, eps, seed)
    grid = spec.subordinate(g)
    grid.setflags(write=False)
    return FieldRealization(spec, float(eps), int(seed), float(eps * spec.resolution), np.full(2, 0.5), grid)


def sample_field(spec, eps, seed):
    if spec.kind == "src":
        return sample_src(spec, eps, seed)
    if spec.kind == "lrc":
        return sample_lrc(spec, eps, seed)
    return zero_field(eps)


def analytic_sigma2(spec):
    """Integral of the SRC covariance over the plane."""
    return float(spec.amplitude) ** 2


def hermite_c1(spec):
    """First normalized Hermite coefficient of the subordination map."""
    val, _ = integrate.quad(
        lambda s: s * spec.subordinate(s) * math.exp(-0.5 * s * s), -np.inf, np.inf, epsabs=1e-13
    )
    return val / math.sqrt(2.0 * math.pi)


def analytic_kappa(spec):
    """Tail constant of the subordinated covariance, c1^2 * kappa_g."""
    return hermite_c1(spec) ** 2 * spec.kappa_g


def covariance_probe(realizations, lags, points):
    """Ensemble estimate of E q(x) q(x + lag) with standard errors.

    Parameters
    ----------
    realizations : list of FieldRealization
        At least two samples sharing one spec.
    lags : array_like, shape (L, 2)
        Lags in field units (multiples of eps).
    points : array_like, shape (P, 2)
        Base points in physical coordinates.

    Returns
    -------
    mean, stderr : ndarray, shape (L,)
        Space-and-ensemble averages and the standard error across samples.
    """
    if len(realizations) < 2:
        raise ValueError("covariance probe needs at least two realizations")
    spec = realizations[0].spec
    if any(f.spec != spec for f in realizations):
        raise ValueError("realizations come from different field specs")
    lags = np.atleast_2d(np.asarray(lags, dtype=float))
    pts = np.asarray(points, dtype=float)
    per_sample = np.empty((len(realizations), len(lags)))
    for s, f in enumerate(realizations):
        q = f(pts)
        for l, lag in enumerate(lags):
            per_sample[s, l] = np.mean(q * f(pts + f.eps * lag))
    mean = per_sample.mean(axis=0)
    stderr = per_sample.std(axis=0, ddof=1) / math.sqrt(len(realizations))
    return mean, stderr
