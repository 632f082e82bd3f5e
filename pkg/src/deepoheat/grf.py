"""Gaussian random field sampling of training power maps, and uniform HTC pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PowerMap


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GrfSpec:
    """Squared-exponential GRF on an m×m grid spanning the unit square."""

    m: int = 21
    length_scale: float = 0.3
    jitter: float = 1e-8

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("grid size must be ≥ 1")
        if not self.length_scale > 0:
            raise ValueError("length scale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be ≥ 0")

    def points(self) -> np.ndarray:
        """Grid points, (m², 2), ordered with the first coordinate slowest."""
        t = np.linspace(0.0, 1.0, self.m) if self.m > 1 else np.zeros(1)
        X, Y = np.meshgrid(t, t, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


def rbf_kernel(xp: np.ndarray, xq: np.ndarray, length_scale: float) -> np.ndarray:
    d2 = ((xp[:, None, :] - xq[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * length_scale ** 2))


def rbf_covariance(spec: GrfSpec, points: np.ndarray | None = None) -> np.ndarray:
    pts = spec.points() if points is None else np.asarray(points, dtype=float)
    K = rbf_kernel(pts, pts, spec.length_scale)
    K[np.diag_indices_from(K)] += spec.jitter
    return K


def cholesky_factor(spec: GrfSpec) -> np.ndarray:
    K = rbf_covariance(spec)
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise CholeskyError(f"covariance is not positive definite with jitter {spec.jitter:g}; "
                            "increase the jitter") from None


class GrfSampler:
    """Seeded sampler; the Cholesky factor is computed once."""

    def __init__(self, spec: GrfSpec, seed=None, rng=None):
        self.spec = spec
        self.L = cholesky_factor(spec)
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def sample(self, n: int) -> np.ndarray:
        """n fields of shape (m, m), indexed [i, j] along (x, y)."""
        m = self.spec.m
        z = self.rng.standard_normal((m * m, n))
        return (self.L @ z).T.reshape(n, m, m)


def sample_grf(spec: GrfSpec, n: int, seed=None) -> np.ndarray:
    return GrfSampler(spec, seed).sample(n)


def grf_to_power(sample, p_max: float = 1.0, rescale: bool = True, surface: str = "zmax",
                 unit_power_watts: float = 6.25e-6) -> PowerMap:
    """Min-max rescale a GRF sample into a nonnegative unit-power map.

    With ``rescale=False`` the raw values pass through as a signed map, where
    negative entries act as heat sinks (ablation only).
    """
    if rescale:
        return PowerMap(rescale_to_power(sample, p_max), surface=surface, units="unit",
                        unit_power_watts=unit_power_watts)
    return PowerMap(sample, surface=surface, units="unit", unit_power_watts=unit_power_watts, signed=True)


def rescale_to_power(sample, p_max: float = 1.0) -> np.ndarray:
    """Affine map of ``sample`` onto [0, p_max]; constant samples map to p_max/2.

    Accepts a single field or a stack (n, m, m), rescaling each field separately.
    """
    s = np.asarray(sample, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("sample must be finite")
    single = s.ndim == 2
    s = s[None] if single else s
    lo = s.min(axis=(1, 2), keepdims=True)
    hi = s.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    out = np.where(span > 0, (s - lo) / np.where(span > 0, span, 1.0), 0.5) * p_max
    return out[0] if single else out


def sample_htc_pairs(lo: float, hi: float, n: int, seed=None, rng=None) -> np.ndarray:
    """n i.i.d. uniform (h_top, h_bottom) pairs from [lo, hi]²."""
    if lo > hi:
        raise ValueError("need lo ≤ hi")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(n, 2))
