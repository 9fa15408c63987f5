"""Exact Gaussian sampling of the sphere-average field.

Three routes, all exact in law:

* ``sample_joint``: Cholesky transform of i.i.d. normals against an assembled
  covariance matrix.
* ``radial_bm``: the field at a fixed center is a standard Brownian motion in
  the time variable t = G(radius), so a path over a time grid is a cumulative
  sum of independent Gaussian increments (the first increment from t = 0).
* ``hierarchical_sample``: grids with lattice spacing > 2 * coarsest radius;
  the coarse level is drawn jointly (all pairs disjoint), then each center is
  refined independently with Brownian increments.  Independence across centers
  is exact because the refinement annuli around distinct centers are disjoint
  under the spacing condition.

Determinism: every stream is a PCG64 generator keyed by (seed, stream_id);
substreams derive ids by hashing stable key tuples (blake2s), so enlarging a
grid never perturbs the fine-level increments of existing centers.  Gaussian
variates use the inverse-CDF transform (scipy ndtri) of (j + 0.5)/2^53
uniforms; the choice is frozen because outputs are compared byte-for-byte
across runs.
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtri

from . import covariance
from .covariance import CovMatrix, SphereSpec
from .errors import DomainError, ParameterError, StateError

_MASK64 = (1 << 64) - 1


def _stable_hash64(parts) -> int:
    data = repr(tuple(parts)).encode()
    return int.from_bytes(hashlib.blake2s(data, digest_size=8).digest(), "big")


@dataclass(frozen=True)
class RngStream:
    """Deterministic, non-overlapping pseudo-random stream id pair."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        entropy = [self.seed & _MASK64, self.stream_id & _MASK64]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def substream(self, *keys) -> "RngStream":
        return RngStream(self.seed, _stable_hash64((self.stream_id,) + keys))


def standard_normal(gen: np.random.Generator, shape) -> np.ndarray:
    """Inverse-CDF normals from 53-bit uniforms strictly inside (0, 1)."""
    u = (gen.integers(0, 1 << 53, size=shape, dtype=np.int64) + 0.5) * 2.0**-53
    return ndtri(u)


def cholesky(cov: CovMatrix) -> np.ndarray:
    """Lower factor L with L L^T = entries + jitter*I (jitter ladder of assemble)."""
    if cov.chol is None:
        cov.chol, cov.jitter_applied = covariance.factor_with_jitter(cov.entries)
    return cov.chol


def sample_joint(cov: CovMatrix, n_draws: int, rng: RngStream) -> np.ndarray:
    """n_draws i.i.d. rows from the centered Gaussian with covariance cov."""
    if cov.chol is None:
        raise StateError(
            "sampler.sample_joint: covariance is not factorized; call assemble or cholesky first"
        )
    if n_draws <= 0:
        raise DomainError("sampler.sample_joint: n_draws must be positive")
    z = standard_normal(rng.generator(), (int(n_draws), cov.size))
    return z @ cov.chol.T


@dataclass
class RadialPath:
    """Time-changed sphere-average process at one center: B(t) = X(G^{ -1}(t))."""

    center: tuple
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or np.any(times <= 0.0) or np.any(np.diff(times) <= 0.0):
            raise DomainError("sampler.RadialPath: times must be positive and strictly increasing")
        if values.shape != times.shape:
            raise DomainError("sampler.RadialPath: values and times must have equal length")
        self.times = times
        self.values = values


def radial_bm(center, times, rng: RngStream) -> RadialPath:
    """Brownian path over a positive increasing time grid; B(t0) ~ N(0, t0)."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(times <= 0.0) or np.any(np.diff(times) <= 0.0):
        raise DomainError("sampler.radial_bm: times must be positive and strictly increasing")
    dt = np.diff(times, prepend=0.0)
    z = standard_normal(rng.generator(), times.shape)
    return RadialPath(tuple(float(c) for c in center), times, np.cumsum(np.sqrt(dt) * z))


def radial_bm_batch(times, n_paths: int, gen: np.random.Generator) -> np.ndarray:
    """(n_paths, len(times)) Brownian paths; law identical for every center."""
    times = np.asarray(times, dtype=float)
    dt = np.diff(times, prepend=0.0)
    z = standard_normal(gen, (int(n_paths), times.size))
    return np.cumsum(np.sqrt(dt) * z, axis=1)


@dataclass
class FieldGrid:
    """Sphere-average samples over a lattice of centers at decreasing radii."""

    centers: np.ndarray          # (n, 4)
    levels: tuple                # radii, strictly decreasing
    values: np.ndarray           # (n, len(levels))
    seed: int
    spacing: float
    cell_volume: Optional[float] = None


def hypercube_centers(m_per_side: int, side: float = 1.0, origin=0.0) -> np.ndarray:
    """Centers of the m^4 cells partitioning [origin, origin+side]^4."""
    if m_per_side < 1:
        raise ParameterError("sampler.hypercube_centers: m_per_side must be >= 1")
    idx = np.indices((m_per_side,) * 4).reshape(4, -1).T
    return origin + (idx + 0.5) * (side / m_per_side)


def min_spacing(centers) -> float:
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if n < 2:
        return math.inf
    best = math.inf
    block = max(1, int(2e7) // max(n, 1))
    for start in range(0, n, block):
        chunk = centers[start:start + block]
        diff = chunk[:, None, :] - centers[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        # mask the diagonal of this block
        for local, absolute in enumerate(range(start, min(start + block, n))):
            d2[local, absolute] = math.inf
        best = min(best, float(np.sqrt(d2.min())))
    return best


def _validate_hierarchy(centers, radii, spacing):
    radii = tuple(float(r) for r in radii)
    if len(radii) == 0 or any(r <= 0 for r in radii) or any(
        radii[i] <= radii[i + 1] for i in range(len(radii) - 1)
    ):
        raise ParameterError(
            "sampler.hierarchical_sample: radii must be positive and strictly decreasing"
        )
    if spacing is None:
        spacing = min_spacing(centers)
    if not spacing > 2.0 * radii[0]:
        raise ParameterError(
            "sampler.hierarchical_sample: lattice spacing must strictly exceed twice the "
            f"coarsest radius (disjoint-annuli condition); got spacing {spacing:.6g} with "
            f"coarsest radius {radii[0]:.6g}"
        )
    return radii, spacing


def coarse_covariance(centers, radius: float) -> CovMatrix:
    """Assembled (and factored) covariance of the coarsest level."""
    specs = [SphereSpec(tuple(c), float(radius)) for c in np.asarray(centers, dtype=float)]
    return covariance.assemble(specs)


def hierarchical_draws(
    centers,
    radii,
    rng: RngStream,
    n_draws: int,
    spacing: Optional[float] = None,
    coarse: Optional[CovMatrix] = None,
) -> Tuple[np.ndarray, CovMatrix]:
    """Batched exact draws of the grid field; returns ((n_draws, n, L), coarse).

    Passing a previously assembled ``coarse`` skips re-factorization when many
    replications share one geometry.  Fine increments use one substream per
    (center index, purpose), so extending the center list leaves existing
    centers' increments unchanged.
    """
    centers = np.asarray(centers, dtype=float)
    radii, spacing = _validate_hierarchy(centers, radii, spacing)
    if coarse is None:
        coarse = coarse_covariance(centers, radii[0])
    base = sample_joint(coarse, n_draws, rng.substream("coarse"))
    n = centers.shape[0]
    levels = len(radii)
    out = np.empty((int(n_draws), n, levels))
    out[:, :, 0] = base
    if levels > 1:
        g_levels = covariance.green_g(np.asarray(radii))
        dts = np.diff(g_levels)  # positive: radii decrease, G increases
        sq = np.sqrt(dts)
        for i in range(n):
            gen = rng.substream("fine", i).generator()
            z = standard_normal(gen, (int(n_draws), levels - 1))
            out[:, i, 1:] = out[:, i, :1] + np.cumsum(sq * z, axis=1)
    return out, coarse


def hierarchical_sample(
    centers,
    radii,
    rng: RngStream,
    spacing: Optional[float] = None,
    cell_volume: Optional[float] = None,
    coarse: Optional[CovMatrix] = None,
) -> FieldGrid:
    """One exact joint realization of the grid field as a FieldGrid."""
    centers = np.asarray(centers, dtype=float)
    radii_t, spacing_v = _validate_hierarchy(centers, radii, spacing)
    draws, _ = hierarchical_draws(
        centers, radii_t, rng, n_draws=1, spacing=spacing_v, coarse=coarse
    )
    return FieldGrid(
        centers=centers,
        levels=radii_t,
        values=draws[0],
        seed=rng.seed,
        spacing=spacing_v,
        cell_volume=cell_volume,
    )
