"""Variance function G of the sphere-average field, its inverse, and the
three-case pairwise covariance kernel, assembled into factorizable matrices.

The field is indexed by spheres (center in R^4, radius > 0).  Its variance at
radius r is

    G(r) = (-1/(4 pi^2)) * (2 I1(r) K1(r) + 2 I2(r) K0(r) - 1)
                         / (I1(r)^2 - I0(r) I2(r)),

strictly decreasing from +inf (like -log(r)/(2 pi^2) + const as r -> 0) to 0.
Covariances exist in closed form for exactly three sphere-pair geometries:
concentric, disjoint closures, and nested.  Overlapping or tangent spheres are
rejected; experiments are laid out to avoid that regime.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional

import numpy as np

from . import specfun
from .errors import DomainError, FactorizationError, GeometryError

TWO_PI_SQ = 2.0 * math.pi**2
FOUR_PI_SQ = 4.0 * math.pi**2

G_SERIES_CUTOFF = 0.5
G_R_MAX = 340.0  # turan(r) ~ e^(2r) overflows float64 past ~354
G_R_MIN = 1e-300
# G(r) = (-log r + G_ASYMPTOTIC_OFFSET)/(2 pi^2) + O(r^2 log r) as r -> 0
G_ASYMPTOTIC_OFFSET = 0.5 - specfun.EULER_GAMMA + math.log(2.0)

# Escalation ladder for the Cholesky jitter, as multiples of mean(diagonal).
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)

_INV_T_TOL = 1e-13  # green_g_inv residual target, relative to max(1, t)


@dataclass(frozen=True)
class SphereSpec:
    """One sphere-average observation: a center in R^4 plus a radius."""

    center: tuple
    radius: float

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if len(center) != 4 or not all(math.isfinite(c) for c in center):
            raise DomainError("covariance.SphereSpec: center must be 4 finite coordinates")
        radius = float(self.radius)
        if not (math.isfinite(radius) and radius > 0.0):
            raise DomainError("covariance.SphereSpec: radius must be finite and > 0")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)


class GeometryCase(Enum):
    CONCENTRIC = "concentric"
    DISJOINT = "disjoint"
    NESTED = "nested"
    UNSUPPORTED = "unsupported"


class Geometry(NamedTuple):
    case: GeometryCase
    outer: Optional[int]  # index (0 or 1) of the enclosing sphere when NESTED


def classify(a: SphereSpec, b: SphereSpec) -> Geometry:
    """Classify a sphere pair into the supported covariance geometries.

    Disjointness is strict (closures must not touch).  Nesting includes
    boundary-touching inclusion (|x-y| + r_inner == r_outer).  Anything else
    (overlapping or externally tangent spheres) is UNSUPPORTED: no covariance
    formula exists for it.
    """
    d = math.dist(a.center, b.center)
    if d == 0.0:
        return Geometry(GeometryCase.CONCENTRIC, None)
    if d > a.radius + b.radius:
        return Geometry(GeometryCase.DISJOINT, None)
    if d + min(a.radius, b.radius) <= max(a.radius, b.radius):
        return Geometry(GeometryCase.NESTED, 0 if a.radius >= b.radius else 1)
    return Geometry(GeometryCase.UNSUPPORTED, None)


def green_g(r):
    """Variance G(r) of the sphere average at radius r (vectorized).

    For r <= 0.5 the numerator and the Turan denominator are evaluated by
    exact-rational series in u = (r/2)^2, which removes the cancellation that
    otherwise destroys the quotient as r -> 0 (both tend to 0 like r^2 times
    logs).  Above 0.5 the direct Bessel formula is safe.
    """
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("covariance.green_g: r must be finite")
    if np.any(arr <= 0.0):
        raise DomainError("covariance.green_g: r must be > 0 (G diverges at 0)")
    if np.any(arr > G_R_MAX):
        raise DomainError(
            f"covariance.green_g: r > {G_R_MAX} overflows the Turan denominator"
        )
    scalar = arr.ndim == 0
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    small = flat <= G_SERIES_CUTOFF
    if small.any():
        x = flat[small]
        u = 0.25 * x * x
        big_l = np.log(0.5 * x) + specfun.EULER_GAMMA
        num = np.polynomial.polynomial.polyval(u, specfun.GREEN_NUMERATOR_SERIES_COEFFS)
        den = np.polynomial.polynomial.polyval(u, specfun.TURAN_SERIES_COEFFS)
        out[small] = -(num / den + 2.0 * big_l) / FOUR_PI_SQ
    if (~small).any():
        x = flat[~small]
        i0 = specfun.bessel_i(0, x)
        i1 = specfun.bessel_i(1, x)
        i2 = specfun.bessel_i(2, x)
        k0 = specfun.bessel_k(0, x)
        k1 = specfun.bessel_k(1, x)
        numerator = 2.0 * i1 * k1 + 2.0 * i2 * k0 - 1.0
        out[~small] = -numerator / (FOUR_PI_SQ * (i1 * i1 - i0 * i2))
    out = out.reshape(arr.shape)
    return float(out) if scalar else out


_T_RANGE = None  # lazy (G(G_R_MAX), G(G_R_MIN))


def _t_range():
    global _T_RANGE
    if _T_RANGE is None:
        _T_RANGE = (green_g(G_R_MAX), green_g(G_R_MIN))
    return _T_RANGE


def green_g_inv(t):
    """Radius r with G(r) = t, by log-space bisection on the monotone G.

    Seeded from the small-r asymptotic r0 = exp(offset - 2 pi^2 t); the
    bracket is expanded geometrically and then bisected in log r until the
    residual satisfies |G(r) - t| <= 1e-13 * max(1, t) or the bracket is
    exhausted at relative width ~1e-15.
    """
    t = float(t)
    if not (math.isfinite(t) and t > 0.0):
        raise DomainError("covariance.green_g_inv: t must be finite and > 0")
    t_min, t_max = _t_range()
    if not (t_min <= t <= t_max):
        raise DomainError(
            f"covariance.green_g_inv: t = {t!r} outside the representable range "
            f"[{t_min:.3e}, {t_max:.3e}] of G on [{G_R_MIN:.0e}, {G_R_MAX}]"
        )
    r0 = math.exp(min(max(G_ASYMPTOTIC_OFFSET - TWO_PI_SQ * t, math.log(G_R_MIN) + 1.0), math.log(G_R_MAX) - 1.0))
    lo = hi = r0  # G(lo) >= t >= G(hi) wanted, with lo <= hi (G decreasing)
    while green_g(lo) < t:
        lo *= 0.25
        if lo < G_R_MIN:
            lo = G_R_MIN
            break
    while green_g(hi) > t:
        hi *= 4.0
        if hi > G_R_MAX:
            hi = G_R_MAX
            break
    log_lo, log_hi = math.log(lo), math.log(hi)
    tol = _INV_T_TOL * max(1.0, t)
    mid = 0.5 * (log_lo + log_hi)
    for _ in range(200):
        mid = 0.5 * (log_lo + log_hi)
        gm = green_g(math.exp(mid))
        if abs(gm - t) <= tol or (log_hi - log_lo) < 1e-15:
            break
        if gm > t:
            log_lo = mid
        else:
            log_hi = mid
    return math.exp(mid)


def kernel(a: SphereSpec, b: SphereSpec) -> float:
    """Covariance of the sphere averages indexed by a and b.

    Concentric -> G(larger radius); disjoint closures -> K0(|x-y|)/(2 pi^2);
    nested (outer radius R, center distance d) ->
        I0(d) G(R) - I2(d) / (4 pi^2 (I1(R)^2 - I0(R) I2(R))).
    Symmetric in its arguments; raises GeometryError on unsupported pairs.
    """
    geo = classify(a, b)
    if geo.case is GeometryCase.UNSUPPORTED:
        raise GeometryError(
            f"covariance.kernel: no covariance formula for overlapping/tangent spheres {a} and {b}"
        )
    if geo.case is GeometryCase.CONCENTRIC:
        return float(green_g(max(a.radius, b.radius)))
    d = math.dist(a.center, b.center)
    if geo.case is GeometryCase.DISJOINT:
        return specfun.bessel_k(0, d) / TWO_PI_SQ
    outer = (a, b)[geo.outer]
    return float(
        specfun.bessel_i(0, d) * green_g(outer.radius)
        - specfun.bessel_i(2, d) / (FOUR_PI_SQ * specfun.turan(outer.radius))
    )


def kernel_matrix(centers, radii):
    """Pairwise kernel values over arrays of centers (k,4) and radii (k,).

    Vectorized with value compression: Bessel evaluations run once per unique
    (distance, outer radius) combination, which collapses lattice grids from
    O(k^2) special-function calls to a few thousand.  Raises GeometryError
    naming the first unsupported index pair.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rsum = radii[:, None] + radii[None, :]
    rmax = np.maximum(radii[:, None], radii[None, :])
    rmin = np.minimum(radii[:, None], radii[None, :])
    same = dist == 0.0
    disjoint = dist > rsum
    nested = (~same) & (dist + rmin <= rmax)
    supported = same | disjoint | nested
    if not supported.all():
        i, j = map(int, np.argwhere(~supported)[0])
        raise GeometryError(
            "covariance.assemble: unsupported (overlapping/tangent) sphere pair at "
            f"indices ({i}, {j}): centers distance {dist[i, j]:.6g}, radii "
            f"({radii[i]:.6g}, {radii[j]:.6g})"
        )
    out = np.zeros_like(dist)
    if disjoint.any():
        uniq, inv = np.unique(dist[disjoint], return_inverse=True)
        out[disjoint] = (specfun.bessel_k(0, uniq) / TWO_PI_SQ)[inv]
    inside = same | nested  # one formula: at d = 0 it reduces exactly to G(rmax)
    if inside.any():
        d_in = dist[inside]
        r_out = rmax[inside]
        vals = np.empty_like(d_in)
        for r in np.unique(r_out):
            m = r_out == r
            uniq, inv = np.unique(d_in[m], return_inverse=True)
            g = float(green_g(r))
            tu = float(specfun.turan(r))
            vals[m] = (specfun.bessel_i(0, uniq) * g
                       - specfun.bessel_i(2, uniq) / (FOUR_PI_SQ * tu))[inv]
        out[inside] = vals
    return out


@dataclass
class CovMatrix:
    """Symmetric PSD covariance matrix over an ordered list of SphereSpecs.

    ``chol`` is the lower Cholesky factor of entries + jitter_applied * I;
    assemble() always factors, so downstream samplers can rely on it.
    """

    specs: List[SphereSpec]
    entries: np.ndarray
    jitter_applied: float = 0.0
    chol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def size(self):
        return len(self.specs)


def factor_with_jitter(entries):
    """Cholesky factor through the jitter ladder; (L, jitter_applied)."""
    scale = float(np.mean(np.diag(entries)))
    for delta in JITTER_LADDER:
        jitter = delta * scale
        shifted = entries if jitter == 0.0 else entries + jitter * np.eye(len(entries))
        try:
            return np.linalg.cholesky(shifted), jitter
        except np.linalg.LinAlgError:
            continue
    eig_min = float(np.linalg.eigvalsh(entries).min())
    raise FactorizationError(
        "covariance.assemble: Cholesky failed at maximum jitter "
        f"{JITTER_LADDER[-1]:.0e}*mean(diag); most negative eigenvalue ~ {eig_min:.3e}"
    )


def assemble(specs) -> CovMatrix:
    """Build and factor the covariance matrix of a supported sphere family."""
    specs = list(specs)
    if not specs:
        raise DomainError("covariance.assemble: need at least one SphereSpec")
    centers = np.array([s.center for s in specs])
    radii = np.array([s.radius for s in specs])
    entries = kernel_matrix(centers, radii)
    chol, jitter = factor_with_jitter(entries)
    return CovMatrix(specs=specs, entries=entries, jitter_applied=jitter, chol=chol)


@dataclass
class KcCaseStats:
    count: int = 0
    sup_ratio: float = 0.0
    max_variance: float = 0.0


@dataclass
class KcReport:
    """Empirical Hoelder-type covariance-difference constants.

    For each supported pair the statistic is

        Var(X(a) - X(b)) * min(r_a, r_b) / (|x_a - x_b| + |r_a - r_b|),

    whose supremum per geometry case is the empirical constant in the local
    regularity bound.  Degenerate pairs (identical index: zero denominator)
    are verified to have zero variance difference and counted separately.
    """

    cases: dict
    skipped_unsupported: int
    degenerate_pairs: int
    max_degenerate_variance: float

    def to_dict(self):
        return {
            "cases": {
                name: {
                    "count": st.count,
                    "sup_ratio": st.sup_ratio,
                    "max_variance": st.max_variance,
                }
                for name, st in self.cases.items()
            },
            "skipped_unsupported": self.skipped_unsupported,
            "degenerate_pairs": self.degenerate_pairs,
            "max_degenerate_variance": self.max_degenerate_variance,
        }


def kc_difference_bound(samples) -> KcReport:
    """Sweep (a, b) sphere pairs and report per-case supremum ratios."""
    cases = {
        "concentric": KcCaseStats(),
        "disjoint": KcCaseStats(),
        "nested": KcCaseStats(),
    }
    skipped = 0
    degenerate = 0
    max_degen_var = 0.0
    for a, b in samples:
        geo = classify(a, b)
        if geo.case is GeometryCase.UNSUPPORTED:
            skipped += 1
            continue
        variance = float(green_g(a.radius) + green_g(b.radius) - 2.0 * kernel(a, b))
        denom = math.dist(a.center, b.center) + abs(a.radius - b.radius)
        if denom == 0.0:
            degenerate += 1
            max_degen_var = max(max_degen_var, abs(variance))
            continue
        ratio = abs(variance) * min(a.radius, b.radius) / denom
        st = cases[geo.case.value]
        st.count += 1
        st.sup_ratio = max(st.sup_ratio, ratio)
        st.max_variance = max(st.max_variance, abs(variance))
    return KcReport(
        cases=cases,
        skipped_unsupported=skipped,
        degenerate_pairs=degenerate,
        max_degenerate_variance=max_degen_var,
    )


def default_kc_samples():
    """Grid of sphere pairs covering the three proof cases plus degenerates."""
    out = []
    origin = (0.0, 0.0, 0.0, 0.0)
    eps_grid = np.geomspace(0.01, 0.5, 12)
    # Case 1: common center, varying radii (includes eps1 == eps2 degenerates).
    for e1 in eps_grid:
        for e2 in eps_grid:
            out.append((SphereSpec(origin, float(e1)), SphereSpec(origin, float(e2))))
    # Case 2: disjoint closures at several separation multiples.
    for e1 in eps_grid[::2]:
        for e2 in eps_grid[::2]:
            for mult in (1.05, 1.5, 2.0, 4.0, 8.0):
                d = mult * (e1 + e2)
                out.append(
                    (SphereSpec(origin, float(e1)), SphereSpec((d, 0.0, 0.0, 0.0), float(e2)))
                )
    # Case 3: nested at several depth fractions (eta = 1 touches the boundary).
    for e1 in np.geomspace(0.05, 0.5, 8):
        for rho in (0.1, 0.3, 0.5):
            e2 = rho * e1
            for eta in (0.0, 0.25, 0.5, 0.75, 1.0):
                d = eta * (e1 - e2)
                out.append(
                    (SphereSpec(origin, float(e1)), SphereSpec((d, 0.0, 0.0, 0.0), float(e2)))
                )
    return out
