"""Real-lattice primitives.

A lattice is the set ``{G b : b integer}`` for a full-rank square generator
matrix ``G`` (columns are the generators).  This module provides exact
nearest-point search, modulo reduction onto the Voronoi region, dither
sampling uniform over the Voronoi region, and second-moment estimation.

Nearest-point search uses Schnorr-Euchner sphere enumeration on an
LLL-reduced basis, seeded with the rounding (Babai) solution, so the
returned point is an exact minimizer (the reduction is unimodular and only
affects speed).  Equidistant ties are broken toward the lexicographically
smallest integer coefficient vector, which makes the search deterministic
on exact tie inputs (half-integer coordinates and the like).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "LatticeError",
    "LatticeBasis",
    "VoronoiStats",
    "nearest_point",
    "mod_lattice",
    "sample_dither",
    "sample_dither_batch",
    "voronoi_stats",
]

#: relative tolerance for "is a lattice point" / Voronoi membership checks
REL_TOL = 1e-9


class LatticeError(ValueError):
    """Invalid lattice input: bad basis, wrong dimension, non-finite data."""


@njit(cache=True)
def _enumerate_closest(r_upper, target, to_orig, shift, tie_tol):
    """Schnorr-Euchner enumeration for ``argmin_b |target - R b|^2``.

    ``r_upper`` is upper triangular with positive diagonal; ``target`` is the
    search target expressed in the orthogonal frame of the reduced basis.
    The returned coefficients are mapped back to the original basis as
    ``to_orig @ b + shift``; ties within ``tie_tol`` (squared distance) are
    resolved toward the lexicographically smallest mapped vector.
    """
    n = r_upper.shape[0]
    b = np.zeros(n, np.int64)
    step = np.zeros(n, np.int64)
    center = np.zeros(n)
    dist = np.zeros(n)  # squared residual accumulated at levels above k
    best_b = np.zeros(n, np.int64)
    best = np.inf
    have_best = False

    k = n - 1
    center[k] = target[k] / r_upper[k, k]
    b[k] = np.int64(np.rint(center[k]))
    step[k] = 1 if center[k] >= b[k] else -1

    while True:
        resid = r_upper[k, k] * (center[k] - b[k])
        d = dist[k] + resid * resid
        if d <= best + tie_tol:
            if k == 0:
                take = False
                if (not have_best) or d < best - tie_tol:
                    take = True
                else:
                    # exact-tie region: compare mapped coefficient vectors
                    for i in range(n):
                        cand = shift[i]
                        incumbent = shift[i]
                        for j in range(n):
                            cand += to_orig[i, j] * b[j]
                            incumbent += to_orig[i, j] * best_b[j]
                        if cand != incumbent:
                            take = cand < incumbent
                            break
                if take:
                    for i in range(n):
                        best_b[i] = b[i]
                    if d < best:
                        best = d
                    have_best = True
                b[k] += step[k]
                step[k] = -step[k] - (1 if step[k] > 0 else -1)
            else:
                dist[k - 1] = d
                k -= 1
                s = target[k]
                for j in range(k + 1, n):
                    s -= r_upper[k, j] * b[j]
                center[k] = s / r_upper[k, k]
                b[k] = np.int64(np.rint(center[k]))
                step[k] = 1 if center[k] >= b[k] else -1
        else:
            if k == n - 1:
                break
            k += 1
            b[k] += step[k]
            step[k] = -step[k] - (1 if step[k] > 0 else -1)

    out = np.empty(n, np.int64)
    for i in range(n):
        acc = shift[i]
        for j in range(n):
            acc += to_orig[i, j] * best_b[j]
        out[i] = acc
    return out


@njit(cache=True)
def _enumerate_closest_batch(r_upper, targets, to_orig, shifts, tie_tols):
    count = targets.shape[0]
    n = r_upper.shape[0]
    out = np.empty((count, n), np.int64)
    for i in range(count):
        out[i] = _enumerate_closest(r_upper, targets[i], to_orig, shifts[i], tie_tols[i])
    return out


def _lll_reduce(generator, delta=0.99):
    """LLL reduction of the generator columns.

    Returns the unimodular integer matrix ``U`` with ``generator @ U``
    LLL-reduced.  Plain size reduction is not enough here: Construction-A
    bases in Hermite form have Gram-Schmidt norms spread by a factor of the
    field size, which makes sphere enumeration blow up on far targets.
    """
    b = np.array(generator.T, dtype=float)  # rows are basis vectors
    n = b.shape[0]
    u = np.eye(n, dtype=np.int64)
    ortho = np.zeros_like(b)
    mu = np.zeros((n, n))

    def update_gs():
        for i in range(n):
            ortho[i] = b[i]
            for j in range(i):
                denom = ortho[j] @ ortho[j]
                mu[i, j] = (b[i] @ ortho[j]) / denom if denom > 0 else 0.0
                ortho[i] -= mu[i, j] * ortho[j]

    update_gs()
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = int(np.rint(mu[k, j]))
            if q != 0:
                b[k] -= q * b[j]
                u[:, k] -= q * u[:, j]
                update_gs()
        if ortho[k] @ ortho[k] >= (delta - mu[k, k - 1] ** 2) * (ortho[k - 1] @ ortho[k - 1]):
            k += 1
        else:
            b[[k, k - 1]] = b[[k - 1, k]]
            u[:, [k, k - 1]] = u[:, [k - 1, k]]
            update_gs()
            k = max(k - 1, 1)
    return u


class LatticeBasis:
    """Full-rank generator matrix of a real lattice plus search caches.

    The lattice is ``{generator @ b : b integer vector}``.  Rank-deficient or
    non-finite generators are rejected.  For generators that are scaled
    identity matrices the nearest-point search short-circuits to coordinate
    rounding; everything else goes through sphere enumeration.
    """

    def __init__(self, generator, reduction=None):
        generator = np.asarray(generator, dtype=float)
        if generator.ndim != 2 or generator.shape[0] != generator.shape[1]:
            raise LatticeError(f"generator must be square, got shape {generator.shape}")
        if not np.all(np.isfinite(generator)):
            raise LatticeError("generator has non-finite entries")
        n = generator.shape[0]
        if n == 0:
            raise LatticeError("generator must be at least 1x1")
        cond = np.linalg.cond(generator)
        if not np.isfinite(cond) or cond > 1e12:
            raise LatticeError(f"generator is rank deficient or ill conditioned (cond={cond:.3e})")
        self.generator = generator
        self.dimension = n
        self._inv = np.linalg.inv(generator)

        diag = generator[0, 0]
        self._identity_scale = None
        if diag > 0 and np.allclose(generator, diag * np.eye(n), rtol=0, atol=1e-14 * abs(diag)):
            self._identity_scale = float(diag)

        if reduction is not None:
            # caller-provided unimodular transform (e.g. inherited from a
            # related basis); only affects enumeration speed, never results
            u_red = np.asarray(reduction, dtype=np.int64)
            if u_red.shape != (n, n):
                raise LatticeError("reduction transform has the wrong shape")
        elif self._identity_scale is not None:
            u_red = np.eye(n, dtype=np.int64)
        else:
            u_red = _lll_reduce(generator)
        q, r = np.linalg.qr(generator @ u_red.astype(float))
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q = q * signs[np.newaxis, :]
        r = signs[:, np.newaxis] * r
        self._q = np.ascontiguousarray(q)
        self._r = np.ascontiguousarray(r)
        self._u_red = np.ascontiguousarray(u_red)

    def __repr__(self):
        return f"LatticeBasis(dimension={self.dimension})"

    def __eq__(self, other):
        return isinstance(other, LatticeBasis) and np.array_equal(self.generator, other.generator)

    # pickling: rebuild caches from the generator and reduction transform
    def __getstate__(self):
        return (self.generator, self._u_red)

    def __setstate__(self, state):
        generator, reduction = state
        self.__init__(generator, reduction=reduction)

    @property
    def reduction_transform(self):
        """Unimodular transform used for enumeration; reusable by related bases."""
        return self._u_red

    def _check_vector(self, g):
        g = np.asarray(g, dtype=float).reshape(-1)
        if g.shape[0] != self.dimension:
            raise LatticeError(f"vector has dimension {g.shape[0]}, lattice is {self.dimension}-dimensional")
        if not np.all(np.isfinite(g)):
            raise LatticeError("vector has non-finite entries")
        return g

    def _prepare_target(self, g):
        """Pre-shift by a rounded coefficient vector so the residual is small."""
        t = self._inv @ g
        shift = np.rint(t).astype(np.int64)
        resid = g - self.generator @ shift.astype(float)
        return shift, resid

    def nearest_point(self, g, method="auto"):
        """Exact closest lattice point to ``g``.

        Returns ``(b, point)`` with ``point = generator @ b``.  ``method`` is
        ``"auto"`` (rounding for scaled-identity generators, enumeration
        otherwise), ``"round"`` (requires scaled identity) or ``"enum"``.
        """
        g = self._check_vector(g)
        if method not in ("auto", "round", "enum"):
            raise ValueError(f"unknown method {method!r}")
        if method == "round" and self._identity_scale is None:
            raise LatticeError("rounding search requires a scaled-identity generator")
        if method in ("auto", "round") and self._identity_scale is not None:
            scale = self._identity_scale
            # ceil(x - 1/2) rounds halves down = lexicographically smaller b
            b = np.ceil(g / scale - 0.5).astype(np.int64)
            return b, scale * b.astype(float)
        shift, resid = self._prepare_target(g)
        target = self._q.T @ resid
        tie_tol = REL_TOL * (1.0 + float(target @ target))
        b = _enumerate_closest(self._r, np.ascontiguousarray(target), self._u_red, shift, tie_tol)
        return b, self.generator @ b.astype(float)

    def nearest_point_batch(self, G):
        """Vectorized nearest point for a stack of row vectors."""
        G = np.asarray(G, dtype=float)
        if G.ndim != 2 or G.shape[1] != self.dimension:
            raise LatticeError(f"expected (count, {self.dimension}) array, got {G.shape}")
        if not np.all(np.isfinite(G)):
            raise LatticeError("batch has non-finite entries")
        if self._identity_scale is not None:
            b = np.ceil(G / self._identity_scale - 0.5).astype(np.int64)
            return b, self._identity_scale * b.astype(float)
        t = G @ self._inv.T
        shifts = np.rint(t).astype(np.int64)
        resid = G - shifts.astype(float) @ self.generator.T
        targets = resid @ self._q
        tols = REL_TOL * (1.0 + np.einsum("ij,ij->i", targets, targets))
        b = _enumerate_closest_batch(
            self._r,
            np.ascontiguousarray(targets),
            self._u_red,
            np.ascontiguousarray(shifts),
            np.ascontiguousarray(tols),
        )
        return b, b.astype(float) @ self.generator.T

    def mod(self, g):
        """Fold ``g`` into the Voronoi region: ``g - nearest_point(g)``."""
        g = self._check_vector(g)
        _, point = self.nearest_point(g)
        return g - point

    def in_voronoi(self, v, tol=None):
        """True when no lattice point is strictly closer to ``v`` than 0."""
        v = self._check_vector(v)
        tol = REL_TOL if tol is None else tol
        folded = self.mod(v)
        return bool(np.linalg.norm(folded - v) <= tol * (1.0 + np.linalg.norm(v)))

    def contains_point(self, v, tol=None):
        """True when ``v`` is a lattice point (within relative tolerance)."""
        v = self._check_vector(v)
        tol = REL_TOL if tol is None else tol
        b = np.rint(self._inv @ v)
        return bool(np.linalg.norm(self.generator @ b - v) <= tol * (1.0 + np.linalg.norm(v)))


@dataclass(frozen=True)
class VoronoiStats:
    """Covariance of the uniform distribution over a Voronoi region.

    ``second_moment`` is the per-dimension second moment (trace of the
    covariance divided by the dimension); ``sample_count == 0`` marks an
    analytic result rather than a Monte-Carlo estimate.
    """

    second_moment: float
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise LatticeError(f"covariance must be square, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * (1.0 + np.abs(cov).max())):
            raise LatticeError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise LatticeError("covariance must be positive definite")
        expected = float(np.trace(cov)) / cov.shape[0]
        if abs(expected - self.second_moment) > 1e-9 * (1.0 + expected):
            raise LatticeError("second_moment inconsistent with trace(covariance)/dimension")
        object.__setattr__(self, "covariance", cov)

    def scaled(self, factor):
        """Stats of the lattice scaled by ``factor`` (covariance by factor^2)."""
        return VoronoiStats(
            second_moment=self.second_moment * factor**2,
            covariance=self.covariance * factor**2,
            sample_count=self.sample_count,
        )


def nearest_point(basis: LatticeBasis, g, method="auto"):
    """Module-level alias of :meth:`LatticeBasis.nearest_point`."""
    return basis.nearest_point(g, method=method)


def mod_lattice(basis: LatticeBasis, g):
    """Module-level alias of :meth:`LatticeBasis.mod`."""
    return basis.mod(g)


def sample_dither(basis: LatticeBasis, rng):
    """One draw uniform over the Voronoi region.

    Draws uniform over the fundamental parallelepiped (``G @ U[0,1)^n``) and
    folds with the modulo map, which is volume preserving onto the Voronoi
    region, so the result is exactly uniform there.
    """
    w = rng.random(basis.dimension)
    return basis.mod(basis.generator @ w)


def sample_dither_batch(basis: LatticeBasis, count, rng):
    """``count`` independent dither draws, as rows."""
    w = rng.random((count, basis.dimension))
    pts = w @ basis.generator.T
    _, nearest = basis.nearest_point_batch(pts)
    return pts - nearest


def voronoi_stats(basis: LatticeBasis, mode="analytic", n_samples=100_000, rng=None):
    """Second moment and covariance of the Voronoi region.

    ``mode="analytic"`` only applies to scaled-identity generators (hypercubic
    Voronoi region), where the covariance is exactly ``scale^2/12 * I``; it
    raises for anything else rather than silently approximating.
    ``mode="monte-carlo"`` estimates the covariance from ``n_samples`` dither
    draws (symmetrized).
    """
    if mode == "analytic":
        if basis._identity_scale is None:
            raise LatticeError("analytic Voronoi stats require a scaled-identity generator")
        scale = basis._identity_scale
        var = scale**2 / 12.0
        return VoronoiStats(
            second_moment=var,
            covariance=var * np.eye(basis.dimension),
            sample_count=0,
        )
    if mode != "monte-carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("monte-carlo mode requires an rng")
    n_samples = int(n_samples)
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    draws = sample_dither_batch(basis, n_samples, rng)
    cov = draws.T @ draws / n_samples  # dither distribution has zero mean
    cov = 0.5 * (cov + cov.T)
    return VoronoiStats(
        second_moment=float(np.trace(cov)) / basis.dimension,
        covariance=cov,
        sample_count=n_samples,
    )
