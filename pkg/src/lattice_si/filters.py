"""Spatial filter chain and rate functionals for side-information coding.

Everything in here is deterministic matrix algebra on one channel
realization: covariance factorizations, the Wiener (LMMSE) filter for the
auxiliary vector, the transmitter/SI/receiver filters, the effective-noise
covariance seen by the lattice decoder, the inflation filter that maps it
back onto the dither covariance, and the achievable-rate formulas that tie
the chain together.

Conventions: the channel input is covariance-constrained by ``(1/2) S_in``
per symbol, interference is Gaussian with covariance ``(1/2) S_int``
(block-diagonal over the ``T`` symbols of a codeword), noise is Gaussian
with covariance ``(1/2) I``.  All rates are in bits per channel use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

__all__ = [
    "FilterDesignError",
    "CovarianceSpec",
    "FilterContext",
    "ScalarSlowAssignment",
    "PerSymbolAssignment",
    "build_input_covariance",
    "factor_covariance",
    "lmmse_filter",
    "la_gpc_rate",
    "transmit_filter",
    "si_rx_filters",
    "effective_noise_covariance",
    "inflation_filter",
    "dpc_assignment",
    "interference_free_rate",
    "scalar_slow_fading_assignment",
    "static_filter_parts",
    "resolve_assignment",
    "realize_filter_context",
    "build_filter_context",
    "validate_context",
]

_RTOL = 1e-9


class FilterDesignError(ValueError):
    """Inconsistent dimensions, non-PSD covariances, bad configuration."""


def _as_matrix(x, shape):
    """Coerce scalars / 0 to a zero matrix of the expected shape."""
    if np.isscalar(x):
        out = np.zeros(shape)
        if x != 0:
            out[np.diag_indices(min(shape))] = x
        return out
    x = np.asarray(x, dtype=float)
    if x.shape != shape:
        raise FilterDesignError(f"expected shape {shape}, got {x.shape}")
    return x


def _symmetrize(a):
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class CovarianceSpec:
    """Input and interference covariance constraints for one configuration.

    ``input_covariance`` is the per-symbol constraint (the channel input is
    limited by half of it); ``interference_covariance`` is the full
    ``MT x MT`` block-diagonal matrix whose half is the interference
    covariance; ``num_symbols`` is the codeword length ``T``.
    """

    input_covariance: np.ndarray
    interference_covariance: np.ndarray
    num_symbols: int

    def __post_init__(self):
        s_in = _symmetrize(np.asarray(self.input_covariance, dtype=float))
        if s_in.ndim != 2 or s_in.shape[0] != s_in.shape[1]:
            raise FilterDesignError("input_covariance must be square")
        t = int(self.num_symbols)
        if t < 1:
            raise FilterDesignError("num_symbols must be positive")
        m = s_in.shape[0]
        s_int = np.asarray(self.interference_covariance, dtype=float)
        if np.isscalar(self.interference_covariance) or s_int.ndim == 0:
            s_int = float(s_int) * np.eye(m * t)
        s_int = _symmetrize(s_int)
        if s_int.shape != (m * t, m * t):
            raise FilterDesignError(
                f"interference_covariance must be {(m * t, m * t)}, got {s_int.shape}"
            )
        for mat, name in ((s_in, "input_covariance"), (s_int, "interference_covariance")):
            w = np.linalg.eigvalsh(mat)
            if w[0] < -_RTOL * max(1.0, abs(w[-1])):
                raise FilterDesignError(f"{name} is not positive semidefinite (min eig {w[0]:.3e})")
        if not _is_block_diagonal(s_int, m, m, t):
            raise FilterDesignError("interference_covariance must be block-diagonal per symbol")
        object.__setattr__(self, "input_covariance", s_in)
        object.__setattr__(self, "interference_covariance", s_int)
        object.__setattr__(self, "num_symbols", t)

    @property
    def antennas(self):
        return self.input_covariance.shape[0]


def _is_block_diagonal(a, rows, cols, t, tol=1e-12):
    scale = max(1.0, float(np.abs(a).max()))
    mask = np.ones_like(a, dtype=bool)
    for i in range(t):
        mask[i * rows : (i + 1) * rows, i * cols : (i + 1) * cols] = False
    return not np.any(np.abs(a[mask]) > tol * scale)


def build_input_covariance(spec: CovarianceSpec) -> np.ndarray:
    """Concatenated input covariance: half the per-symbol constraint on each block."""
    return np.kron(np.eye(spec.num_symbols), 0.5 * spec.input_covariance)


def factor_covariance(sigma) -> np.ndarray:
    """Full-column-rank factor ``F`` with ``F @ F.T == sigma``.

    Positive-definite input yields the lower-triangular Cholesky factor;
    rank-deficient PSD input yields a pivoted rank-revealing factor with
    exactly ``rank(sigma)`` columns.  Inputs with an eigenvalue below
    ``-1e-9`` times the spectral norm are rejected.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise FilterDesignError(f"covariance must be square, got {sigma.shape}")
    sym = _symmetrize(sigma)
    n = sym.shape[0]
    w = np.linalg.eigvalsh(sym)
    scale = max(abs(w[0]), abs(w[-1]))
    if scale == 0.0:
        return np.zeros((n, 0))
    if w[0] < -_RTOL * scale:
        raise FilterDesignError(f"matrix is not positive semidefinite (eigenvalue {w[0]:.6e})")
    if w[0] > _RTOL * scale:
        return np.linalg.cholesky(sym)
    c, piv, rank, info = lapack.dpstrf(sym, lower=1, tol=_RTOL * scale)
    if info < 0:
        raise FilterDesignError(f"pivoted factorization failed (info={info})")
    perm = np.zeros((n, n))
    perm[piv - 1, np.arange(n)] = 1.0
    factor = perm @ np.tril(c)[:, :rank]
    resid = np.linalg.norm(factor @ factor.T - sym) / max(1.0, np.linalg.norm(sym))
    if resid > 1e-8:
        raise FilterDesignError(f"rank-revealing factorization residual too large ({resid:.3e})")
    return factor


def lmmse_filter(h_eff, h, interference_cov, assignment):
    """Wiener filter and error covariance for the auxiliary vector.

    The auxiliary vector is ``assignment @ s + x`` with white ``x`` of
    covariance ``I/2``; the observation is ``h_eff @ x + h @ s + z`` with
    interference covariance ``interference_cov / 2`` and noise ``I/2``.
    Returns ``(filter, error_cov)`` where ``filter`` is the LMMSE estimator
    of the auxiliary vector from the observation and ``error_cov`` its
    (always invertible) error covariance.
    """
    h_eff = np.asarray(h_eff, dtype=float)
    h = np.asarray(h, dtype=float)
    nt, m_tot = h_eff.shape
    if h.shape[0] != nt:
        raise FilterDesignError("h and h_eff row counts differ")
    mt = h.shape[1]
    s_int = _as_matrix(interference_cov, (mt, mt))
    w = _as_matrix(assignment, (m_tot, mt))

    cov_obs = 0.5 * (h_eff @ h_eff.T + h @ s_int @ h.T + np.eye(nt))
    cross = 0.5 * (w @ s_int @ h.T + h_eff.T)
    cov_aux = 0.5 * (w @ s_int @ w.T + np.eye(m_tot))

    wiener = np.linalg.solve(cov_obs, cross.T).T
    err_cov = _symmetrize(cov_aux - wiener @ cross.T)
    return wiener, err_cov


def la_gpc_rate(err_cov, num_symbols) -> float:
    """Achievable rate in bits per channel use from the Wiener error covariance."""
    err_cov = np.asarray(err_cov, dtype=float)
    m_tot = err_cov.shape[0]
    w = np.linalg.eigvalsh(_symmetrize(err_cov))
    if w[0] <= 0:
        raise FilterDesignError(f"error covariance must be positive definite (min eig {w[0]:.3e})")
    sign, logdet = np.linalg.slogdet(err_cov)
    if sign <= 0:
        raise FilterDesignError("error covariance determinant is not positive")
    return (m_tot * math.log(0.5) - logdet) / (2.0 * num_symbols * math.log(2.0))


def transmit_filter(input_factor, dither_factor) -> np.ndarray:
    """Transmitter shaping filter mapping dither-shaped symbols to channel inputs."""
    input_factor = np.asarray(input_factor, dtype=float)
    dither_factor = np.asarray(dither_factor, dtype=float)
    m_tot = dither_factor.shape[0]
    if dither_factor.shape != (m_tot, m_tot):
        raise FilterDesignError("dither factor must be square")
    if input_factor.shape[1] != m_tot:
        raise FilterDesignError(
            f"input factor has {input_factor.shape[1]} columns but the lattice dimension is "
            f"{m_tot}; choose a full-rank input covariance or shrink the lattice"
        )
    return solve_triangular(dither_factor.T, input_factor.T, lower=False).T


def si_rx_filters(assignment, wiener, dither_factor):
    """Interference-presubtraction and receiver filters (in that order)."""
    dither_factor = np.asarray(dither_factor, dtype=float)
    root2 = math.sqrt(2.0)
    si = root2 * dither_factor @ np.asarray(assignment, dtype=float)
    rx = root2 * dither_factor @ np.asarray(wiener, dtype=float)
    return si, rx


def effective_noise_covariance(rx_filter, si_filter, h, h_eff_tx, dither_cov, interference_cov):
    """Covariance of the additive error seen by the lattice decoder.

    The error is ``(rx @ h_eff_tx - I) u + (rx @ h - si) s + rx z`` with the
    dither ``u`` of covariance ``dither_cov``, interference of covariance
    ``interference_cov / 2`` and white noise of covariance ``I/2``, all
    independent.
    """
    rx = np.asarray(rx_filter, dtype=float)
    h = np.asarray(h, dtype=float)
    h_eff_tx = np.asarray(h_eff_tx, dtype=float)
    dither_cov = np.asarray(dither_cov, dtype=float)
    m_tot = dither_cov.shape[0]
    mt = h.shape[1]
    si = _as_matrix(si_filter, (m_tot, mt))
    s_int = _as_matrix(interference_cov, (mt, mt))
    self_noise = rx @ h_eff_tx - np.eye(m_tot)
    residual_si = rx @ h - si
    cov = (
        self_noise @ dither_cov @ self_noise.T
        + 0.5 * residual_si @ s_int @ residual_si.T
        + 0.5 * rx @ rx.T
    )
    return _symmetrize(cov)


def inflation_filter(dither_factor, noise_cov) -> np.ndarray:
    """Receiver-side filter aligning the effective noise back onto the dither.

    ``L @ noise_cov @ L.T == dither_cov`` for the returned ``L``; it exists
    whenever the effective-noise covariance is positive definite, which the
    filter chain guarantees.
    """
    noise_cov = np.asarray(noise_cov, dtype=float)
    w = np.linalg.eigvalsh(_symmetrize(noise_cov))
    if w[0] <= 0:
        raise FilterDesignError(
            f"effective noise covariance must be positive definite (min eig {w[0]:.3e}); "
            "this signals an upstream bug"
        )
    noise_factor = np.linalg.cholesky(_symmetrize(noise_cov))
    return solve_triangular(noise_factor.T, np.asarray(dither_factor, dtype=float).T, lower=False).T


def dpc_assignment(h_eff, h) -> np.ndarray:
    """Perfect-CSIT linear assignment: the zero-interference Wiener filter times h."""
    h_eff = np.asarray(h_eff, dtype=float)
    h = np.asarray(h, dtype=float)
    wiener, _ = lmmse_filter(h_eff, h, 0, 0)
    return wiener @ h


def interference_free_rate(h, input_block_cov, num_symbols) -> float:
    """Rate of the same channel with the interference removed, bits per use."""
    h = np.asarray(h, dtype=float)
    cov = np.asarray(input_block_cov, dtype=float)
    nt = h.shape[0]
    sign, logdet = np.linalg.slogdet(np.eye(nt) + 2.0 * h @ cov @ h.T)
    if sign <= 0:
        raise FilterDesignError("interference-free Gram matrix is not positive definite")
    return logdet / (2.0 * num_symbols * math.log(2.0))


def scalar_slow_fading_assignment(rate_bits, num_symbols) -> np.ndarray:
    """Distribution-only linear assignment for the complex scalar slow-fading channel.

    Block-diagonal with ``num_symbols`` copies of ``(1 - 2^-R)/sqrt(2)`` times
    the 2x2 identity (one block per complex symbol embedded in two real
    dimensions).
    """
    if rate_bits <= 0:
        raise FilterDesignError("rate must be positive")
    gain = (1.0 - 2.0 ** (-rate_bits)) / math.sqrt(2.0)
    return gain * np.eye(2 * num_symbols)


# --- orchestration ---------------------------------------------------------


@dataclass(frozen=True)
class ScalarSlowAssignment:
    """Marker selecting :func:`scalar_slow_fading_assignment` at build time."""

    rate_bits: float


@dataclass(frozen=True)
class PerSymbolAssignment:
    """Linear assignment given as one per-symbol block ``w_b``.

    The full assignment solves ``sqrt(2) * input_factor @ W = I_T kron w_b``;
    the right-hand side must lie in the column space of the input factor.
    """

    block: np.ndarray


@dataclass(frozen=True)
class StaticFilterParts:
    """Channel-independent pieces of the chain for one (spec, pair) setup."""

    spec: CovarianceSpec
    input_block_cov: np.ndarray
    input_factor: np.ndarray
    dither_cov: np.ndarray
    dither_factor: np.ndarray
    tx_filter: np.ndarray
    m_tot: int

    @property
    def num_symbols(self):
        return self.spec.num_symbols


@dataclass(frozen=True)
class FilterContext:
    """All derived matrices of the filter chain for one channel realization."""

    input_block_cov: np.ndarray
    input_factor: np.ndarray
    h_eff: np.ndarray
    assignment: np.ndarray
    wiener: np.ndarray
    wiener_error_cov: np.ndarray
    dither_cov: np.ndarray
    dither_factor: np.ndarray
    tx_filter: np.ndarray
    si_filter: np.ndarray
    rx_filter: np.ndarray
    h_eff_tx: np.ndarray
    noise_cov: np.ndarray
    inflation: np.ndarray
    rate_bits: float
    num_symbols: int

    def to_text(self):
        """Diagnostic dump of every matrix and the rate, for regression fixtures."""
        lines = [f"rate_bits {self.rate_bits!r}", f"num_symbols {self.num_symbols}"]
        for name in (
            "input_block_cov",
            "input_factor",
            "h_eff",
            "assignment",
            "wiener",
            "wiener_error_cov",
            "dither_cov",
            "dither_factor",
            "tx_filter",
            "si_filter",
            "rx_filter",
            "h_eff_tx",
            "noise_cov",
            "inflation",
        ):
            mat = getattr(self, name)
            lines.append(f"{name} shape={mat.shape}")
            lines.append(np.array2string(mat, precision=17, separator=", ", threshold=10**6))
        return "\n".join(lines) + "\n"


def static_filter_parts(spec: CovarianceSpec, pair) -> StaticFilterParts:
    """Everything the transmitter can compute without the channel realization."""
    t = spec.num_symbols
    per_symbol = factor_covariance(0.5 * spec.input_covariance)
    input_factor = np.kron(np.eye(t), per_symbol)
    m_tot = input_factor.shape[1]
    if m_tot != pair.fine.dimension:
        raise FilterDesignError(
            f"rank of the input covariance times num_symbols is {m_tot} but the lattice "
            f"dimension is {pair.fine.dimension}; choose a full-rank input covariance or "
            "a matching lattice dimension"
        )
    input_block_cov = build_input_covariance(spec)
    dither_cov = pair.coarse_stats.covariance
    dither_factor = np.linalg.cholesky(dither_cov)
    tx = transmit_filter(input_factor, dither_factor)
    return StaticFilterParts(
        spec=spec,
        input_block_cov=input_block_cov,
        input_factor=input_factor,
        dither_cov=dither_cov,
        dither_factor=dither_factor,
        tx_filter=tx,
        m_tot=m_tot,
    )


def resolve_assignment(assignment, static: StaticFilterParts, h=None) -> np.ndarray:
    """Turn any accepted assignment description into a validated W matrix."""
    spec = static.spec
    t = spec.num_symbols
    m = spec.antennas
    m_sym = static.m_tot // t
    shape = (static.m_tot, m * t)

    if isinstance(assignment, str):
        if assignment != "dpc":
            raise FilterDesignError(f"unknown assignment {assignment!r}")
        if h is None:
            raise FilterDesignError("the perfect-CSIT assignment needs the channel realization")
        h_eff = np.asarray(h, dtype=float) @ (math.sqrt(2.0) * static.input_factor)
        w = dpc_assignment(h_eff, h)
    elif isinstance(assignment, ScalarSlowAssignment):
        if m_sym != 2 or m != 2:
            raise FilterDesignError("the scalar slow-fading assignment expects 2 real dimensions per symbol")
        w = scalar_slow_fading_assignment(assignment.rate_bits, t)
    elif isinstance(assignment, PerSymbolAssignment):
        block = np.asarray(assignment.block, dtype=float)
        if block.shape != (m, m):
            raise FilterDesignError(f"per-symbol assignment block must be {m}x{m}")
        rhs = np.kron(np.eye(t), block)
        lhs = math.sqrt(2.0) * static.input_factor
        w, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        if np.linalg.norm(lhs @ w - rhs) > _RTOL * (1.0 + np.linalg.norm(rhs)):
            raise FilterDesignError("per-symbol assignment is not reachable from the input factor")
    else:
        w = _as_matrix(assignment, shape)

    w = _as_matrix(w, shape)
    if not _is_block_diagonal(w, m_sym, m, t, tol=1e-9):
        raise FilterDesignError("assignment matrix must be block-diagonal per symbol")
    return w


def realize_filter_context(static: StaticFilterParts, w, h) -> FilterContext:
    """Complete the chain for one channel realization and assignment matrix."""
    spec = static.spec
    h = np.asarray(h, dtype=float)
    mt = spec.antennas * spec.num_symbols
    if h.ndim != 2 or h.shape[1] != mt:
        raise FilterDesignError(f"channel must have {mt} columns, got {h.shape}")
    h_eff = h @ (math.sqrt(2.0) * static.input_factor)
    wiener, err_cov = lmmse_filter(h_eff, h, spec.interference_covariance, w)
    rate = la_gpc_rate(err_cov, spec.num_symbols)
    si, rx = si_rx_filters(w, wiener, static.dither_factor)
    h_eff_tx = h @ static.tx_filter
    noise_cov = effective_noise_covariance(
        rx, si, h, h_eff_tx, static.dither_cov, spec.interference_covariance
    )
    inflation = inflation_filter(static.dither_factor, noise_cov)
    return FilterContext(
        input_block_cov=static.input_block_cov,
        input_factor=static.input_factor,
        h_eff=h_eff,
        assignment=w,
        wiener=wiener,
        wiener_error_cov=err_cov,
        dither_cov=static.dither_cov,
        dither_factor=static.dither_factor,
        tx_filter=static.tx_filter,
        si_filter=si,
        rx_filter=rx,
        h_eff_tx=h_eff_tx,
        noise_cov=noise_cov,
        inflation=inflation,
        rate_bits=rate,
        num_symbols=spec.num_symbols,
    )


def build_filter_context(spec: CovarianceSpec, h, pair, assignment) -> FilterContext:
    """Build the full filter chain for one channel realization.

    ``assignment`` may be a W matrix (block-diagonal per symbol), the string
    ``"dpc"``, a :class:`ScalarSlowAssignment` or a :class:`PerSymbolAssignment`.
    """
    static = static_filter_parts(spec, pair)
    w = resolve_assignment(assignment, static, h)
    return realize_filter_context(static, w, h)


def validate_context(ctx: FilterContext, rtol=_RTOL):
    """Check the algebraic identities the chain promises; returns max residual.

    Verified: the input factorization, the dither factorization (lower
    triangular), the transmit-covariance identity, the error-covariance
    factor identity, the inflation identity, and the match between the rate
    functional and the dither/noise determinant ratio.
    """

    def rel(a, b):
        return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))

    checks = {}
    checks["input_factor"] = rel(ctx.input_factor @ ctx.input_factor.T, ctx.input_block_cov)
    checks["dither_factor"] = rel(ctx.dither_factor @ ctx.dither_factor.T, ctx.dither_cov)
    checks["dither_factor_lower"] = float(np.abs(np.triu(ctx.dither_factor, 1)).max())
    checks["tx_covariance"] = rel(ctx.tx_filter @ ctx.dither_cov @ ctx.tx_filter.T, ctx.input_block_cov)
    checks["noise_cov_factor"] = rel(
        ctx.noise_cov, 2.0 * ctx.dither_factor @ ctx.wiener_error_cov @ ctx.dither_factor.T
    )
    checks["inflation"] = rel(ctx.inflation @ ctx.noise_cov @ ctx.inflation.T, ctx.dither_cov)
    det_rate = (
        np.linalg.slogdet(ctx.dither_cov)[1] - np.linalg.slogdet(ctx.noise_cov)[1]
    ) / (2.0 * ctx.num_symbols * math.log(2.0))
    checks["rate_identity"] = abs(det_rate - ctx.rate_bits) / max(1.0, abs(ctx.rate_bits))
    worst = max(checks.values())
    if worst > rtol:
        detail = ", ".join(f"{k}={v:.3e}" for k, v in sorted(checks.items(), key=lambda kv: -kv[1]))
        raise FilterDesignError(f"filter-chain identities violated: {detail}")
    return worst
