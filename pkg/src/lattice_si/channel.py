"""Fading channel generation and the physical channel map.

Channel realizations are block-diagonal over the ``T`` symbols of a
codeword: slow fading replicates one draw, fast fading draws each symbol
independently.  Complex channels are embedded into real matrices with the
usual 2x2 rotation blocks so that complex multiplication commutes with the
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .filters import factor_covariance

__all__ = [
    "ChannelRealization",
    "IidGaussianFading",
    "FixedFading",
    "ComplexIidGaussianFading",
    "draw_channel",
    "complex_to_real",
    "complex_vector_to_real",
    "draw_interference",
    "draw_noise",
    "transmit",
]


@dataclass(frozen=True)
class ChannelRealization:
    """One block-diagonal concatenated channel.

    ``matrix`` is ``NT x MT`` with the t-th diagonal block ``per_symbol[t]``;
    ``model`` is ``"slow"`` or ``"fast"``; ``origin`` records whether the
    blocks came from a real draw or a complex draw embedded into 2x2
    rotation blocks (with the complex shape in ``complex_shape``).
    """

    matrix: np.ndarray
    per_symbol: tuple
    model: str
    origin: str = "real"
    complex_shape: tuple | None = None


@dataclass(frozen=True)
class IidGaussianFading:
    """Real i.i.d. Gaussian entries of the given variance."""

    variance: float = 1.0


@dataclass(frozen=True)
class FixedFading:
    """A fixed per-symbol channel matrix, replicated over the codeword."""

    matrix: np.ndarray


@dataclass(frozen=True)
class ComplexIidGaussianFading:
    """Circularly symmetric complex Gaussian entries, embedded into real blocks."""

    variance: float = 1.0


def complex_to_real(h_c) -> np.ndarray:
    """Real embedding of a complex matrix: entry ``a+bi -> [[a, -b], [b, a]]``."""
    h_c = np.asarray(h_c, dtype=complex)
    if h_c.ndim != 2:
        raise ValueError("expected a 2-d complex matrix")
    rows, cols = h_c.shape
    out = np.empty((2 * rows, 2 * cols))
    out[0::2, 0::2] = h_c.real
    out[0::2, 1::2] = -h_c.imag
    out[1::2, 0::2] = h_c.imag
    out[1::2, 1::2] = h_c.real
    return out


def complex_vector_to_real(v) -> np.ndarray:
    """Real embedding of a complex vector, interleaving real and imaginary parts."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    out = np.empty(2 * v.shape[0])
    out[0::2] = v.real
    out[1::2] = v.imag
    return out


def draw_channel(model, m, n, t, fading, rng=None) -> ChannelRealization:
    """Draw a channel realization.

    ``model`` is ``"slow"`` (one draw fixed over the codeword) or ``"fast"``
    (independent per-symbol draws); fixed fading replicates its matrix under
    either model.  ``m``/``n`` are the real input/output dimensions per
    symbol (even for complex fading, which draws an ``n/2 x m/2`` complex
    matrix and embeds it).
    """
    if model not in ("slow", "fast"):
        raise ValueError(f"unknown fading model {model!r}")
    if min(m, n, t) < 1:
        raise ValueError("dimensions must be positive")

    origin = "real"
    complex_shape = None

    if isinstance(fading, FixedFading):
        block = np.asarray(fading.matrix, dtype=float)
        if block.shape != (n, m):
            raise ValueError(f"fixed channel must be {n}x{m}, got {block.shape}")
        blocks = [block] * t
    else:
        if rng is None:
            raise ValueError("random fading requires an rng")

        if isinstance(fading, IidGaussianFading):
            def draw_block():
                return np.sqrt(fading.variance) * rng.standard_normal((n, m))

        elif isinstance(fading, ComplexIidGaussianFading):
            if m % 2 or n % 2:
                raise ValueError("complex fading needs even real dimensions")
            origin = "complex"
            complex_shape = (n // 2, m // 2)

            def draw_block():
                scale = np.sqrt(fading.variance / 2.0)
                h_c = scale * (
                    rng.standard_normal(complex_shape) + 1j * rng.standard_normal(complex_shape)
                )
                return complex_to_real(h_c)

        else:
            raise ValueError(f"unknown fading description {fading!r}")

        if model == "slow":
            blocks = [draw_block()] * t
        else:
            blocks = [draw_block() for _ in range(t)]

    return ChannelRealization(
        matrix=block_diag(*blocks),
        per_symbol=tuple(blocks),
        model=model,
        origin=origin,
        complex_shape=complex_shape,
    )


def draw_interference(interference_cov, rng) -> np.ndarray:
    """Zero-mean Gaussian interference with covariance ``interference_cov / 2``."""
    factor = factor_covariance(interference_cov)
    return draw_from_factor(factor, rng)


def draw_from_factor(interference_factor, rng) -> np.ndarray:
    """Interference draw from a precomputed covariance factor (hot-loop variant)."""
    factor = np.asarray(interference_factor, dtype=float)
    return factor @ rng.standard_normal(factor.shape[1]) / np.sqrt(2.0)


def draw_noise(dim, rng) -> np.ndarray:
    """Zero-mean Gaussian noise with covariance ``I/2``."""
    return rng.standard_normal(dim) / np.sqrt(2.0)


def transmit(h, x, s, z) -> np.ndarray:
    """The physical channel: ``h @ (x + s) + z``."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    if h.shape[1] != x.shape[0] or h.shape[1] != s.shape[0] or h.shape[0] != z.shape[0]:
        raise ValueError(
            f"dimension mismatch: h {h.shape}, x {x.shape}, s {s.shape}, z {z.shape}"
        )
    return h @ (x + s) + z
