"""Nested lattice codebooks built from linear codes over a prime field.

The fine (channel-coding) lattice lifts a random full-rank ``k x n`` linear
code over GF(p) to ``scale * (C/p + Z^n)``; the coarse (shaping) sublattice
is either the scaled integer lattice (hypercubic mode, analytic shaping
statistics) or an integer-scaled copy of the fine lattice (self-similar
mode, Monte-Carlo shaping statistics).  Messages index the cosets of the
coarse lattice inside the fine one through the Smith normal form of the
nesting matrix, so encoding and index recovery are exact inverses on coset
classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from sympy import Matrix
from sympy.matrices.normalforms import hermite_normal_form, smith_normal_decomp

from .lattices import REL_TOL, LatticeBasis, LatticeError, VoronoiStats, sample_dither_batch, voronoi_stats

__all__ = [
    "CodeConfig",
    "NestedLatticePair",
    "build_construction_a",
    "encode_message",
    "decode_index",
]

_GENERATOR_RETRIES = 64
_CODEWORD_CACHE_LIMIT = 1 << 16


def _is_prime(p):
    if p < 2:
        return False
    if p % 2 == 0:
        return p == 2
    f = 3
    while f * f <= p:
        if p % f == 0:
            return False
        f += 2
    return True


def _rank_mod_p(mat, p):
    """Rank of an integer matrix over GF(p) by Gaussian elimination."""
    a = np.array(mat, dtype=np.int64) % p
    rows, cols = a.shape
    rank = 0
    for col in range(cols):
        pivot = None
        for r in range(rank, rows):
            if a[r, col] % p:
                pivot = r
                break
        if pivot is None:
            continue
        a[[rank, pivot]] = a[[pivot, rank]]
        inv = pow(int(a[rank, col]), p - 2, p)
        a[rank] = (a[rank] * inv) % p
        for r in range(rows):
            if r != rank and a[r, col]:
                a[r] = (a[r] - a[r, col] * a[rank]) % p
        rank += 1
        if rank == rows:
            break
    return rank


@dataclass(frozen=True)
class CodeConfig:
    """Parameters of one Construction-A nested pair.

    ``n`` is the lattice dimension (``2T`` for the complex-scalar experiment),
    ``p`` the field size, ``k`` the linear code dimension.  ``coarse_mode``
    selects the shaping sublattice: ``"hypercubic"`` (scaled integer lattice,
    rate ``k log2(p) / T``) or ``"self-similar"`` (coarse = ``coarse_scale``
    times the fine lattice, rate ``n log2(coarse_scale) / T``).  The whole
    pair is normalized so the coarse per-dimension second moment equals
    ``target_second_moment``.
    """

    n: int
    p: int
    k: int
    seed: int
    target_second_moment: float = 0.5
    block_symbols: int | None = None  # T; defaults to n // 2
    coarse_mode: str = "hypercubic"
    coarse_scale: int = 2
    stats_samples: int = 50_000

    def __post_init__(self):
        if not _is_prime(self.p):
            raise ValueError(f"p={self.p} is not prime")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.coarse_mode not in ("hypercubic", "self-similar"):
            raise ValueError(f"unknown coarse_mode {self.coarse_mode!r}")
        if self.coarse_mode == "self-similar" and self.coarse_scale < 2:
            raise ValueError("self-similar mode needs an integer coarse_scale >= 2")
        if self.target_second_moment <= 0:
            raise ValueError("target_second_moment must be positive")
        t = self.block_symbols
        if t is None:
            if self.n % 2:
                raise ValueError("block_symbols must be given explicitly for odd n")
            object.__setattr__(self, "block_symbols", self.n // 2)
        elif t < 1 or self.n % t:
            raise ValueError(f"block_symbols={t} must divide n={self.n}")


class NestedLatticePair:
    """A fine coding lattice with a coarse shaping sublattice.

    ``coarse.generator == fine.generator @ nesting_matrix`` with an integer
    nesting matrix; the codebook is one coset leader per class of
    ``fine / coarse`` and has ``|det(nesting_matrix)|`` elements.
    """

    def __init__(self, fine, coarse, nesting_matrix, coarse_stats, config, code_matrix):
        self.fine = fine
        self.coarse = coarse
        self.nesting_matrix = np.asarray(nesting_matrix, dtype=np.int64)
        self.coarse_stats = coarse_stats
        self.config = config
        self.code_matrix = np.asarray(code_matrix, dtype=np.int64)
        self.T = config.block_symbols

        resid = fine.generator @ self.nesting_matrix - coarse.generator
        if np.abs(resid).max() > REL_TOL * (1.0 + np.abs(coarse.generator).max()):
            raise LatticeError("coarse generator is not an integer combination of fine generators")

        s_diag, u, u_inv = _smith_basis(self.nesting_matrix)
        self._snf_diag = s_diag
        self._snf_u = u
        self._snf_u_inv = u_inv
        self.codebook_size = math.prod(int(d) for d in s_diag)
        det = abs(round(float(np.linalg.det(self.nesting_matrix.astype(float)))))
        if det != self.codebook_size:
            raise LatticeError("Smith normal form inconsistent with nesting determinant")
        self.rate_bits = math.log2(self.codebook_size) / self.T
        self._codewords = {}

    def __repr__(self):
        c = self.config
        return (
            f"NestedLatticePair(n={c.n}, p={c.p}, k={c.k}, mode={c.coarse_mode!r}, "
            f"rate={self.rate_bits:.4f} bits/use)"
        )

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_codewords"] = {}  # per-process cache, cheap to rebuild
        return state

    # --- message indexing ------------------------------------------------

    def _digits(self, index):
        digits = np.zeros(len(self._snf_diag), dtype=np.int64)
        rem = int(index)
        for i, d in enumerate(self._snf_diag):
            digits[i] = rem % d
            rem //= d
        return digits

    def _index_of_digits(self, digits):
        index = 0
        weight = 1
        for a, d in zip(digits, self._snf_diag):
            index += int(a) * weight
            weight *= int(d)
        return index

    def coset_representative(self, index):
        """A fine-lattice point of the coset of message ``index`` (unreduced)."""
        if not 0 <= index < self.codebook_size:
            raise ValueError(f"message index {index} out of range [0, {self.codebook_size})")
        b = self._snf_u @ self._digits(index)
        return self.fine.generator @ b.astype(float)

    def codeword(self, index):
        """The coset leader: representative folded into the coarse Voronoi region."""
        if self.codebook_size <= _CODEWORD_CACHE_LIMIT:
            cached = self._codewords.get(index)
            if cached is not None:
                return cached
        word = self.coarse.mod(self.coset_representative(index))
        if self.codebook_size <= _CODEWORD_CACHE_LIMIT:
            self._codewords[int(index)] = word
        return word

    def index_of(self, point):
        """Message index of a fine-lattice point (constant on coset classes)."""
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.shape[0] != self.fine.dimension:
            raise LatticeError("point dimension mismatch")
        coeff = self.fine._inv @ point
        b = np.rint(coeff).astype(np.int64)
        resid = np.linalg.norm(self.fine.generator @ b.astype(float) - point)
        if resid > REL_TOL * (1.0 + np.linalg.norm(point)):
            raise LatticeError("point is not a fine-lattice point within tolerance")
        digits = (self._snf_u_inv @ b) % self._snf_diag
        return self._index_of_digits(digits)

    # --- serialization ----------------------------------------------------

    def to_fixture_dict(self):
        c = self.config
        return {
            "format": "nested-lattice-pair/1",
            "n": c.n,
            "p": c.p,
            "k": c.k,
            "seed": c.seed,
            "block_symbols": c.block_symbols,
            "coarse_mode": c.coarse_mode,
            "coarse_scale": c.coarse_scale,
            "target_second_moment": c.target_second_moment,
            "stats_samples": c.stats_samples,
            "code_matrix": self.code_matrix.tolist(),
            "fine_scale": self._fine_scale,
            "coarse_stats": {
                "second_moment": self.coarse_stats.second_moment,
                "covariance": self.coarse_stats.covariance.tolist(),
                "sample_count": self.coarse_stats.sample_count,
            },
        }

    def save_fixture(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_fixture_dict(), fh, indent=1)
            fh.write("\n")

    @staticmethod
    def from_fixture_dict(data):
        if data.get("format") != "nested-lattice-pair/1":
            raise ValueError("unrecognized pair fixture format")
        config = CodeConfig(
            n=data["n"],
            p=data["p"],
            k=data["k"],
            seed=data["seed"],
            target_second_moment=data["target_second_moment"],
            block_symbols=data["block_symbols"],
            coarse_mode=data["coarse_mode"],
            coarse_scale=data["coarse_scale"],
            stats_samples=data["stats_samples"],
        )
        stats = VoronoiStats(
            second_moment=data["coarse_stats"]["second_moment"],
            covariance=np.array(data["coarse_stats"]["covariance"], dtype=float),
            sample_count=data["coarse_stats"]["sample_count"],
        )
        return _assemble_pair(
            config,
            np.array(data["code_matrix"], dtype=np.int64),
            fine_scale=float(data["fine_scale"]),
            coarse_stats=stats,
        )

    @staticmethod
    def load_fixture(path):
        with open(path, encoding="utf-8") as fh:
            return NestedLatticePair.from_fixture_dict(json.load(fh))


def _smith_basis(nesting):
    """Invariant factors and unimodular change of basis for Z^n / M Z^n.

    Returns ``(diag, U, U_inv)`` such that coset representatives are
    ``U @ a`` with digit vectors ``0 <= a_i < diag[i]``.
    """
    m = Matrix(nesting.tolist())
    s, left, right = smith_normal_decomp(m)  # s == left * m * right
    u = left.inv()
    diag = np.array([int(s[i, i]) for i in range(s.shape[0])], dtype=np.int64)
    if np.any(diag <= 0):
        raise LatticeError("nesting matrix is singular")
    u_np = np.array(u.tolist(), dtype=np.int64)
    u_inv_np = np.array(left.tolist(), dtype=np.int64)
    return diag, u_np, u_inv_np


def _construction_a_integer_basis(code_matrix, p, n):
    """Column-Hermite basis of the integer lattice ``C + p Z^n``."""
    cols = Matrix(np.hstack([code_matrix.T % p, p * np.eye(n, dtype=np.int64)]).tolist())
    basis = hermite_normal_form(cols)
    b = np.array(basis.tolist(), dtype=np.int64)
    if b.shape != (n, n):
        raise LatticeError("Hermite form of the code lattice is not full rank")
    return b


def _assemble_pair(config, code_matrix, fine_scale=None, coarse_stats=None, rng=None):
    n, p, k = config.n, config.p, config.k
    b_int = _construction_a_integer_basis(code_matrix, p, n)
    b_mat = Matrix(b_int.tolist())

    if config.coarse_mode == "hypercubic":
        gamma = math.sqrt(12.0 * config.target_second_moment)
        scale = gamma / p if fine_scale is None else fine_scale
        fine = LatticeBasis(scale * b_int.astype(float))
        coarse = LatticeBasis(gamma * np.eye(n))
        nesting = (b_mat.inv() * p).applyfunc(round)
        nesting_np = np.array(nesting.tolist(), dtype=np.int64)
        if (b_mat * nesting - p * Matrix.eye(n)) != Matrix.zeros(n, n):
            raise LatticeError("nesting matrix is not exactly integer")
        stats = voronoi_stats(coarse, mode="analytic")
        return NestedLatticePairBuilder(fine, coarse, nesting_np, stats, config, code_matrix, scale)

    # self-similar: coarse = coarse_scale * fine, statistics by Monte-Carlo
    beta = config.coarse_scale
    nesting_np = beta * np.eye(n, dtype=np.int64)
    if fine_scale is not None and coarse_stats is not None:
        fine = LatticeBasis(fine_scale * b_int.astype(float))
        coarse = LatticeBasis(beta * fine.generator)
        return NestedLatticePairBuilder(fine, coarse, nesting_np, coarse_stats, config, code_matrix, fine_scale)

    base_scale = 1.0 / p
    fine0 = LatticeBasis(base_scale * b_int.astype(float))
    coarse0 = LatticeBasis(beta * fine0.generator)
    stats_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(0x57A75,)))
    stats0 = voronoi_stats(coarse0, mode="monte-carlo", n_samples=config.stats_samples, rng=stats_rng)
    alpha = math.sqrt(config.target_second_moment / stats0.second_moment)
    scale = base_scale * alpha
    fine = LatticeBasis(scale * b_int.astype(float))
    coarse = LatticeBasis(beta * fine.generator)
    return NestedLatticePairBuilder(fine, coarse, nesting_np, stats0.scaled(alpha), config, code_matrix, scale)


def NestedLatticePairBuilder(fine, coarse, nesting, stats, config, code_matrix, fine_scale):
    pair = NestedLatticePair(fine, coarse, nesting, stats, config, code_matrix)
    pair._fine_scale = fine_scale
    return pair


def build_construction_a(config: CodeConfig, rng=None) -> NestedLatticePair:
    """Draw a Construction-A nested pair for ``config``.

    The code generator matrix is uniform over full-rank ``k x n`` matrices on
    GF(p) (rank-deficient draws are retried a bounded number of times).  When
    ``rng`` is omitted a generator seeded from ``config.seed`` is used; the
    shaping statistics of the self-similar mode always derive from
    ``config.seed`` so a pair is reproducible from its fixture alone.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    for _ in range(_GENERATOR_RETRIES):
        code_matrix = rng.integers(0, config.p, size=(config.k, config.n), dtype=np.int64)
        if _rank_mod_p(code_matrix, config.p) == config.k:
            break
    else:
        raise LatticeError(f"could not draw a rank-{config.k} code matrix over GF({config.p})")
    return _assemble_pair(config, code_matrix)


def encode_message(pair: NestedLatticePair, index: int):
    """Codeword (coset leader in the coarse Voronoi region) for ``index``."""
    return pair.codeword(index)


def decode_index(pair: NestedLatticePair, point) -> int:
    """Inverse of :func:`encode_message` on coset classes."""
    return pair.index_of(point)
