"""Symmetric-matrix algebra, spectral utilities, the half-vectorization
isometry, symmetric tensor embeddings, and spectrum metrics.

Everything here is a pure function on immutable values.  Matrices are plain
float64 ndarrays; :class:`SymMat` provides certified-symmetric packed storage
for state-space elements and path containers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatchError, NotPositiveSemidefiniteError

Array = np.ndarray

__all__ = [
    "SymMat",
    "SpectralDecomp",
    "sym_part",
    "eigh_sym",
    "vech",
    "unvech",
    "vech_index_pairs",
    "vech_basis",
    "sqrt_psd",
    "psd_floor",
    "log_norm",
    "spectral_abscissa",
    "sym_tensor_embed",
    "sym_tensor_embed_sqrt",
    "spectrum_distance",
    "hw_gap",
    "min_eig",
]

_SQRT2 = np.sqrt(2.0)


def sym_part(a: Array) -> Array:
    """Symmetric part (A + A')/2."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _check_square(a: Array, name: str = "matrix") -> Array:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SymMat:
    """Dense symmetric matrix stored as its upper triangle.

    Reconstruction through :meth:`full` is exactly symmetric because both
    triangles are filled from the same stored entries.
    """

    dim: int
    packed: Array = field(repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionMismatchError("dim must be >= 1")
        expect = self.dim * (self.dim + 1) // 2
        packed = np.asarray(self.packed, dtype=float)
        if packed.shape != (expect,):
            raise DimensionMismatchError(
                f"packed storage must have length {expect}, got {packed.shape}"
            )
        packed = packed.copy()
        packed.setflags(write=False)
        object.__setattr__(self, "packed", packed)

    @classmethod
    def from_full(cls, m: Array, tol: float = 1e-10) -> "SymMat":
        m = _check_square(m)
        scale = 1.0 + np.abs(m).max(initial=0.0)
        if np.abs(m - m.T).max(initial=0.0) > tol * scale:
            raise DimensionMismatchError("matrix is not symmetric within tolerance")
        r = m.shape[0]
        iu = np.triu_indices(r)
        return cls(r, sym_part(m)[iu])

    def full(self) -> Array:
        r = self.dim
        out = np.zeros((r, r))
        iu = np.triu_indices(r)
        out[iu] = self.packed
        out.T[iu] = self.packed
        return out

    def __array__(self, dtype=None, copy=None):
        full = self.full()
        return full.astype(dtype) if dtype is not None else full


class SpectralDecomp(NamedTuple):
    """Eigenvalues sorted descending with matching orthonormal column vectors."""

    eigenvalues: Array
    eigenvectors: Array


def eigh_sym(m: Array) -> SpectralDecomp:
    """Descending-order symmetric eigendecomposition with a reproducible
    sign convention (first component of each vector above tolerance is
    positive)."""
    m = sym_part(_check_square(m))
    w, v = np.linalg.eigh(m)
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    # sign convention: first nonzero component of every column positive
    for j in range(v.shape[1]):
        col = v[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        k = nz[0] if len(nz) else 0
        if col[k] < 0:
            v[:, j] = -col
    return SpectralDecomp(w, v)


def vech_index_pairs(r: int) -> list[tuple[int, int]]:
    """Row-major upper-triangle index pairs (i, j), i <= j."""
    return [(i, j) for i in range(r) for j in range(i, r)]


def vech(h: Array) -> Array:
    """Half-vectorization with sqrt(2)-weighted off-diagonals, so the
    Euclidean inner product of images equals Tr(H1 H2)."""
    h = np.asarray(h, dtype=float)
    if isinstance(h, SymMat):  # pragma: no cover - ndarray coercion above
        h = h.full()
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatchError(f"vech needs a square matrix, got {h.shape}")
    r = h.shape[0]
    out = np.empty(r * (r + 1) // 2)
    k = 0
    for i in range(r):
        out[k] = h[i, i]
        k += 1
        m = r - i - 1
        if m:
            out[k : k + m] = _SQRT2 * h[i, i + 1 :]
            k += m
    return out


def unvech(v: Array) -> Array:
    """Inverse of :func:`vech`; returns an exactly symmetric matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError("unvech needs a flat coordinate vector")
    rbar = v.shape[0]
    r = int(round((np.sqrt(8 * rbar + 1) - 1) / 2))
    if r * (r + 1) // 2 != rbar:
        raise DimensionMismatchError(f"length {rbar} is not a triangular number")
    out = np.zeros((r, r))
    k = 0
    for i in range(r):
        out[i, i] = v[k]
        k += 1
        m = r - i - 1
        if m:
            out[i, i + 1 :] = v[k : k + m] / _SQRT2
            out[i + 1 :, i] = out[i, i + 1 :]
            k += m
    return out


def vech_basis(r: int) -> Array:
    """Stack of the orthonormal symmetric basis matrices, shape (rbar, r, r).

    Entry a is E^s for the a-th (i, j) pair: E_ii on the diagonal and
    (E_ij + E_ji)/sqrt(2) off it.
    """
    pairs = vech_index_pairs(r)
    out = np.zeros((len(pairs), r, r))
    for a, (i, j) in enumerate(pairs):
        if i == j:
            out[a, i, i] = 1.0
        else:
            out[a, i, j] = out[a, j, i] = 1.0 / _SQRT2
    return out


def psd_tol(p: Array) -> float:
    """PSD flooring threshold 1e-10 * (1 + ||P||_2)."""
    p = np.asarray(p, dtype=float)
    return 1e-10 * (1.0 + np.linalg.norm(p, 2))


def min_eig(p: Array) -> float:
    return float(np.linalg.eigvalsh(sym_part(p))[0])


def psd_floor(p: Array, tol: float | None = None) -> Array:
    """Project onto the PSD cone by flooring eigenvalues at zero.

    Raises if the smallest eigenvalue is below -tol (default
    ``1e-10 * (1 + ||P||_2)``).
    """
    p = sym_part(_check_square(p))
    if tol is None:
        tol = psd_tol(p)
    w, v = np.linalg.eigh(p)
    if w[0] < -tol:
        raise NotPositiveSemidefiniteError(
            f"smallest eigenvalue {w[0]:.3e} below -{tol:.3e}"
        )
    if w[0] >= 0.0:
        return p
    return sym_part((v * np.maximum(w, 0.0)) @ v.T)


def sqrt_psd(p: Array, tol: float | None = None) -> Array:
    """Unique symmetric PSD square root, flooring eigenvalues within
    tolerance at zero."""
    p = sym_part(_check_square(p))
    if tol is None:
        tol = psd_tol(p)
    w, v = np.linalg.eigh(p)
    if w[0] < -tol:
        raise NotPositiveSemidefiniteError(
            f"smallest eigenvalue {w[0]:.3e} below -{tol:.3e}"
        )
    return sym_part((v * np.sqrt(np.maximum(w, 0.0))) @ v.T)


def log_norm(a: Array) -> float:
    """2-logarithmic norm: largest eigenvalue of the symmetric part."""
    a = _check_square(a)
    return float(np.linalg.eigvalsh(sym_part(a))[-1])


def spectral_abscissa(a: Array) -> float:
    """Largest real part over the spectrum."""
    a = _check_square(a)
    return float(np.max(np.linalg.eigvals(a).real))


def sym_tensor_embed(q1: Array, q2: Array, tol: float | None = None) -> Array:
    """Matrix of H -> (Q1 H Q2 + Q2 H Q1)/2 in vech coordinates.

    Symmetric PSD for PSD inputs, with spectrum inside
    [lambda_min(Q1) lambda_min(Q2), lambda_max(Q1) lambda_max(Q2)].
    """
    q1 = sym_part(_check_square(q1))
    q2 = sym_part(_check_square(q2))
    if q1.shape != q2.shape:
        raise DimensionMismatchError("operands must share a dimension")
    for q in (q1, q2):
        t = psd_tol(q) if tol is None else tol
        if min_eig(q) < -t:
            raise NotPositiveSemidefiniteError("sym_tensor_embed needs PSD inputs")
    basis = vech_basis(q1.shape[0])
    # M[a, b] = Tr(E_a Q1 E_b Q2); equals the symmetrized action by cyclicity
    m = np.einsum("aij,jk,bkl,li->ab", basis, q1, basis, q2, optimize=True)
    return sym_part(m)


def sym_tensor_embed_sqrt(q1: Array, q2: Array) -> Array:
    """PSD square root of :func:`sym_tensor_embed`."""
    return sqrt_psd(sym_tensor_embed(q1, q2))


def _spectrum(a: Array) -> Array:
    a = _check_square(a)
    if np.abs(a - a.T).max(initial=0.0) <= 1e-13 * (1.0 + np.abs(a).max(initial=0.0)):
        return np.linalg.eigvalsh(a).astype(complex)
    return np.linalg.eigvals(a)


def spectrum_distance(a: Array, b: Array) -> float:
    """Optimal matching distance between spectra: the permutation
    minimizing the max modulus gap.  Exact enumeration for r <= 8,
    Hungarian assignment above."""
    la, lb = _spectrum(a), _spectrum(b)
    if la.shape != lb.shape:
        raise DimensionMismatchError("spectra have different sizes")
    r = len(la)
    cost = np.abs(la[:, None] - lb[None, :])
    if r <= 8:
        best = np.inf
        for perm in itertools.permutations(range(r)):
            best = min(best, cost[np.arange(r), perm].max())
        return float(best)
    # bottleneck assignment approximated by min-sum assignment, then the
    # achieved max gap; adequate for large-r diagnostics
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def hw_gap(a: Array, b: Array) -> float:
    """Hoffman-Wielandt slack ||A - B||_F^2 - sum_i (l_i(A) - l_i(B))^2,
    nonnegative up to rounding for symmetric inputs."""
    a = sym_part(_check_square(a))
    b = sym_part(_check_square(b))
    if a.shape != b.shape:
        raise DimensionMismatchError("operands must share a dimension")
    la = np.sort(np.linalg.eigvalsh(a))
    lb = np.sort(np.linalg.eigvalsh(b))
    return float(np.sum((a - b) ** 2) - np.sum((la - lb) ** 2))
