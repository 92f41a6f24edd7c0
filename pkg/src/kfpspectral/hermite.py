"""Velocity-space operator algebra on a truncated Hermite eigenbasis.

Basis functions are the L^2-normalized eigenfunctions of the oscillator
-d^2/dv^2 + v^2/4 (eigenvalue n + 1/2), so the ladder operators are
a = d/dv + v/2 and a* = -d/dv + v/2, giving v = a + a* and d/dv = (a - a*)/2.
Every operator here is an explicit sparse matrix over the tensor basis;
identities between them hold exactly only away from the top truncation
levels, which is what :class:`InteriorProjector` encodes.

Built operators are immutable and safe for concurrent reads.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseOperator",
    "BasisSpec",
    "InteriorProjector",
    "ladder",
    "position_matrix",
    "derivative_matrix",
    "lift",
    "velocity_position",
    "velocity_derivative",
    "oscillator",
    "oscillator_product",
    "angular_momentum",
    "monomial_op",
    "commutator",
    "hermite_values",
]

HERMITIAN = "hermitian"
SKEW = "skew-hermitian"
NONE = "none"


def _max_abs(mat):
    return float(np.abs(mat.data).max()) if mat.nnz else 0.0


@dataclass(frozen=True)
class SparseOperator:
    """A square complex sparse matrix with a verified symmetry tag."""

    matrix: sp.csr_matrix
    symmetry: str = NONE

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m:
            raise ValueError("operator matrix must be square")
        defect = self.symmetry_defect()
        if defect != 0.0:
            raise ValueError(f"symmetry tag {self.symmetry!r} violated by {defect:g}")

    def symmetry_defect(self):
        """Max-entry violation of the declared tag; 0 for untagged."""
        if self.symmetry == HERMITIAN:
            return _max_abs(self.matrix - self.matrix.conj().T)
        if self.symmetry == SKEW:
            return _max_abs(self.matrix + self.matrix.conj().T)
        return 0.0

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class BasisSpec:
    """Truncated Hermite (x Fourier) tensor basis.

    ``levels`` gives the Hermite truncation per velocity coordinate
    (levels 0..N_k-1); pass a single int for an isotropic basis.
    ``x_modes`` adds a Fourier collocation factor with ``x_modes`` points
    per space coordinate and period ``period``; None means the
    xi-parametric mode where x never appears.
    """

    d_v: int
    levels: tuple
    x_modes: int | None = None
    period: float = 2.0 * np.pi
    d_x: int | None = None  # defaults to d_v

    def __post_init__(self):
        if isinstance(self.levels, (int, np.integer)):
            object.__setattr__(self, "levels", (int(self.levels),) * self.d_v)
        else:
            object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))
        if len(self.levels) != self.d_v:
            raise ValueError("one Hermite truncation per velocity coordinate")
        if min(self.levels) < 4:
            raise ValueError("need at least 4 Hermite levels per coordinate")
        if self.d_x is None:
            object.__setattr__(self, "d_x", self.d_v)

    @property
    def v_size(self):
        return int(np.prod(self.levels))

    @property
    def x_size(self):
        return 1 if self.x_modes is None else int(self.x_modes) ** self.d_x

    @property
    def size(self):
        return self.x_size * self.v_size

    def velocity_multi_indices(self):
        """Hermite multi-indices in the kron (C-order) enumeration."""
        return np.array(list(itertools.product(*[range(n) for n in self.levels])))


def ladder(n):
    """Lowering/raising pair on n levels: a[m-1, m] = sqrt(m), a* = a^T."""
    if n < 2:
        raise ValueError("need at least 2 levels for ladder operators")
    a = sp.diags(np.sqrt(np.arange(1.0, n)), 1, format="csr")
    return a, sp.csr_matrix(a.T)


def position_matrix(n):
    """Multiplication by v on one coordinate: a + a*."""
    a, ad = ladder(n)
    return (a + ad).tocsr()


def derivative_matrix(n):
    """d/dv on one coordinate: (a - a*)/2."""
    a, ad = ladder(n)
    return ((a - ad) * 0.5).tocsr()


def lift(op_1d, coord, basis):
    """Embed a one-coordinate operator into the velocity tensor basis."""
    out = None
    for k, n in enumerate(basis.levels):
        factor = op_1d if k == coord else sp.identity(n, format="csr", dtype=op_1d.dtype)
        out = factor if out is None else sp.kron(out, factor, format="csr")
    return out


def velocity_position(basis, coord):
    return lift(position_matrix(basis.levels[coord]), coord, basis)


def velocity_derivative(basis, coord):
    return lift(derivative_matrix(basis.levels[coord]), coord, basis)


def oscillator(basis):
    """-Laplacian + v^2/4 in its exact diagonal form, entries sum(n_k + 1/2)."""
    diag = np.zeros(basis.v_size)
    for idx, multi in enumerate(basis.velocity_multi_indices()):
        diag[idx] = float(np.sum(multi) + 0.5 * basis.d_v)
    return SparseOperator(sp.diags(diag, format="csr"), HERMITIAN)


def oscillator_product(basis):
    """-Laplacian + v^2/4 assembled from ladder products.

    Also diagonal (the a^2 and a*^2 contributions cancel exactly even after
    truncation) but the top level of each coordinate is deficient; equals
    :func:`oscillator` away from it.  All assemblies use this realization so
    that quadratic-form identities hold exactly.
    """
    out = None
    for k in range(basis.d_v):
        vk = velocity_position(basis, k)
        dk = velocity_derivative(basis, k)
        term = (-(dk @ dk) + 0.25 * (vk @ vk)).tocsr()
        out = term if out is None else out + term
    return out.tocsr()


def angular_momentum(j, k, basis):
    """Rotation generator v_j d_k - v_k d_j = a*_j a_k - a_j a*_k (skew)."""
    if j == k:
        raise ValueError("angular momentum needs two distinct coordinates")
    if not (0 <= j < basis.d_v and 0 <= k < basis.d_v):
        raise ValueError("coordinate index out of range")
    mat = velocity_position(basis, j) @ velocity_derivative(basis, k) - velocity_position(
        basis, k
    ) @ velocity_derivative(basis, j)
    return SparseOperator(mat.tocsr(), SKEW)


def monomial_op(alpha, beta, basis):
    """v^alpha d_v^beta with derivative factors applied first.

    Restricted to total order |alpha| + |beta| <= 2, the range needed by the
    second-order velocity norms.
    """
    alpha = tuple(int(a) for a in alpha)
    beta = tuple(int(b) for b in beta)
    if len(alpha) != basis.d_v or len(beta) != basis.d_v:
        raise ValueError("alpha and beta must have one entry per coordinate")
    if any(a < 0 for a in alpha) or any(b < 0 for b in beta):
        raise ValueError("multi-indices must be nonnegative")
    if sum(alpha) + sum(beta) > 2:
        raise ValueError("monomial order limited to |alpha|+|beta| <= 2")
    out = sp.identity(basis.v_size, format="csr", dtype=float)
    for k, b in enumerate(beta):
        for _ in range(b):
            out = velocity_derivative(basis, k) @ out
    for k, a in enumerate(alpha):
        for _ in range(a):
            out = velocity_position(basis, k) @ out
    return SparseOperator(out.tocsr(), NONE)


def commutator(A, B):
    a = A.matrix if isinstance(A, SparseOperator) else A
    b = B.matrix if isinstance(B, SparseOperator) else B
    return (a @ b - b @ a).tocsr()


@dataclass(frozen=True)
class InteriorProjector:
    """Diagonal 0/1 projector dropping the top ``margin`` Hermite levels.

    Ladder truncation corrupts operator identities only on the top levels,
    so identities of order m are asserted under a projector with
    margin >= m.  For torus bases the x factor passes through untouched
    (the collocation derivative is exactly skew, so no x-side margin is
    ever needed).
    """

    margin: int

    def velocity_mask(self, basis):
        mask = np.ones(basis.v_size, dtype=bool)
        for idx, multi in enumerate(basis.velocity_multi_indices()):
            if any(m >= n - self.margin for m, n in zip(multi, basis.levels)):
                mask[idx] = False
        return mask

    def indices(self, basis):
        """Interior positions in the full (x tensor v) enumeration."""
        vmask = self.velocity_mask(basis)
        mask = np.tile(vmask, basis.x_size)
        return np.where(mask)[0]

    def matrix(self, basis):
        vmask = self.velocity_mask(basis)
        mask = np.tile(vmask, basis.x_size)
        return sp.diags(mask.astype(float), format="csr")

    def restrict(self, mat, basis):
        """Square submatrix of ``mat`` on the interior block."""
        if isinstance(mat, SparseOperator):
            mat = mat.matrix
        idx = self.indices(basis)
        return mat[np.ix_(idx, idx)].tocsr()

    def random_interior(self, basis, rng, count=1):
        """Random complex states supported on the interior block."""
        idx = self.indices(basis)
        out = np.zeros((count, basis.size), dtype=complex)
        vals = rng.standard_normal((count, len(idx))) + 1j * rng.standard_normal(
            (count, len(idx))
        )
        out[:, idx] = vals
        return out[0] if count == 1 else out


def hermite_values(n_levels, v):
    """Values h_0..h_{n-1} on a grid, by the stable ladder recurrence.

    h_0 = (2 pi)^(-1/4) exp(-v^2/4) and h_{n+1} = (v h_n - sqrt(n) h_{n-1})
    / sqrt(n+1); rows are basis functions.  Used only by quadrature oracles
    in the test suite, never by the assemblies.
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros((n_levels, len(v)))
    out[0] = (2.0 * np.pi) ** (-0.25) * np.exp(-(v**2) / 4.0)
    if n_levels > 1:
        out[1] = v * out[0]
    for n in range(1, n_levels - 1):
        out[n + 1] = (v * out[n] - np.sqrt(n) * out[n - 1]) / np.sqrt(n + 1.0)
    return out
