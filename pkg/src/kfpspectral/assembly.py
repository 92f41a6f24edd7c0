"""Assembly of the kinetic operators as sparse matrices.

Families
--------
full       K = v.grad_x - grad V.grad_v - (v x B).grad_v - Lap_v + v^2/4 - d/2
           on a torus (Fourier collocation in x) times the Hermite basis.
adjoint    the formal adjoint, assembled independently from its own formula.
kolmogorov P0 = -v.grad_x - Lap_v.
hat        the xi-parametric model  i v.xi - w.grad_v + b(v1 d2 - v2 d1)
           - Lap_v + v^2/4  on the velocity basis alone (d=2).
check      the reduced model  i v.rho + b1(v1 d2 - v2 d1)
           + i b2(v1 v2 - d1 d2) - Lap_v + v^2/4  (d=2).
rotated    the rotation-closed generalization of ``hat`` whose second
           magnetic generator is (v1 v2 - 4 d1 d2)/2; this is the family
           the oscillator-preserving phase rotations map into itself.

Every matrix is a polynomial in the truncated ladder matrices (and the
collocation derivative), so the adjoint identity and the accretivity
quadratic-form identity hold exactly at every level, and conjugation by
the diagonal rotation unitaries is exact.  Assembly is deterministic:
equal provenance gives bit-identical matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import exprfield
from .hermite import (
    NONE,
    BasisSpec,
    SparseOperator,
    oscillator_product,
    velocity_derivative,
    velocity_position,
)

__all__ = [
    "SHIFT_K",
    "SHIFT_CHECK",
    "ModelParams",
    "DiscretizedOperator",
    "fourier_grid",
    "fourier_diff_matrix",
    "assemble_full",
    "assemble_adjoint",
    "assemble_P0",
    "assemble_hat",
    "assemble_check",
    "assemble_rotated",
    "apply_full",
    "export_triplets",
    "load_triplets",
]

SHIFT_K = "K"
SHIFT_CHECK = "K+d/2"


def _as_tuple(x, n=None):
    if x is None:
        return None
    if np.isscalar(x):
        x = (float(x),)
    out = tuple(float(v) for v in x)
    if n is not None and len(out) != n:
        raise ValueError(f"expected {n} components, got {len(out)}")
    return out


@dataclass(frozen=True)
class ModelParams:
    """Frozen parameter tuples indexing the model operator families."""

    w: tuple | None = None
    b: float | None = None
    xi: tuple | None = None
    rho: tuple | None = None
    bprime: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "w", _as_tuple(self.w))
        object.__setattr__(self, "xi", _as_tuple(self.xi))
        object.__setattr__(self, "rho", _as_tuple(self.rho))
        object.__setattr__(self, "bprime", _as_tuple(self.bprime))
        if self.b is not None:
            object.__setattr__(self, "b", float(self.b))
        if self.rho is not None and any(r < 0 for r in self.rho):
            raise ValueError("rho components must be nonnegative")

    @classmethod
    def hat(cls, w, b, xi):
        return cls(w=_as_tuple(w, 2), b=b, xi=_as_tuple(xi, 2))

    @classmethod
    def check(cls, rho, bprime):
        return cls(rho=_as_tuple(rho, 2), bprime=_as_tuple(bprime, 2))


@dataclass(frozen=True)
class DiscretizedOperator:
    """A SparseOperator plus the provenance that fully determines it."""

    op: SparseOperator
    family: str
    provenance: tuple
    shift: str

    @property
    def matrix(self):
        return self.op.matrix

    @property
    def dim(self):
        return self.op.dim


def _provenance(family, basis, shift, **kv):
    items = tuple(sorted(kv.items()))
    return (
        ("family", family),
        ("levels", basis.levels),
        ("x_modes", basis.x_modes),
        ("period", basis.period),
        ("shift", shift),
    ) + items


# ---------------------------------------------------------------------------
# Fourier collocation factor


def fourier_grid(m, period):
    return np.arange(m) * (period / m)


def fourier_diff_matrix(m, period):
    """Trigonometric-interpolation derivative matrix on m points.

    Exactly skew-symmetric; exact on band-limited samples (the Nyquist
    mode, present only for even m, differentiates to zero).
    """
    D = np.zeros((m, m))
    scale = 2.0 * np.pi / period
    for k in range(1, m):
        if m % 2 == 0:
            c = 0.5 * (-1.0) ** k / np.tan(np.pi * k / m) * scale
        else:
            c = 0.5 * (-1.0) ** k / np.sin(np.pi * k / m) * scale
        for b in range(m - k):
            D[b + k, b] = c
            D[b, b + k] = -c
    return D


def _x_lift(mat_1d, coord, basis):
    out = None
    m = basis.x_modes
    for k in range(basis.d_x):
        factor = sp.csr_matrix(mat_1d) if k == coord else sp.identity(m, format="csr")
        out = factor if out is None else sp.kron(out, factor, format="csr")
    return out


def _x_grid_points(basis):
    pts = fourier_grid(basis.x_modes, basis.period)
    grids = np.meshgrid(*([pts] * basis.d_x), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _sampled_diag(values):
    return sp.diags(np.asarray(values, dtype=float), format="csr")


def _magnetic_rotations(basis):
    """The rotation generators paired with each magnetic component."""
    V = [velocity_position(basis, k) for k in range(basis.d_v)]
    D = [velocity_derivative(basis, k) for k in range(basis.d_v)]
    if basis.d_v == 2:
        pairs = [(0, 1)]
    else:
        pairs = [(1, 2), (2, 0), (0, 1)]
    return [(V[j] @ D[k] - V[k] @ D[j]).tocsr() for j, k in pairs]


# ---------------------------------------------------------------------------
# Torus x Hermite assemblies


def _require_torus(spec, basis):
    if basis.x_modes is None:
        raise ValueError("this family needs a Fourier x-factor in the basis")
    if spec.period is None:
        raise ValueError("this family needs a periodic field specification")
    if spec.dimension != basis.d_v:
        raise ValueError("field dimension and basis velocity dimension differ")


def _grad_samples(spec, pts):
    return np.stack([spec.grad_potential(p) for p in pts], axis=1)


def _magnetic_samples(spec, pts):
    return np.stack([spec.magnetic_at(p) for p in pts], axis=1)


def _shift_term(shift, d, size):
    if shift == SHIFT_K:
        return -0.5 * d * sp.identity(size, format="csr", dtype=complex)
    if shift == SHIFT_CHECK:
        return sp.csr_matrix((size, size), dtype=complex)
    raise ValueError(f"unknown shift tag {shift!r}")


def assemble_full(spec, basis, shift=SHIFT_K):
    """The full kinetic operator on torus x velocity."""
    _require_torus(spec, basis)
    d = spec.dimension
    Dx = fourier_diff_matrix(basis.x_modes, basis.period)
    pts = _x_grid_points(basis)
    grad = _grad_samples(spec, pts)
    mag = _magnetic_samples(spec, pts)
    rot = _magnetic_rotations(basis)
    Iv = sp.identity(basis.v_size, format="csr")
    Ix = sp.identity(basis.x_size, format="csr")

    A = sp.kron(Ix, oscillator_product(basis), format="csr").astype(complex)
    for k in range(d):
        A = A + sp.kron(_x_lift(Dx, k, basis), velocity_position(basis, k), format="csr")
        A = A - sp.kron(_sampled_diag(grad[k]), velocity_derivative(basis, k), format="csr")
    for i, L in enumerate(rot):
        A = A - sp.kron(_sampled_diag(mag[i]), L, format="csr")
    A = (A + _shift_term(shift, d, basis.size)).tocsr()
    prov = _provenance(
        "full",
        basis,
        shift,
        potential=exprfield.to_string(spec.potential),
        magnetic=tuple(exprfield.to_string(m) for m in spec.magnetic),
    )
    return DiscretizedOperator(SparseOperator(A, NONE), "full", prov, shift)


def assemble_adjoint(spec, basis, shift=SHIFT_K):
    """The formal adjoint, termwise from its own displayed formula."""
    _require_torus(spec, basis)
    d = spec.dimension
    Dx = fourier_diff_matrix(basis.x_modes, basis.period)
    pts = _x_grid_points(basis)
    grad = _grad_samples(spec, pts)
    mag = _magnetic_samples(spec, pts)
    rot = _magnetic_rotations(basis)
    Ix = sp.identity(basis.x_size, format="csr")

    A = sp.kron(Ix, oscillator_product(basis), format="csr").astype(complex)
    for k in range(d):
        A = A - sp.kron(_x_lift(Dx, k, basis), velocity_position(basis, k), format="csr")
        A = A + sp.kron(_sampled_diag(grad[k]), velocity_derivative(basis, k), format="csr")
    for i, L in enumerate(rot):
        A = A + sp.kron(_sampled_diag(mag[i]), L, format="csr")
    A = (A + _shift_term(shift, d, basis.size)).tocsr()
    prov = _provenance(
        "adjoint",
        basis,
        shift,
        potential=exprfield.to_string(spec.potential),
        magnetic=tuple(exprfield.to_string(m) for m in spec.magnetic),
    )
    return DiscretizedOperator(SparseOperator(A, NONE), "adjoint", prov, shift)


def assemble_P0(basis):
    """The Kolmogorov operator -v.grad_x - Lap_v (no well, no shift)."""
    if basis.x_modes is None:
        raise ValueError("the Kolmogorov operator needs a Fourier x-factor")
    Dx = fourier_diff_matrix(basis.x_modes, basis.period)
    Ix = sp.identity(basis.x_size, format="csr")
    lap = None
    for k in range(basis.d_v):
        dk = velocity_derivative(basis, k)
        lap = (dk @ dk) if lap is None else lap + (dk @ dk)
    A = sp.kron(Ix, -lap, format="csr").astype(complex)
    for k in range(basis.d_v):
        A = A - sp.kron(_x_lift(Dx, k, basis), velocity_position(basis, k), format="csr")
    prov = _provenance("kolmogorov", basis, SHIFT_CHECK)
    return DiscretizedOperator(SparseOperator(A.tocsr(), NONE), "kolmogorov", prov, SHIFT_CHECK)


# ---------------------------------------------------------------------------
# Velocity-only model families (d = 2)


def _require_model(basis):
    if basis.d_v != 2:
        raise ValueError("model families are stated for d = 2")
    if basis.x_modes is not None:
        raise ValueError("model families act on the velocity basis alone")


def assemble_hat(params, basis):
    """The xi-parametric family i v.xi - w.grad_v + b L - Lap_v + v^2/4."""
    _require_model(basis)
    w, b, xi = params.w, params.b, params.xi
    A = oscillator_product(basis).astype(complex)
    for k in range(2):
        A = A + 1j * xi[k] * velocity_position(basis, k) - w[k] * velocity_derivative(basis, k)
    A = A + b * _magnetic_rotations(basis)[0]
    prov = _provenance("hat", basis, SHIFT_CHECK, w=w, b=b, xi=xi)
    return DiscretizedOperator(SparseOperator(A.tocsr(), NONE), "hat", prov, SHIFT_CHECK)


def assemble_check(params, basis):
    """The reduced family i v.rho + b1 L + i b2 (v1 v2 - d1 d2) - Lap_v + v^2/4."""
    _require_model(basis)
    rho, bp = params.rho, params.bprime
    V1, V2 = velocity_position(basis, 0), velocity_position(basis, 1)
    D1, D2 = velocity_derivative(basis, 0), velocity_derivative(basis, 1)
    A = oscillator_product(basis).astype(complex)
    A = A + 1j * rho[0] * V1 + 1j * rho[1] * V2
    A = A + bp[0] * _magnetic_rotations(basis)[0]
    A = A + 1j * bp[1] * (V1 @ V2 - D1 @ D2)
    prov = _provenance("check", basis, SHIFT_CHECK, rho=rho, bprime=bp)
    return DiscretizedOperator(SparseOperator(A.tocsr(), NONE), "check", prov, SHIFT_CHECK)


def assemble_rotated(w, xi, b1, b2, basis):
    """The rotation-closed family with both drift and Fourier terms.

    Same as ``hat`` at b2 = 0; the second magnetic generator here is
    (v1 v2 - 4 d1 d2)/2 = a1* a2 + a1 a2*, the unique completion under
    which conjugation by the oscillator-preserving phase rotations acts as
    a rotation of (b1, b2).
    """
    _require_model(basis)
    w = _as_tuple(w, 2)
    xi = _as_tuple(xi, 2)
    V1, V2 = velocity_position(basis, 0), velocity_position(basis, 1)
    D1, D2 = velocity_derivative(basis, 0), velocity_derivative(basis, 1)
    A = oscillator_product(basis).astype(complex)
    for k, (Vk, Dk) in enumerate(((V1, D1), (V2, D2))):
        A = A + 1j * xi[k] * Vk - w[k] * Dk
    A = A + b1 * _magnetic_rotations(basis)[0]
    A = A + 1j * b2 * 0.5 * (V1 @ V2 - 4.0 * (D1 @ D2))
    prov = _provenance("rotated", basis, SHIFT_CHECK, w=w, xi=xi, b1=float(b1), b2=float(b2))
    return DiscretizedOperator(SparseOperator(A.tocsr(), NONE), "rotated", prov, SHIFT_CHECK)


# ---------------------------------------------------------------------------
# Matrix-free action of the full operator


def _apply_axis(mat, arr, axis):
    return np.moveaxis(np.tensordot(mat, arr, axes=(1, axis)), 0, axis)


def apply_full(spec, basis, state, shift=SHIFT_K):
    """Apply the full torus operator to a state without materializing it.

    ``state`` has shape (M,)*d_x + (N_1,..,N_d); the action agrees with
    ``assemble_full`` exactly (same collocation grid, same ladder factors).
    Useful at sizes where the assembled matrix would be wasteful.
    """
    _require_torus(spec, basis)
    d = spec.dimension
    m = basis.x_modes
    shape = (m,) * basis.d_x + tuple(basis.levels)
    state = np.asarray(state).reshape(shape)
    Dx = fourier_diff_matrix(m, basis.period)
    pts = _x_grid_points(basis)
    grad = _grad_samples(spec, pts).reshape((d,) + (m,) * basis.d_x)
    mag = _magnetic_samples(spec, pts).reshape((-1,) + (m,) * basis.d_x)

    from .hermite import derivative_matrix, position_matrix

    vmats = [position_matrix(n) for n in basis.levels]
    dmats = [derivative_matrix(n) for n in basis.levels]
    osc1 = [
        (-(dm @ dm) + 0.25 * (vm @ vm)).toarray()
        for dm, vm in zip(dmats, vmats)
    ]
    vmats = [vm.toarray() for vm in vmats]
    dmats = [dm.toarray() for dm in dmats]

    out = np.zeros(shape, dtype=complex)
    bshape = (m,) * basis.d_x + (1,) * basis.d_v
    for k in range(d):
        t = _apply_axis(Dx, state, k)
        out += _apply_axis(vmats[k], t, basis.d_x + k)
        t = _apply_axis(dmats[k], state, basis.d_x + k)
        out -= grad[k].reshape(bshape) * t
    pairs = [(0, 1)] if d == 2 else [(1, 2), (2, 0), (0, 1)]
    for i, (j, k) in enumerate(pairs):
        t = _apply_axis(dmats[k], state, basis.d_x + k)
        t = _apply_axis(vmats[j], t, basis.d_x + j)
        t2 = _apply_axis(dmats[j], state, basis.d_x + j)
        t2 = _apply_axis(vmats[k], t2, basis.d_x + k)
        out -= mag[i].reshape(bshape) * (t - t2)
    for k in range(d):
        out += _apply_axis(osc1[k], state, basis.d_x + k)
    if shift == SHIFT_K:
        out -= 0.5 * d * state
    return out


# ---------------------------------------------------------------------------
# Sparse-triplet text export

_TRIPLET_HEADER = "# kfpspectral sparse-operator triplets v1"


def export_triplets(dop, path):
    """Write a DiscretizedOperator in the documented triplet text format.

    Header lines carry the dimensions, shift tag and provenance; each body
    line is ``row col re im``.
    """
    coo = dop.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(_TRIPLET_HEADER + "\n")
        fh.write(f"# family: {dop.family}\n")
        fh.write(f"# shift: {dop.shift}\n")
        for key, val in dop.provenance:
            fh.write(f"# {key}: {val!r}\n")
        fh.write(f"dims {dop.dim} {dop.dim}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v.real!r} {v.imag!r}\n")


def load_triplets(path):
    """Read a triplet file back into a csr matrix (header returned too)."""
    header = {}
    rows, cols, vals = [], [], []
    dims = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if ":" in line:
                    key, _, val = line[1:].partition(":")
                    header[key.strip()] = val.strip()
                continue
            if line.startswith("dims"):
                _, n, m = line.split()
                dims = (int(n), int(m))
                continue
            r, c, re_, im_ = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(re_) + 1j * float(im_))
    if dims is None:
        raise ValueError("triplet file has no dims line")
    mat = sp.coo_matrix((vals, (rows, cols)), shape=dims).tocsr()
    return mat, header
