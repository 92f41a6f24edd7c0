"""Oscillator-preserving phase-space rotations and parameter transport.

Per velocity coordinate the unitary is diagonal in the Hermite basis with
phases exp(i t_k n_k).  These are exactly the phase-space rotations that
leave -Lap + v^2/4 invariant; they rotate the scaled pair (xi_k, w_k/2),
so conjugating the drift family transports its parameters by

    xi'_k = xi_k cos t_k - (w_k/2) sin t_k
    w'_k  = w_k  cos t_k + 2 xi_k  sin t_k
    b'_1  = b cos(t_2 - t_1),   b'_2 = b sin(t_2 - t_1)

with the second magnetic generator (v1 v2 - 4 d1 d2)/2 (see
``assembly.assemble_rotated``).  The equal-weight rotation of (w, xi) is
not implemented by any unitary that also preserves the oscillator, which
forces the factor 2 above; ``reduce_parameters`` therefore lands at
rho_k = sqrt(xi_k^2 + w_k^2/4).  Conjugation is exact on the truncated
basis (the unitary is diagonal and every assembled operator is a ladder
polynomial), which is verified to roundoff by ``verify_conjugation``.

All functions are pure.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_rotated
from .hermite import NONE, InteriorProjector, SparseOperator

__all__ = [
    "PHASE_SIGN",
    "transport",
    "reduce_parameters",
    "rotation_unitary",
    "conjugate",
    "verify_conjugation",
]

# Sign convention for the diagonal phases exp(i * PHASE_SIGN * t_k * n_k),
# locked by probing both signs against the conjugation identity (the test
# suite re-runs that probe; the opposite sign leaves an O(1) residual).
PHASE_SIGN = +1


def _normalize_angle(t):
    # wrap into (-pi, pi]
    t = float(t)
    out = np.remainder(t + np.pi, 2.0 * np.pi) - np.pi
    if out == -np.pi:
        out = np.pi
    return out


def transport(w, xi, b, t):
    """Transport (w, xi, b) through the rotation with angles t = (t1, t2).

    ``b`` may be a scalar (meaning the pair (b, 0)) or a pair (b1, b2);
    the magnetic pair rotates by t2 - t1, so its modulus is preserved.
    Composition in t is the rotation group law.
    """
    w = np.asarray(w, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.isscalar(b):
        b1, b2 = float(b), 0.0
    else:
        b1, b2 = float(b[0]), float(b[1])
    wp = np.empty(2)
    xp = np.empty(2)
    for k in range(2):
        c, s = np.cos(t[k]), np.sin(t[k])
        xp[k] = xi[k] * c - 0.5 * w[k] * s
        wp[k] = w[k] * c + 2.0 * xi[k] * s
    dc, ds = np.cos(t[1] - t[0]), np.sin(t[1] - t[0])
    bp1 = b1 * dc - b2 * ds
    bp2 = b1 * ds + b2 * dc
    return wp, xp, bp1, bp2


def reduce_parameters(w, xi):
    """Angles killing the drift: returns (t, rho) with w' = 0, xi' = rho.

    rho_k = sqrt(xi_k^2 + w_k^2/4) >= 0; a degenerate coordinate
    (rho_k = 0) gets t_k = 0 by convention.
    """
    w = np.asarray(w, dtype=float)
    xi = np.asarray(xi, dtype=float)
    rho = np.sqrt(xi**2 + 0.25 * w**2)
    t = np.zeros(2)
    for k in range(2):
        if rho[k] > 0.0:
            t[k] = _normalize_angle(np.arctan2(-0.5 * w[k], xi[k]))
    return t, rho


def rotation_unitary(t, basis):
    """Diagonal unitary with phases exp(i s t_k n_k) per coordinate."""
    if basis.d_v != 2:
        raise ValueError("rotation unitaries are stated for d = 2")
    phases = None
    for k, n in enumerate(basis.levels):
        ph = np.exp(1j * PHASE_SIGN * t[k] * np.arange(n))
        phases = ph if phases is None else np.kron(phases, ph)
    return SparseOperator(sp.diags(phases, format="csr"), NONE)


def conjugate(unitary, operator):
    """T^{-1} A T for a unitary T (diagonal, so T^{-1} = T^H)."""
    U = unitary.matrix if isinstance(unitary, SparseOperator) else unitary
    A = operator.matrix if isinstance(operator, SparseOperator) else operator
    return (U.conj().T @ A @ U).tocsr()


def _frobenius(mat):
    return float(np.linalg.norm(mat.data)) if mat.nnz else 0.0


def verify_conjugation(w, b, xi, t, basis, margin=4, phase_sign=None):
    """Relative interior residual of the conjugation identity.

    Builds the drift-family operator, conjugates it by the rotation with
    angles t, and compares against the operator assembled directly from
    the transported parameters.  Exact in the continuum; on the truncated
    basis the residual is pure roundoff.
    """
    sign = PHASE_SIGN if phase_sign is None else phase_sign
    if np.isscalar(b):
        b1, b2 = float(b), 0.0
    else:
        b1, b2 = float(b[0]), float(b[1])
    K = assemble_rotated(w, xi, b1, b2, basis)
    phases = None
    for k, n in enumerate(basis.levels):
        ph = np.exp(1j * sign * t[k] * np.arange(n))
        phases = ph if phases is None else np.kron(phases, ph)
    T = sp.diags(phases, format="csr")
    wp, xp, bp1, bp2 = transport(w, xi, (b1, b2), t)
    Kp = assemble_rotated(wp, xp, bp1, bp2, basis)
    P = InteriorProjector(margin).matrix(basis)
    delta = P @ (conjugate(T, K.matrix) - Kp.matrix) @ P
    ref = P @ K.matrix @ P
    return _frobenius(delta.tocsr()) / _frobenius(ref.tocsr())
