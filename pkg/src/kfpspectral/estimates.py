"""Inequality-constant extraction and parameter sweeps.

The best constant C in an estimate  <M u, u> <= C (||K u||^2 + ||u||^2)
over interior-supported u is the largest eigenvalue of the hermitian
pencil (M, K^H K + I) restricted to the interior block.  The solver is a
B-orthonormalized subspace iteration on B^{-1} M (B factorized once);
it stops when the top Ritz value changes by <= tol relatively on two
consecutive sweeps, and reports failure rather than truncating silently.
Every extracted constant ships with an extremal vector whose Rayleigh
quotient is recomputed through the raw factor matrices, independent of
the solver path.

Smallest singular values are computed as sqrt of the smallest eigenvalue
of the interior Gram matrix via shift-invert Lanczos with a fixed start
vector (deterministic outputs).

Sweep points are independent; a thread pool may evaluate them, and the
output ordering is by grid index regardless of worker count.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import ModelParams, assemble_hat, assemble_rotated
from .hermite import (
    BasisSpec,
    InteriorProjector,
    SparseOperator,
    derivative_matrix,
    position_matrix,
    velocity_derivative,
    velocity_position,
)
from .metaplectic import reduce_parameters, rotation_unitary, transport

__all__ = [
    "QuadraticForm",
    "EstimateReport",
    "SolverError",
    "lhs_form",
    "estimate_constant",
    "smallest_singular_value",
    "airy_operator",
    "airy_scan",
    "AiryScanResult",
    "adaptive_airy_levels",
    "interpolation_check",
    "sweep",
    "sweep_drift_levels",
    "reports_to_csv",
    "reports_to_json",
    "CSV_COLUMNS",
]

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "w1", "w2", "b", "xi1", "xi2", "variant",
    "C_est", "sigma_min", "N", "margin", "iters", "status",
)


class SolverError(RuntimeError):
    """Iterative solver failed to converge within its iteration budget."""


@dataclass(frozen=True)
class QuadraticForm:
    """Hermitian PSD matrix M = sum weight * T^H T plus its term list."""

    matrix: sp.csr_matrix
    terms: tuple  # ((weight, description), ...)

    def describe(self):
        return " + ".join(f"{w:g}*|{d}|^2" for w, d in self.terms)


@dataclass
class EstimateReport:
    """One extracted constant with full provenance."""

    w: tuple
    b: float
    xi: tuple
    variant: str
    c_est: float
    sigma_min: float
    levels: tuple
    margin: int
    iterations: int
    status: str
    certificate_gap: float = 0.0
    extremal: np.ndarray | None = field(default=None, repr=False)

    def row(self):
        return {
            "w1": self.w[0], "w2": self.w[1], "b": self.b,
            "xi1": self.xi[0], "xi2": self.xi[1], "variant": self.variant,
            "C_est": self.c_est, "sigma_min": self.sigma_min,
            "N": max(self.levels), "margin": self.margin,
            "iters": self.iterations, "status": self.status,
        }


# ---------------------------------------------------------------------------
# Left-hand-side quadratic forms


def _b2_factors(basis):
    """All v^alpha d^beta with |alpha| + |beta| <= 2, as factor matrices."""
    V = [velocity_position(basis, k) for k in range(basis.d_v)]
    D = [velocity_derivative(basis, k) for k in range(basis.d_v)]
    n = basis.v_size
    out = []
    rng = range(basis.d_v)
    for total in range(3):
        for na in range(total + 1):
            nb = total - na
            for alpha in itertools.combinations_with_replacement(rng, na):
                for beta in itertools.combinations_with_replacement(rng, nb):
                    T = sp.identity(n, format="csr", dtype=float)
                    for k in beta:
                        T = D[k] @ T
                    for k in alpha:
                        T = V[k] @ T
                    name = "".join(f"v{k+1}" for k in alpha) + "".join(
                        f"d{k+1}" for k in beta
                    )
                    out.append((T.tocsr(), name or "1"))
    return out


def lhs_form(params, basis, which):
    """Assemble the left-hand-side form of one of the three estimates.

    ``prop3.1``       |w|^(4/3)||u||^2 + |w|^(2/3)(||grad u||^2 + ||v u||^2)
                      + second-order block
    ``inegmaxhom``    ||(v.rho) u||^2 + |rho|^(4/3)||u||^2 + second-order block
    ``hypomax-model`` |w|^(2/3)(||v u||^2 + ||grad u||^2) + second-order block
    """
    n = basis.v_size
    V = [velocity_position(basis, k) for k in range(basis.d_v)]
    D = [velocity_derivative(basis, k) for k in range(basis.d_v)]
    terms = []
    mats = []

    def add(weight, factor, name):
        if weight != 0.0:
            mats.append(weight * (factor.conj().T @ factor))
            terms.append((float(weight), name))

    if which == "prop3.1":
        wmag = float(np.linalg.norm(params.w))
        add(wmag ** (4.0 / 3.0), sp.identity(n, format="csr"), "u")
        for k in range(basis.d_v):
            add(wmag ** (2.0 / 3.0), D[k], f"d{k+1} u")
            add(wmag ** (2.0 / 3.0), V[k], f"v{k+1} u")
    elif which == "inegmaxhom":
        rho = np.asarray(params.rho, dtype=float)
        vdotrho = sum(rho[k] * V[k] for k in range(basis.d_v))
        add(1.0, vdotrho.tocsr(), "(v.rho) u")
        add(float(np.linalg.norm(rho)) ** (4.0 / 3.0), sp.identity(n, format="csr"), "u")
    elif which == "hypomax-model":
        wmag = float(np.linalg.norm(params.w))
        for k in range(basis.d_v):
            add(wmag ** (2.0 / 3.0), V[k], f"v{k+1} u")
            add(wmag ** (2.0 / 3.0), D[k], f"d{k+1} u")
    else:
        raise ValueError(f"unknown estimate variant {which!r}")

    for T, name in _b2_factors(basis):
        add(1.0, T, name)

    M = mats[0]
    for m in mats[1:]:
        M = M + m
    M = M.tocsr()
    M.sum_duplicates()
    return QuadraticForm(M, tuple(terms))


# ---------------------------------------------------------------------------
# Pencil solver


def _interior(mat, basis, margin):
    idx = InteriorProjector(margin).indices(basis)
    return mat[np.ix_(idx, idx)].tocsr(), idx


def _pencil_largest(M, B, tol, maxiter, block, seed):
    """Largest eigenpair of M u = lambda B u by B-orthonormal subspace iteration."""
    n = M.shape[0]
    block = min(block, n)
    lu = spla.splu(B.tocsc())
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, block)) + 1j * rng.standard_normal((n, block))
    lam_old = np.inf
    hits = 0
    for it in range(1, maxiter + 1):
        Y = lu.solve(np.asarray(M @ X))
        G = Y.conj().T @ np.asarray(B @ Y)
        G = 0.5 * (G + G.conj().T)
        A_small = Y.conj().T @ np.asarray(M @ Y)
        A_small = 0.5 * (A_small + A_small.conj().T)
        evals, evecs = sla.eigh(A_small, G)
        lam = float(evals[-1])
        X = Y @ evecs[:, ::-1]
        if np.isfinite(lam_old) and abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            hits += 1
            # two consecutive quiet sweeps keep the eigenvalue error well
            # below the change-based tolerance
            if hits >= 2:
                u = X[:, 0]
                return lam, u / np.linalg.norm(u), it
        else:
            hits = 0
        lam_old = lam
    raise SolverError(f"pencil iteration did not converge in {maxiter} sweeps")


def estimate_constant(k_op, form, basis, margin=2, tol=1e-8, maxiter=500, seed=20240501):
    """Best constant of <M u, u> <= C (||K u||^2 + ||u||^2) on the interior.

    Returns an EstimateReport whose certificate gap re-evaluates the
    extremal vector through the raw matrices:  <M u*, u*> must not exceed
    (C_est + gap)(||K u*||^2 + ||u*||^2).
    """
    K = k_op.matrix if hasattr(k_op, "matrix") else k_op
    idx = InteriorProjector(margin).indices(basis)
    Kc = K[:, idx].tocsr()
    B = (Kc.conj().T @ Kc + sp.identity(len(idx), format="csr")).tocsr()
    Mj = form.matrix[np.ix_(idx, idx)].tocsr().astype(complex)
    lam, u, iters = _pencil_largest(Mj, B, tol, maxiter, block=12, seed=seed)

    # independent certificate: raw quadratic forms on the embedded vector
    full = np.zeros(K.shape[0], dtype=complex)
    full[idx] = u
    num = float(np.real(np.conj(full) @ (form.matrix @ full)))
    den = float(np.linalg.norm(K @ full) ** 2 + np.linalg.norm(full) ** 2)
    c_est = num / den
    gap = abs(lam - c_est) / max(c_est, 1e-300)
    return EstimateReport(
        w=(np.nan, np.nan), b=np.nan, xi=(np.nan, np.nan), variant="",
        c_est=c_est, sigma_min=np.nan, levels=basis.levels, margin=margin,
        iterations=iters, status="ok", certificate_gap=gap, extremal=full,
    )


def smallest_singular_value(mat, basis, margin=2, return_vector=True):
    """Smallest singular value of the interior block, deterministic.

    Shift-invert Lanczos on the interior Gram matrix with a fixed start
    vector; dense fallback for very small blocks.
    """
    if isinstance(mat, SparseOperator):
        mat = mat.matrix
    elif hasattr(mat, "matrix"):
        mat = mat.matrix
    sub, idx = _interior(mat, basis, margin)
    m = sub.shape[0]
    if m <= 128:
        u_, s_, vh_ = np.linalg.svd(sub.toarray())
        sigma = float(s_[-1])
        vec = vh_[-1].conj()
    else:
        gram = (sub.conj().T @ sub).tocsc()
        v0 = np.ones(m) / np.sqrt(m)
        vals, vecs = spla.eigsh(gram, k=1, sigma=0.0, which="LM", v0=v0)
        sigma = float(np.sqrt(max(vals[0].real, 0.0)))
        vec = vecs[:, 0]
    if not return_vector:
        return sigma
    full = np.zeros(mat.shape[0], dtype=complex)
    full[idx] = vec
    return sigma, full


# ---------------------------------------------------------------------------
# Airy-type scaling scan


def airy_operator(rho, n_levels):
    """-d^2/dv^2 + i rho v on a one-coordinate Hermite basis (no well)."""
    d = derivative_matrix(n_levels)
    v = position_matrix(n_levels)
    return ((-(d @ d)).astype(complex) + 1j * float(rho) * v).tocsr()


def adaptive_airy_levels(rho, cap=8192):
    """Resolution policy: the minimizer lives at scale rho^(-1/3)."""
    n = max(64, int(np.ceil(8.0 * float(rho) ** (1.0 / 3.0))) ** 2)
    return min(n, cap)


@dataclass(frozen=True)
class AiryScanResult:
    rho_values: tuple
    sigma_values: tuple
    levels_used: tuple
    slope: float
    intercept: float
    truncation_inadequate: bool


def _airy_sigma(rho, n, margin=2):
    A = airy_operator(rho, n)
    keep = np.arange(n - margin)
    sub = A[np.ix_(keep, keep)].tocsr()
    gram = (sub.conj().T @ sub).tocsc()
    v0 = np.ones(sub.shape[0]) / np.sqrt(sub.shape[0])
    vals = spla.eigsh(gram, k=1, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False)
    return float(np.sqrt(max(vals[0].real, 0.0)))


def airy_scan(rho_values, levels=None, margin=2):
    """sigma_min(-d^2 + i v rho) per rho and the log-log scaling slope.

    ``levels`` fixes the truncation for every rho; by default each rho
    gets :func:`adaptive_airy_levels`.  Zero rho values are reported but
    excluded from the fit (no spectral gap without the well).  The
    inadequacy flag trips when sigma_min fails to grow along increasing
    rho, the signature of an unresolved rho^(-1/3) layer.
    """
    rho_values = tuple(float(r) for r in rho_values)
    sigmas = []
    used = []
    for rho in rho_values:
        n = adaptive_airy_levels(rho) if levels is None else int(levels)
        used.append(n)
        sigmas.append(_airy_sigma(rho, n, margin) if rho > 0 else _airy_sigma(0.0, n, margin))
    fit_pairs = [(r, s) for r, s in zip(rho_values, sigmas) if r > 0]
    if len(fit_pairs) >= 2:
        lr = np.log([p[0] for p in fit_pairs])
        ls = np.log([p[1] for p in fit_pairs])
        slope, intercept = np.polyfit(lr, ls, 1)
    else:
        slope, intercept = np.nan, np.nan
    inadequate = False
    ordered = sorted(fit_pairs)
    for (r0, s0), (r1, s1) in zip(ordered, ordered[1:]):
        if r1 > r0 and s1 <= s0:
            inadequate = True
    return AiryScanResult(
        rho_values=rho_values,
        sigma_values=tuple(sigmas),
        levels_used=tuple(used),
        slope=float(slope),
        intercept=float(intercept),
        truncation_inadequate=inadequate,
    )


# ---------------------------------------------------------------------------
# Interpolated-form check and the uniform sweep


def interpolation_check(w_list, b, basis, margin=2):
    """Constants of the interpolated form along a list of |w| values."""
    out = []
    for wmag in w_list:
        params = ModelParams.hat((float(wmag), 0.0), b, (0.0, 0.0))
        K = assemble_hat(params, basis)
        M = lhs_form(params, basis, "hypomax-model")
        rep = estimate_constant(K, M, basis, margin=margin)
        rep.w = params.w
        rep.b = float(b)
        rep.xi = params.xi
        rep.variant = "hypomax-model"
        out.append(rep)
    return out


def sweep_drift_levels(wmag, base=32, factor=4.0):
    """Anisotropic truncation for drift magnitude |w|: the reduced Fourier
    parameter is |w|/2 and its boundary layer needs N1 ~ (|w|/2)^(2/3)."""
    rho1 = 0.5 * abs(float(wmag))
    n1 = max(base, int(np.ceil(factor * rho1 ** (2.0 / 3.0))))
    return (n1, base)


def _sweep_point(wmag, b, xi, base_levels, margin, variant, scale=1.0):
    levels = sweep_drift_levels(wmag, base=base_levels)
    if scale != 1.0:
        levels = tuple(int(np.ceil(scale * n)) for n in levels)
    basis = BasisSpec(2, levels)
    params = ModelParams.hat((float(wmag), 0.0), float(b), tuple(xi))
    K = assemble_hat(params, basis)
    M = lhs_form(params, basis, variant)
    try:
        rep = estimate_constant(K, M, basis, margin=margin)
        rep.status = "ok"
    except SolverError as exc:
        rep = EstimateReport(
            w=params.w, b=float(b), xi=params.xi, variant=variant,
            c_est=np.nan, sigma_min=np.nan, levels=levels, margin=margin,
            iterations=-1, status=f"failed: {exc}",
        )
        return rep
    rep.w = params.w
    rep.b = float(b)
    rep.xi = params.xi
    rep.variant = variant
    rep.sigma_min, _ = smallest_singular_value(K, basis, margin=margin)
    return rep


def sweep(w_values, b_values, xi_values, base_levels=32, margin=2,
          variant="prop3.1", workers=None, level_scale=1.0):
    """One EstimateReport per (|w|, b, xi) grid tuple, in grid order.

    Per-point failures are recorded in the report status; the sweep
    continues.  Results are deterministic and independent of the worker
    count.
    """
    points = [
        (wm, b, xi)
        for wm in w_values
        for b in b_values
        for xi in xi_values
    ]

    def run(point):
        wm, b, xi = point
        return _sweep_point(wm, b, xi, base_levels, margin, variant, scale=level_scale)

    if workers is None or workers <= 1:
        return [run(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, points))


def transported_constant_gap(w, b, xi, basis, margin=2):
    """Check invariance of the constant under the reduction rotation.

    Conjugates both the operator and the form by the exact diagonal
    unitary; the two pencil spectra coincide, so the constants agree to
    solver tolerance.
    """
    from .metaplectic import rotation_unitary

    params = ModelParams.hat(w, b, xi)
    K = assemble_hat(params, basis)
    M = lhs_form(params, basis, "prop3.1")
    rep_a = estimate_constant(K, M, basis, margin=margin)

    t, rho = reduce_parameters(np.asarray(w, float), np.asarray(xi, float))
    wp, xp, b1, b2 = __import__("kfpspectral.metaplectic", fromlist=["transport"]).transport(
        np.asarray(w, float), np.asarray(xi, float), b, t
    )
    Kp = assemble_rotated(wp, xp, b1, b2, basis)
    T = rotation_unitary(t, basis).matrix
    Mp = QuadraticForm((T.conj().T @ M.matrix @ T).tocsr(), M.terms)
    rep_b = estimate_constant(Kp, Mp, basis, margin=margin)
    return abs(rep_a.c_est - rep_b.c_est) / rep_a.c_est, rep_a, rep_b


# ---------------------------------------------------------------------------
# Report serialization (deterministic: no timestamps, fixed ordering)


def reports_to_csv(reports, path):
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rep in reports:
            row = rep.row()
            fh.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")


def _fmt(val):
    if isinstance(val, float):
        return repr(val)
    return str(val)


def reports_to_json(reports, path, command="sweep"):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "rows": [rep.row() for rep in reports],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
