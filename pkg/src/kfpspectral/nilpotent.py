"""The graded nilpotent Lie algebra behind the reduced model operator.

An 8-dimensional algebra, stratified of type 2 and nilpotent of rank 3:

    degree 1:  d1, d2 (derivative type), q1, q2 (position type)
    degree 2:  drift, center
    degree 3:  r1, r2

with the only nonzero basis brackets

    [d1, q1] = [d2, q2] = center,   [drift, d1] = r1,   [drift, d2] = r2.

For a parameter pair rho the induced representation sends d_k to d/dv_k,
q_k to i v_k, drift to i v.rho, center to i, and r_k to -i rho_k; it is
induced by the functional that is zero except on center (1) and r_k
(-rho_k), relative to the abelian subalgebra spanned by q1 q2 drift
center r1 r2.  The reduced model operator is the image of a degree-2
element of the enveloping algebra, built by :func:`model_element`; the
identity ``represent(model_element(bp), rho) == assemble_check(rho, bp)``
holds entrywise on the truncated basis.

Structure constants are stored dense (8 x 8 x 8 integers); everything
here is immutable after construction.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import ModelParams
from .hermite import InteriorProjector, velocity_derivative, velocity_position

__all__ = [
    "LABELS",
    "DEGREES",
    "SUBALGEBRA",
    "structure_constants",
    "bracket",
    "AlgebraReport",
    "verify_algebra",
    "UEAElement",
    "model_element",
    "InducedFunctional",
    "functional",
    "generator_matrices",
    "represent",
    "rockland_probe",
    "structure_constants_json",
]

LABELS = ("d1", "d2", "q1", "q2", "drift", "center", "r1", "r2")
DEGREES = (1, 1, 1, 1, 2, 2, 3, 3)
SUBALGEBRA = ("q1", "q2", "drift", "center", "r1", "r2")

_INDEX = {name: i for i, name in enumerate(LABELS)}


def structure_constants():
    """Dense antisymmetric table c[i, j, k] with [Y_i, Y_j] = sum_k c Y_k."""
    c = np.zeros((8, 8, 8), dtype=int)

    def put(a, b, out):
        i, j, k = _INDEX[a], _INDEX[b], _INDEX[out]
        c[i, j, k] = 1
        c[j, i, k] = -1

    put("d1", "q1", "center")
    put("d2", "q2", "center")
    put("drift", "d1", "r1")
    put("drift", "d2", "r2")
    return c


_C = structure_constants()


def bracket(a, b):
    """[Y_a, Y_b] as a coefficient vector over LABELS."""
    return _C[_INDEX[a], _INDEX[b]].astype(float)


def bracket_vectors(u, v):
    """Bracket of two coefficient vectors."""
    return np.einsum("i,j,ijk->k", u, v, _C).astype(float)


@dataclass(frozen=True)
class AlgebraReport:
    jacobi_triples: int
    max_jacobi_residual: int
    grading_closed: bool
    generated_dimension: int
    type2_generation: bool


def verify_algebra():
    """Mechanical checks: Jacobi, grading closure, type-2 generation."""
    worst = 0
    count = 0
    for i, j, k in itertools.combinations(range(8), 3):
        # Jacobi: [[i,j],k] + [[j,k],i] + [[k,i],j] = 0
        total = (
            np.einsum("m,mn->n", _C[i, j], _C[:, k, :])
            + np.einsum("m,mn->n", _C[j, k], _C[:, i, :])
            + np.einsum("m,mn->n", _C[k, i], _C[:, j, :])
        )
        worst = max(worst, int(np.abs(total).max()))
        count += 1

    grading_ok = True
    for i, j in itertools.product(range(8), repeat=2):
        target = DEGREES[i] + DEGREES[j]
        for k in range(8):
            if _C[i, j, k] != 0 and DEGREES[k] != target:
                grading_ok = False

    # closure of degree-1 layer plus the drift element
    span = {0, 1, 2, 3, _INDEX["drift"]}
    grew = True
    while grew:
        grew = False
        for i, j in itertools.product(tuple(span), repeat=2):
            for k in range(8):
                if _C[i, j, k] != 0 and k not in span:
                    span.add(k)
                    grew = True
    return AlgebraReport(
        jacobi_triples=count,
        max_jacobi_residual=worst,
        grading_closed=grading_ok,
        generated_dimension=len(span),
        type2_generation=(len(span) == 8),
    )


def structure_constants_json():
    """The bracket table as JSON for documentation exports."""
    table = {}
    for i, j in itertools.combinations(range(8), 2):
        nz = {LABELS[k]: int(_C[i, j, k]) for k in range(8) if _C[i, j, k] != 0}
        if nz:
            table[f"[{LABELS[i]},{LABELS[j]}]"] = nz
    return json.dumps({"labels": list(LABELS), "degrees": list(DEGREES), "brackets": table},
                      indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Enveloping-algebra elements


@dataclass(frozen=True)
class UEAElement:
    """Complex combination of ordered words; leftmost factor applies last."""

    terms: tuple  # ((word tuple, complex coefficient), ...)

    def __post_init__(self):
        for word, _ in self.terms:
            for label in word:
                if label not in _INDEX:
                    raise ValueError(f"unknown generator label {label!r}")

    @classmethod
    def from_dict(cls, d):
        items = tuple(sorted(((tuple(w), complex(c)) for w, c in d.items() if c != 0)))
        return cls(items)

    def as_dict(self):
        return dict(self.terms)

    def word_count(self):
        return len(self.terms)

    def degree(self):
        """Homogeneous grading degree, or None if mixed."""
        degs = {sum(DEGREES[_INDEX[l]] for l in w) for w, _ in self.terms}
        return degs.pop() if len(degs) == 1 else None


def model_element(bprime):
    """The degree-2 enveloping element representing the reduced model.

    drift - sum_k (d_k^2 + q_k^2/4) + i b1 (d1 q2 - d2 q1)
          - i b2 (q1 q2 + d1 d2).
    """
    b1, b2 = float(bprime[0]), float(bprime[1])
    terms = {
        ("drift",): 1.0,
        ("d1", "d1"): -1.0,
        ("d2", "d2"): -1.0,
        ("q1", "q1"): -0.25,
        ("q2", "q2"): -0.25,
    }
    if b1 != 0.0:
        terms[("d1", "q2")] = 1j * b1
        terms[("d2", "q1")] = -1j * b1
    if b2 != 0.0:
        terms[("q1", "q2")] = -1j * b2
        terms[("d1", "d2")] = -1j * b2
    return UEAElement.from_dict(terms)


# ---------------------------------------------------------------------------
# Induced representation


@dataclass(frozen=True)
class InducedFunctional:
    """A functional on the algebra vanishing on subalgebra brackets."""

    values: tuple  # one real per LABELS entry
    subalgebra: tuple = SUBALGEBRA

    def __post_init__(self):
        if len(self.values) != 8:
            raise ValueError("functional needs 8 components")
        if self.subalgebra_bracket_residual() != 0.0:
            raise ValueError("functional does not vanish on [H, H]")

    def subalgebra_bracket_residual(self):
        worst = 0.0
        vals = np.asarray(self.values, dtype=float)
        for a, b in itertools.combinations(self.subalgebra, 2):
            worst = max(worst, abs(float(vals @ bracket(a, b))))
        return worst


def functional(rho):
    """The inducing functional: zero except center -> 1, r_k -> -rho_k."""
    vals = np.zeros(8)
    vals[_INDEX["center"]] = 1.0
    vals[_INDEX["r1"]] = -float(rho[0])
    vals[_INDEX["r2"]] = -float(rho[1])
    return InducedFunctional(tuple(vals))


def generator_matrices(rho, basis):
    """Images of the 8 generators on the truncated velocity basis (d = 2)."""
    if basis.d_v != 2:
        raise ValueError("the induced representation is stated for d = 2")
    if basis.x_modes is not None:
        raise ValueError("the representation acts on the velocity basis alone")
    rho = np.asarray(rho, dtype=float)
    eye = sp.identity(basis.v_size, format="csr", dtype=complex)
    V = [velocity_position(basis, k).astype(complex) for k in range(2)]
    D = [velocity_derivative(basis, k).astype(complex) for k in range(2)]
    return {
        "d1": D[0],
        "d2": D[1],
        "q1": 1j * V[0],
        "q2": 1j * V[1],
        "drift": 1j * (rho[0] * V[0] + rho[1] * V[1]),
        "center": 1j * eye,
        "r1": -1j * rho[0] * eye,
        "r2": -1j * rho[1] * eye,
    }


def represent(element, rho, basis):
    """Matrix image of an algebra vector or enveloping element.

    Algebra vectors may be given as a label, a coefficient array over
    LABELS, or a UEAElement; words map to matrix products in word order
    (leftmost applied last).
    """
    gens = generator_matrices(rho, basis)
    n = basis.v_size
    if isinstance(element, str):
        return gens[element].tocsr()
    if isinstance(element, UEAElement):
        out = sp.csr_matrix((n, n), dtype=complex)
        for word, coeff in element.terms:
            term = sp.identity(n, format="csr", dtype=complex)
            for label in word:
                term = term @ gens[label]
            out = out + coeff * term
        return out.tocsr()
    vec = np.asarray(element)
    if vec.shape != (8,):
        raise ValueError("algebra vectors carry 8 coefficients")
    out = sp.csr_matrix((n, n), dtype=complex)
    for coeff, label in zip(vec, LABELS):
        if coeff != 0:
            out = out + coeff * gens[label]
    return out.tocsr()


def rockland_probe(bprime, rho, basis, margin=2):
    """Smallest singular value of the represented model element.

    Probes injectivity across the induced family; the skew structure of
    every non-oscillator term keeps the value at or above the oscillator
    ground energy, so anything noticeably below 1 flags a defect.
    """
    from .estimates import smallest_singular_value

    mat = represent(model_element(bprime), np.asarray(rho, dtype=float), basis)
    sigma, _ = smallest_singular_value(mat, basis, margin=margin)
    return sigma


def check_model_identity(rho, bprime, basis):
    """Max entrywise gap between the represented element and the assembly."""
    from .assembly import assemble_check

    lhs = represent(model_element(bprime), rho, basis)
    rhs = assemble_check(ModelParams.check(rho, bprime), basis).matrix
    diff = (lhs - rhs).tocsr()
    P = InteriorProjector(2).matrix(basis)
    diff = (P @ diff @ P).tocsr()
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0
