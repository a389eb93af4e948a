# backend/algebra.py
"""
Fixed 8x8 operator kernel of the three-qubit bit-flip code.

Basis ordering is |q1 q2 q3> with flat index 4*q1 + 2*q2 + q3, and
sigma_z |0> = +|0>. Every state function accepts a single 8x8 matrix or a
batch of shape (..., 8, 8).
"""
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

import backend.config as config

DIMENSION = 8
SUBSPACE_LABELS = ("C", "1", "2", "3")

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Qubit j sits at bit (3 - j) of the flat index.
FLIP_BITS = (4, 2, 1)


class IntegratorBlowupError(RuntimeError):
    """Raised when a state cannot be repaired into a density matrix."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


def local_operator(op, qubit):
    """Embeds a single-qubit operator acting on `qubit` (1, 2 or 3)."""
    factors = [PAULI_I, PAULI_I, PAULI_I]
    factors[qubit - 1] = op
    return np.kron(np.kron(factors[0], factors[1]), factors[2])


def adjoint(a):
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True, eq=False)
class OperatorSet:
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    X3: np.ndarray
    PiC: np.ndarray
    Pi1: np.ndarray
    Pi2: np.ndarray
    Pi3: np.ndarray
    I8: np.ndarray

    @cached_property
    def S(self):
        return np.stack([self.S1, self.S2, self.S3])

    @cached_property
    def X(self):
        return np.stack([self.X1, self.X2, self.X3])

    @cached_property
    def projectors(self):
        """(PiC, Pi1, Pi2, Pi3) stacked in population order."""
        return np.stack([self.PiC, self.Pi1, self.Pi2, self.Pi3])

    @cached_property
    def syndrome_signs(self):
        # Syndromes are diagonal: keep only their +-1 entries, shape (3, 8).
        return np.real(np.diagonal(self.S, axis1=-2, axis2=-1)).copy()

    @cached_property
    def syndrome_outer(self):
        """d_k d_k^T for each syndrome, shape (3, 8, 8)."""
        signs = self.syndrome_signs
        return signs[:, :, None] * signs[:, None, :]

    @cached_property
    def flip_permutations(self):
        # X_j maps basis index i to i XOR bit_j.
        index = np.arange(DIMENSION)
        return np.stack([index ^ bit for bit in FLIP_BITS])

    @cached_property
    def subspace_membership(self):
        """0/1 indicator of each basis vector in C, 1, 2, 3, shape (4, 8)."""
        return np.real(np.diagonal(self.projectors, axis1=-2, axis2=-1)).copy()


@lru_cache(maxsize=1)
def build_operators():
    Z = [local_operator(PAULI_Z, q) for q in (1, 2, 3)]
    X = [local_operator(PAULI_X, q) for q in (1, 2, 3)]
    I8 = np.eye(DIMENSION, dtype=complex)

    S1 = Z[1] @ Z[2]
    S2 = Z[0] @ Z[2]
    S3 = Z[0] @ Z[1]
    PiC = (I8 + S1 + S2 + S3) / 4
    Pi1, Pi2, Pi3 = (x @ PiC @ x for x in X)

    return OperatorSet(
        S1=S1,
        S2=S2,
        S3=S3,
        X1=X[0],
        X2=X[1],
        X3=X[2],
        PiC=PiC,
        Pi1=Pi1,
        Pi2=Pi2,
        Pi3=Pi3,
        I8=I8,
    )


def _diagonal(rho):
    return np.real(np.diagonal(rho, axis1=-2, axis2=-1))


def trace(rho):
    return np.real(np.trace(rho, axis1=-2, axis2=-1))


def populations(rho, ops: Optional[OperatorSet] = None):
    """
    Returns (pC, p1, p2, p3) = tr(Pi_k rho) along the last axis.

    All projectors are diagonal in the computational basis, so only the
    diagonal of rho is read.
    """
    ops = ops or build_operators()
    diag = _diagonal(rho)
    p = np.stack([(diag * member).sum(axis=-1) for member in ops.subspace_membership], axis=-1)
    return np.clip(p, 0.0, 1.0)


def syndrome_expectations(rho, ops: Optional[OperatorSet] = None):
    """<S_k> = tr(S_k rho), shape (..., 3)."""
    ops = ops or build_operators()
    diag = _diagonal(rho)
    return np.stack([(diag * sign).sum(axis=-1) for sign in ops.syndrome_signs], axis=-1)


def purity(rho):
    return np.real(np.einsum("...ij,...ji->...", rho, rho))


def state_errors(rho):
    """
    Distances of `rho` from the density-matrix invariants.

    Returns:
        (hermitian error, trace error, minimum eigenvalue), each with the
        batch shape of `rho`.
    """
    hermitian = np.abs(rho - adjoint(rho)).max(axis=(-2, -1))
    trace_error = np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0)
    lowest = np.linalg.eigvalsh((rho + adjoint(rho)) / 2)[..., 0]
    return hermitian, trace_error, lowest


def repair(rho):
    """
    Projects a batch of near-density matrices back onto valid states.

    Takes the Hermitian part, clips eigenvalues at 0 and rescales to unit
    trace. Entries that are non-finite or whose trace fell to
    BLOWUP_TRACE or below are replaced by I/8 and flagged.

    Returns:
        (repaired states, boolean blow-up mask with the batch shape)
    """
    rho = np.asarray(rho, dtype=complex)
    hermitian = (rho + adjoint(rho)) / 2
    finite = np.asarray(np.isfinite(hermitian).all(axis=(-2, -1)))
    blown = ~finite | ~(trace(np.where(finite[..., None, None], hermitian, 0)) > config.BLOWUP_TRACE)
    blown = np.asarray(blown)
    if blown.any():
        hermitian = np.where(blown[..., None, None], np.eye(DIMENSION) / DIMENSION, hermitian)

    eigenvalues, vectors = np.linalg.eigh(hermitian)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    eigenvalues = eigenvalues / eigenvalues.sum(axis=-1, keepdims=True)
    repaired = (vectors * eigenvalues[..., None, :]) @ adjoint(vectors)
    return (repaired + adjoint(repaired)) / 2, blown


def renormalize(rho):
    """Single-call form of `repair` that raises on blow-up."""
    repaired, blown = repair(rho)
    if np.any(blown):
        indices = np.flatnonzero(np.atleast_1d(blown))
        raise IntegratorBlowupError(
            f"Integrator blow-up: trace <= {config.BLOWUP_TRACE} or non-finite state "
            f"(batch indices {indices.tolist()})",
            indices,
        )
    return repaired


def basis_state(label):
    """|q1 q2 q3><q1 q2 q3| for a label such as "000" or "100"."""
    if len(label) != 3 or set(label) - {"0", "1"}:
        raise ValueError(f"basis label must be three characters of 0/1, got {label!r}")
    rho = np.zeros((DIMENSION, DIMENSION), dtype=complex)
    index = int(label, 2)
    rho[index, index] = 1.0
    return rho


# Representative basis vector of each subspace: |000>, |100>, |010>, |001>.
SUBSPACE_REPRESENTATIVES = (0, 4, 2, 1)


def diagonal_mixture(p):
    """Diagonal state with populations (pC, p1, p2, p3) on |000>, |100>, |010>, |001>."""
    p = np.asarray(p, dtype=float)
    if p.shape != (4,) or np.any(p < 0) or abs(p.sum() - 1.0) > config.POPULATION_TOLERANCE:
        raise ValueError(f"populations must be 4 non-negative values summing to 1, got {p.tolist()}")
    rho = np.zeros((DIMENSION, DIMENSION), dtype=complex)
    for weight, index in zip(p, SUBSPACE_REPRESENTATIVES):
        rho[index, index] = weight
    return rho


def random_density_matrix(rng, rank=DIMENSION):
    """Ginibre-distributed random state of the given rank."""
    g = rng.standard_normal((DIMENSION, rank)) + 1j * rng.standard_normal((DIMENSION, rank))
    rho = g @ adjoint(g)
    return rho / trace(rho)


def random_state_in_subspace(rng, k, ops: Optional[OperatorSet] = None):
    """Random pure state supported on subspace k (0 = C, 1..3 = flipped qubit)."""
    ops = ops or build_operators()
    support = np.flatnonzero(ops.subspace_membership[k])
    amplitudes = rng.standard_normal(len(support)) + 1j * rng.standard_normal(len(support))
    psi = np.zeros(DIMENSION, dtype=complex)
    psi[support] = amplitudes / np.linalg.norm(amplitudes)
    return np.outer(psi, psi.conj())
