"""Dense Hermitian linear algebra used by every other module.

Energies are dimensionless and hbar = 1, so a Hamiltonian ``H`` generates
``exp(-i H t)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import (
    ConvexSolverNoConvergence,
    DimensionMismatch,
    DimensionZero,
    NonHermitianInput,
    NonSquareInput,
)

HERMITIAN_TOL = 1e-10


def as_hermitian(matrix, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Validate ``matrix`` and return it as a read-only complex array.

    Inputs that are not Hermitian within ``tol`` per element are rejected,
    never symmetrized.
    """
    a = np.array(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquareInput(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise DimensionZero("operator dimension must be at least 1")
    err = np.max(np.abs(a - a.conj().T))
    if err > tol:
        raise NonHermitianInput(f"matrix deviates from its adjoint by {err:.3e}")
    a.setflags(write=False)
    return a


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def degenerate_blocks(self, tol: Optional[float] = None) -> list[np.ndarray]:
        """Index groups of (numerically) equal eigenvalues, ascending."""
        e = self.eigenvalues
        if tol is None:
            tol = 1e-9 * max(1.0, float(np.max(np.abs(e))))
        blocks, start = [], 0
        for k in range(1, len(e) + 1):
            if k == len(e) or e[k] - e[k - 1] > tol:
                blocks.append(np.arange(start, k))
                start = k
        return blocks


def spectral_decompose(h, check: bool = True) -> SpectralDecomposition:
    """Eigendecomposition with ascending eigenvalues and a fixed phase gauge.

    Each eigenvector is rotated so its largest-magnitude component is real
    and positive, which makes the output reproducible across calls.
    """
    h = as_hermitian(h) if check else np.asarray(h, dtype=complex)
    evals, evecs = np.linalg.eigh(h)
    idx = np.argmax(np.abs(evecs), axis=0)
    pivots = evecs[idx, np.arange(evecs.shape[1])]
    evecs = evecs * (np.abs(pivots) / pivots)
    evals.setflags(write=False)
    evecs.setflags(write=False)
    return SpectralDecomposition(evals, evecs)


def normalize_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    n = np.linalg.norm(psi)
    if n == 0:
        raise ValueError("zero vector is not a state")
    return psi / n


def evolve_step(psi, h=None, dt: float = 0.0,
                decomposition: Optional[SpectralDecomposition] = None) -> np.ndarray:
    """Apply ``exp(-i H dt)`` to ``psi`` through the spectral decomposition.

    Pass ``decomposition`` to reuse an existing eigendecomposition of ``h``.
    """
    if decomposition is None:
        decomposition = spectral_decompose(h)
    psi = np.asarray(psi, dtype=complex)
    if psi.shape[0] != decomposition.dim:
        raise DimensionMismatch(f"state has length {psi.shape[0]}, operator dim {decomposition.dim}")
    v = decomposition.eigenvectors
    out = v @ (np.exp(-1j * decomposition.eigenvalues * dt) * (v.conj().T @ psi))
    return out


def unitary(decomposition: SpectralDecomposition, dt: float) -> np.ndarray:
    v = decomposition.eigenvectors
    return (v * np.exp(-1j * decomposition.eigenvalues * dt)) @ v.conj().T


def matrix_norm(a, kind: str = "spectral") -> float:
    """Spectral norm (largest singular value) or trace norm (sum of them)."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquareInput(f"expected a square matrix, got shape {a.shape}")
    if a.size == 0:
        return 0.0
    s = np.linalg.svd(a, compute_uv=False)
    if kind == "spectral":
        return float(s[0])
    if kind == "trace":
        return float(np.sum(s))
    raise ValueError(f"unknown norm kind {kind!r}")


def expectation(psi: np.ndarray, op: np.ndarray) -> float:
    return float(np.real(np.vdot(psi, op @ psi)))


def fidelity(a, b) -> float:
    """Squared overlap, insensitive to global phase."""
    return float(abs(np.vdot(a, b)) ** 2)


def subspace_population(psi, vectors) -> float:
    """Probability of ``psi`` in the span of the orthonormal columns given."""
    c = np.asarray(vectors).conj().T @ psi
    return float(np.real(np.vdot(c, c)))


@dataclass(frozen=True)
class CoherenceRecord:
    populations: np.ndarray
    purity_defect: float
    c_dephased: float
    c_l1: float
    c1_exact: Optional[float] = None


def adapted_eigenvectors(psi, basis: SpectralDecomposition,
                         degeneracy_tol: Optional[float] = None) -> np.ndarray:
    """Eigenvectors rotated inside degenerate blocks to align with ``psi``.

    Within each degenerate eigenspace the first basis vector is chosen along
    the projection of ``psi``, so the state has no coherence inside a block.
    Every population-based quantity then depends only on the eigenspaces,
    not on the arbitrary basis the eigensolver returned.
    """
    v = np.array(basis.eigenvectors)
    for block in basis.degenerate_blocks(degeneracy_tol):
        if len(block) < 2:
            continue
        sub = v[:, block]
        c = sub.conj().T @ psi
        nc = np.linalg.norm(c)
        if nc < 1e-300:
            continue
        m = len(block)
        q, r = np.linalg.qr(np.column_stack([c / nc, np.eye(m)]))
        q[:, 0] *= r[0, 0] / abs(r[0, 0])
        v[:, block] = sub @ q
    return v


def _project_simplex(x: np.ndarray) -> np.ndarray:
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(x) + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(x - theta, 0.0)


def _diag_distance(q: np.ndarray, rho: np.ndarray) -> tuple[float, np.ndarray]:
    lam, u = np.linalg.eigh(rho - np.diag(q))
    return float(np.sum(np.abs(lam))), -np.real((np.abs(u) ** 2) @ np.sign(lam))


def min_diagonal_trace_distance(rho: np.ndarray, start: np.ndarray, tol: float = 1e-7,
                                window: int = 50, max_iter: int = 20000,
                                step0: float = 0.5, polish: bool = True) -> tuple[float, np.ndarray]:
    """Minimize ``||rho - diag(q)||_1`` over probability vectors ``q``.

    Projected subgradient descent with steps ``step0 / k``, started at
    ``start``, stopping once the best value has improved by less than ``tol``
    over the last ``window`` iterations. The plateau point is then polished
    with SLSQP on the simplex; the smaller of the two values is returned, so
    the result is always an attained upper bound on the true minimum.
    """
    q = _project_simplex(np.asarray(start, dtype=float))
    best_q = q.copy()
    best = np.inf
    history = []
    for k in range(1, max_iter + 1):
        val, grad = _diag_distance(q, rho)
        if val < best:
            best, best_q = val, q.copy()
        history.append(best)
        if len(history) > window and history[-window - 1] - best < tol:
            break
        q = _project_simplex(q - (step0 / k) * grad)
    else:
        raise ConvexSolverNoConvergence(
            f"no plateau after {max_iter} iterations (best {best:.6g})", best=best)
    if polish and len(best_q) > 2:
        n = len(best_q)
        res = minimize(_diag_distance, best_q, args=(rho,), jac=True, method="SLSQP",
                       bounds=[(0.0, 1.0)] * n,
                       constraints=[{"type": "eq", "fun": lambda x: x.sum() - 1.0,
                                     "jac": lambda x: np.ones(n)}],
                       options={"ftol": 1e-12, "maxiter": 500})
        cand = _project_simplex(res.x)
        val, _ = _diag_distance(cand, rho)
        if val < best:
            best, best_q = val, cand
    return best, best_q


def coherence_measures(psi, basis: SpectralDecomposition, want_exact: bool = False,
                       tol: float = 1e-7, degeneracy_tol: Optional[float] = None) -> CoherenceRecord:
    """Energy-basis coherence and excitation measures of a pure state.

    ``c_dephased`` is the trace distance to the state dephased in the energy
    eigenspaces; ``c1_exact`` (optional) minimizes the trace distance over all
    states diagonal in the eigenbasis. On pure states
    ``c1_exact <= c_dephased <= 2 sqrt(purity_defect)``.
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.shape[0] != basis.dim:
        raise DimensionMismatch(f"state has length {psi.shape[0]}, basis dim {basis.dim}")
    v = adapted_eigenvectors(psi, basis, degeneracy_tol)
    amps = v.conj().T @ psi
    pops = np.abs(amps) ** 2
    pops = pops / pops.sum()
    purity_defect = max(0.0, 1.0 - float(np.sum(pops ** 2)))
    abs_amps = np.abs(amps)
    c_l1 = float(np.sum(abs_amps) ** 2 - np.sum(abs_amps ** 2))

    rho = np.outer(amps, amps.conj())
    off = rho - np.diag(np.diag(rho))
    c_dephased = float(np.sum(np.abs(np.linalg.eigvalsh(off))))

    c1 = None
    if want_exact:
        if purity_defect < 1e-15:
            c1 = 0.0
        else:
            c1, _ = min_diagonal_trace_distance(rho, pops, tol=tol)
            c1 = min(c1, c_dephased)
    return CoherenceRecord(pops, purity_defect, c_dephased, c_l1, c1)
