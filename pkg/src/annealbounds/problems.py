"""Annealing problem construction.

Hamming-symmetric models (Hamming spike, p-spin) live in the (N+1)-dim
symmetric subspace, indexed by Hamming weight ``w = 0..N``. Small instances
can also be built in the full ``2**N`` space, which the tests use as an
independent oracle for the reduced constructions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InvalidParameterRange, InvalidSize
from .numkernel import as_hermitian, commutator, matrix_norm, spectral_decompose

REPRESENTATIONS = ("full", "symmetric_subspace", "search_2d")
GROUND_TOL = 1e-9
MAX_FULL_QUBITS = 12

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class AnnealProblem:
    h0: np.ndarray
    h1: np.ndarray
    controls: tuple = ()
    model_tag: str = "custom"
    params: dict = field(default_factory=dict)
    representation: str = "full"

    def __post_init__(self):
        h0 = as_hermitian(self.h0)
        h1 = as_hermitian(self.h1)
        if h0.shape != h1.shape:
            raise DimensionMismatch(f"h0 {h0.shape} and h1 {h1.shape} differ in shape")
        controls = tuple(as_hermitian(c) for c in self.controls)
        for c in controls:
            if c.shape != h0.shape:
                raise DimensionMismatch(f"control of shape {c.shape} does not match {h0.shape}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        for name, h in (("h0", h0), ("h1", h1)):
            e0 = np.linalg.eigvalsh(h)[0]
            if abs(e0) > GROUND_TOL * max(1.0, np.max(np.abs(np.diag(h)))):
                raise InvalidParameterRange(f"{name} ground energy is {e0:.3e}, expected 0")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def hamiltonian(self, g: float) -> np.ndarray:
        return (1.0 - g) * self.h0 + g * self.h1

    def commutator(self) -> np.ndarray:
        """``[H1, H0]``."""
        return commutator(self.h1, self.h0)

    def comm_norm(self) -> float:
        return matrix_norm(self.commutator(), "spectral")

    def with_controls(self, controls) -> "AnnealProblem":
        return AnnealProblem(self.h0, self.h1, tuple(controls), self.model_tag,
                             self.params, self.representation)


def normalize_ground(h) -> np.ndarray:
    """Shift ``h`` so that its smallest eigenvalue is zero."""
    h = as_hermitian(h)
    e0 = np.linalg.eigvalsh(h)[0]
    return h - e0 * np.eye(h.shape[0])


def ground_space(h, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal columns spanning the (possibly degenerate) ground space."""
    dec = spectral_decompose(h)
    block = dec.degenerate_blocks(tol * max(1.0, float(np.max(np.abs(dec.eigenvalues)))))[0]
    return np.array(dec.eigenvectors[:, block])


# -- collective spin operators ------------------------------------------------

@dataclass(frozen=True)
class CollectiveOperators:
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray
    n: int


def collective_operators(n: int) -> CollectiveOperators:
    """Total magnetizations restricted to the symmetric subspace.

    Basis states are Dicke states ordered by Hamming weight ``w``, so
    ``mz = diag(N - 2w)`` and ``<w+1|mx|w> = sqrt((w+1)(N-w))``.
    """
    if n < 1 or n > 2000:
        raise InvalidSize(f"N must be in [1, 2000], got {n}")
    w = np.arange(n + 1)
    mz = np.diag((n - 2.0 * w)).astype(complex)
    off = np.sqrt((w[:-1] + 1.0) * (n - w[:-1]))
    mx = (np.diag(off, -1) + np.diag(off, 1)).astype(complex)
    my = 0.5j * commutator(mx, mz)
    return CollectiveOperators(mx, my, mz, n)


def _check_full_size(n: int):
    if n < 1 or n > MAX_FULL_QUBITS:
        raise InvalidSize(f"full-space constructions need 1 <= N <= {MAX_FULL_QUBITS}, got {n}")


def embed_operator(op: np.ndarray, qubits, n: int) -> np.ndarray:
    """Lift an operator on the listed qubits (qubit 0 most significant) to 2**n."""
    qubits = list(qubits)
    k = len(qubits)
    rest = [q for q in range(n) if q not in qubits]
    full = np.kron(op, np.eye(2 ** (n - k)))
    order = qubits + rest
    perm = [order.index(q) for q in range(n)]
    t = full.reshape([2] * (2 * n))
    t = t.transpose(perm + [n + p for p in perm])
    return t.reshape(2 ** n, 2 ** n)


def full_magnetizations(n: int) -> CollectiveOperators:
    """``M_x, M_y, M_z`` as explicit ``2**n`` matrices (sums of Paulis)."""
    _check_full_size(n)
    ops = []
    for pauli in (PAULI_X, PAULI_Y, PAULI_Z):
        ops.append(sum(embed_operator(pauli, [q], n) for q in range(n)))
    return CollectiveOperators(ops[0], ops[1], ops[2], n)


def hamming_weights(n: int) -> np.ndarray:
    idx = np.arange(2 ** n)
    return np.array([bin(i).count("1") for i in idx])


def dicke_isometry(n: int) -> np.ndarray:
    """``2**n x (n+1)`` matrix whose column ``w`` is the Dicke state of weight w."""
    _check_full_size(n)
    wts = hamming_weights(n)
    v = np.zeros((2 ** n, n + 1))
    for w in range(n + 1):
        v[wts == w, w] = 1.0 / np.sqrt(comb(n, w))
    return v


def plus_state_weights(n: int) -> np.ndarray:
    """Amplitudes of ``|+>^N`` in the Dicke basis: sqrt(C(N,w)) / 2**(N/2)."""
    logs = np.array([0.5 * (np.log(float(comb(n, w))) - n * np.log(2.0)) for w in range(n + 1)])
    return np.exp(logs)


# -- models ---------------------------------------------------------------------

def build_search(d: int, representation: str = "search_2d") -> AnnealProblem:
    """Unstructured search: ``H0 = I - |psi0><psi0|``, ``H1 = I - |m><m|``.

    ``search_2d`` works in the invariant plane spanned by ``|m>`` and the
    uniform superposition of the other items; ``full`` uses ``d`` basis
    states with the marked item at index 0.
    """
    if d < 2:
        raise InvalidSize(f"d must be >= 2, got {d}")
    if representation == "search_2d":
        psi0 = np.array([1.0 / np.sqrt(d), np.sqrt(1.0 - 1.0 / d)])
        marked = np.array([1.0, 0.0])
    elif representation == "full":
        if d > 4096:
            raise InvalidSize(f"full search representation limited to d <= 4096, got {d}")
        psi0 = np.full(d, 1.0 / np.sqrt(d))
        marked = np.zeros(d)
        marked[0] = 1.0
    else:
        raise ValueError(f"search does not support representation {representation!r}")
    eye = np.eye(len(psi0))
    h0 = eye - np.outer(psi0, psi0)
    h1 = eye - np.outer(marked, marked)
    return AnnealProblem(h0, h1, (), "search", {"d": d}, representation)


def barrier_profile(n: int, alpha: float, beta: float, height: Optional[float] = None) -> np.ndarray:
    """Rectangular barrier ``b(w)`` of height ``N**alpha`` centred at round(N/4).

    Width in Hamming weight is ``max(1, round(N**beta))``; a weight is inside
    when ``|w - round(N/4)| <= width / 2``.
    """
    if height is None:
        height = float(n) ** alpha
    width = max(1, round(n ** beta))
    centre = round(n / 4)
    w = np.arange(n + 1)
    return np.where(np.abs(w - centre) <= width / 2, height, 0.0)


def build_hamming_spike(n: int, alpha: float, beta: float, barrier_shape: str = "rectangular",
                        height: Optional[float] = None,
                        representation: str = "symmetric_subspace") -> AnnealProblem:
    """Hamming spike: ``H0 = (N - M_x)/2``, ``H1 = (N - M_z)/2 + b(W)``.

    ``height`` overrides the barrier height ``N**alpha`` (``height=0``
    gives the barrier-free model).
    """
    if n < 4:
        raise InvalidParameterRange(f"N must be >= 4, got {n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterRange(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 < beta < 0.5:
        raise InvalidParameterRange(f"beta must lie in (0, 1/2), got {beta}")
    if barrier_shape != "rectangular":
        raise InvalidParameterRange(f"unsupported barrier shape {barrier_shape!r}")
    b = barrier_profile(n, alpha, beta, height)
    if representation == "symmetric_subspace":
        ops = collective_operators(n)
        weights = np.arange(n + 1)
        barrier = np.diag(b)
    elif representation == "full":
        ops = full_magnetizations(n)
        weights = hamming_weights(n)
        barrier = np.diag(b[weights])
    else:
        raise ValueError(f"spike does not support representation {representation!r}")
    eye = np.eye(ops.mx.shape[0])
    h0 = normalize_ground(0.5 * (n * eye - ops.mx))
    h1 = normalize_ground(0.5 * (n * eye - ops.mz) + barrier)
    params = {"N": n, "alpha": alpha, "beta": beta}
    if height is not None:
        params["height"] = height
    return AnnealProblem(h0, h1, (), "hamming_spike", params, representation)


def pspin_hamiltonians(ops: CollectiveOperators, p: int) -> tuple[np.ndarray, np.ndarray]:
    n = ops.n
    eye = np.eye(ops.mx.shape[0])
    mzp = np.linalg.matrix_power(ops.mz, p)
    h0 = 0.5 * n * (eye - ops.mx / n)
    h1 = 0.5 * n * (eye - mzp / float(n) ** p)
    return h0, h1


def build_pspin(n: int, p: int, representation: str = "symmetric_subspace") -> AnnealProblem:
    """Ferromagnetic p-spin: ``H0 = N/2 (I - M_x/N)``, ``H1 = N/2 (I - M_z**p / N**p)``."""
    if n < 1 or p < 1:
        raise InvalidParameterRange(f"need N >= 1 and p >= 1, got N={n}, p={p}")
    if representation == "symmetric_subspace":
        ops = collective_operators(n)
    elif representation == "full":
        ops = full_magnetizations(n)
    else:
        raise ValueError(f"p-spin does not support representation {representation!r}")
    h0, h1 = pspin_hamiltonians(ops, p)
    # raw minimum of h1 is N/2 (1 - 1) = 0; normalization only removes rounding
    h1 = normalize_ground(h1)
    return AnnealProblem(h0, h1, (), "pspin", {"N": n, "p": p}, representation)


def random_local_term(rng: np.random.Generator, k: int) -> np.ndarray:
    """GUE-like Hermitian on k qubits, rescaled to unit spectral norm."""
    dim = 2 ** k
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (a + a.conj().T)
    return h / matrix_norm(h, "spectral")


def build_random_klocal(n: int, k: int, terms_per_hamiltonian: Optional[int] = None,
                        seed: int = 0) -> AnnealProblem:
    """Sums of random unit-norm k-local terms on N qubits (full space)."""
    if n < 1 or n > MAX_FULL_QUBITS:
        raise InvalidSize(f"N must be in [1, {MAX_FULL_QUBITS}], got {n}")
    if k < 1 or k > 3 or k > n:
        raise InvalidSize(f"k must be in [1, min(3, N)], got k={k}, N={n}")
    terms = n if terms_per_hamiltonian is None else int(terms_per_hamiltonian)
    if terms < 1:
        raise InvalidSize("need at least one term per Hamiltonian")
    rng = np.random.default_rng(seed)
    hams = []
    for _ in range(2):
        h = np.zeros((2 ** n, 2 ** n), dtype=complex)
        for _ in range(terms):
            qubits = sorted(rng.choice(n, size=k, replace=False).tolist())
            h += embed_operator(random_local_term(rng, k), qubits, n)
        hams.append(normalize_ground(0.5 * (h + h.conj().T)))
    params = {"N": n, "k": k, "terms": terms, "seed": seed}
    return AnnealProblem(hams[0], hams[1], (), "random_klocal", params, "full")


# -- serialization ----------------------------------------------------------------

NAMED_MODELS = ("search", "hamming_spike", "pspin", "random_klocal")


def matrix_to_pairs(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def pairs_to_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def rebuild_named(model_tag: str, params: dict, representation: str) -> AnnealProblem:
    if model_tag == "search":
        return build_search(int(params["d"]), representation)
    if model_tag == "hamming_spike":
        return build_hamming_spike(int(params["N"]), params["alpha"], params["beta"],
                                   height=params.get("height"), representation=representation)
    if model_tag == "pspin":
        return build_pspin(int(params["N"]), int(params["p"]), representation)
    if model_tag == "random_klocal":
        return build_random_klocal(int(params["N"]), int(params["k"]),
                                   int(params["terms"]), int(params["seed"]))
    raise ValueError(f"model {model_tag!r} cannot be rebuilt from params")


def problem_to_dict(problem: AnnealProblem, include_matrices: bool = True) -> dict:
    doc = {
        "model_tag": problem.model_tag,
        "params": dict(problem.params),
        "representation": problem.representation,
    }
    if include_matrices or problem.model_tag not in NAMED_MODELS:
        doc["matrices"] = {
            "h0": matrix_to_pairs(problem.h0),
            "h1": matrix_to_pairs(problem.h1),
            "controls": [matrix_to_pairs(c) for c in problem.controls],
        }
    elif problem.controls:
        doc["matrices"] = {"controls": [matrix_to_pairs(c) for c in problem.controls]}
    return doc


def problem_from_dict(doc: dict) -> AnnealProblem:
    mats = doc.get("matrices") or {}
    controls = tuple(pairs_to_matrix(c) for c in mats.get("controls", []))
    if "h0" in mats and "h1" in mats:
        return AnnealProblem(pairs_to_matrix(mats["h0"]), pairs_to_matrix(mats["h1"]), controls,
                             doc.get("model_tag", "custom"), doc.get("params", {}),
                             doc.get("representation", "full"))
    base = rebuild_named(doc["model_tag"], doc.get("params", {}),
                         doc.get("representation", "symmetric_subspace"))
    return base.with_controls(controls) if controls else base
