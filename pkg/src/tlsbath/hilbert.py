"""Dense operator algebra on small multi-spin Hilbert spaces.

Basis convention: each site is ordered ``(|e>, |g>)`` so that ``sigma_z = diag(1, -1)``
and the excited state carries ``+E/2`` under ``H = E/2 sigma_z``. Site 0 is the most
significant Kronecker factor, hence the all-ground state is the last basis vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SITES = 12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# sigma_- = |g><e|, sigma_+ = |e><g|
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T.copy()
IDENTITY_2 = np.eye(2, dtype=complex)

HERMITIAN_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when operator and state dimensions are inconsistent."""


@dataclass(frozen=True)
class OperatorMatrix:
    """A dense ``2**n x 2**n`` operator with an optional Hermiticity flag."""

    entries: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got shape {m.shape}")
        dim = m.shape[0]
        if dim < 1 or dim & (dim - 1):
            raise DimensionError(f"dimension {dim} is not a power of two")
        if self.hermitian and not np.allclose(m, m.conj().T, rtol=0, atol=HERMITIAN_TOL):
            raise ValueError("operator flagged Hermitian is not Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_sites(self) -> int:
        return self.dim.bit_length() - 1

    @property
    def dag(self) -> OperatorMatrix:
        return OperatorMatrix(self.entries.conj().T, self.hermitian)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            _check_dims(self.dim, other.dim)
            return OperatorMatrix(self.entries @ other.entries)
        return self.entries @ other

    def __add__(self, other: OperatorMatrix) -> OperatorMatrix:
        _check_dims(self.dim, other.dim)
        return OperatorMatrix(self.entries + other.entries, self.hermitian and other.hermitian)

    def __sub__(self, other: OperatorMatrix) -> OperatorMatrix:
        _check_dims(self.dim, other.dim)
        return OperatorMatrix(self.entries - other.entries, self.hermitian and other.hermitian)

    def __mul__(self, scalar) -> OperatorMatrix:
        scalar = complex(scalar)
        keep = self.hermitian and scalar.imag == 0.0
        return OperatorMatrix(self.entries * scalar, keep)

    __rmul__ = __mul__

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class DensityState:
    """Density matrix on the ``2**n``-dimensional space."""

    rho: np.ndarray

    TRACE_TOL = 1e-10
    HERM_TOL = 1e-10
    EIG_TOL = -1e-8

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DimensionError(f"density matrix must be square, got shape {rho.shape}")
        dim = rho.shape[0]
        if dim & (dim - 1):
            raise DimensionError(f"dimension {dim} is not a power of two")
        if abs(np.trace(rho) - 1.0) > self.TRACE_TOL:
            raise ValueError(f"trace {np.trace(rho).real:.3e} differs from 1")
        if np.max(np.abs(rho - rho.conj().T)) > self.HERM_TOL:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < self.EIG_TOL:
            raise ValueError("density matrix has a negative eigenvalue")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def from_ket(cls, psi) -> DensityState:
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def ground(cls, n_sites: int) -> DensityState:
        return cls.from_ket(ground_ket(n_sites))

    @classmethod
    def maximally_mixed(cls, n_sites: int) -> DensityState:
        dim = 2**n_sites
        return cls(np.eye(dim, dtype=complex) / dim)


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise DimensionError(f"dimension mismatch: {a} vs {b}")


def _check_sites(n_sites: int) -> None:
    if not 1 <= n_sites <= MAX_SITES:
        raise ValueError(f"n_sites must lie in [1, {MAX_SITES}], got {n_sites}")


def ground_ket(n_sites: int) -> np.ndarray:
    """All-ground product state."""
    _check_sites(n_sites)
    psi = np.zeros(2**n_sites, dtype=complex)
    psi[-1] = 1.0
    return psi


def basis_index(bits: str) -> int:
    """Index of a product state written as e.g. ``"eg"`` (site 0 first)."""
    idx = 0
    for ch in bits:
        if ch not in "eg":
            raise ValueError(f"invalid site label {ch!r}")
        idx = 2 * idx + (ch == "g")
    return idx


def embed_site_operator(op, site: int, n_sites: int) -> OperatorMatrix:
    """Place a single-site 2x2 operator at ``site`` within an ``n_sites`` register."""
    _check_sites(n_sites)
    if not 0 <= site < n_sites:
        raise IndexError(f"site {site} out of range for {n_sites} sites")
    op = np.asarray(op, dtype=complex)
    if op.shape != (2, 2):
        raise DimensionError(f"site operator must be 2x2, got {op.shape}")
    left = np.eye(2**site, dtype=complex)
    right = np.eye(2 ** (n_sites - site - 1), dtype=complex)
    full = np.kron(np.kron(left, op), right)
    return OperatorMatrix(full, bool(np.allclose(op, op.conj().T, rtol=0, atol=HERMITIAN_TOL)))


def collective_lowering(n_sites: int) -> OperatorMatrix:
    """S_- = sum_j sigma_-^(j). Its adjoint is the collective raising operator."""
    _check_sites(n_sites)
    total = np.zeros((2**n_sites, 2**n_sites), dtype=complex)
    for j in range(n_sites):
        total += embed_site_operator(SIGMA_MINUS, j, n_sites).entries
    return OperatorMatrix(total)


def collective_raising(n_sites: int) -> OperatorMatrix:
    return collective_lowering(n_sites).dag


def expectation(state, op) -> complex:
    """Tr(rho op)."""
    rho = state.rho if isinstance(state, DensityState) else np.asarray(state)
    m = op.entries if isinstance(op, OperatorMatrix) else np.asarray(op)
    _check_dims(rho.shape[0], m.shape[0])
    # Tr(rho m) without forming the product
    return complex(np.einsum("ij,ji->", rho, m))


def eigh(op) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian operator; ascending eigenvalues."""
    m = op.entries if isinstance(op, OperatorMatrix) else np.asarray(op)
    return np.linalg.eigh(m)


def expm_hermitian(op, scale: complex) -> np.ndarray:
    """exp(scale * H) for Hermitian H via its eigendecomposition."""
    w, v = eigh(op)
    return (v * np.exp(scale * w)) @ v.conj().T
