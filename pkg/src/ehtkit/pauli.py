"""Single-site operators, tensor embeddings, and the global bit conventions.

Conventions used throughout the package:

* Sites are numbered 1..N.  Site 1 is the leftmost character of a bitstring
  and the most significant bit of a basis-state index.
* Bit '1' means spin up (sigma_z eigenvalue +1), bit '0' means spin down.
  The single-site basis is therefore ordered (down, up), so
  ``sigma_z = diag(-1, +1)``.
* Measurement basis rotations map the +1 eigenvector of the measured axis
  onto bit 1: measuring a state in basis ``axes`` means computing
  ``diag(U rho U^dagger)`` with ``U = u_{axes[0]} (x) ... (x) u_{axes[N-1]}``.
"""

from __future__ import annotations

import numpy as np

# Pauli matrices in the (down, up) basis; sigma_y = -i sigma_plus + i sigma_minus.
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
SIGMA_PLUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)   # |up><down|
SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |down><up|
IDENTITY_2 = np.eye(2, dtype=complex)

SX = 0.5 * SIGMA_X
SY = 0.5 * SIGMA_Y
SZ = 0.5 * SIGMA_Z
SPLUS = SIGMA_PLUS
SMINUS = SIGMA_MINUS

_SQ2 = 1.0 / np.sqrt(2.0)

# u_axis maps the axis eigenbasis onto the computational basis with the
# +1 eigenvector sent to bit 1 ("up" after rotation).
AXIS_ROTATIONS = {
    "Z": np.eye(2, dtype=complex),
    "X": _SQ2 * np.array([[-1.0, 1.0], [1.0, 1.0]], dtype=complex),
    "Y": _SQ2 * np.array([[1.0j, 1.0], [-1.0j, 1.0]], dtype=complex),
}


def bit_at(index: int, site: int, n_sites: int) -> int:
    """Bit of basis-state ``index`` at 1-based ``site``."""
    return (index >> (n_sites - site)) & 1


def bitstring(index: int, n_sites: int) -> str:
    return format(index, f"0{n_sites}b")


def index_of(bits: str) -> int:
    return int(bits, 2)


def site_bits(n_sites: int) -> np.ndarray:
    """(2^n, n) array of bits, column j-1 = site j."""
    idx = np.arange(2**n_sites)
    return (idx[:, None] >> (n_sites - 1 - np.arange(n_sites))) & 1


def kron_all(factors) -> np.ndarray:
    out = np.array([[1.0]], dtype=complex)
    for f in factors:
        out = np.kron(out, f)
    return out


def embed_operator(block: np.ndarray, sites: tuple[int, ...], n_sites: int) -> np.ndarray:
    """Embed a 2^k x 2^k block acting on ``sites`` (1-based, axis order =
    order given) into the full 2^n x 2^n space, identity elsewhere."""
    k = len(sites)
    if block.shape != (2**k, 2**k):
        raise ValueError(f"block shape {block.shape} does not match {k} sites")
    if len(set(sites)) != k or any(s < 1 or s > n_sites for s in sites):
        raise ValueError(f"invalid site tuple {sites} for n={n_sites}")
    rest = [s for s in range(1, n_sites + 1) if s not in sites]
    full = np.kron(block, np.eye(2 ** (n_sites - k), dtype=complex))
    # Tensor axes currently ordered (sites..., rest...) for rows and columns.
    t = full.reshape((2,) * (2 * n_sites))
    src_order = list(sites) + rest
    perm = [src_order.index(s) for s in range(1, n_sites + 1)]
    t = np.transpose(t, perm + [p + n_sites for p in perm])
    return t.reshape(2**n_sites, 2**n_sites)


def apply_single_site(vec: np.ndarray, u: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Apply a 2x2 matrix to one site of a state vector."""
    da, db = 2 ** (site - 1), 2 ** (n_sites - site)
    v = vec.reshape(da, 2, db)
    return np.einsum("pq,aqb->apb", u, v).reshape(-1)


def conjugate_single_site(mat: np.ndarray, u: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """u . mat . u^dagger on one site of a 2^n x 2^n matrix."""
    da, db = 2 ** (site - 1), 2 ** (n_sites - site)
    t = mat.reshape(da, 2, db, da, 2, db)
    out = np.einsum("pq,aqbcsd,ts->apbctd", u, t, u.conj())
    return out.reshape(2**n_sites, 2**n_sites)


def rotate_state(vec: np.ndarray, axes: str) -> np.ndarray:
    """Apply the basis rotation U = (x)_j u_{axes[j]} to a state vector."""
    n = len(axes)
    out = vec
    for j, ax in enumerate(axes, start=1):
        if ax != "Z":
            out = apply_single_site(out, AXIS_ROTATIONS[ax], j, n)
    return out

def rotate_matrix(mat: np.ndarray, axes: str) -> np.ndarray:
    """U . mat . U^dagger with U the basis rotation for ``axes``."""
    n = len(axes)
    out = mat
    for j, ax in enumerate(axes, start=1):
        if ax != "Z":
            out = conjugate_single_site(out, AXIS_ROTATIONS[ax], j, n)
    return out


def born_probabilities(source, axes: str) -> np.ndarray:
    """Measurement outcome distribution for a state vector or density matrix."""
    if source.ndim == 1:
        psi = rotate_state(source, axes)
        p = np.abs(psi) ** 2
    else:
        p = np.real(np.diag(rotate_matrix(source, axes)))
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def hermiticity_defect(mat: np.ndarray) -> float:
    return float(np.max(np.abs(mat - mat.conj().T)))
